"""Shared pytest plumbing.

After a run that included the acceptance module, print one PASS/FAIL line per
acceptance criterion so the verdict is readable without scrolling the full
test log.
"""

from __future__ import annotations

_ACCEPTANCE_FILE = "test_acceptance.py"

_CRITERION_LABELS = {
    "test_criterion_01": "criterion 1:  piecewise weight law, 12-pair table exact",
    "test_criterion_02": "criterion 2:  fusion matches the scalar oracle on 1000 random maps",
    "test_criterion_03": "criterion 3:  invariant suite, >= 500 instances each",
    "test_criterion_04": "criterion 4:  scripted far-object scene (single/maxout miss, coff detects)",
    "test_criterion_05": "criterion 5:  far recall wins >= 80% of seeds, near precision not worse",
    "test_criterion_06": "criterion 6:  p90 detection range extends under coff",
    "test_criterion_07": "criterion 7:  coff less sensitive to the confidence threshold",
    "test_criterion_08a": "criterion 8a: 3 MB x 20 fps = 480 Mbps exactly",
    "test_criterion_08b": "criterion 8b: feature message smaller than a 250k-point cloud",
    "test_criterion_09": "criterion 9:  codec round-trips, corruption detection, golden bytes",
    "test_criterion_10": "criterion 10: CLI output byte-identical across runs and workers",
}


def _criterion_key(nodeid: str) -> str | None:
    if _ACCEPTANCE_FILE not in nodeid:
        return None
    name = nodeid.rsplit("::", 1)[-1]
    for key in _CRITERION_LABELS:
        if name == key or name.startswith(key + "_"):
            return key
    return None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[str, str] = {}
    for status, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            key = _criterion_key(getattr(report, "nodeid", ""))
            if key is not None and getattr(report, "when", "call") in ("call", "setup"):
                # setup errors count as failures; a later phase never upgrades one
                if outcomes.get(key) != "FAIL":
                    outcomes[key] = verdict
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for key, label in _CRITERION_LABELS.items():
        if key in outcomes:
            terminalreporter.write_line(f"{outcomes[key]}  {label}")
