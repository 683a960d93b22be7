"""End-to-end experiment runner: scenes in, CSV tables out.

Each seed becomes one scenario: build the scene, ship every sender map
through the codec, fuse per method, detect, and score near/far precision and
recall at the main and the alternate confidence threshold. Aggregation always
happens on seed-sorted results in a single thread, so the emitted files are
byte-identical no matter how many workers produced the scenarios.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .alignment import align
from .codec import BandwidthReport, bandwidth_report, decode, encode
from .config import RunConfig
from .detector import (
    PRECISION_FIELDS,
    CdfTable,
    PrecisionReport,
    detect,
    detections_to_world,
    evaluate,
    improvement_cdf,
    precision_row,
    range_cdf,
    write_cdf_csv,
)
from .fusion import EnhanceConfig, coff_fuse_multi, maxout_baseline, weight_branch
from .grid import FeatureMap, classify_feature
from .scene import Scene, build_scenario

COOPERATIVE_METHODS = ("maxout", "coff", "coff_no_enhance")


# ---------------------------------------------------------------------------
# per-scenario pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodResult:
    """One method's metrics on one scenario."""

    method: str
    report: PrecisionReport
    report_alt: PrecisionReport
    s: float | None
    x: float | None
    a_o: int
    a: int
    y: float


@dataclass(frozen=True)
class ScenarioResult:
    seed: int
    object_count: int
    methods: tuple[MethodResult, ...]
    bandwidth: BandwidthReport | None


def fuse_maxout(receiver: FeatureMap, senders) -> tuple[FeatureMap, int, int]:
    """Unweighted baseline: element-wise max on each overlap, no gain.

    Returns the fused map plus the last alignment's (A_o, A).
    """
    current = receiver
    a_o = 0
    a = receiver.spec.cells_x * receiver.spec.cells_y
    for sender in senders:
        pair = align(current, sender)
        a_o, a = pair.overlap.area_overlap, pair.overlap.area_total
        if a_o == 0:
            continue
        mask = pair.overlap.mask
        vals = current.values.copy()
        vals[:, mask] = maxout_baseline(vals[:, mask], pair.sender_resampled.values[:, mask])
        current = replace(current, values=vals)
    return current, a_o, a


def _fuse_for_method(method: str, receiver_map: FeatureMap, senders, cfg: RunConfig):
    """Returns (fused_map, s, x, a_o, a, y) for one method name."""
    total = receiver_map.spec.cells_x * receiver_map.spec.cells_y
    if method == "single":
        return receiver_map, None, None, 0, total, 1.0
    if method == "maxout":
        fused, a_o, a = fuse_maxout(receiver_map, senders)
        return fused, None, None, a_o, a, 1.0
    if method == "coff":
        rep = coff_fuse_multi(receiver_map, senders, cfg.weight, cfg.enhance)
    elif method == "coff_no_enhance":
        flat = EnhanceConfig(y=1.0, y_max=cfg.enhance.y_max)
        rep = coff_fuse_multi(receiver_map, senders, cfg.weight, flat)
    else:
        raise ValueError(f"unknown method {method!r}")
    return rep.fused, rep.s, rep.x, rep.a_o, rep.a, rep.y


def run_scenario(cfg: RunConfig, seed: int) -> ScenarioResult:
    """Build one scene and score every configured method on it."""
    scene = build_scenario(
        cfg.template,
        seed,
        grid=cfg.grid,
        lidar=cfg.lidar,
        channels=cfg.channels,
        n_sat=cfg.n_sat,
    )
    receiver_map = scene.receiver.feature_map

    decoded = []
    bandwidth = None
    for vehicle in scene.senders():
        message = encode(vehicle.feature_map, vehicle.pose)
        fmap, _ = decode(message)
        decoded.append(fmap)
        if bandwidth is None:
            bandwidth = bandwidth_report(
                len(vehicle.point_cloud), len(message), cfg.frame_rate, cfg.link_rate_bps
            )

    low = min(cfg.eval.confidence_threshold, cfg.alt_confidence_threshold)
    low_cfg = replace(cfg.eval, confidence_threshold=low)

    results = []
    for method in cfg.methods:
        fused, s, x, a_o, a, y = _fuse_for_method(method, receiver_map, decoded, cfg)
        world = detections_to_world(detect(fused, low_cfg), fused.origin_pose)
        at_main = [d for d in world if d.confidence >= cfg.eval.confidence_threshold]
        at_alt = [d for d in world if d.confidence >= cfg.alt_confidence_threshold]
        results.append(
            MethodResult(
                method=method,
                report=evaluate(at_main, scene.objects, scene.receiver.pose, cfg.eval),
                report_alt=evaluate(at_alt, scene.objects, scene.receiver.pose, cfg.eval),
                s=s,
                x=x,
                a_o=a_o,
                a=a,
                y=y,
            )
        )
    return ScenarioResult(
        seed=seed,
        object_count=len(scene.objects),
        methods=tuple(results),
        bandwidth=bandwidth,
    )


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodAggregate:
    method: str
    scenarios: int
    mean_near_precision: float
    mean_far_precision: float
    mean_near_recall: float
    mean_far_recall: float
    pooled_precision_main: float
    pooled_precision_alt: float
    threshold_sensitivity: float
    mean_s: float | None
    mean_x: float | None
    range_table: CdfTable
    range_p90: float | None
    near_improvement: CdfTable | None
    far_improvement: CdfTable | None


@dataclass(frozen=True)
class RunSummary:
    scenario_count: int
    methods: tuple[MethodAggregate, ...]
    mean_bandwidth_ratio: float | None
    output_files: tuple[str, ...]

    def aggregate(self, method: str) -> MethodAggregate:
        for agg in self.methods:
            if agg.method == method:
                return agg
        raise KeyError(method)


def _pooled_precision(rows, use_alt: bool) -> float:
    tp = fp = 0
    for row in rows:
        rep = row.report_alt if use_alt else row.report
        tp += rep.near_tp + rep.far_tp
        fp += rep.near_fp + rep.far_fp
    if tp + fp == 0:
        return 1.0
    return tp / (tp + fp)


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


def aggregate_results(cfg: RunConfig, results: list[ScenarioResult]) -> list[MethodAggregate]:
    by_method = {
        method: [m for r in results for m in r.methods if m.method == method]
        for method in cfg.methods
    }
    singles = by_method.get("single")

    aggregates = []
    for method in cfg.methods:
        rows = by_method[method]
        s_vals = [m.s for m in rows if m.s is not None]
        x_vals = [m.x for m in rows if m.x is not None]
        pooled_main = _pooled_precision(rows, use_alt=False)
        pooled_alt = _pooled_precision(rows, use_alt=True)
        ranges = [r for m in rows for r in m.report.matched_ranges]
        range_table = range_cdf(ranges)

        near_improvement = far_improvement = None
        if singles is not None and method != "single":
            near_improvement = improvement_cdf(
                (s.report.near_precision, m.report.near_precision)
                for s, m in zip(singles, rows)
            )
            far_improvement = improvement_cdf(
                (s.report.far_precision, m.report.far_precision)
                for s, m in zip(singles, rows)
            )

        aggregates.append(
            MethodAggregate(
                method=method,
                scenarios=len(rows),
                mean_near_precision=_mean(m.report.near_precision for m in rows),
                mean_far_precision=_mean(m.report.far_precision for m in rows),
                mean_near_recall=_mean(m.report.near_recall for m in rows),
                mean_far_recall=_mean(m.report.far_recall for m in rows),
                pooled_precision_main=pooled_main,
                pooled_precision_alt=pooled_alt,
                threshold_sensitivity=abs(pooled_main - pooled_alt),
                mean_s=_mean(s_vals) if s_vals else None,
                mean_x=_mean(x_vals) if x_vals else None,
                range_table=range_table,
                range_p90=range_table.quantile(0.9) if range_table.values else None,
                near_improvement=near_improvement,
                far_improvement=far_improvement,
            )
        )
    return aggregates


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_scenarios_csv(path: str, results: list[ScenarioResult]) -> None:
    header = ["seed", "method", "objects"]
    header += list(PRECISION_FIELDS)
    header += [f"alt_{name}" for name in PRECISION_FIELDS]
    header += ["s", "x", "a_o", "a", "y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for result in results:
            for m in result.methods:
                row = [result.seed, m.method, result.object_count]
                main_row = precision_row(m.report)
                alt_row = precision_row(m.report_alt)
                row += [main_row[name] for name in PRECISION_FIELDS]
                row += [alt_row[name] for name in PRECISION_FIELDS]
                row += [_fmt(m.s), _fmt(m.x), m.a_o, m.a, _fmt(m.y)]
                writer.writerow(row)


_SUMMARY_COLUMNS = (
    "method",
    "scenarios",
    "mean_near_precision",
    "mean_far_precision",
    "mean_near_recall",
    "mean_far_recall",
    "pooled_precision_main",
    "pooled_precision_alt",
    "threshold_sensitivity",
    "mean_s",
    "mean_x",
    "range_p90",
    "near_improvement_excluded",
    "far_improvement_excluded",
)


def _write_summary_csv(path: str, aggregates: list[MethodAggregate]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SUMMARY_COLUMNS)
        for agg in aggregates:
            writer.writerow(
                [
                    agg.method,
                    agg.scenarios,
                    _fmt(agg.mean_near_precision),
                    _fmt(agg.mean_far_precision),
                    _fmt(agg.mean_near_recall),
                    _fmt(agg.mean_far_recall),
                    _fmt(agg.pooled_precision_main),
                    _fmt(agg.pooled_precision_alt),
                    _fmt(agg.threshold_sensitivity),
                    _fmt(agg.mean_s),
                    _fmt(agg.mean_x),
                    _fmt(agg.range_p90),
                    agg.near_improvement.excluded if agg.near_improvement else "",
                    agg.far_improvement.excluded if agg.far_improvement else "",
                ]
            )


def _write_improvement_csv(path: str, near: CdfTable, far: CdfTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["category", "improvement_pct", "cum_fraction"])
        for category, table in (("near", near), ("far", far)):
            for value, frac in zip(table.values, table.fractions):
                writer.writerow([category, repr(value), repr(frac)])


_BANDWIDTH_COLUMNS = (
    "seed",
    "points",
    "raw_bytes",
    "message_bytes",
    "ratio",
    "raw_bps",
    "message_bps",
    "raw_frame_seconds",
    "message_frame_seconds",
)


def _write_bandwidth_csv(path: str, results: list[ScenarioResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_BANDWIDTH_COLUMNS)
        for result in results:
            bw = result.bandwidth
            if bw is None:
                continue
            writer.writerow(
                [
                    result.seed,
                    bw.points,
                    bw.raw_bytes,
                    bw.message_bytes,
                    _fmt(bw.ratio),
                    _fmt(bw.raw_bps),
                    _fmt(bw.message_bps),
                    _fmt(bw.raw_frame_seconds),
                    _fmt(bw.message_frame_seconds),
                ]
            )


def write_outputs(
    cfg: RunConfig, results: list[ScenarioResult], aggregates: list[MethodAggregate], out_dir: str
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def target(name: str) -> str:
        path = os.path.join(out_dir, name)
        written.append(path)
        return path

    _write_scenarios_csv(target("scenarios.csv"), results)
    _write_summary_csv(target("summary.csv"), aggregates)
    for agg in aggregates:
        if agg.near_improvement is not None:
            _write_improvement_csv(
                target(f"improvement_{agg.method}.csv"),
                agg.near_improvement,
                agg.far_improvement,
            )
        write_cdf_csv(agg.range_table, target(f"range_{agg.method}.csv"), "range_m")
    if any(r.bandwidth for r in results):
        _write_bandwidth_csv(target("bandwidth.csv"), results)
    return written


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def _scenario_task(args) -> ScenarioResult:
    cfg, seed = args
    return run_scenario(cfg, seed)


def run(cfg: RunConfig, output_dir: str | None = None) -> RunSummary:
    """Run every seed, aggregate, and write the output tables."""
    out_dir = output_dir or cfg.output_dir
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_scenario_task, [(cfg, s) for s in cfg.seeds]))
    else:
        results = [run_scenario(cfg, seed) for seed in cfg.seeds]
    results.sort(key=lambda r: r.seed)

    aggregates = aggregate_results(cfg, results)
    files = write_outputs(cfg, results, aggregates, out_dir)

    ratios = [r.bandwidth.ratio for r in results if r.bandwidth is not None]
    return RunSummary(
        scenario_count=len(results),
        methods=tuple(aggregates),
        mean_bandwidth_ratio=_mean(ratios) if ratios else None,
        output_files=tuple(files),
    )


def summary_text(summary: RunSummary) -> str:
    """Short human-readable digest of a finished run."""
    lines = [f"{summary.scenario_count} scenarios"]
    for agg in summary.methods:
        lines.append(
            f"{agg.method}: near P={agg.mean_near_precision:.3f} "
            f"R={agg.mean_near_recall:.3f}, far P={agg.mean_far_precision:.3f} "
            f"R={agg.mean_far_recall:.3f}, sensitivity={agg.threshold_sensitivity:.3f}"
            + (f", range p90={agg.range_p90:.1f} m" if agg.range_p90 is not None else "")
        )
    if summary.mean_bandwidth_ratio is not None:
        lines.append(f"mean raw/message size ratio: {summary.mean_bandwidth_ratio:.3f}")
    lines.append(f"wrote {len(summary.output_files)} files")
    return "\n".join(lines)


def explain(cfg: RunConfig, seed: int, scene: Scene | None = None) -> str:
    """Trace one scenario's fusion pipeline as readable text.

    The printed S/X/Y values are the exact report fields (repr), so the trace
    doubles as a ground-truth record for the scenario. A prebuilt scene can be
    passed in place of the template draw, which traces that scene as-is.
    """
    if scene is None:
        scene = build_scenario(
            cfg.template,
            seed,
            grid=cfg.grid,
            lidar=cfg.lidar,
            channels=cfg.channels,
            n_sat=cfg.n_sat,
        )
    lines = [
        f"template={cfg.template} seed={seed}: "
        f"{len(scene.objects)} boxes, {len(scene.vehicles)} vehicles"
    ]
    for idx, vehicle in enumerate(scene.vehicles):
        role = "receiver" if idx == 0 else "sender"
        pose = vehicle.pose
        lines.append(
            f"  vehicle {idx} ({role}): pose=({pose.x:.2f}, {pose.y:.2f}, "
            f"{math.degrees(pose.heading):.1f} deg), points={len(vehicle.point_cloud)}"
        )

    receiver_map = scene.receiver.feature_map
    decoded = []
    for vehicle in scene.senders():
        message = encode(vehicle.feature_map, vehicle.pose)
        fmap, _ = decode(message)
        decoded.append(fmap)
        lines.append(
            f"  message: {len(message)} bytes vs raw cloud "
            f"{len(vehicle.point_cloud)} points ({12 * len(vehicle.point_cloud)} bytes)"
        )

    if decoded:
        pair = align(receiver_map, decoded[0])
        ov = pair.overlap
        lines.append(
            f"overlap with nearest sender: A_o={ov.area_overlap} of A={ov.area_total} "
            f"cells (fraction {ov.fraction:.4f}), rectangle {ov.width} x {ov.height}"
        )
        if ov.area_overlap:
            f1 = pair.receiver.values[:, ov.mask]
            f2 = pair.sender_resampled.values[:, ov.mask]
            lines.append(
                f"overlap patches: receiver {classify_feature(f1).value}, "
                f"sender {classify_feature(f2).value}"
            )

    rep = coff_fuse_multi(receiver_map, decoded, cfg.weight, cfg.enhance)
    w = cfg.weight
    if rep.s is None:
        lines.append("fusion: no overlap; fused map is the enhanced receiver map (S, X unset)")
    else:
        branch = weight_branch(rep.s, w)
        if branch == 1:
            rule = f"S < {w.s_low}: X = S/(A_o/A) + {w.c_low}"
        elif branch == 2:
            rule = f"{w.s_low} <= S < {w.s_high}: X = S/(A_o/A) + {w.c_mid}"
        else:
            rule = f"S >= {w.s_high}: X = {w.x_cap}"
        lines.append(f"fusion: S = {rep.s!r}")
        lines.append(f"fusion: branch {branch} ({rule})")
        lines.append(f"fusion: X = {rep.x!r}")
    lines.append(f"fusion: Y = {rep.y!r}, overlap a_o={rep.a_o} of a={rep.a}")

    low = min(cfg.eval.confidence_threshold, cfg.alt_confidence_threshold)
    low_cfg = replace(cfg.eval, confidence_threshold=low)
    lines.append(
        f"detections at confidence >= {cfg.eval.confidence_threshold} "
        f"(near/far split {cfg.eval.near_far_split} m):"
    )
    for method in cfg.methods:
        fused, *_ = _fuse_for_method(method, receiver_map, decoded, cfg)
        world = detections_to_world(detect(fused, low_cfg), fused.origin_pose)
        at_main = [d for d in world if d.confidence >= cfg.eval.confidence_threshold]
        report = evaluate(at_main, scene.objects, scene.receiver.pose, cfg.eval)
        lines.append(
            f"  {method}: {len(at_main)} detections, "
            f"near TP/FP/FN = {report.near_tp}/{report.near_fp}/{report.near_fn}, "
            f"far TP/FP/FN = {report.far_tp}/{report.far_fp}/{report.far_fn}, "
            f"range {report.detection_range:.1f} m"
        )
    return "\n".join(lines)
