"""Detection proxy and precision/recall/range metrics over BEV feature maps.

Detection here is deliberately simple: threshold the per-cell activation
(channel max), take 4-connected components, box each component, and score it
with a logistic squash of its mean activation. It is a stand-in for a real
detection head with one useful property: anything that raises feature values
raises detection confidence, so the effect of fusion and enhancement shows up
directly in the metrics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy import ndimage

from .grid import FeatureMap, Pose2D

if TYPE_CHECKING:  # pragma: no cover
    from .scene import GroundTruthBox

Rect = tuple[float, float, float, float]  # x_min, y_min, x_max, y_max


@dataclass(frozen=True)
class EvalConfig:
    """Detection and matching knobs."""

    iou_threshold: float = 0.5
    confidence_threshold: float = 0.5
    near_far_split: float = 20.0
    activation_threshold: float = 0.25
    logistic_slope: float = 6.0
    logistic_midpoint: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.iou_threshold <= 1:
            raise ValueError(f"iou threshold out of (0, 1]: {self.iou_threshold}")
        if not 0 <= self.confidence_threshold <= 1:
            raise ValueError(
                f"confidence threshold out of [0, 1]: {self.confidence_threshold}"
            )
        if self.near_far_split <= 0:
            raise ValueError(f"near/far split must be positive, got {self.near_far_split}")
        if self.activation_threshold <= 0:
            raise ValueError(
                f"activation threshold must be positive, got {self.activation_threshold}"
            )
        if self.logistic_slope <= 0:
            raise ValueError(f"logistic slope must be positive, got {self.logistic_slope}")


@dataclass(frozen=True)
class Detection:
    """Axis-aligned detection rectangle with a confidence in (0, 1)."""

    box: Rect
    confidence: float


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]  # (detection index, truth index)
    pair_ious: tuple[float, ...]
    unmatched_detections: tuple[int, ...]
    unmatched_truth: tuple[int, ...]


@dataclass(frozen=True)
class PrecisionReport:
    """Near/far detection quality for one scene and one method.

    A vacuous flag means the corresponding denominator was empty; the metric
    is reported as 1.0 by convention in that case rather than silently skewing
    aggregates.
    """

    near_tp: int
    near_fp: int
    near_fn: int
    far_tp: int
    far_fp: int
    far_fn: int
    near_precision: float
    far_precision: float
    near_recall: float
    far_recall: float
    near_precision_vacuous: bool
    far_precision_vacuous: bool
    near_recall_vacuous: bool
    far_recall_vacuous: bool
    matched_ranges: tuple[float, ...]
    detection_range: float


@dataclass(frozen=True)
class CdfTable:
    """Empirical CDF sample points: fractions[i] of the data is <= values[i].

    `excluded` counts records that could not participate (for improvement
    tables, cases with a zero baseline).
    """

    values: tuple[float, ...]
    fractions: tuple[float, ...]
    excluded: int = 0

    def quantile(self, q: float) -> float:
        """Smallest value whose cumulative fraction reaches q."""
        if not self.values:
            raise ValueError("empty CDF has no quantiles")
        if not 0 < q <= 1:
            raise ValueError(f"quantile level out of (0, 1]: {q}")
        idx = max(0, math.ceil(q * len(self.values)) - 1)
        return self.values[idx]


def iou(box_a: Rect, box_b: Rect) -> float:
    """Intersection over union of two axis-aligned rectangles."""
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def detect(fmap: FeatureMap, cfg: EvalConfig | None = None) -> list[Detection]:
    """Extract detections from one feature map, in the map's own frame.

    Activation is the per-cell channel max; cells at or above the activation
    threshold are grouped 4-connected; each group becomes a rectangle (in
    meters, tight around its cells) with confidence
    sigmoid(slope * (mean activation - midpoint)). Groups below the
    confidence threshold are dropped.
    """
    cfg = cfg or EvalConfig()
    spec = fmap.spec
    activation = fmap.values.max(axis=0)
    mask = activation >= cfg.activation_threshold
    labels, count = ndimage.label(mask)
    if count == 0:
        return []

    flat_labels = labels.ravel()
    sums = np.bincount(flat_labels, weights=activation.ravel(), minlength=count + 1)
    sizes = np.bincount(flat_labels, minlength=count + 1)
    means = sums[1:] / sizes[1:]

    detections = []
    for idx, slc in enumerate(ndimage.find_objects(labels)):
        rows, cols = slc
        box = (
            spec.x_range[0] + cols.start * spec.voxel_x,
            spec.y_range[0] + rows.start * spec.voxel_y,
            spec.x_range[0] + cols.stop * spec.voxel_x,
            spec.y_range[0] + rows.stop * spec.voxel_y,
        )
        conf = 1.0 / (1.0 + math.exp(-cfg.logistic_slope * (means[idx] - cfg.logistic_midpoint)))
        if conf >= cfg.confidence_threshold:
            detections.append(Detection(box=box, confidence=conf))
    return detections


def detections_to_world(detections: Sequence[Detection], pose: Pose2D) -> list[Detection]:
    """Re-express map-frame detection rectangles in the world frame.

    For a rotated pose the result is the axis-aligned hull of the rotated
    rectangle.
    """
    out = []
    for det in detections:
        x0, y0, x1, y1 = det.box
        corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
        world = pose.to_world(corners)
        out.append(
            Detection(
                box=(
                    float(world[:, 0].min()),
                    float(world[:, 1].min()),
                    float(world[:, 0].max()),
                    float(world[:, 1].max()),
                ),
                confidence=det.confidence,
            )
        )
    return out


def match(
    detections: Sequence[Detection],
    truth: Sequence["GroundTruthBox"],
    cfg: EvalConfig | None = None,
) -> MatchResult:
    """Greedy one-to-one matching, highest-confidence detection first.

    Each detection takes the unclaimed truth box with the highest IoU,
    provided it reaches the IoU threshold. Ties break toward the earlier
    detection and the lower truth index, so the result is deterministic.
    """
    cfg = cfg or EvalConfig()
    truth_boxes = [t.aabb() for t in truth]
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    claimed = set()
    matches = []
    for det_idx in order:
        best_iou = 0.0
        best_truth = -1
        for t_idx, t_box in enumerate(truth_boxes):
            if t_idx in claimed:
                continue
            overlap = iou(detections[det_idx].box, t_box)
            if overlap > best_iou:
                best_iou = overlap
                best_truth = t_idx
        if best_truth >= 0 and best_iou >= cfg.iou_threshold:
            claimed.add(best_truth)
            matches.append((det_idx, best_truth, best_iou))
    matches.sort()
    matched_dets = {d for d, _, _ in matches}
    return MatchResult(
        pairs=tuple((d, t) for d, t, _ in matches),
        pair_ious=tuple(i for _, _, i in matches),
        unmatched_detections=tuple(i for i in range(len(detections)) if i not in matched_dets),
        unmatched_truth=tuple(i for i in range(len(truth)) if i not in claimed),
    )


def evaluate(
    detections: Sequence[Detection],
    truth: Sequence["GroundTruthBox"],
    receiver_pose: Pose2D,
    cfg: EvalConfig | None = None,
) -> PrecisionReport:
    """Score world-frame detections against truth, split at the near/far range.

    A matched detection inherits its truth box's category; an unmatched one is
    categorized by its own center. Ranges are receiver-to-truth-center
    distances of matched boxes.
    """
    cfg = cfg or EvalConfig()
    result = match(detections, truth, cfg)
    rx, ry = receiver_pose.x, receiver_pose.y

    def truth_range(t: "GroundTruthBox") -> float:
        return math.hypot(t.center[0] - rx, t.center[1] - ry)

    near = {"tp": 0, "fp": 0, "fn": 0}
    far = {"tp": 0, "fp": 0, "fn": 0}

    matched_ranges = []
    for _, t_idx in result.pairs:
        r = truth_range(truth[t_idx])
        bucket = near if r < cfg.near_far_split else far
        bucket["tp"] += 1
        matched_ranges.append(r)
    for d_idx in result.unmatched_detections:
        x0, y0, x1, y1 = detections[d_idx].box
        r = math.hypot((x0 + x1) / 2.0 - rx, (y0 + y1) / 2.0 - ry)
        bucket = near if r < cfg.near_far_split else far
        bucket["fp"] += 1
    for t_idx in result.unmatched_truth:
        bucket = near if truth_range(truth[t_idx]) < cfg.near_far_split else far
        bucket["fn"] += 1

    def safe_ratio(num: int, den: int) -> tuple[float, bool]:
        if den == 0:
            return 1.0, True
        return num / den, False

    near_p, near_p_vac = safe_ratio(near["tp"], near["tp"] + near["fp"])
    far_p, far_p_vac = safe_ratio(far["tp"], far["tp"] + far["fp"])
    near_r, near_r_vac = safe_ratio(near["tp"], near["tp"] + near["fn"])
    far_r, far_r_vac = safe_ratio(far["tp"], far["tp"] + far["fn"])

    return PrecisionReport(
        near_tp=near["tp"],
        near_fp=near["fp"],
        near_fn=near["fn"],
        far_tp=far["tp"],
        far_fp=far["fp"],
        far_fn=far["fn"],
        near_precision=near_p,
        far_precision=far_p,
        near_recall=near_r,
        far_recall=far_r,
        near_precision_vacuous=near_p_vac,
        far_precision_vacuous=far_p_vac,
        near_recall_vacuous=near_r_vac,
        far_recall_vacuous=far_r_vac,
        matched_ranges=tuple(matched_ranges),
        detection_range=max(matched_ranges, default=0.0),
    )


# ---------------------------------------------------------------------------
# aggregate tables
# ---------------------------------------------------------------------------


def cdf_table(values: Iterable[float], excluded: int = 0) -> CdfTable:
    vals = sorted(float(v) for v in values)
    n = len(vals)
    fracs = tuple((i + 1) / n for i in range(n))
    return CdfTable(values=tuple(vals), fractions=fracs, excluded=excluded)


def improvement_cdf(pairs: Iterable[tuple[float, float]]) -> CdfTable:
    """CDF of percentage improvement over a baseline.

    Each record is (baseline, improved); records with a zero (or negative)
    baseline cannot express a relative change and are excluded but counted.
    """
    improvements = []
    excluded = 0
    for baseline, improved in pairs:
        if baseline <= 0:
            excluded += 1
            continue
        improvements.append(100.0 * (improved - baseline) / baseline)
    return cdf_table(improvements, excluded=excluded)


def range_cdf(ranges: Iterable[float]) -> CdfTable:
    """CDF of matched detection ranges in meters."""
    return cdf_table(ranges)


def write_cdf_csv(table: CdfTable, path, value_label: str) -> None:
    """One-line header, then (value, cumulative fraction) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([value_label, "cum_fraction"])
        for value, frac in zip(table.values, table.fractions):
            writer.writerow([repr(value), repr(frac)])


PRECISION_FIELDS = (
    "near_tp",
    "near_fp",
    "near_fn",
    "far_tp",
    "far_fp",
    "far_fn",
    "near_precision",
    "far_precision",
    "near_recall",
    "far_recall",
    "near_precision_vacuous",
    "far_precision_vacuous",
    "near_recall_vacuous",
    "far_recall_vacuous",
    "detection_range",
)


def precision_row(report: PrecisionReport) -> dict:
    """Flatten a report into CSV-ready fields (stable key order)."""
    row = {}
    for name in PRECISION_FIELDS:
        value = getattr(report, name)
        if isinstance(value, bool):
            row[name] = int(value)
        elif isinstance(value, float):
            row[name] = repr(value)
        else:
            row[name] = value
    return row
