"""Information-weighted maxout fusion of aligned BEV feature maps.

Given receiver features F1 and aligned sender features F2 on the overlap, plus
receiver-only features F3 outside it, the fused map is

    F = (F3 union max(F1, F2 * X)) * Y

where the max runs element-wise over channels and cells. X is a scalar weight
derived from how much the two views disagree: the normalized feature distance

    S = sqrt(sum((F1 - F2)^2)) / (W_o * H_o)

over the overlap's bounding rectangle (W_o x H_o cells), mapped through a
piecewise law that pays more attention to the sender the more it disagrees
with the receiver (disagreement on the overlap usually means one side saw
something the other missed):

    X = S / (A_o / A) + c_low    if S < s_low
    X = S / (A_o / A) + c_mid    if s_low <= S < s_high
    X = x_cap                    otherwise

Y is a uniform enhancement gain applied to every nonzero feature at the end;
zero cells stay exactly zero, so enhancement widens the gap between evidence
and background instead of lifting the noise floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .alignment import AlignedPair, align
from .grid import FeatureMap


@dataclass(frozen=True)
class WeightConfig:
    """Breakpoints and offsets of the piecewise sender-weight law."""

    s_low: float = 0.15
    s_high: float = 0.3
    c_low: float = 1.2
    c_mid: float = 1.5
    x_cap: float = 1.8

    def __post_init__(self) -> None:
        if not (0 < self.s_low < self.s_high):
            raise ValueError(
                f"need 0 < s_low < s_high, got s_low={self.s_low}, s_high={self.s_high}"
            )
        for name in ("c_low", "c_mid", "x_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class EnhanceConfig:
    """Uniform post-fusion gain Y, with a sanity cap."""

    y: float = 2.0
    y_max: float = 5.0

    def __post_init__(self) -> None:
        if self.y < 1.0:
            raise ValueError(f"enhancement gain must be >= 1, got {self.y}")
        if self.y > self.y_max:
            raise ValueError(f"enhancement gain {self.y} exceeds cap {self.y_max}")


@dataclass(frozen=True)
class FusionReport:
    """Outcome of one fusion: the fused map plus the scalars that shaped it.

    s and x are None when there was no overlap to compare (the degenerate path
    where fusion reduces to enhancing the receiver's own map).
    """

    fused: FeatureMap
    s: float | None
    x: float | None
    a_o: int
    a: int
    y: float


def similarity(f1: np.ndarray, f2: np.ndarray, width: int, height: int) -> float:
    """Normalized L2 disagreement between two overlap views.

    f1/f2 are (C, A_o) overlap slices; width/height are the overlap's bounding
    rectangle in cells. Accumulates in 64-bit regardless of input dtype.
    """
    a = np.asarray(f1)
    b = np.asarray(f2)
    if a.shape != b.shape:
        raise ValueError(f"overlap views differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty overlap has no similarity")
    if width <= 0 or height <= 0:
        raise ValueError(f"overlap rectangle must be positive, got {width} x {height}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return math.sqrt(float(np.sum(diff * diff))) / (width * height)


def weight_branch(s: float, cfg: WeightConfig) -> int:
    """Which arm of the piecewise weight law S falls in (1, 2, or 3)."""
    if s < cfg.s_low:
        return 1
    if s < cfg.s_high:
        return 2
    return 3


def weight(s: float, a_o: int, a: int, cfg: WeightConfig | None = None) -> float:
    """Sender weight X from disagreement S and overlap fraction A_o / A."""
    cfg = cfg or WeightConfig()
    if not (s >= 0 and math.isfinite(s)):
        raise ValueError(f"similarity must be finite and nonnegative, got {s}")
    if a_o <= 0:
        raise ValueError(f"overlap area must be positive, got {a_o}")
    if a < a_o:
        raise ValueError(f"overlap area {a_o} exceeds total area {a}")
    branch = weight_branch(s, cfg)
    if branch == 1:
        return s / (a_o / a) + cfg.c_low
    if branch == 2:
        return s / (a_o / a) + cfg.c_mid
    return cfg.x_cap


def weighted_maxout(f1: np.ndarray, f2: np.ndarray, x: float) -> np.ndarray:
    """Element-wise max(f1, x * f2). Shapes must match; x must be positive."""
    a = np.asarray(f1)
    b = np.asarray(f2)
    if a.shape != b.shape:
        raise ValueError(f"maxout operands differ in shape: {a.shape} vs {b.shape}")
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"weight must be finite and positive, got {x}")
    return np.maximum(a, np.float32(x) * b)


def maxout_baseline(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Plain element-wise max: the unweighted fusion baseline."""
    return weighted_maxout(f1, f2, 1.0)


def enhance(fmap: FeatureMap, cfg: EnhanceConfig | None = None) -> FeatureMap:
    """Scale every feature by the gain Y. Zeros stay zero."""
    cfg = cfg or EnhanceConfig()
    return replace(fmap, values=fmap.values * np.float32(cfg.y))


def coff_fuse(
    pair: AlignedPair,
    weight_cfg: WeightConfig | None = None,
    enhance_cfg: EnhanceConfig | None = None,
) -> FusionReport:
    """Fuse one aligned sender into the receiver: weighted maxout on the
    overlap, passthrough outside, enhancement everywhere."""
    weight_cfg = weight_cfg or WeightConfig()
    enhance_cfg = enhance_cfg or EnhanceConfig()

    overlap = pair.overlap
    receiver = pair.receiver
    gain = np.float32(enhance_cfg.y)

    if overlap.area_overlap == 0:
        fused_vals = receiver.values * gain
        fused = replace(receiver, values=fused_vals)
        return FusionReport(
            fused=fused, s=None, x=None, a_o=0, a=overlap.area_total, y=enhance_cfg.y
        )

    mask = overlap.mask
    f1 = receiver.values[:, mask]
    f2 = pair.sender_resampled.values[:, mask]
    s = similarity(f1, f2, overlap.width, overlap.height)
    x = weight(s, overlap.area_overlap, overlap.area_total, weight_cfg)

    fused_vals = receiver.values.copy()
    fused_vals[:, mask] = weighted_maxout(f1, f2, x)
    fused_vals *= gain
    fused = replace(receiver, values=fused_vals)
    return FusionReport(
        fused=fused,
        s=s,
        x=x,
        a_o=overlap.area_overlap,
        a=overlap.area_total,
        y=enhance_cfg.y,
    )


def coff_fuse_multi(
    receiver: FeatureMap,
    senders: list[FeatureMap],
    weight_cfg: WeightConfig | None = None,
    enhance_cfg: EnhanceConfig | None = None,
) -> FusionReport:
    """Fold several senders into the receiver, nearest first.

    Callers sort `senders` by increasing distance from the receiver. Each step
    re-aligns against the running fused map and applies the weighted maxout
    with its own X; the enhancement gain is applied once, at the end. The
    report carries the final map and the last step's S/X/A_o. With no senders
    this degenerates to plain enhancement.
    """
    weight_cfg = weight_cfg or WeightConfig()
    enhance_cfg = enhance_cfg or EnhanceConfig()
    no_gain = EnhanceConfig(y=1.0, y_max=enhance_cfg.y_max)

    current = receiver
    last: FusionReport | None = None
    for sender in senders:
        pair = align(current, sender)
        last = coff_fuse(pair, weight_cfg, no_gain)
        current = last.fused

    fused_vals = current.values * np.float32(enhance_cfg.y)
    fused = replace(current, values=fused_vals)
    if last is None:
        total = receiver.spec.cells_x * receiver.spec.cells_y
        return FusionReport(fused=fused, s=None, x=None, a_o=0, a=total, y=enhance_cfg.y)
    return FusionReport(
        fused=fused, s=last.s, x=last.x, a_o=last.a_o, a=last.a, y=enhance_cfg.y
    )
