"""Bird's-eye-view feature grids and the poses they hang off.

Everything downstream (alignment, fusion, detection) works on dense C x H x W
feature maps laid over a fixed metric window in the vehicle frame: x forward,
y left, one column per x step, one row per y step. Cell (row, col) covers
[x_min + col*vx, x_min + (col+1)*vx) x [y_min + row*vy, y_min + (row+1)*vy),
with the top boundary closed so points on the far edge still land in the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

DEFAULT_X_RANGE = (0.0, 70.4)
DEFAULT_Y_RANGE = (-40.0, 40.0)
DEFAULT_Z_RANGE = (-3.0, 1.0)
DEFAULT_VOXEL = 0.4
DEFAULT_CHANNELS = 128

STRONG_VALUE_THRESHOLD = 0.5
STRONG_FRACTION_THRESHOLD = 0.5


def normalize_heading(theta: float) -> float:
    """Fold an angle into (-pi, pi]."""
    h = math.remainder(theta, math.tau)
    if h <= -math.pi:
        h += math.tau
    return h


@dataclass(frozen=True)
class Pose2D:
    """Planar pose: world position plus heading (radians, normalized)."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map local (N, 2) points into the world frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return pts @ self.rotation().T + np.array([self.x, self.y])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Map world (N, 2) points into this pose's local frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return (pts - np.array([self.x, self.y])) @ self.rotation()


@dataclass(frozen=True)
class GridSpec:
    """Metric extent and resolution of a BEV grid.

    The z range is carried along for completeness (points are filtered to the
    slab before projection) but the grid itself is 2D.
    """

    x_range: tuple[float, float] = DEFAULT_X_RANGE
    y_range: tuple[float, float] = DEFAULT_Y_RANGE
    z_range: tuple[float, float] = DEFAULT_Z_RANGE
    voxel_x: float = DEFAULT_VOXEL
    voxel_y: float = DEFAULT_VOXEL

    def __post_init__(self) -> None:
        for name, (lo, hi) in (("x", self.x_range), ("y", self.y_range), ("z", self.z_range)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"degenerate {name} range: ({lo}, {hi})")
        if self.voxel_x <= 0 or self.voxel_y <= 0:
            raise ValueError(f"voxel sizes must be positive, got ({self.voxel_x}, {self.voxel_y})")

    @property
    def cells_x(self) -> int:
        """Number of columns (W)."""
        return int(math.ceil((self.x_range[1] - self.x_range[0]) / self.voxel_x - 1e-9))

    @property
    def cells_y(self) -> int:
        """Number of rows (H)."""
        return int(math.ceil((self.y_range[1] - self.y_range[0]) / self.voxel_y - 1e-9))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.cells_y, self.cells_x)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.x_range[0] + (col + 0.5) * self.voxel_x,
            self.y_range[0] + (row + 0.5) * self.voxel_y,
        )

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) array of cell-center coordinates in the grid's frame."""
        xs = self.x_range[0] + (np.arange(self.cells_x) + 0.5) * self.voxel_x
        ys = self.y_range[0] + (np.arange(self.cells_y) + 0.5) * self.voxel_y
        out = np.empty((self.cells_y, self.cells_x, 2))
        out[:, :, 0] = xs[None, :]
        out[:, :, 1] = ys[:, None]
        return out

    def same_resolution(self, other: "GridSpec") -> bool:
        return self.voxel_x == other.voxel_x and self.voxel_y == other.voxel_y


def world_to_cell(spec: GridSpec, point: tuple[float, float]) -> tuple[int, int] | None:
    """Map a point in the grid's frame to (row, col), or None when out of range.

    Both range boundaries are inclusive; points exactly on the top edge fall
    into the last cell.
    """
    x, y = float(point[0]), float(point[1])
    if not (spec.x_range[0] <= x <= spec.x_range[1] and spec.y_range[0] <= y <= spec.y_range[1]):
        return None
    col = min(int((x - spec.x_range[0]) / spec.voxel_x), spec.cells_x - 1)
    row = min(int((y - spec.y_range[0]) / spec.voxel_y), spec.cells_y - 1)
    return row, col


def points_to_cells(spec: GridSpec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized world_to_cell: returns (in_range_mask, rows, cols).

    rows/cols are only meaningful where the mask is True.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    inside = (
        (x >= spec.x_range[0])
        & (x <= spec.x_range[1])
        & (y >= spec.y_range[0])
        & (y <= spec.y_range[1])
    )
    cols = np.floor((x - spec.x_range[0]) / spec.voxel_x).astype(np.int64)
    rows = np.floor((y - spec.y_range[0]) / spec.voxel_y).astype(np.int64)
    np.clip(cols, 0, spec.cells_x - 1, out=cols)
    np.clip(rows, 0, spec.cells_y - 1, out=rows)
    return inside, rows, cols


@dataclass(frozen=True)
class FeatureMap:
    """Dense C x H x W float32 feature volume on a grid, tied to a pose.

    Values are nonnegative by construction; zero means "no evidence here".
    Treat instances as immutable once built.
    """

    spec: GridSpec
    values: np.ndarray = field(repr=False)
    origin_pose: Pose2D = Pose2D(0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if vals.ndim != 3:
            raise ValueError(f"feature values must be (C, H, W), got shape {vals.shape}")
        if vals.shape[1:] != self.spec.shape:
            raise ValueError(
                f"feature shape {vals.shape[1:]} does not match grid {self.spec.shape}"
            )
        if vals.shape[0] < 1:
            raise ValueError("need at least one channel")
        if vals.dtype != np.float32:
            raise ValueError(f"feature values must be float32, got {vals.dtype}")
        if not np.isfinite(vals).all():
            raise ValueError("feature values must be finite")
        if (vals < 0).any():
            raise ValueError("feature values must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    @classmethod
    def zeros(
        cls,
        spec: GridSpec,
        channels: int = DEFAULT_CHANNELS,
        origin_pose: Pose2D = Pose2D(0.0, 0.0, 0.0),
    ) -> "FeatureMap":
        vals = np.zeros((channels, spec.cells_y, spec.cells_x), dtype=np.float32)
        return cls(spec=spec, values=vals, origin_pose=origin_pose)


class FeatureClass(Enum):
    BACKGROUND = "background"
    WEAK = "weak"
    STRONG = "strong"


def classify_feature(
    patch: np.ndarray,
    strong_threshold: float = STRONG_VALUE_THRESHOLD,
    strong_fraction: float = STRONG_FRACTION_THRESHOLD,
) -> FeatureClass:
    """Label a feature patch as background, weak, or strong.

    Background means every entry is exactly zero. Strong means at least
    `strong_fraction` of the entries reach `strong_threshold`. Anything in
    between is weak.
    """
    vals = np.asarray(patch)
    if vals.size == 0:
        raise ValueError("cannot classify an empty patch")
    if not (vals != 0).any():
        return FeatureClass.BACKGROUND
    frac = float((vals >= strong_threshold).mean())
    if frac >= strong_fraction:
        return FeatureClass.STRONG
    return FeatureClass.WEAK
