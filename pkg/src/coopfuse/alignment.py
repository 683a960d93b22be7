"""Resampling a sender's feature map into the receiver's grid frame.

The receiver asks, for each of its own cells, "which sender cell covers this
spot?". Receiver cell centers are pushed through receiver-local -> world ->
sender-local and looked up with nearest-cell (floor) indexing. Cells whose
center lands outside the sender's window form the non-overlap region and keep
the receiver's own features untouched downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import FeatureMap, GridSpec, points_to_cells


@dataclass(frozen=True)
class OverlapRegion:
    """Boolean overlap mask plus the area bookkeeping fusion needs.

    area_overlap is the cell count of the mask (A_o), area_total the full grid
    cell count (A), and width/height the tight bounding rectangle of the mask
    in cells (W_o, H_o). An empty mask has zero width and height.
    """

    mask: np.ndarray = field(repr=False)
    area_overlap: int
    area_total: int
    width: int
    height: int

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "OverlapRegion":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"overlap mask must be 2D, got shape {mask.shape}")
        area = int(mask.sum())
        if area == 0:
            return cls(mask=mask, area_overlap=0, area_total=mask.size, width=0, height=0)
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        return cls(
            mask=mask,
            area_overlap=area,
            area_total=int(mask.size),
            width=int(cols[-1] - cols[0] + 1),
            height=int(rows[-1] - rows[0] + 1),
        )

    @property
    def fraction(self) -> float:
        """A_o / A."""
        return self.area_overlap / self.area_total


@dataclass(frozen=True)
class AlignedPair:
    """Receiver map plus the sender's features resampled onto the same grid.

    sender_resampled lives on the receiver's spec and pose; cells outside
    overlap.mask carry zeros and are undefined (consult the mask, not the
    values).
    """

    receiver: FeatureMap
    sender_resampled: FeatureMap
    overlap: OverlapRegion


def align(receiver: FeatureMap, sender: FeatureMap) -> AlignedPair:
    """Resample `sender` into `receiver`'s grid via their world poses."""
    if receiver.channels != sender.channels:
        raise ValueError(
            f"channel mismatch: receiver has {receiver.channels}, sender {sender.channels}"
        )
    if not receiver.spec.same_resolution(sender.spec):
        raise ValueError(
            "voxel size mismatch between receiver "
            f"({receiver.spec.voxel_x}, {receiver.spec.voxel_y}) and sender "
            f"({sender.spec.voxel_x}, {sender.spec.voxel_y}); resampling across "
            "resolutions is not supported"
        )

    h, w = receiver.spec.shape
    centers = receiver.spec.cell_centers().reshape(-1, 2)
    world = receiver.origin_pose.to_world(centers)
    in_sender = sender.origin_pose.to_local(world)

    inside, rows, cols = points_to_cells(sender.spec, in_sender)
    mask = inside.reshape(h, w)
    overlap = OverlapRegion.from_mask(mask)

    resampled = np.zeros_like(receiver.values)
    if overlap.area_overlap:
        sel = inside
        resampled[:, mask] = sender.values[:, rows[sel], cols[sel]]

    sender_on_receiver = FeatureMap(
        spec=receiver.spec, values=resampled, origin_pose=receiver.origin_pose
    )
    return AlignedPair(receiver=receiver, sender_resampled=sender_on_receiver, overlap=overlap)


def split_regions(pair: AlignedPair) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decompose a pair into (F1, F2, F3) cell sets.

    F1: receiver features on the overlap, shape (C, A_o).
    F2: sender features on the overlap, same shape.
    F3: receiver features outside the overlap, shape (C, A - A_o).
    """
    mask = pair.overlap.mask
    f1 = pair.receiver.values[:, mask]
    f2 = pair.sender_resampled.values[:, mask]
    f3 = pair.receiver.values[:, ~mask]
    return f1, f2, f3
