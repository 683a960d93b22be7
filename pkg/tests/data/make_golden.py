"""Writes the golden wire-format fixtures next to this script.

Run once and commit the output; the codec tests compare encode() against
these bytes so any accidental format change shows up as a diff, not a silent
re-freeze. The fixture content mirrors the recipes in test_codec.py.
"""

from pathlib import Path

import numpy as np

from coopfuse import FeatureMap, GridSpec, Pose2D, encode

HERE = Path(__file__).resolve().parent


def tiny() -> bytes:
    spec = GridSpec(x_range=(0.0, 4.0), y_range=(0.0, 3.0), voxel_x=1.0, voxel_y=1.0)
    values = (np.arange(24, dtype=np.float32) / 8.0).reshape(2, 3, 4)
    fmap = FeatureMap(spec, values.astype(np.float32), origin_pose=Pose2D(1.5, -2.25, 0.5))
    return encode(fmap)


def wide() -> bytes:
    spec = GridSpec(x_range=(0.0, 3.5), y_range=(-1.25, 1.25), voxel_x=0.5, voxel_y=0.5)
    values = ((np.arange(105) * 7 % 13) / 6.5).astype(np.float32).reshape(3, 5, 7)
    fmap = FeatureMap(spec, values, origin_pose=Pose2D(-12.25, 3.75, -1.5))
    return encode(fmap)


if __name__ == "__main__":
    for name, data in (("golden_tiny.bin", tiny()), ("golden_wide.bin", wide())):
        (HERE / name).write_bytes(data)
        print(f"{name}: {len(data)} bytes")
