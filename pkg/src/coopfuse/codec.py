"""Wire format for shipping a feature map between vehicles.

Layout (little-endian throughout):

    offset  size        field
    0       4           magic "CFF1"
    4       24          sender pose: x, y, heading as f64
    28      48          grid: x_min, x_max, y_min, y_max, voxel_x, voxel_y as f64
    76      8           grid cells: cells_x, cells_y as u32
    84      12          payload dims: C, H, W as u32
    96      4*C*H*W     features, f32, C-order
    end-4   4           CRC-32 of bytes 4..end-4 (everything but magic and CRC)

The z extent is not transmitted; it never affects the BEV pipeline, and decode
restores the default slab. Total size is 100 + 4*C*H*W bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .grid import DEFAULT_Z_RANGE, FeatureMap, GridSpec, Pose2D

MAGIC = b"CFF1"
_HEADER = struct.Struct("<9d5I")
HEADER_SIZE = 4 + _HEADER.size  # 96
OVERHEAD = HEADER_SIZE + 4  # plus CRC trailer

# Refuse to allocate absurd payloads from a corrupt or hostile header.
MAX_PAYLOAD_CELLS = 1 << 28

# A raw LiDAR return on the wire: three f32 coordinates.
RAW_POINT_BYTES = 12


class CodecError(ValueError):
    """Base class for malformed feature messages."""


class MagicError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class ChecksumError(CodecError):
    pass


class HeaderError(CodecError):
    pass


class PayloadError(CodecError):
    pass


def message_size(channels: int, rows: int, cols: int) -> int:
    return OVERHEAD + 4 * channels * rows * cols


def encode(fmap: FeatureMap, pose: Pose2D | None = None) -> bytes:
    """Serialize a feature map and its origin pose into one message."""
    pose = pose or fmap.origin_pose
    spec = fmap.spec
    c, h, w = fmap.shape
    header = _HEADER.pack(
        pose.x,
        pose.y,
        pose.heading,
        spec.x_range[0],
        spec.x_range[1],
        spec.y_range[0],
        spec.y_range[1],
        spec.voxel_x,
        spec.voxel_y,
        spec.cells_x,
        spec.cells_y,
        c,
        h,
        w,
    )
    payload = np.ascontiguousarray(fmap.values, dtype="<f4").tobytes()
    body = header + payload
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> tuple[FeatureMap, Pose2D]:
    """Parse a message back into (feature map, sender pose).

    Raises a CodecError subclass naming what went wrong: bad magic, short or
    overlong data, checksum mismatch, inconsistent header, or invalid payload
    values.
    """
    if len(data) < 4:
        raise TruncatedError(f"message of {len(data)} bytes cannot hold the magic")
    if data[:4] != MAGIC:
        raise MagicError(f"bad magic {data[:4]!r}")
    if len(data) < OVERHEAD:
        raise TruncatedError(f"message of {len(data)} bytes is shorter than any valid frame")

    fields = _HEADER.unpack(data[4:HEADER_SIZE])
    px, py, heading = fields[0:3]
    x_min, x_max, y_min, y_max, vx, vy = fields[3:9]
    cells_x, cells_y, c, h, w = fields[9:14]

    if c < 1 or h < 1 or w < 1:
        raise HeaderError(f"non-positive payload dims ({c}, {h}, {w})")
    if c * h * w > MAX_PAYLOAD_CELLS:
        raise HeaderError(f"payload of {c * h * w} cells exceeds the size cap")
    expected = message_size(c, h, w)
    if len(data) != expected:
        raise TruncatedError(f"expected {expected} bytes for dims ({c}, {h}, {w}), got {len(data)}")

    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[4:-4])
    if stored != actual:
        raise ChecksumError(f"CRC mismatch: stored {stored:#010x}, computed {actual:#010x}")

    try:
        spec = GridSpec(
            x_range=(x_min, x_max),
            y_range=(y_min, y_max),
            z_range=DEFAULT_Z_RANGE,
            voxel_x=vx,
            voxel_y=vy,
        )
    except ValueError as exc:
        raise HeaderError(f"invalid grid geometry: {exc}") from exc
    if (spec.cells_x, spec.cells_y) != (cells_x, cells_y):
        raise HeaderError(
            f"grid geometry implies {spec.cells_x} x {spec.cells_y} cells, "
            f"header claims {cells_x} x {cells_y}"
        )
    if (h, w) != (cells_y, cells_x):
        raise HeaderError(
            f"payload dims ({h}, {w}) disagree with grid cells ({cells_y}, {cells_x})"
        )

    values = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=HEADER_SIZE)
    values = values.reshape(c, h, w).astype(np.float32)
    pose = Pose2D(px, py, heading)
    try:
        fmap = FeatureMap(spec=spec, values=values, origin_pose=pose)
    except ValueError as exc:
        raise PayloadError(f"invalid feature values: {exc}") from exc
    return fmap, pose


@dataclass(frozen=True)
class BandwidthReport:
    """Raw-cloud vs feature-message transmission accounting for one frame."""

    points: int
    raw_bytes: int
    message_bytes: int
    ratio: float  # raw over message; > 1 means the message is the smaller payload
    raw_bps: float
    message_bps: float
    link_rate_bps: float
    raw_frame_seconds: float
    message_frame_seconds: float


def bandwidth_report(
    cloud,
    message_bytes: int,
    frame_rate: float,
    link_rate_bps: float,
) -> BandwidthReport:
    """Compare shipping the raw cloud against shipping the feature message.

    `cloud` is a point array or a plain point count; raw traffic is
    RAW_POINT_BYTES per point. Throughputs assume one frame per 1/frame_rate
    seconds; frame transfer times assume the given link rate.
    """
    points = int(cloud) if isinstance(cloud, (int, np.integer)) else len(cloud)
    if points < 0:
        raise ValueError(f"point count must be nonnegative, got {points}")
    if message_bytes < OVERHEAD:
        raise ValueError(f"message of {message_bytes} bytes is smaller than the framing")
    if frame_rate <= 0 or link_rate_bps <= 0:
        raise ValueError("frame rate and link rate must be positive")

    raw_bytes = RAW_POINT_BYTES * points
    return BandwidthReport(
        points=points,
        raw_bytes=raw_bytes,
        message_bytes=int(message_bytes),
        ratio=raw_bytes / message_bytes,
        raw_bps=raw_bytes * 8.0 * frame_rate,
        message_bps=message_bytes * 8.0 * frame_rate,
        link_rate_bps=float(link_rate_bps),
        raw_frame_seconds=raw_bytes * 8.0 / link_rate_bps,
        message_frame_seconds=message_bytes * 8.0 / link_rate_bps,
    )
