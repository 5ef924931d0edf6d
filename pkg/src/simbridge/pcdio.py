"""Point clouds and their on-disk formats.

JPCD layout (all little-endian)::

    b"JPCD" | u32 version (=1) | u32 n_points | u8 n_channels
    | n_channels x (u8 name length, ASCII name)
    | n_points x (3 + n_channels) float32, row-major (x, y, z, channels...)

Labels are JSON Lines, one box per line with keys ``scene_id``,
``category_id``, ``center``, ``size``, ``yaw_deg`` and ``vel``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import Box3D

MAGIC = b"JPCD"
VERSION = 1
DOMAINS = ("sim", "real")
REAL_CHANNELS = ("intensity", "timestamp")


class FormatError(ValueError):
    pass


@dataclass
class PointCloud:
    """``xyz`` is ``(N, 3)`` float32, ``features`` is ``(N, d)`` float32."""

    xyz: np.ndarray
    features: np.ndarray = None
    channels: tuple = ()
    domain: str = "sim"

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        if self.features is None:
            self.features = np.zeros((len(self.xyz), len(self.channels)), dtype=np.float32)
        self.channels = tuple(self.channels)
        f = np.ascontiguousarray(self.features, dtype=np.float32)
        if f.size == 0:
            # reshape(-1) is ambiguous for empty arrays
            cols = f.shape[-1] if f.ndim == 2 and len(self.xyz) == 0 else len(self.channels)
            self.features = f.reshape(len(self.xyz), cols)
        else:
            self.features = f.reshape(len(self.xyz), -1)
        if self.features.shape[1] != len(self.channels):
            raise ValueError(f"{self.features.shape[1]} feature columns but {len(self.channels)} channel names")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")

    def __len__(self):
        return len(self.xyz)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def select(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], self.features[idx], self.channels, self.domain)


def encode_jpcd(cloud: PointCloud) -> bytes:
    head = [MAGIC, struct.pack("<IIB", VERSION, len(cloud), cloud.n_channels)]
    for name in cloud.channels:
        raw = name.encode("ascii")
        if len(raw) > 255:
            raise FormatError(f"channel name too long: {name!r}")
        head.append(struct.pack("<B", len(raw)) + raw)
    body = np.concatenate([cloud.xyz, cloud.features], axis=1).astype("<f4", copy=False)
    return b"".join(head) + body.tobytes(order="C")


def decode_jpcd(data: bytes, domain: str | None = None) -> PointCloud:
    if data[:4] != MAGIC:
        raise FormatError("bad magic, not a JPCD file")
    version, n, d = struct.unpack_from("<IIB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported JPCD version {version}")
    off = 13
    names = []
    for _ in range(d):
        (ln,) = struct.unpack_from("<B", data, off)
        names.append(data[off + 1:off + 1 + ln].decode("ascii"))
        off += 1 + ln
    expected = off + 4 * n * (3 + d)
    if len(data) != expected:
        raise FormatError(f"payload size {len(data)} does not match header ({expected})")
    arr = np.frombuffer(data, dtype="<f4", offset=off).reshape(n, 3 + d)
    if domain is None:
        domain = "real" if d else "sim"
    return PointCloud(arr[:, :3].astype(np.float32), arr[:, 3:].astype(np.float32), names, domain)


def write_jpcd(path, cloud: PointCloud) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_jpcd(cloud))
    except OSError as e:
        raise OSError(f"cannot write point cloud {path}: {e}") from e


def read_jpcd(path, domain: str | None = None) -> PointCloud:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read point cloud {path}: {e}") from e
    try:
        return decode_jpcd(data, domain)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def label_line(scene_id: int, box: Box3D) -> str:
    return json.dumps(box.to_json(scene_id), sort_keys=True)


def write_labels(path, rows: Iterable[tuple]) -> None:
    """Write ``(scene_id, Box3D)`` rows in the given order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, box in rows:
            fh.write(label_line(sid, box) + "\n")


def read_labels(path) -> dict:
    """Map scene id to its boxes, preserving file order."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                out.setdefault(int(d["scene_id"]), []).append(Box3D.from_json(d))
            except (KeyError, ValueError, TypeError) as e:
                raise FormatError(f"{path}:{ln}: malformed label: {e}") from e
    return out
