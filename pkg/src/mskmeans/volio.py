"""F4D volume container, label/mask volumes, and CSV/JSON writers.

F4D layout (all little-endian)::

    offset  size  field
         0     8  magic b"F4DV0001"
         8    16  u32 nx, ny, nz, nt
        24    16  f32 dx, dy, dz, tr
        40     1  u8 kind (0 = series, 1 = labels, 2 = mask)
        41     4  u32 reserved, must be 0
        45     -  nx*ny*nz*nt float32 voxels

The payload is frame-major; inside a frame x varies fastest, then y, then z.
In memory a :class:`Volume4D` holds an array indexed ``[x, y, z, t]``.
"""
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInput

MAGIC = b"F4DV0001"
HEADER = struct.Struct("<8s4I4fBI")
HEADER_SIZE = HEADER.size  # 45
KIND_SERIES, KIND_LABELS, KIND_MASK = 0, 1, 2
# refuse headers declaring more than 2**34 bytes of payload
MAX_PAYLOAD_BYTES = 1 << 34


@dataclass(frozen=True)
class VolumeGeometry:
    nx: int
    ny: int
    nz: int
    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0
    tr: float = 0.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 1:
                raise InvalidInput(f"{name} must be a positive integer")
        for name in ("dx", "dy", "dz"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if not self.tr >= 0:
            raise InvalidInput("tr must be non-negative")

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def voxel_size(self):
        return (self.dx, self.dy, self.dz)

    @property
    def n_voxels(self):
        return self.nx * self.ny * self.nz

    def same_grid(self, other):
        return self.shape == other.shape


@dataclass
class Volume4D:
    geometry: VolumeGeometry
    data: np.ndarray  # [x, y, z, t]

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 3:
            self.data = self.data[..., None]
        if self.data.shape[:3] != self.geometry.shape or self.data.ndim != 4:
            raise InvalidInput(
                f"data shape {self.data.shape} does not match geometry {self.geometry.shape}"
            )
        if self.data.shape[3] < 1:
            raise InvalidInput("nt must be positive")

    @property
    def nt(self):
        return self.data.shape[3]


@dataclass
class LabelVolume:
    """Integer labels per voxel; 0 is background."""

    geometry: VolumeGeometry
    labels: np.ndarray  # [x, y, z] int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != self.geometry.shape:
            raise InvalidInput("label array shape does not match geometry")
        if np.any(self.labels < 0):
            raise InvalidInput("labels must be non-negative")

    @property
    def k(self):
        return int(self.labels.max(initial=0))

    def check_contiguous(self):
        present = np.unique(self.labels[self.labels > 0])
        if not np.array_equal(present, np.arange(1, present.size + 1)):
            raise InvalidInput("labels must cover 1..K without gaps")


@dataclass
class MaskVolume:
    geometry: VolumeGeometry
    flags: np.ndarray  # [x, y, z] bool

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.shape != self.geometry.shape:
            raise InvalidInput("mask array shape does not match geometry")

    @property
    def count(self):
        return int(self.flags.sum())

    @classmethod
    def full(cls, geometry):
        return cls(geometry, np.ones(geometry.shape, dtype=bool))


def atomic_write(path, data, mode="wb"):
    """Write ``data`` to a temp file beside ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"could not write {path}: {exc}") from exc


def _encode(geometry, payload, kind):
    nt = payload.shape[3]
    header = HEADER.pack(
        MAGIC, geometry.nx, geometry.ny, geometry.nz, nt,
        geometry.dx, geometry.dy, geometry.dz, geometry.tr, kind, 0,
    )
    body = np.ascontiguousarray(payload.transpose(3, 2, 1, 0), dtype="<f4").tobytes()
    return header + body


def _decode(buf, expect_kind=None):
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"file shorter than the {HEADER_SIZE}-byte header", len(buf))
    magic, nx, ny, nz, nt, dx, dy, dz, tr, kind, reserved = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    for off, (name, val) in zip((8, 12, 16, 20), (("nx", nx), ("ny", ny), ("nz", nz), ("nt", nt))):
        if val < 1:
            raise FormatError(f"{name} must be positive", off)
    for off, (name, val) in zip((24, 28, 32), (("dx", dx), ("dy", dy), ("dz", dz))):
        if not (math.isfinite(val) and val > 0):
            raise FormatError(f"{name} must be a positive finite value", off)
    if not (math.isfinite(tr) and tr >= 0):
        raise FormatError("tr must be a non-negative finite value", 36)
    if kind not in (KIND_SERIES, KIND_LABELS, KIND_MASK):
        raise FormatError(f"unknown kind tag {kind}", 40)
    if reserved != 0:
        raise FormatError("reserved header field is not zero", 41)
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected kind {expect_kind}, found {kind}", 40)
    payload_bytes = nx * ny * nz * nt * 4
    if payload_bytes > MAX_PAYLOAD_BYTES:
        raise FormatError(f"declared payload of {payload_bytes} bytes is too large", 8)
    available = len(buf) - HEADER_SIZE
    if available < payload_bytes:
        raise FormatError(
            f"truncated payload: header declares {payload_bytes} bytes, found {available}",
            len(buf),
        )
    if available > payload_bytes:
        raise FormatError("trailing bytes after payload", HEADER_SIZE + payload_bytes)
    flat = np.frombuffer(buf, dtype="<f4", count=nx * ny * nz * nt, offset=HEADER_SIZE)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError("non-finite voxel value", HEADER_SIZE + 4 * int(bad[0]))
    data = flat.astype(np.float32).reshape(nt, nz, ny, nx).transpose(3, 2, 1, 0)
    geometry = VolumeGeometry(nx, ny, nz, float(dx), float(dy), float(dz), float(tr))
    return geometry, kind, data


def _read_bytes(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE or head[:8] != MAGIC:
            return head
        # never read past what the header declares (+1 byte to detect trailing data)
        nx, ny, nz, nt = HEADER.unpack_from(head)[1:5]
        declared = nx * ny * nz * nt * 4
        if declared > MAX_PAYLOAD_BYTES:
            return head
        return head + fh.read(declared + 1)


def read_f4d(path):
    geometry, kind, data = _decode(_read_bytes(path))
    return Volume4D(geometry, data)


def _check_finite(arr):
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("refusing to write non-finite values")


def write_f4d(volume, path):
    _check_finite(volume.data)
    atomic_write(path, _encode(volume.geometry, volume.data, KIND_SERIES))


def read_labels(path):
    geometry, kind, data = _decode(_read_bytes(path), KIND_LABELS)
    if data.shape[3] != 1:
        raise FormatError("label volume must have nt = 1", 20)
    values = data[..., 0].astype(np.float64)
    rounded = np.rint(values)
    off = np.abs(values - rounded) > 1e-6
    if np.any(off):
        flat = np.flatnonzero(off.transpose(2, 1, 0).ravel())[0]
        raise FormatError("label value is not an integer", HEADER_SIZE + 4 * int(flat))
    if np.any(rounded < 0):
        raise FormatError("negative label value", HEADER_SIZE)
    return LabelVolume(geometry, rounded.astype(np.int64))


def write_labels(labels, path):
    arr = labels.labels.astype(np.float32)[..., None]
    atomic_write(path, _encode(labels.geometry, arr, KIND_LABELS))


def read_mask(path):
    geometry, kind, data = _decode(_read_bytes(path), KIND_MASK)
    if data.shape[3] != 1:
        raise FormatError("mask volume must have nt = 1", 20)
    values = data[..., 0]
    bad = (values != 0.0) & (values != 1.0)
    if np.any(bad):
        flat = np.flatnonzero(bad.transpose(2, 1, 0).ravel())[0]
        raise FormatError("mask value must be 0.0 or 1.0", HEADER_SIZE + 4 * int(flat))
    return MaskVolume(geometry, values == 1.0)


def write_mask(mask, path):
    arr = mask.flags.astype(np.float32)[..., None]
    atomic_write(path, _encode(mask.geometry, arr, KIND_MASK))


def format_number(value):
    """Shortest round-trip decimal; integral values lose the trailing ``.0``."""
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def to_csv(rows, header=None):
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else format_number(v) for v in row))
    return "".join(line + "\n" for line in lines)


def write_csv(rows, path, header=None):
    atomic_write(path, to_csv(rows, header), mode="w")


def write_centroids_csv(matrix, path, header=False):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    _check_finite(matrix)
    cols = [f"t{j}" for j in range(matrix.shape[1])] if header else None
    write_csv(matrix.tolist(), path, cols)


def read_centroids_csv(path, header=False):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if header:
        lines = lines[1:]
    return np.array([[float(v) for v in line.split(",")] for line in lines if line])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if not math.isfinite(value):
            raise InvalidInput("refusing to write non-finite value to JSON")
        return value
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report_json(report, path):
    atomic_write(path, json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n", mode="w")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_tree_json(tree, path):
    write_report_json(tree.to_dict(), path)


def read_tree_json(path):
    from .clustering import HierarchyTree

    return HierarchyTree.from_dict(read_json(path))
