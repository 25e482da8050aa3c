"""Binary measurement and image files, plus a PGM/PPM writer.

All formats are little-endian with a magic tag and version number.
Writes go through a temporary file in the target directory and are
renamed into place, so a failed run leaves no partial output.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .media import ImageGrid
from .pulse import PulseSpec

MEAS_MAGIC = b"UMBM"
IMAGE_MAGIC = b"UMBI"
VERSION = 1

_MEAS_HEAD = struct.Struct("<4sIIIdd")        # magic, version, S, K, fs, T_o
_MEAS_FREQ = struct.Struct("<Iddd")           # M, f0, duration, taper
_MEAS_TAIL = struct.Struct("<II")             # payload crc32, header crc32
_IMG_HEAD = struct.Struct("<4sIIIddd")        # magic, version, rows, cols, pitch, origin depth, origin height


class FormatError(ValueError):
    pass


@contextmanager
def atomic_write(path, mode="wb"):
    """Yield a temporary file handle; rename onto ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

@dataclass
class MeasurementFile:
    specs: list                 # PulseSpec per frequency
    traces: list                # (K, M_s) float32 arrays
    extra: dict = field(default_factory=dict)

    @property
    def S(self):
        return len(self.specs)

    @property
    def K(self):
        return self.traces[0].shape[0]


def _meas_header(specs, K):
    fs = specs[0].fs
    T_o = specs[0].record_start
    for s in specs:
        if s.fs != fs or s.record_start != T_o:
            raise ValueError("all frequencies must share fs and record start")
    head = _MEAS_HEAD.pack(MEAS_MAGIC, VERSION, len(specs), K, fs, T_o)
    for s in specs:
        head += _MEAS_FREQ.pack(s.record_length, s.f0, s.duration, s.taper)
    return head


def write_measurements(path, specs, traces) -> None:
    specs = list(specs)
    arrs = [np.ascontiguousarray(t, dtype="<f4") for t in traces]
    if len(arrs) != len(specs):
        raise ValueError("one trace block per frequency")
    K = arrs[0].shape[0]
    for a, s in zip(arrs, specs):
        if a.shape != (K, s.record_length):
            raise ValueError(f"trace block {a.shape} does not match K={K}, M={s.record_length}")
    head = _meas_header(specs, K)
    payload = b"".join(a.tobytes() for a in arrs)
    pcrc = zlib.crc32(payload)
    hcrc = zlib.crc32(head + struct.pack("<I", pcrc))
    with atomic_write(path) as f:
        f.write(head)
        f.write(_MEAS_TAIL.pack(pcrc, hcrc))
        f.write(payload)


def read_measurements(path) -> MeasurementFile:
    buf = Path(path).read_bytes()
    if len(buf) < _MEAS_HEAD.size or buf[:4] != MEAS_MAGIC:
        raise FormatError(f"{path}: not a measurement file")
    magic, version, S, K, fs, T_o = _MEAS_HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = _MEAS_HEAD.size
    specs = []
    for _ in range(S):
        if pos + _MEAS_FREQ.size > len(buf):
            raise FormatError(f"{path}: truncated header")
        M, f0, dur, taper = _MEAS_FREQ.unpack_from(buf, pos)
        pos += _MEAS_FREQ.size
        specs.append(PulseSpec(f0, dur, fs, M, T_o, taper))
    head = buf[:pos]
    pcrc, hcrc = _MEAS_TAIL.unpack_from(buf, pos)
    pos += _MEAS_TAIL.size
    if zlib.crc32(head + struct.pack("<I", pcrc)) != hcrc:
        raise FormatError(f"{path}: header checksum mismatch")
    n = sum(s.record_length for s in specs) * K
    payload = buf[pos:]
    if len(payload) != 4 * n:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    if zlib.crc32(payload) != pcrc:
        raise FormatError(f"{path}: payload checksum mismatch")
    data = np.frombuffer(payload, dtype="<f4")
    traces, off = [], 0
    for s in specs:
        size = K * s.record_length
        traces.append(data[off:off + size].reshape(K, s.record_length).copy())
        off += size
    return MeasurementFile(specs, traces)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

@dataclass
class ImageFile:
    grid: ImageGrid
    raster: np.ndarray          # (rows, cols)
    meta: dict = field(default_factory=dict)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_image(path, grid: ImageGrid, raster, meta: dict | None = None) -> None:
    """Raster as little-endian float32 plus a JSON sidecar of metadata."""
    r = np.ascontiguousarray(raster, dtype="<f4")
    if r.shape != grid.shape:
        raise ValueError(f"raster {r.shape} does not match grid {grid.shape}")
    head = _IMG_HEAD.pack(IMAGE_MAGIC, VERSION, grid.rows, grid.cols, grid.pitch, *grid.origin)
    with atomic_write(path) as f:
        f.write(head)
        f.write(r.tobytes())
    with atomic_write(sidecar_path(path), "w") as f:
        json.dump(meta or {}, f, indent=1, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def read_image(path) -> ImageFile:
    buf = Path(path).read_bytes()
    if len(buf) < _IMG_HEAD.size or buf[:4] != IMAGE_MAGIC:
        raise FormatError(f"{path}: not an image file")
    magic, version, rows, cols, pitch, od, oh = _IMG_HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = buf[_IMG_HEAD.size:]
    if len(payload) != 4 * rows * cols:
        raise FormatError(f"{path}: raster has {len(payload)} bytes, expected {4 * rows * cols}")
    raster = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return ImageFile(ImageGrid(rows, cols, pitch, (od, oh)), raster, meta)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def to_gray(image, signed=True) -> np.ndarray:
    """Map to uint8: symmetric about zero when ``signed``, else min..max."""
    a = np.asarray(image, dtype=float)
    a = np.where(np.isfinite(a), a, 0.0)
    if signed:
        m = np.abs(a).max()
        u = 0.5 + 0.5 * a / m if m > 0 else np.full(a.shape, 0.5)
    else:
        lo, hi = a.min(), a.max()
        u = (a - lo) / (hi - lo) if hi > lo else np.zeros(a.shape)
    return np.clip(np.round(u * 255), 0, 255).astype(np.uint8)


def write_pgm(path, image, signed=True) -> None:
    g = to_gray(image, signed)
    with atomic_write(path) as f:
        f.write(b"P5\n%d %d\n255\n" % (g.shape[1], g.shape[0]))
        f.write(g.tobytes())


def write_ppm(path, image) -> None:
    """Blue-white-red rendering of a signed image."""
    a = to_gray(image, signed=True).astype(float) / 255 * 2 - 1
    r = np.where(a > 0, 1.0, 1.0 + a)
    b = np.where(a < 0, 1.0, 1.0 - a)
    g = 1.0 - np.abs(a)
    rgb = np.clip(np.round(np.stack([r, g, b], axis=-1) * 255), 0, 255).astype(np.uint8)
    with atomic_write(path) as f:
        f.write(b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0]))
        f.write(rgb.tobytes())
