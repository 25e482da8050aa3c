"""System matrix A, direct-arrival matrix D and their multi-frequency stack.

Both matrices are stored column-wise as runs of consecutive rows
(:class:`RunMatrix`); ICD only ever needs column access.  Rows of a
single-frequency system are ordered receiver-major then time, so receiver
``j`` owns rows ``j*M .. (j+1)*M - 1``.  Stacked systems put frequency
blocks one after another.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _loops
from .media import ArrayGeometry, ImageGrid, LayeredMedium
from .pulse import KernelBank, PulseSpec
from .raypath import DelayTable, direct_arrival_delays

log = logging.getLogger(__name__)


class RunMatrix:
    """Column-sparse matrix made of contiguous row runs.

    ``start``, ``length`` and ``ptr`` are ``(n_cols, n_runs)`` arrays; run
    ``b`` of column ``i`` covers rows ``start[i,b] : start[i,b]+length[i,b]``
    with values ``values[ptr[i,b] : ptr[i,b]+length[i,b]]``.
    """

    def __init__(self, n_rows, start, length, ptr, values):
        self.n_rows = int(n_rows)
        self.start = np.ascontiguousarray(start, dtype=np.int64)
        self.length = np.ascontiguousarray(length, dtype=np.int64)
        self.ptr = np.ascontiguousarray(ptr, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float32)
        if self.start.shape != self.length.shape or self.start.shape != self.ptr.shape:
            raise ValueError("run arrays must share a shape")

    @property
    def shape(self):
        return (self.n_rows, self.start.shape[0])

    @property
    def n_runs(self):
        return self.start.shape[1]

    @property
    def nnz(self):
        return int(self.length.sum())

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise ValueError(f"expected x of length {self.shape[1]}, got {x.shape}")
        return _loops.matvec(self.start, self.length, self.ptr, self.values, x, self.n_rows)

    def rmatvec(self, y):
        y = np.ascontiguousarray(y, dtype=float)
        if y.shape != (self.n_rows,):
            raise ValueError(f"expected y of length {self.n_rows}, got {y.shape}")
        return _loops.rmatvec(self.start, self.length, self.ptr, self.values, y)

    def __matmul__(self, x):
        return self.matvec(x)

    def column_norms2(self):
        return _loops.column_norms2(self.start, self.length, self.ptr, self.values)

    def column(self, i) -> np.ndarray:
        out = np.zeros(self.n_rows)
        for b in range(self.n_runs):
            n = self.length[i, b]
            if n:
                s, p = self.start[i, b], self.ptr[i, b]
                out[s:s + n] = self.values[p:p + n]
        return out

    def to_dense(self) -> np.ndarray:
        return np.stack([self.column(i) for i in range(self.shape[1])], axis=1)

    def to_scipy(self):
        from scipy import sparse
        cols, rows, vals = [], [], []
        for i in range(self.shape[1]):
            for b in range(self.n_runs):
                n = self.length[i, b]
                if n:
                    rows.append(self.start[i, b] + np.arange(n))
                    cols.append(np.full(n, i))
                    vals.append(self.values[self.ptr[i, b]:self.ptr[i, b] + n])
        if not rows:
            return sparse.csc_matrix(self.shape)
        return sparse.csc_matrix(
            (np.concatenate(vals).astype(float), (np.concatenate(rows), np.concatenate(cols))),
            shape=self.shape)

    def stats(self) -> dict:
        n = self.shape[1]
        return {"shape": self.shape, "nnz": self.nnz,
                "density": self.nnz / max(1, self.shape[0] * n),
                "max_nnz_per_column": int(self.length.sum(axis=1).max(initial=0)),
                "empty_columns": int((self.length.sum(axis=1) == 0).sum())}


def vstack(mats: Sequence[RunMatrix]) -> RunMatrix:
    """Stack matrices with the same column count on top of each other."""
    n_cols = {m.shape[1] for m in mats}
    if len(n_cols) != 1:
        raise ValueError("all blocks must have the same number of columns")
    row_off = np.cumsum([0] + [m.n_rows for m in mats])
    val_off = np.cumsum([0] + [len(m.values) for m in mats])
    start = np.concatenate([m.start + row_off[k] for k, m in enumerate(mats)], axis=1)
    ptr = np.concatenate([m.ptr + val_off[k] for k, m in enumerate(mats)], axis=1)
    length = np.concatenate([m.length for m in mats], axis=1)
    values = np.concatenate([m.values for m in mats])
    return RunMatrix(row_off[-1], start, length, ptr, values)


def block_diag(mats: Sequence[RunMatrix]) -> RunMatrix:
    """Block-diagonal placement; all blocks must have the same run count."""
    n_runs = {m.n_runs for m in mats}
    if len(n_runs) != 1:
        raise ValueError("blocks must have the same run count")
    row_off = np.cumsum([0] + [m.n_rows for m in mats])
    val_off = np.cumsum([0] + [len(m.values) for m in mats])
    start = np.concatenate([m.start + row_off[k] for k, m in enumerate(mats)], axis=0)
    ptr = np.concatenate([m.ptr + val_off[k] for k, m in enumerate(mats)], axis=0)
    length = np.concatenate([m.length for m in mats], axis=0)
    values = np.concatenate([m.values for m in mats])
    return RunMatrix(row_off[-1], start, length, ptr, values)


# ---------------------------------------------------------------------------
# amplitude factor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BeamParams:
    beta: float = 8.0
    pointing_angle: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def apodization(theta_t1, theta_r1, beam: BeamParams):
    """cos^beta(theta_t1 - theta_p) * cos^2(theta_r1), zero on the back lobe."""
    c = np.cos(np.asarray(theta_t1, dtype=float) - beam.pointing_angle)
    c = np.where(c > 0, c, 0.0)
    return c ** beam.beta * np.cos(np.asarray(theta_r1, dtype=float)) ** 2


def transmission_factor(medium: LayeredMedium, phi=1.0, n_layers: int | None = None):
    """phi times the outbound and return interface transmission products.

    Only the first ``n_layers`` layers (those the ray crosses) contribute;
    by default the whole stack.
    """
    z = medium.impedance
    n = len(z) if n_layers is None else int(n_layers)
    z = z[:n]
    outbound = np.prod(2 * z[1:] / (z[:-1] + z[1:]))
    back = np.prod(2 * z[:-1] / (z[:-1] + z[1:]))
    return phi * outbound * back


def amplitude_table(medium: LayeredMedium, table: DelayTable, beam: BeamParams) -> np.ndarray:
    """lambda(v) for every (voxel, receiver); zero where unreachable."""
    per_depth = np.array([transmission_factor(medium, 1.0, n) for n in range(1, len(medium) + 1)])
    trans = per_depth[np.clip(table.n_path_layers, 1, len(medium)) - 1]
    phi = apodization(table.theta_t1[:, None], table.theta_r1, beam)
    lam = phi * trans[:, None]
    return np.where(table.reachable, lam, 0.0)


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------

def _runs_from_delays(T, gamma, lam, spec: PulseSpec, bank: KernelBank, row_offsets) -> RunMatrix:
    T = np.ascontiguousarray(T, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    gamma = np.ascontiguousarray(np.where(np.isfinite(gamma), gamma, 0.0), dtype=float)
    M = spec.record_length
    first, count = _loops.run_extents(T, lam, spec.record_start, spec.fs, bank.n_taps, M)
    bank.ensure(float(gamma.max(initial=0.0)))
    ptr = np.zeros(count.size, dtype=np.int64)
    np.cumsum(count.ravel()[:-1], out=ptr[1:])
    ptr = ptr.reshape(count.shape)
    values = np.zeros(int(count.sum()), dtype=np.float32)
    _loops.fill_runs(T, gamma, lam, first, count, ptr, values, bank.table, bank.gamma_step,
                     spec.record_start, spec.fs, bank.oversample, bank.n_taps)
    start = first + np.asarray(row_offsets, dtype=np.int64)[None, :]
    return RunMatrix(len(row_offsets) * M, start, count, ptr, values)


def build_A(table: DelayTable, spec: PulseSpec, medium: LayeredMedium, beam: BeamParams,
            bank: KernelBank | None = None) -> RunMatrix:
    """System matrix: column i holds lambda * h~(gamma_j, t_m - T_j) for each receiver band."""
    if bank is None:
        bank = KernelBank(spec)
    lam = table.lam if table.lam is not None else amplitude_table(medium, table, beam)
    N, K = table.T.shape
    A = _runs_from_delays(table.T, table.gamma, lam, spec, bank,
                          np.arange(K) * spec.record_length)
    log.info("A %s: nnz=%d, max per column=%d, empty columns=%d", A.shape, A.nnz,
             A.stats()["max_nnz_per_column"], A.stats()["empty_columns"])
    return A


def build_D(geometry: ArrayGeometry, spec: PulseSpec, bank: KernelBank | None = None) -> RunMatrix:
    """Block-diagonal direct-arrival basis, one column per receiver."""
    if bank is None:
        bank = KernelBank(spec)
    tau, gbar = direct_arrival_delays(geometry)
    K = geometry.n_receivers
    M = spec.record_length
    # column j is a one-voxel system restricted to receiver j
    T = np.full((K, K), np.nan)
    G = np.zeros((K, K))
    lam = np.zeros((K, K))
    idx = np.arange(K)
    T[idx, idx] = tau
    G[idx, idx] = gbar
    lam[idx, idx] = 1.0
    full = _runs_from_delays(T, G, lam, spec, bank, idx * M)
    # keep only the diagonal run of each column
    return RunMatrix(K * M, full.start[idx, idx][:, None], full.length[idx, idx][:, None],
                     full.ptr[idx, idx][:, None], full.values)


@dataclass
class SparseSystem:
    A: RunMatrix
    D: RunMatrix
    spec: PulseSpec
    n_receivers: int

    @property
    def M(self):
        return self.spec.record_length

    @property
    def K(self):
        return self.n_receivers

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def frequency(self):
        return self.spec.f0


def build_system(medium, geometry, grid, spec, beam, table=None, bank=None) -> SparseSystem:
    from .raypath import delay_table
    if table is None:
        table = delay_table(medium, geometry, grid)
    if bank is None:
        bank = KernelBank(spec)
    A = build_A(table, spec, medium, beam, bank)
    D = build_D(geometry, spec, bank)
    return SparseSystem(A, D, spec, geometry.n_receivers)


@dataclass
class MultiFreqSystem:
    """Frequency-major stack: A rows concatenated, D block-diagonal."""

    A: RunMatrix
    D: RunMatrix
    specs: list
    n_receivers: int
    row_offsets: np.ndarray  # start row of each frequency block, length S + 1

    @property
    def S(self):
        return len(self.specs)

    @property
    def N(self):
        return self.A.shape[1]

    def block(self, s, y):
        return y[self.row_offsets[s]:self.row_offsets[s + 1]]


def stack_multifrequency(systems: Sequence[SparseSystem], measurements=None, weights=None):
    """Stack per-frequency systems (and measurements) into one system.

    ``weights`` optionally scales each frequency block of A, D and y (e.g.
    sigma / sigma_s for per-frequency noise levels).  Returns the stacked
    system, plus the stacked y when measurements are given.
    """
    systems = list(systems)
    if not systems:
        raise ValueError("nothing to stack")
    N = {s.N for s in systems}
    K = {s.K for s in systems}
    if len(N) != 1 or len(K) != 1:
        raise ValueError("systems must share the grid and receiver count")
    if weights is None:
        weights = [1.0] * len(systems)
    if len(weights) != len(systems):
        raise ValueError("one weight per frequency")
    As, Ds = [], []
    for s, w in zip(systems, weights):
        if w == 1.0:
            As.append(s.A)
            Ds.append(s.D)
        else:
            As.append(RunMatrix(s.A.n_rows, s.A.start, s.A.length, s.A.ptr, s.A.values * w))
            Ds.append(RunMatrix(s.D.n_rows, s.D.start, s.D.length, s.D.ptr, s.D.values * w))
    A = vstack(As) if len(As) > 1 else As[0]
    D = block_diag(Ds) if len(Ds) > 1 else Ds[0]
    offsets = np.cumsum([0] + [s.A.n_rows for s in systems])
    stacked = MultiFreqSystem(A, D, [s.spec for s in systems], K.pop(), offsets)
    if measurements is None:
        return stacked
    measurements = [np.asarray(m, dtype=float).ravel() for m in measurements]
    if len(measurements) != len(systems):
        raise ValueError("one measurement vector per frequency")
    for s, m in zip(systems, measurements):
        if m.shape != (s.A.n_rows,):
            raise ValueError(f"measurement of length {m.size} does not match system rows {s.A.n_rows}")
    y = np.concatenate([m * w for m, w in zip(measurements, weights)])
    return stacked, y


# ---------------------------------------------------------------------------
# binary cache
# ---------------------------------------------------------------------------

MATRIX_MAGIC = b"UMBR"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIdd")


def _write_runs(f, m: RunMatrix):
    f.write(struct.pack("<II", m.shape[0], m.shape[1]))
    for i in range(m.shape[1]):
        nz = np.flatnonzero(m.length[i])
        f.write(struct.pack("<I", len(nz)))
        for b in nz:
            n = int(m.length[i, b])
            f.write(struct.pack("<II", int(m.start[i, b]), n))
            p = m.ptr[i, b]
            f.write(m.values[p:p + n].astype("<f4").tobytes())


def _read_runs(buf, pos):
    n_rows, n_cols = struct.unpack_from("<II", buf, pos)
    pos += 8
    cols = []
    max_runs = 1
    for _ in range(n_cols):
        (nr,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        runs = []
        for _ in range(nr):
            s, n = struct.unpack_from("<II", buf, pos)
            pos += 8
            runs.append((s, np.frombuffer(buf, dtype="<f4", count=n, offset=pos)))
            pos += 4 * n
        cols.append(runs)
        max_runs = max(max_runs, nr)
    start = np.zeros((n_cols, max_runs), dtype=np.int64)
    length = np.zeros_like(start)
    ptr = np.zeros_like(start)
    chunks = []
    off = 0
    for i, runs in enumerate(cols):
        for b, (s, v) in enumerate(runs):
            start[i, b], length[i, b], ptr[i, b] = s, len(v), off
            chunks.append(v)
            off += len(v)
    values = np.concatenate(chunks) if chunks else np.zeros(0, np.float32)
    return RunMatrix(n_rows, start, length, ptr, values), pos


def save_system(path, system: MultiFreqSystem | SparseSystem) -> None:
    """Write A and D in the little-endian run-length cache format."""
    if isinstance(system, SparseSystem):
        specs, K = [system.spec], system.K
    else:
        specs, K = system.specs, system.n_receivers
    M = max(s.record_length for s in specs)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, M, K, system.A.shape[1], len(specs),
                             specs[0].fs, specs[0].record_start))
        f.write(np.array([s.record_length for s in specs], dtype="<u4").tobytes())
        _write_runs(f, system.A)
        _write_runs(f, system.D)
    tmp.replace(path)


def load_system(path, specs) -> MultiFreqSystem:
    buf = Path(path).read_bytes()
    magic, version, M, K, N, S, fs, T_o = _HEADER.unpack_from(buf, 0)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"{path}: not a system-matrix file")
    if version != MATRIX_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = _HEADER.size
    Ms = np.frombuffer(buf, dtype="<u4", count=S, offset=pos).astype(int)
    pos += 4 * S
    A, pos = _read_runs(buf, pos)
    D, pos = _read_runs(buf, pos)
    if A.shape[1] != N or len(specs) != S:
        raise ValueError(f"{path}: header does not match the requested configuration")
    offsets = np.cumsum([0] + [m * K for m in Ms])
    return MultiFreqSystem(A, D, list(specs), K, offsets)
