"""Delay-and-sum (SAFT) baseline through the layered medium.

Uses the same delay tables as the model-based reconstruction, so the two
differ only in the inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal as ssig

from .media import ImageGrid
from .pulse import PulseSpec, make_pulse
from .raypath import DelayTable
from .system import BeamParams, apodization


@dataclass(frozen=True)
class SaftConfig:
    envelope: bool = True
    apodize: bool = True
    # correlate with the transmitted pulse first so peaks sit at the onset delay
    matched_filter: bool = True


def preprocess(traces: np.ndarray, spec: PulseSpec, config: SaftConfig) -> np.ndarray:
    """Optional matched filter and envelope detection, per receiver trace."""
    y = np.atleast_2d(np.asarray(traces, dtype=float))
    if config.matched_filter:
        p = make_pulse(spec)
        # full correlation; lag 0 sits at index len(p) - 1
        c = ssig.fftconvolve(y, p[None, ::-1], mode="full", axes=1)
        y = c[:, len(p) - 1:len(p) - 1 + y.shape[1]]
    if config.envelope:
        y = np.abs(ssig.hilbert(y, axis=1))
    return y


def saft_reconstruct(traces, table: DelayTable, grid: ImageGrid, spec: PulseSpec,
                     config: SaftConfig = SaftConfig(), beam: BeamParams | None = None) -> np.ndarray:
    """x(v) = sum_j w_j(v) y_j(T_j(v)), linear interpolation in time.

    ``traces`` is (K, M).  Unreachable pairs and delays outside the record
    contribute nothing.
    """
    y = preprocess(traces, spec, config)
    K, M = y.shape
    if table.T.shape != (grid.n_voxels, K):
        raise ValueError(f"delay table {table.T.shape} does not match grid/receivers ({grid.n_voxels}, {K})")
    pos = (table.T - spec.record_start) * spec.fs
    ok = table.reachable & np.isfinite(pos) & (pos >= 0) & (pos <= M - 1)
    pos = np.where(ok, pos, 0.0)
    i0 = np.minimum(np.floor(pos).astype(int), M - 2)
    w = pos - i0
    j = np.broadcast_to(np.arange(K), pos.shape)
    vals = y[j, i0] * (1 - w) + y[j, i0 + 1] * w
    if config.apodize:
        beam = beam or BeamParams()
        vals = vals * apodization(table.theta_t1[:, None], table.theta_r1, beam)
    vals = np.where(ok, vals, 0.0)
    return vals.sum(axis=1).reshape(grid.shape)


def saft_multifrequency(traces_list, table, grid, specs, config=SaftConfig(), beam=None) -> np.ndarray:
    """Mean of the single-frequency images, each scaled to unit peak magnitude."""
    out = np.zeros(grid.shape)
    for tr, spec in zip(traces_list, specs):
        img = saft_reconstruct(tr, table, grid, spec, config, beam)
        peak = np.abs(img).max()
        if peak > 0:
            out += img / peak
    return out / len(specs)
