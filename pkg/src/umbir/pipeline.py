"""Glue between configs, systems, data and the solvers (used by the CLI)."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from pathlib import Path

import numpy as np

from .config import Config
from .prior import clique_table, variance_field
from .pulse import KernelBank
from .raypath import delay_table
from .saft import SaftConfig, saft_multifrequency, saft_reconstruct
from .solver import ReconProblem, ReconResult, reconstruct
from .synth import MeasurementSet, coarsen, make_phantom, synthesize, synthesize_offgrid
from .system import (MultiFreqSystem, SparseSystem, build_system, load_system, save_system,
                     stack_multifrequency)

log = logging.getLogger(__name__)


def parse_frequencies(text: str | None, S: int) -> list[int]:
    """'all' or a comma-separated index list."""
    if text is None or text.strip().lower() == "all":
        return list(range(S))
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValueError(f"--frequencies: expected 'all' or indices, got {text!r}") from None
    if not idx or any(not 0 <= i < S for i in idx):
        raise ValueError(f"--frequencies: indices must be in 0..{S - 1}")
    if len(set(idx)) != len(idx):
        raise ValueError("--frequencies: duplicate index")
    return idx


def system_key(cfg: Config, indices) -> str:
    specs = cfg.pulse_specs(indices)
    h = hashlib.sha256(repr((cfg.medium, cfg.geometry, cfg.grid, cfg.beam, specs)).encode())
    return h.hexdigest()[:20]


def build_systems(cfg: Config, indices=None) -> list[SparseSystem]:
    specs = cfg.pulse_specs(indices)
    table = delay_table(cfg.medium, cfg.geometry, cfg.grid)
    return [build_system(cfg.medium, cfg.geometry, cfg.grid, s, cfg.beam, table, KernelBank(s))
            for s in specs]


def stacked_system(cfg: Config, indices, cache_dir=None) -> MultiFreqSystem:
    """Multi-frequency system with per-frequency noise weighting, optionally cached on disk."""
    indices = list(range(len(cfg.frequencies))) if indices is None else list(indices)
    weights = [cfg.solver.sigma / s for s in cfg.frequency_sigmas(indices)]
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"system-{system_key(cfg, indices)}.umbr"
        if path.exists():
            log.info("loading cached system %s", path)
            mf = load_system(path, cfg.pulse_specs(indices))
            return _reweight(mf, weights)
    systems = build_systems(cfg, indices)
    mf = stack_multifrequency(systems)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_system(path, mf)
    return _reweight(mf, weights)


def _reweight(mf: MultiFreqSystem, weights) -> MultiFreqSystem:
    if all(w == 1.0 for w in weights):
        mf.weights = list(weights)
        return mf
    from .system import RunMatrix
    A, D = mf.A, mf.D
    row_w = np.concatenate([np.full(mf.row_offsets[s + 1] - mf.row_offsets[s], w)
                            for s, w in enumerate(weights)])
    # runs never straddle frequency blocks, so one weight per run suffices
    def scale(m):
        vals = m.values.copy()
        for i in range(m.shape[1]):
            for b in range(m.n_runs):
                n = m.length[i, b]
                if n:
                    p = m.ptr[i, b]
                    vals[p:p + n] *= row_w[m.start[i, b]]
        return RunMatrix(m.n_rows, m.start, m.length, m.ptr, vals)
    out = MultiFreqSystem(scale(A), scale(D), mf.specs, mf.n_receivers, mf.row_offsets)
    out.weights = list(weights)
    return out


def make_problem(cfg: Config, mf: MultiFreqSystem, traces, seed=None, sigma0_scale=1.0,
                 iterations=None) -> ReconProblem:
    weights = getattr(mf, "weights", [1.0] * mf.S)
    y = np.concatenate([np.asarray(t, dtype=float).ravel() * w for t, w in zip(traces, weights)])
    prior = cliques = None
    if cfg.solver.use_prior:
        prior = cfg.prior
        if sigma0_scale != 1.0:
            prior = dataclasses.replace(prior, sigma0=prior.sigma0 * sigma0_scale)
        field = variance_field(cfg.grid, cfg.geometry, prior.nu, prior.a, prior.sigma0)
        cliques = clique_table(cfg.grid, prior, field)
    return ReconProblem(mf.A, y, cfg.solver.sigma, mf.D if cfg.solver.use_direct else None,
                        prior, cliques, cfg.solver.iterations if iterations is None else iterations,
                        cfg.seed if seed is None else seed, cfg.solver.early_exit_tol,
                        cfg.solver.relaxation)


def run_umbir(cfg: Config, traces, indices=None, cache_dir=None, seed=None, log_stream=None) -> ReconResult:
    """Single- or multi-frequency reconstruction from per-frequency (K, M) traces."""
    indices = list(range(len(cfg.frequencies))) if indices is None else list(indices)
    if len(traces) != len(indices):
        raise ValueError(f"{len(traces)} trace blocks for {len(indices)} frequencies")
    mf = stacked_system(cfg, indices, cache_dir)
    x = g = None
    if cfg.solver.use_prior:
        # continuation: a few sweeps under a tighter prior keep the strongly coupled
        # neighbouring columns from drifting into near-null-space patterns
        for scale in cfg.solver.warm_start:
            warm = reconstruct(make_problem(cfg, mf, traces, seed, scale, cfg.solver.warm_sweeps), x, g)
            x, g = warm.x, warm.g
            log.info("warm start sigma0 x %g: cost %.6g", scale, warm.costs[-1])
    problem = make_problem(cfg, mf, traces, seed)
    return reconstruct(problem, x, g, log_stream=log_stream)


def run_saft(cfg: Config, traces, indices=None) -> np.ndarray:
    indices = list(range(len(cfg.frequencies))) if indices is None else list(indices)
    table = delay_table(cfg.medium, cfg.geometry, cfg.grid)
    sc = SaftConfig(cfg.saft.envelope, cfg.saft.apodize, cfg.saft.matched_filter)
    specs = cfg.pulse_specs(indices)
    if len(indices) == 1:
        return saft_reconstruct(traces[0], table, cfg.grid, specs[0], sc, cfg.beam)
    return saft_multifrequency(traces, table, cfg.grid, specs, sc, cfg.beam)


def phantom_for(cfg: Config, refinement: int = 1, notch_visible: bool = True):
    s = cfg.synth
    return make_phantom(s.phantom, cfg.grid, s.wall_depth, s.notch_depth, s.notch_height,
                        s.defects, refinement, notch_visible)


def run_synth(cfg: Config, seed=None, offgrid=True) -> MeasurementSet:
    seed = cfg.seed if seed is None else seed
    s = cfg.synth
    if offgrid:
        ph = phantom_for(cfg, s.refinement)
        return synthesize_offgrid(ph, cfg.medium, cfg.geometry, cfg.pulse_specs(), cfg.beam,
                                  cfg.grid, s.snr_db, s.noise_sigma, s.direct_scale, seed)
    ph = phantom_for(cfg, 1)
    return synthesize(ph, build_systems(cfg), s.snr_db, s.noise_sigma, s.direct_scale, seed)


def truth_image(cfg: Config) -> np.ndarray:
    ph = phantom_for(cfg, cfg.synth.refinement)
    return coarsen(ph, cfg.grid).x
