"""Transmitted pulse and its dispersion-filtered, windowed impulse responses."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

log = logging.getLogger(__name__)

DEFAULT_TAPER = 0.5
DEFAULT_ENERGY_FRACTION = 0.999
DEFAULT_OVERSAMPLE = 8


@dataclass(frozen=True)
class PulseSpec:
    """Narrow-band Tukey-windowed tone burst and the acquisition clock.

    Sample ``m`` of a record is taken at ``t_m = m / fs + record_start``.
    """

    f0: float
    duration: float
    fs: float
    record_length: int
    record_start: float = 0.0
    taper: float = DEFAULT_TAPER

    def __post_init__(self):
        if not 0 < self.f0 < self.fs / 2:
            raise ValueError(f"f0={self.f0} Hz violates Nyquist for fs={self.fs} Hz")
        if self.duration * self.fs < 2:
            raise ValueError("pulse must span at least two samples")
        if self.record_length < 1:
            raise ValueError("record length must be >= 1")
        if not 0 <= self.taper <= 1:
            raise ValueError("taper ratio must be in [0, 1]")

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    @property
    def n_support(self) -> int:
        return int(np.ceil(self.duration * self.fs - 1e-9))

    def times(self) -> np.ndarray:
        return self.record_start + np.arange(self.record_length) / self.fs


def tukey(u, taper):
    """Continuous Tukey window on [0, 1]; zero outside."""
    u = np.asarray(u, dtype=float)
    w = np.where((u >= 0) & (u <= 1), 1.0, 0.0)
    if taper > 0:
        half = taper / 2
        rise = (u >= 0) & (u < half)
        fall = (u > 1 - half) & (u <= 1)
        w = np.where(rise, 0.5 * (1 - np.cos(2 * np.pi * u / taper)), w)
        w = np.where(fall, 0.5 * (1 - np.cos(2 * np.pi * (1 - u) / taper)), w)
    return w


def pulse_waveform(spec: PulseSpec, t) -> np.ndarray:
    """s(t) evaluated at arbitrary times."""
    t = np.asarray(t, dtype=float)
    return tukey(t / spec.duration, spec.taper) * np.sin(2 * np.pi * spec.f0 * t)


def make_pulse(spec: PulseSpec) -> np.ndarray:
    """Pulse samples at t = n / fs, n = 0 .. n_support - 1."""
    return pulse_waveform(spec, np.arange(spec.n_support) / spec.fs)


@dataclass(frozen=True)
class Kernel:
    gamma: float
    samples: np.ndarray
    t0: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("kernel samples must be finite")


def _fft_length(spec: PulseSpec, gamma: float) -> int:
    spread = int(np.ceil(20 * gamma * spec.fs)) if np.isfinite(gamma) else 0
    n = 4 * spec.n_support + min(spread, 1 << 20)
    return sfft.next_fast_len(max(n, 64), real=True)


def _filtered_spectrum(spec: PulseSpec, gamma: float, n_fft: int) -> np.ndarray:
    S = sfft.rfft(make_pulse(spec), n=n_fft)
    f = sfft.rfftfreq(n_fft, d=spec.dt)
    return S * np.exp(-gamma * f)


def dispersion_kernel(spec: PulseSpec, gamma: float, n_fft: int | None = None) -> Kernel:
    """h(gamma, t): inverse transform of S(f) exp(-gamma |f|), causal half.

    The filter is real and even in f, so the result is real and zero-phase;
    the time origin is the pulse onset.  Samples returned cover
    ``t = 0 .. n_fft/2 - 1`` (the other half is the wrapped t < 0 part).
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if n_fft is None:
        n_fft = _fft_length(spec, gamma)
    h = sfft.irfft(_filtered_spectrum(spec, gamma, n_fft), n=n_fft)
    half = n_fft // 2
    return Kernel(float(gamma), h[:half], half / spec.fs)


def window_kernel(kernel: Kernel, t0: float, fs: float, tail_frac: float = 1 - DEFAULT_ENERGY_FRACTION) -> Kernel:
    """Zero the kernel outside [0, t0)."""
    if not t0 > 0:
        raise ValueError("t0 must be > 0")
    n = int(np.ceil(t0 * fs - 1e-9))
    s = kernel.samples
    kept = s[:n]
    if n > len(s):
        kept = np.concatenate([s, np.zeros(n - len(s))])
    total = float(np.sum(s * s))
    if total > 0:
        lost = 1.0 - float(np.sum(kept * kept)) / total
        if lost > tail_frac:
            log.warning("window t0=%.3g s discards %.3g of kernel energy (gamma=%.3g)",
                        t0, lost, kernel.gamma)
    return Kernel(kernel.gamma, kept.copy(), n / fs)


def default_window_samples(spec: PulseSpec, energy_fraction: float = DEFAULT_ENERGY_FRACTION) -> int:
    """Smallest whole-sample window keeping ``energy_fraction`` of the gamma=0 kernel."""
    h = dispersion_kernel(spec, 0.0).samples
    e = np.cumsum(h * h)
    return int(np.searchsorted(e, energy_fraction * e[-1]) + 1)


def dense_kernel(spec: PulseSpec, gamma: float, n_taps: int, oversample: int = DEFAULT_OVERSAMPLE,
                 n_fft: int | None = None) -> np.ndarray:
    """Band-limited interpolation of h(gamma, t) on t = k dt / oversample, k = 0..n_taps*oversample."""
    if n_fft is None:
        n_fft = _fft_length(spec, gamma)
    H = _filtered_spectrum(spec, gamma, n_fft)
    if n_fft % 2 == 0:
        H[-1] *= 0.5  # split the Nyquist bin so integer-sample values are reproduced exactly
    h = sfft.irfft(H, n=n_fft * oversample) * oversample
    return h[: n_taps * oversample + 1]


class KernelBank:
    """Windowed kernels on a gamma grid, evaluated by bilinear interpolation.

    Rows are kernels for ``gammas[k]``; columns are times ``k dt / oversample``
    on [0, t0].  Reads are lock-free; inserts (``ensure``) take a lock.
    """

    def __init__(self, spec: PulseSpec, n_taps: int | None = None, oversample: int = DEFAULT_OVERSAMPLE,
                 gamma_step: float | None = None):
        self.spec = spec
        self.n_taps = n_taps if n_taps is not None else default_window_samples(spec)
        self.oversample = oversample
        # bilinear error in gamma ~ (f dgamma)^2 / 8 at the upper pulse band edge
        self.gamma_step = gamma_step if gamma_step is not None else 0.02 / (2.0 * spec.f0)
        self._lock = threading.Lock()
        self.table = np.zeros((0, self.n_taps * oversample + 1))

    @property
    def t0(self) -> float:
        return self.n_taps / self.spec.fs

    @property
    def gammas(self) -> np.ndarray:
        return np.arange(len(self.table)) * self.gamma_step

    def ensure(self, gamma_max: float) -> None:
        n_needed = int(np.floor(gamma_max / self.gamma_step)) + 2
        if n_needed <= len(self.table):
            return
        with self._lock:
            start = len(self.table)
            if n_needed <= start:
                return
            rows = [dense_kernel(self.spec, k * self.gamma_step, self.n_taps, self.oversample)
                    for k in range(start, n_needed)]
            table = np.vstack([self.table] + rows) if start else np.vstack(rows)
            self.table = table

    def __call__(self, gamma, tau) -> np.ndarray:
        """h~(gamma, tau) for arrays of gamma and tau (seconds); zero outside [0, t0)."""
        gamma = np.asarray(gamma, dtype=float)
        tau = np.asarray(tau, dtype=float)
        self.ensure(float(np.max(gamma, initial=0.0)))
        g = gamma / self.gamma_step
        k0 = np.floor(g).astype(int)
        wg = g - k0
        f = tau * self.spec.fs * self.oversample
        inside = (f >= 0) & (tau < self.t0)
        f = np.where(inside, f, 0.0)
        i0 = np.minimum(np.floor(f).astype(int), self.table.shape[1] - 2)
        wt = f - i0
        T = self.table
        v0 = T[k0, i0] * (1 - wt) + T[k0, i0 + 1] * wt
        v1 = T[k0 + 1, i0] * (1 - wt) + T[k0 + 1, i0 + 1] * wt
        return np.where(inside, v0 * (1 - wg) + v1 * wg, 0.0)
