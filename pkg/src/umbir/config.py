"""Run configuration: TOML files mirroring the three acquisition profiles.

A config is a handful of sections (``medium``, ``geometry``, ``grid``,
``frequencies``, ``beam``, ``prior``, ``solver``, ``synth``, ``saft``,
``panorama``).  Validation collects every problem before failing so the
CLI can report them field by field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .media import ArrayGeometry, ImageGrid, Layer, LayeredMedium
from .prior import QggmrfParams
from .pulse import PulseSpec
from .system import BeamParams

PRESETS = ("cc-kwave", "cc-exp", "gb-exp")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one message per bad field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class FrequencyConfig:
    f0: float
    duration: float
    taper: float = 0.5
    sigma: float | None = None  # per-frequency noise level, defaults to solver.sigma


@dataclass
class SynthConfig:
    phantom: str = "cc-no-notch"
    snr_db: float | None = 20.0
    noise_sigma: float | None = None
    refinement: int = 4
    direct_scale: float = 0.0
    wall_depth: float = 0.1885
    notch_depth: float = 0.2385
    notch_height: float = 0.148
    defects: list = field(default_factory=list)


@dataclass
class SaftConfig:
    envelope: bool = True
    apodize: bool = True
    matched_filter: bool = True


@dataclass
class PanoramaConfig:
    angles: list = field(default_factory=lambda: list(np.linspace(0.0, 180.0, 37)))
    height: float = 0.27
    interpolation: str = "linear"


@dataclass
class SolverConfig:
    sigma: float = 0.1
    iterations: int = 100
    relaxation: float = 1.0
    early_exit_tol: float | None = None
    use_prior: bool = True
    use_direct: bool = True
    warm_start: tuple = ()   # sigma0 scale factors run before the main sweeps, strongest first
    warm_sweeps: int = 20


@dataclass
class Config:
    profile: str
    medium: LayeredMedium
    geometry: ArrayGeometry
    grid: ImageGrid
    fs: float
    record_length: int
    record_start: float
    frequencies: list
    beam: BeamParams
    prior: QggmrfParams
    solver: SolverConfig
    synth: SynthConfig
    saft: SaftConfig
    panorama: PanoramaConfig
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def pulse_specs(self, indices=None) -> list[PulseSpec]:
        idx = range(len(self.frequencies)) if indices is None else indices
        return [PulseSpec(self.frequencies[i].f0, self.frequencies[i].duration, self.fs,
                          self.record_length, self.record_start, self.frequencies[i].taper)
                for i in idx]

    def frequency_sigmas(self, indices=None) -> list[float]:
        idx = range(len(self.frequencies)) if indices is None else indices
        return [self.frequencies[i].sigma or self.solver.sigma for i in idx]

    def digest(self) -> str:
        """Stable hash of the raw settings (recorded in output sidecars)."""
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Checker:
    def __init__(self, raw):
        self.raw = raw
        self.problems = []

    def section(self, name, required=True):
        sec = self.raw.get(name)
        if sec is None:
            if required:
                self.problems.append(f"{name}: missing section")
            return {}
        if not isinstance(sec, dict):
            self.problems.append(f"{name}: expected a table")
            return {}
        return sec

    def number(self, sec, where, key, default=None, positive=False, nonneg=False, integer=False):
        name = f"{where}.{key}"
        if key not in sec:
            if default is None:
                self.problems.append(f"{name}: required")
                return math.nan
            return default
        v = sec[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.problems.append(f"{name}: expected a number, got {v!r}")
            return math.nan
        if integer and int(v) != v:
            self.problems.append(f"{name}: expected an integer, got {v!r}")
            return math.nan
        if not math.isfinite(v):
            self.problems.append(f"{name}: must be finite")
            return math.nan
        if positive and not v > 0:
            self.problems.append(f"{name}: must be > 0, got {v!r}")
        if nonneg and v < 0:
            self.problems.append(f"{name}: must be >= 0, got {v!r}")
        return int(v) if integer else float(v)

    def factors(self, sec, where, key):
        v = sec.get(key, [])
        if not isinstance(v, list) or not all(isinstance(f, (int, float)) and not isinstance(f, bool)
                                              and math.isfinite(f) and f > 0 for f in v):
            self.problems.append(f"{where}.{key}: expected a list of positive numbers, got {v!r}")
            return ()
        return tuple(float(f) for f in v)

    def flag(self, sec, where, key, default):
        v = sec.get(key, default)
        if not isinstance(v, bool):
            self.problems.append(f"{where}.{key}: expected true/false, got {v!r}")
            return default
        return v

    def build(self, name, fn):
        """Run a constructor, turning its ValueError into a listed problem."""
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            self.problems.append(f"{name}: {exc}")
            return None


_KNOWN = {"profile", "seed", "medium", "geometry", "grid", "acquisition", "frequencies", "beam",
          "prior", "solver", "synth", "saft", "panorama"}


def parse_config(raw: dict) -> Config:
    """Validate a config mapping; raises ConfigError listing every bad field."""
    ck = _Checker(raw)
    for key in raw:
        if key not in _KNOWN:
            ck.problems.append(f"{key}: unknown section")

    profile = str(raw.get("profile", "custom"))
    seed = ck.number(raw, "config", "seed", 0, nonneg=True, integer=True) if "seed" in raw else 0

    # medium
    med = ck.section("medium")
    layers = []
    rows = med.get("layers", [])
    if not isinstance(rows, list) or not rows:
        ck.problems.append("medium.layers: need at least one layer")
        rows = []
    for k, lay in enumerate(rows):
        where = f"medium.layers[{k}]"
        if not isinstance(lay, dict):
            ck.problems.append(f"{where}: expected a table")
            continue
        vals = [ck.number(lay, where, key, positive=True)
                for key in ("thickness", "speed", "density")]
        att = ck.number(lay, where, "attenuation", nonneg=True)
        if all(math.isfinite(v) for v in vals + [att]) and min(vals) > 0:
            layer = ck.build(where, lambda: Layer.from_density(vals[0], vals[1], att, vals[2],
                                                                str(lay.get("name", ""))))
            if layer is not None:
                layers.append(layer)
    medium = ck.build("medium", lambda: LayeredMedium(tuple(layers))) if layers and len(layers) == len(rows) else None

    # geometry
    geo = ck.section("geometry")
    g = {key: ck.number(geo, "geometry", key, positive=pos)
         for key, pos in (("transmitter_height", False), ("receiver_first_height", False),
                          ("receiver_spacing", True), ("embedding_speed", True))}
    n_rx = ck.number(geo, "geometry", "receivers", positive=True, integer=True)
    point = ck.number(geo, "geometry", "pointing_angle_deg", 0.0)
    emb_att = ck.number(geo, "geometry", "embedding_attenuation", 0.0, nonneg=True)
    offset = ck.number(geo, "geometry", "center_offset", 0.0, nonneg=True)
    geometry = None
    if all(math.isfinite(v) for v in list(g.values()) + [n_rx, point, emb_att, offset]):
        if not -90 < point < 90:
            ck.problems.append("geometry.pointing_angle_deg: must be in (-90, 90)")
        else:
            geometry = ck.build("geometry", lambda: ArrayGeometry.linear_array(
                g["transmitter_height"], math.radians(point), g["receiver_first_height"],
                g["receiver_spacing"], int(n_rx), g["embedding_speed"], emb_att, offset))

    # grid
    gr = ck.section("grid")
    rows_ = ck.number(gr, "grid", "rows", positive=True, integer=True)
    cols_ = ck.number(gr, "grid", "cols", positive=True, integer=True)
    pitch = ck.number(gr, "grid", "pitch", positive=True)
    od = ck.number(gr, "grid", "origin_depth", 0.0, nonneg=True)
    oh = ck.number(gr, "grid", "origin_height", 0.0)
    grid = None
    if all(math.isfinite(v) for v in (rows_, cols_, pitch, od, oh)):
        grid = ck.build("grid", lambda: ImageGrid(int(rows_), int(cols_), pitch, (od, oh)))
    if grid is not None and medium is not None:
        far = grid.depth_extent[1]
        if medium.total_depth + 1e-12 < far:
            ck.problems.append(f"medium: total depth {medium.total_depth:.4f} m does not cover the "
                               f"grid (far edge {far:.4f} m)")

    # acquisition
    acq = ck.section("acquisition")
    fs = ck.number(acq, "acquisition", "fs", positive=True)
    M = ck.number(acq, "acquisition", "record_length", positive=True, integer=True)
    T_o = ck.number(acq, "acquisition", "record_start", 0.0, nonneg=True)

    freqs = []
    fr = raw.get("frequencies")
    if not isinstance(fr, list) or not fr:
        ck.problems.append("frequencies: need at least one [[frequencies]] entry")
        fr = []
    for k, f in enumerate(fr):
        where = f"frequencies[{k}]"
        if not isinstance(f, dict):
            ck.problems.append(f"{where}: expected a table")
            continue
        f0 = ck.number(f, where, "f0", positive=True)
        dur = ck.number(f, where, "duration", positive=True)
        taper = ck.number(f, where, "taper", 0.5, nonneg=True)
        sig = ck.number(f, where, "sigma", positive=True) if "sigma" in f else None
        fc = FrequencyConfig(f0, dur, taper, sig)
        if all(math.isfinite(v) for v in (f0, dur, taper, fs, M, T_o)):
            if ck.build(where, lambda: PulseSpec(f0, dur, fs, int(M), T_o, taper)) is not None:
                freqs.append(fc)

    # beam and prior
    bm = ck.section("beam", required=False)
    beta = ck.number(bm, "beam", "beta", 8.0, nonneg=True)
    beam = ck.build("beam", lambda: BeamParams(beta, geometry.pointing_angle if geometry else 0.0))

    pr = ck.section("prior", required=False)
    pv = {key: ck.number(pr, "prior", key, default)
          for key, default in (("p", 1.1), ("q", 2.0), ("T", 0.01), ("sigma0", 2.0),
                               ("nu", 10.0), ("a", 2.0))}
    prior = ck.build("prior", lambda: QggmrfParams(**pv))

    sv = ck.section("solver", required=False)
    solver = SolverConfig(
        sigma=ck.number(sv, "solver", "sigma", 0.1, positive=True),
        iterations=ck.number(sv, "solver", "iterations", 100, positive=True, integer=True),
        relaxation=ck.number(sv, "solver", "relaxation", 1.0, positive=True),
        early_exit_tol=ck.number(sv, "solver", "early_exit_tol", positive=True) if "early_exit_tol" in sv else None,
        use_prior=ck.flag(sv, "solver", "use_prior", True),
        use_direct=ck.flag(sv, "solver", "use_direct", True),
        warm_start=ck.factors(sv, "solver", "warm_start"),
        warm_sweeps=ck.number(sv, "solver", "warm_sweeps", 20, positive=True, integer=True),
    )
    if not 0 < solver.relaxation < 2:
        ck.problems.append("solver.relaxation: must be in (0, 2)")

    sy = ck.section("synth", required=False)
    synth = SynthConfig(
        phantom=str(sy.get("phantom", "cc-no-notch")),
        snr_db=ck.number(sy, "synth", "snr_db", positive=False) if "snr_db" in sy else (
            None if "noise_sigma" in sy else 20.0),
        noise_sigma=ck.number(sy, "synth", "noise_sigma", nonneg=True) if "noise_sigma" in sy else None,
        refinement=ck.number(sy, "synth", "refinement", 4, positive=True, integer=True),
        direct_scale=ck.number(sy, "synth", "direct_scale", 0.0, nonneg=True),
        wall_depth=ck.number(sy, "synth", "wall_depth", 0.1885, positive=True),
        notch_depth=ck.number(sy, "synth", "notch_depth", 0.2385, positive=True),
        notch_height=ck.number(sy, "synth", "notch_height", 0.148, positive=True),
        defects=list(sy.get("defects", [])),
    )
    from .synth import PHANTOMS
    if synth.phantom not in PHANTOMS:
        ck.problems.append(f"synth.phantom: unknown phantom {synth.phantom!r} (choose from {', '.join(PHANTOMS)})")

    sa = ck.section("saft", required=False)
    saft = SaftConfig(ck.flag(sa, "saft", "envelope", True), ck.flag(sa, "saft", "apodize", True),
                      ck.flag(sa, "saft", "matched_filter", True))

    pa = ck.section("panorama", required=False)
    angles = pa.get("angles")
    if angles is None:
        start = ck.number(pa, "panorama", "start_deg", 0.0)
        stop = ck.number(pa, "panorama", "stop_deg", 180.0)
        count = ck.number(pa, "panorama", "views", 37, positive=True, integer=True)
        angles = list(np.linspace(start, stop, int(count))) if math.isfinite(count) else []
    elif not isinstance(angles, list) or not all(isinstance(a, (int, float)) for a in angles):
        ck.problems.append("panorama.angles: expected a list of numbers")
        angles = []
    if len(angles) > 1 and np.any(np.diff(angles) <= 0):
        ck.problems.append("panorama.angles: must be strictly increasing")
    interp = pa.get("interpolation", "linear")
    if interp not in ("nearest", "linear"):
        ck.problems.append("panorama.interpolation: must be 'nearest' or 'linear'")
    panorama = PanoramaConfig([float(a) for a in angles],
                              ck.number(pa, "panorama", "height", 0.27), interp)
    if grid is not None and math.isfinite(panorama.height):
        lo, hi = grid.origin[1], grid.origin[1] + grid.rows * grid.pitch
        if not lo <= panorama.height < hi:
            ck.problems.append(f"panorama.height: {panorama.height} m is outside the field of view [{lo}, {hi})")

    if ck.problems:
        raise ConfigError(ck.problems)
    return Config(profile, medium, geometry, grid, fs, int(M), T_o, freqs, beam, prior, solver,
                  synth, saft, panorama, int(seed), copy.deepcopy(raw))


def load_raw(source) -> dict:
    """Read a config file, or a preset by name."""
    if isinstance(source, str) and source in PRESETS:
        text = resources.files("umbir.presets").joinpath(f"{source}.toml").read_text()
        return tomllib.loads(text)
    path = Path(source)
    if not path.is_file():
        raise ConfigError([f"config: file not found: {path}"])
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config: {exc}"]) from None


def merge(base: dict, override: dict) -> dict:
    """Recursive dict update; lists and scalars in ``override`` replace."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source, overrides: dict | None = None) -> Config:
    raw = load_raw(source)
    if overrides:
        raw = merge(raw, overrides)
    return parse_config(raw)


def preset(name: str, **overrides) -> Config:
    return load_config(name, overrides or None)


def to_dict(cfg: Config) -> dict:
    return {"profile": cfg.profile, "seed": cfg.seed, "solver": asdict(cfg.solver),
            "synth": asdict(cfg.synth), "saft": asdict(cfg.saft)}
