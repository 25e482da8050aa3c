"""Command-line entry point: ``umbir <subcommand> [options]``.

Exit status: 0 ok, 2 configuration or usage error, 3 data error,
4 numerical failure.  Failures print one JSON line on stderr, e.g.
``{"error": "config", "message": "...", "problems": [...]}``.

``UMBIR_THREADS`` caps the number of reconstructions run in parallel when
several inputs are given.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .io import (FormatError, atomic_write, read_image, read_measurements, write_image,
                 write_measurements, write_pgm)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("umbir")


class CliError(Exception):
    def __init__(self, kind, message, code, problems=None):
        super().__init__(message)
        self.kind, self.code, self.problems = kind, code, problems


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", EXIT_CONFIG)


def _threads() -> int:
    raw = os.environ.get("UMBIR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError("config", f"UMBIR_THREADS must be an integer, got {raw!r}", EXIT_CONFIG) from None
    return max(1, n)


def _config(args):
    if not args.config:
        raise CliError("config", "--config is required", EXIT_CONFIG)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _require_output(args):
    if not args.output:
        raise CliError("usage", "--output is required", EXIT_CONFIG)
    return Path(args.output)


def _frequencies(args, S):
    from .pipeline import parse_frequencies
    try:
        return parse_frequencies(args.frequencies, S)
    except ValueError as exc:
        raise CliError("usage", str(exc), EXIT_CONFIG) from None


def _load_traces(path, cfg, indices):
    meas = read_measurements(path)
    specs = cfg.pulse_specs()
    if meas.S != len(specs) or meas.K != cfg.geometry.n_receivers:
        raise FormatError(f"{path}: {meas.S} frequencies x {meas.K} receivers, config expects "
                          f"{len(specs)} x {cfg.geometry.n_receivers}")
    for a, b in zip(meas.specs, specs):
        if a.record_length != b.record_length or not np.isclose(a.f0, b.f0) or a.fs != b.fs:
            raise FormatError(f"{path}: acquisition parameters differ from the config")
    return [meas.traces[i].astype(float) for i in indices]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    from .pipeline import run_synth
    cfg = _config(args)
    out = _require_output(args)
    ms = run_synth(cfg, offgrid=not args.on_grid)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements(out / "measurements.umbm", ms.specs, ms.traces)
    meta = {"profile": cfg.profile, "config_digest": cfg.digest(), "kind": "truth"}
    write_image(out / "truth.umbi", cfg.grid, ms.x_true.reshape(cfg.grid.shape), meta)
    manifest = dict(ms.manifest, profile=cfg.profile, config_digest=cfg.digest(),
                    g_true=np.asarray(ms.g_true).tolist())
    with atomic_write(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    log.info("wrote %s", out)


def cmd_build(args):
    from .pipeline import build_systems
    from .system import save_system, stack_multifrequency
    cfg = _config(args)
    out = _require_output(args)
    idx = _frequencies(args, len(cfg.frequencies))
    mf = stack_multifrequency(build_systems(cfg, idx))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_system(out, mf)
    log.info("A %s nnz=%d -> %s", mf.A.shape, mf.A.nnz, out)


def _recon_one(cfg, path, idx, cache, out, args):
    from .pipeline import run_umbir
    traces = _load_traces(path, cfg, idx)
    stream = io.StringIO()
    res = run_umbir(cfg, traces, idx, cache, log_stream=stream)
    if args.verbose:
        sys.stderr.write(stream.getvalue())
    if args.log:
        with atomic_write(Path(args.log) if len(args.input) == 1 else out.with_suffix(".csv"), "w") as f:
            f.write(stream.getvalue())
    meta = {"profile": cfg.profile, "config_digest": cfg.digest(), "kind": "umbir",
            "frequencies": [cfg.frequencies[i].f0 for i in idx], "seed": cfg.seed,
            "iterations": cfg.solver.iterations, "cost_history": res.costs.tolist(),
            "g": res.g.tolist(), "input": Path(path).name}
    img = res.x.reshape(cfg.grid.shape)
    write_image(out, cfg.grid, img, meta)
    if args.pgm:
        write_pgm(out.with_suffix(".pgm"), img)


def _outputs(args, out: Path, suffix):
    if len(args.input) == 1:
        return [out]
    out.mkdir(parents=True, exist_ok=True)
    return [out / (Path(p).stem + suffix) for p in args.input]


def cmd_reconstruct(args):
    cfg = _config(args)
    if args.iterations is not None:
        if args.iterations < 1:
            raise CliError("usage", "--iterations must be >= 1", EXIT_CONFIG)
        cfg.solver.iterations = args.iterations
    out = _require_output(args)
    idx = _frequencies(args, len(cfg.frequencies))
    outs = _outputs(args, out, ".umbi")
    if len(args.input) == 1:
        _recon_one(cfg, args.input[0], idx, args.cache, outs[0], args)
        return
    # build (or load) the system once, then share it read-only between workers
    from .pipeline import stacked_system
    cache = args.cache
    if cache is None:
        cache = out / ".cache"
    stacked_system(cfg, idx, cache)
    with ThreadPoolExecutor(_threads()) as pool:
        list(pool.map(lambda po: _recon_one(cfg, po[0], idx, cache, po[1], args),
                      zip(args.input, outs)))


def cmd_saft(args):
    from .pipeline import run_saft
    cfg = _config(args)
    out = _require_output(args)
    idx = _frequencies(args, len(cfg.frequencies))
    for path, o in zip(args.input, _outputs(args, out, ".umbi")):
        img = run_saft(cfg, _load_traces(path, cfg, idx), idx)
        meta = {"profile": cfg.profile, "config_digest": cfg.digest(), "kind": "saft",
                "frequencies": [cfg.frequencies[i].f0 for i in idx], "input": Path(path).name}
        write_image(o, cfg.grid, img, meta)
        if args.pgm:
            write_pgm(o.with_suffix(".pgm"), img)


def cmd_stitch(args):
    from .media import ImageGrid
    from .panorama import PanoramaSpec, stitch_panorama
    cfg = _config(args)
    out = _require_output(args)
    images = [read_image(p) for p in args.input]
    grid = images[0].grid
    if any(im.grid != grid for im in images):
        raise FormatError("all images must share the grid")
    angles = [float(a) for a in args.angles.split(",")] if args.angles else cfg.panorama.angles
    height = args.height if args.height is not None else cfg.panorama.height
    try:
        spec = PanoramaSpec(tuple(angles), height, cfg.panorama.interpolation)
        pan = stitch_panorama([im.raster for im in images], grid, spec, cfg.geometry.center_offset)
    except ValueError as exc:
        raise CliError("data", str(exc), EXIT_DATA) from None
    n = pan.raster.shape[0]
    pgrid = ImageGrid(n, n, pan.pitch, (-pan.radius, -pan.radius))
    meta = {"profile": cfg.profile, "kind": "panorama", "angles": list(angles), "height": height,
            "inputs": [Path(p).name for p in args.input]}
    write_image(out, pgrid, pan.raster, meta)
    if args.pgm:
        write_pgm(out.with_suffix(".pgm"), pan.raster)


def cmd_metrics(args):
    from .metrics import metrics
    img = read_image(args.image)
    truth = read_image(args.truth)
    if img.grid != truth.grid:
        raise FormatError("image and truth grids differ")
    rep = metrics(img.raster, truth.raster, img.grid, signed=not args.magnitude).as_dict()
    text = json.dumps(rep, sort_keys=True)
    if args.output:
        with atomic_write(args.output, "w") as f:
            f.write(text + "\n")
    print(text)


def cmd_kernel_dump(args):
    from .pulse import KernelBank
    cfg = _config(args)
    out = _require_output(args)
    idx = _frequencies(args, len(cfg.frequencies))
    gammas = [float(g) for g in args.gamma.split(",")]
    if any(g < 0 for g in gammas):
        raise CliError("usage", "--gamma values must be >= 0", EXIT_CONFIG)
    lines = ["frequency,gamma,sample,time,value"]
    for i in idx:
        spec = cfg.pulse_specs([i])[0]
        bank = KernelBank(spec)
        t = np.arange(bank.n_taps) / spec.fs
        for g in gammas:
            h = bank(np.full(t.shape, g), t)
            lines += [f"{spec.f0:.17g},{g:.17g},{m},{t[m]:.17g},{h[m]:.17g}" for m in range(len(t))]
    with atomic_write(out, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file or preset name (cc-kwave, cc-exp, gb-exp)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--output", help="output file or directory")
    common.add_argument("--verbose", action="store_true", help="log progress and the per-sweep cost")

    p = _Parser(prog="umbir", description="Multi-frequency ultrasound model-based reconstruction")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="phantom and synthetic measurements")
    s.add_argument("--on-grid", action="store_true", help="use the system matrix instead of off-grid summation")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build", parents=[common], help="assemble and cache the system matrices")
    s.add_argument("--frequencies", default="all")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("reconstruct", parents=[common], help="UMBIR reconstruction")
    s.add_argument("--input", nargs="+", required=True, help="measurement file(s)")
    s.add_argument("--frequencies", default="all", help="'all' or comma-separated indices")
    s.add_argument("--iterations", type=int)
    s.add_argument("--cache", help="directory for cached system matrices")
    s.add_argument("--log", help="write the per-sweep cost as CSV")
    s.add_argument("--pgm", action="store_true", help="also write a grayscale rendering")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("saft", parents=[common], help="delay-and-sum baseline")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--frequencies", default="all")
    s.add_argument("--pgm", action="store_true")
    s.set_defaults(func=cmd_saft)

    s = sub.add_parser("stitch", parents=[common], help="polar panorama from per-view images")
    s.add_argument("--input", nargs="+", required=True, help="images in view order")
    s.add_argument("--angles", help="comma-separated view angles in degrees (default from config)")
    s.add_argument("--height", type=float, help="fixed height in meters (default from config)")
    s.add_argument("--pgm", action="store_true")
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("metrics", parents=[common], help="compare an image with ground truth")
    s.add_argument("--image", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--magnitude", action="store_true", help="locate peaks of |x| instead of x")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("kernel-dump", parents=[common], help="write dispersion kernels as CSV")
    s.add_argument("--frequencies", default="all")
    s.add_argument("--gamma", default="0", help="comma-separated dispersion exponents (seconds)")
    s.set_defaults(func=cmd_kernel_dump)
    return p


def _fail(kind, message, code, problems=None):
    rec = {"error": kind, "message": message}
    if problems:
        rec["problems"] = problems
    sys.stderr.write(json.dumps(rec) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise CliError("usage", "missing subcommand", EXIT_CONFIG)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code, exc.problems)
    except ConfigError as exc:
        return _fail("config", "invalid configuration", EXIT_CONFIG, exc.problems)
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except FloatingPointError as exc:
        return _fail("numerical", str(exc), EXIT_NUMERIC)
    except ValueError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
