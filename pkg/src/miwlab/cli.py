"""Command-line harness: ``miwlab <command> [flags]``.

Exit codes: 0 success, 2 construction failure, 3 I/O failure, 4 invalid
configuration. CSV artifacts start with two comment lines, the first holding
the library version and the full configuration, the second a timestamp; the
rest of the file is deterministic for a given configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__, constructor, dynamics, metrics, stability, stein
from .constructor import ConstructionError, MIWSequence, auto_counts, construct
from .states import energy_state

EXIT_OK, EXIT_CONSTRUCTION, EXIT_IO, EXIT_CONFIG = 0, 2, 3, 4
COMMANDS = ("construct", "verify", "wasserstein", "rates", "gaps", "gradient", "center", "stein", "simulate")


class ConfigError(ValueError):
    """Invalid flag combination, detected before any computation."""


@dataclass
class ExperimentConfig:
    command: str
    ell: int | None = None
    counts: list[int] | None = None
    n: int | None = None
    n_grid: str | None = None
    input: str | None = None
    out: str = "-"
    jobs: int | None = None
    timing: bool = False
    region: int | None = None
    h: str = "identity"
    samples: int = 201
    dt: float = 1e-3
    t_max: float = 10.0
    stride: int = 10
    x: list[float] | None = None
    p: list[float] | None = None
    tolerances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# tolerance name -> (module, attribute)
TOLERANCES = {
    "residual_tol": (constructor, "RESIDUAL_TOL"),
    "crossing_tol": (metrics, "CROSSING_TOL"),
    "identity_tol": (stability, "IDENTITY_TOL"),
    "fd_step": (stability, "FD_STEP"),
    "grid_points": (stein, "GRID_POINTS"),
    "min_gap": (dynamics, "MIN_GAP"),
}


def parse_grid(spec: str) -> list[int]:
    """``start:stop:factor`` -> ``[start, start*factor, ...]`` up to ``stop``."""
    try:
        start, stop, factor = spec.split(":")
        start, stop, factor = int(start), int(stop), float(factor)
    except ValueError:
        raise ConfigError(f"grid spec {spec!r} is not start:stop:factor") from None
    if start < 2 or stop < start or factor <= 1:
        raise ConfigError(f"grid spec {spec!r} needs 2 <= start <= stop and factor > 1")
    out, v = [], float(start)
    while round(v) <= stop:
        out.append(int(round(v)))
        v *= factor
    return out


def validate(cfg: ExperimentConfig) -> None:
    c = cfg.command
    if c not in COMMANDS:
        raise ConfigError(f"unknown command {c!r}")
    for name in cfg.tolerances:
        if name not in TOLERANCES:
            raise ConfigError(f"unknown tolerance {name!r}")
    if cfg.jobs is not None and cfg.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    needs_seq = c in ("construct", "verify", "wasserstein", "gaps", "gradient")
    if needs_seq or (c == "simulate" and cfg.x is None):
        if cfg.input and (cfg.counts or cfg.n):
            raise ConfigError("give either --in or --counts/--n, not both")
        if c == "construct" and cfg.input:
            raise ConfigError("construct takes --counts or --n, not --in")
        if not cfg.input:
            if cfg.ell is None:
                raise ConfigError("--ell is required")
            if bool(cfg.counts) == bool(cfg.n):
                raise ConfigError("give exactly one of --counts or --n")
            if cfg.counts and len(cfg.counts) != cfg.ell + 1:
                raise ConfigError(f"--counts needs {cfg.ell + 1} entries for --ell {cfg.ell}")
    if c in ("rates", "center") and not cfg.n_grid:
        raise ConfigError("--n-grid is required")
    if c == "rates" and cfg.ell is None:
        raise ConfigError("--ell is required")
    if cfg.n_grid:
        parse_grid(cfg.n_grid)
    if c == "center" and any(N % 2 for N in parse_grid(cfg.n_grid)):
        raise ConfigError("center sweeps need even N")
    if c == "stein":
        if cfg.ell is None or cfg.region is None:
            raise ConfigError("stein needs --ell and --region")
        if not 0 <= cfg.region <= cfg.ell:
            raise ConfigError("--region out of range")
        stein.resolve_h(cfg.h)
        if cfg.samples < 1:
            raise ConfigError("--samples must be positive")
    if c == "simulate":
        if not cfg.dt > 0 or cfg.t_max < 0 or cfg.stride < 1:
            raise ConfigError("simulate needs dt > 0, t_max >= 0 and stride >= 1")
        if cfg.x is not None and (cfg.input or cfg.counts or cfg.n):
            raise ConfigError("give initial positions either by --x or by a sequence")
    if cfg.ell is not None and not 0 <= cfg.ell <= 20:
        raise ConfigError("--ell must lie in [0, 20]")


def _apply_tolerances(tols: dict) -> None:
    for name, value in tols.items():
        mod, attr = TOLERANCES[name]
        setattr(mod, attr, type(getattr(mod, attr))(value))


# --------------------------------------------------------------------------
# output


def _stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _csv_artifact(cfg: ExperimentConfig, body: str) -> str:
    head = f"# miwlab {__version__} config={cfg.to_json()}\n# generated {_stamp()}\n"
    return head + body


def _json_artifact(cfg: ExperimentConfig, payload: dict) -> str:
    doc = dict(payload)
    doc["miwlab"] = {"version": __version__, "config": cfg.to_dict(), "generated": _stamp()}
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if dataclasses.is_dataclass(v):
        return dataclasses.asdict(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _emit(cfg: ExperimentConfig, text: str) -> None:
    if cfg.out == "-":
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w") as fh:
            fh.write(text)


def _note(cfg: ExperimentConfig, msg: str) -> None:
    # human-readable summaries go to stdout unless stdout carries the artifact
    print(msg, file=sys.stderr if cfg.out == "-" else sys.stdout)


# --------------------------------------------------------------------------
# commands


def _sequence(cfg: ExperimentConfig) -> MIWSequence:
    if cfg.input:
        with open(cfg.input) as fh:
            return MIWSequence.from_json(json.load(fh))
    state = energy_state(cfg.ell)
    counts = cfg.counts or auto_counts(state, cfg.n)
    if cfg.n and any(c < 1 for c in counts):
        raise ConfigError(f"--n {cfg.n} is too small: allocation {counts} leaves a region empty")
    try:
        return construct(state, counts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _report_line(rep: dict) -> str:
    return "residuals: " + " ".join(f"{k}={rep[k]:.3e}" for k in ("interior", "left_bc", "right_bc"))


def cmd_construct(cfg):
    seq = _sequence(cfg)
    doc = seq.to_json()
    doc["meta"] = {k: v for k, v in seq.meta.items()}
    _emit(cfg, _json_artifact(cfg, doc))
    _note(cfg, f"N={seq.N} counts={list(seq.counts)} " + _report_line(seq.residuals))


def cmd_verify(cfg):
    rep = constructor.verify(_sequence(cfg))
    _emit(cfg, _json_artifact(cfg, {"verify": rep}))
    _note(cfg, _report_line(rep) + f" counts_ok={rep['counts_ok']}")


def cmd_wasserstein(cfg):
    seq = _sequence(cfg)
    rep = metrics.wasserstein(seq)
    _emit(cfg, _json_artifact(cfg, {"wasserstein": dataclasses.asdict(rep), "mixture": metrics.mixture_check(seq)}))
    _note(cfg, f"d={rep.distance:.6e} coupling_bound={rep.coupling_bound:.6e} scaled={rep.scaled:.4f}")


def cmd_gaps(cfg):
    rep = metrics.gap_report(_sequence(cfg))
    _emit(cfg, _json_artifact(cfg, {"gaps": dataclasses.asdict(rep)}))
    _note(cfg, f"max_gap={rep.max_gap:.6e} span=({rep.span[0]:.6f}, {rep.span[1]:.6f})")


def cmd_gradient(cfg):
    seq = _sequence(cfg)
    rep = stability.gradient_report(seq)
    payload = {"grad": rep.grad, "fd_error": rep.fd_error,
               "limit_values": {str(k): v for k, v in rep.limit_values.items()},
               "center_value": rep.center_value}
    _emit(cfg, _json_artifact(cfg, payload))
    _note(cfg, f"max|grad|={np.max(np.abs(rep.grad)):.6e} fd_error={rep.fd_error:.3e}")


def _rate_worker(args):
    ell, N, timing, tols = args
    _apply_tolerances(tols)
    t0 = time.perf_counter()
    seq = constructor.construct_auto(energy_state(ell), N)
    row = metrics.rate_row(seq)
    row.runtime_ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0
    return row


def _center_worker(args):
    N, tols = args
    _apply_tolerances(tols)
    return stability.center_row(N)


def _pool_map(cfg, fn, tasks):
    jobs = cfg.jobs or os.cpu_count() or 1
    if jobs == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        # map keeps submission order, so the merge is deterministic
        return list(ex.map(fn, tasks))


def cmd_rates(cfg):
    grid = parse_grid(cfg.n_grid)
    state = energy_state(cfg.ell)
    for N in grid:
        counts = auto_counts(state, N)
        if any(c < 1 for c in counts) or (cfg.ell == 0 and N < 2):
            raise ConfigError(f"N={N} is too small for order {cfg.ell}")
    rows = _pool_map(cfg, _rate_worker, [(cfg.ell, N, cfg.timing, cfg.tolerances) for N in grid])
    table = metrics.RateTable(rows)
    body = table.to_csv(include_runtime=cfg.timing)
    _emit(cfg, _csv_artifact(cfg, body))
    if len(rows) >= 4:
        fit = metrics.rate_fit(table)
        _note(cfg, f"slope={fit.slope:.4f} intercept={fit.intercept:.4f} "
                   f"scaled_range=({fit.scaled_min:.4f}, {fit.scaled_max:.4f})")
    else:
        _note(cfg, "fewer than 4 rows: no rate fit")


def cmd_center(cfg):
    grid = parse_grid(cfg.n_grid)
    raw = _pool_map(cfg, _center_worker, [(N, cfg.tolerances) for N in grid])
    rows = stability.center_scaling(grid, rows=raw)
    _emit(cfg, _csv_artifact(cfg, stability.center_csv(rows)))
    if len(rows) >= 2:
        fit = stability.center_fit(rows)
        _note(cfg, f"slope={fit['slope']:.4f} grad*x^3 in [{fit['scaled_min']:.4f}, {fit['scaled_max']:.4f}]")


def cmd_stein(cfg):
    state = energy_state(cfg.ell)
    grid = stein.default_grid(state, cfg.region, cfg.samples)
    probe = stein.build_gh(state, cfg.region, cfg.h, grid=grid)
    _emit(cfg, _csv_artifact(cfg, probe.to_csv()))
    _note(cfg, f"E_P[h]={probe.E_P_h:.12f} max|residual|={np.max(np.abs(probe.samples[:, 4])):.3e}")


def cmd_simulate(cfg):
    if cfg.x is not None:
        init = dynamics.PhaseState.start(cfg.x, cfg.p)
    else:
        init = dynamics.PhaseState.start(_sequence(cfg).points, cfg.p)
    try:
        traj = dynamics.simulate(init, cfg.dt, cfg.t_max, cfg.stride)
    except dynamics.CollisionError as exc:
        if exc.trajectory is not None:
            _emit(cfg, _csv_artifact(cfg, exc.trajectory.to_csv()))
        raise
    _emit(cfg, _csv_artifact(cfg, traj.to_csv()))
    _note(cfg, f"energy drift (max relative) = {traj.max_drift():.3e}")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(cfg: ExperimentConfig) -> int:
    try:
        validate(cfg)
        if cfg.p is not None and cfg.x is not None and len(cfg.p) != len(cfg.x):
            raise ConfigError("--p and --x need equal lengths")
        _apply_tolerances(cfg.tolerances)
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstructionError as exc:
        print(f"construction failed: {exc} {json.dumps(exc.report, default=str)}", file=sys.stderr)
        return EXIT_CONSTRUCTION
    except dynamics.CollisionError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCTION
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _ints(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="miwlab", description="MIW sequence laboratory")
    p.add_argument("--version", action="version", version=f"miwlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seq=True):
        sp.add_argument("--out", default="-", help="output path, '-' for standard output (default)")
        if seq:
            sp.add_argument("--ell", type=int, help="order of the state")
            sp.add_argument("--counts", type=_ints, help="per-region counts, e.g. 3,2")
            sp.add_argument("--n", type=int, help="total N with floor allocation of region counts")
            sp.add_argument("--in", dest="input", help="read a sequence from a .miw.json file")
        for name, (mod, attr) in TOLERANCES.items():
            sp.add_argument(f"--{name.replace('_', '-')}", dest=f"tol_{name}", type=float, default=None,
                            help=f"override (default {getattr(mod, attr)})")

    for name in ("construct", "verify", "wasserstein", "gaps", "gradient"):
        common(sub.add_parser(name))

    sp = sub.add_parser("rates", help="Wasserstein rate sweep")
    common(sp, seq=False)
    sp.add_argument("--ell", type=int, required=True)
    sp.add_argument("--n-grid", required=True, help="start:stop:factor, e.g. 64:4096:2")
    sp.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    sp.add_argument("--timing", action="store_true", help="fill runtime_ms (makes output non-reproducible)")

    sp = sub.add_parser("center", help="order-1 center scaling sweep")
    common(sp, seq=False)
    sp.add_argument("--n-grid", required=True, help="start:stop:factor with even N, e.g. 50:3200:2")
    sp.add_argument("--jobs", type=int, default=None)

    sp = sub.add_parser("stein", help="Stein solution samples on one region")
    common(sp, seq=False)
    sp.add_argument("--ell", type=int, required=True)
    sp.add_argument("--region", type=int, required=True)
    sp.add_argument("--h", default="identity", help=f"one of {sorted(stein.H_FAMILY)}")
    sp.add_argument("--samples", type=int, default=201)

    sp = sub.add_parser("simulate", help="Hamiltonian dynamics")
    common(sp)
    sp.add_argument("--init", dest="input", help="initial positions from a .miw.json file")
    sp.add_argument("--x", type=_floats, help="initial positions, comma separated")
    sp.add_argument("--p", type=_floats, help="initial momenta (default zeros)")
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--t-max", type=float, default=10.0)
    sp.add_argument("--stride", type=int, default=10)
    return p


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    d = vars(ns).copy()
    tols = {k[4:]: v for k, v in d.items() if k.startswith("tol_") and v is not None}
    d = {k: v for k, v in d.items() if not k.startswith("tol_")}
    d["tolerances"] = tols
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    return run(config_from_args(ns))


if __name__ == "__main__":
    raise SystemExit(main())
