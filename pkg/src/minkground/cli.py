"""Command-line front end.

Subcommands: ``thresholds`` (sign-change heights plus the assumption
audit), ``shoot`` (one classified trajectory), ``solve`` (the full
bracket/bisect/verify pipeline), and ``scan`` (a classification table
over a height grid, optionally fanned out to worker processes).

Configuration comes from an optional JSON file mirrored 1:1 by the
command-line flags; flags win.  Summaries are JSON with sorted keys and
deterministic content (work counters instead of wall time), so a rerun
with the same config and seed is byte-identical; wall time goes to
stderr.  Profiles are CSV with columns r, u, uprime, q, D,
energy_residual at full precision.

Exit codes: 0 success, 1 config error, 2 assumption failure, 3 bracket
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, variational
from .integrator import IntegratorConfig
from .nonlinearity import (
    NonlinearityError,
    check_assumptions,
    compute_thresholds,
    from_spec,
    truncate_at_beta,
)
from .shooting import (
    AssumptionFailure,
    BracketError,
    ShootConfig,
    bisect_ground_state,
    classify_scan,
    find_bracket,
    shoot,
    verify_ground_state,
)

CSV_HEADER = ["r", "u", "uprime", "q", "D", "energy_residual"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSUMPTIONS = 2
EXIT_BRACKET = 3
EXIT_VERIFICATION = 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; config errors are 1
        raise ConfigError(message)


@dataclass
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    command: str = ""
    family: str = "power"
    lam: float | None = None
    q: float | None = None
    table: str | None = None
    N: int = 3
    scan_max: float = 50.0
    # integrator
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    r_start: float = 1e-4
    h_max: float = 0.1
    stride: float | None = None
    # shooting
    r_max: float = 100.0
    u_tol: float = 1e-4
    q_tol: float = 1e-4
    xi_tol: float = 1e-10
    event_tol: float = 1e-12
    margin_tol: float = 1e-3
    res_tol: float = 1e-7
    decay_tol: float = 1e-3
    fd_tol: float = 1e-5
    # variational
    n_cells: int = 2000
    eps_s: float = 1e-6
    grad_tol: float = 1e-8
    max_iters: int = 20000
    # run
    out_dir: str = "."
    workers: int = 1
    seed: int = 0
    # per-command inputs
    xi: float | None = None
    xi_min: float | None = None
    xi_max: float | None = None
    points: int = 101

    def validate(self) -> None:
        if self.N < 2 or int(self.N) != self.N:
            raise ConfigError(f"N must be an integer >= 2, got {self.N}")
        if self.family not in ("power", "sine", "table"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.family == "power":
            if self.lam is None or self.q is None:
                raise ConfigError("power family needs both --lambda and --q")
            if not (self.lam > 0 and self.q > 1):
                raise ConfigError("power family needs --lambda > 0 and --q > 1")
        if self.family == "sine":
            if self.q is None:
                raise ConfigError("sine family needs --q")
            if not self.q >= 1:
                raise ConfigError("sine family needs --q >= 1")
        if self.family == "table" and not self.table:
            raise ConfigError("table family needs --table pointing to a CSV of s,f(s)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def family_spec(self) -> dict:
        if self.family == "power":
            return {"family": "power", "lam": self.lam, "q": self.q, "scan_max": self.scan_max}
        if self.family == "sine":
            return {"family": "sine", "q": self.q, "scan_max": self.scan_max}
        rows = np.loadtxt(self.table, delimiter=",", ndmin=2)
        return {
            "family": "table",
            "s": rows[:, 0].tolist(),
            "f": rows[:, 1].tolist(),
            "scan_max": self.scan_max,
        }

    def shoot_config(self) -> ShootConfig:
        return ShootConfig(
            r_max=self.r_max,
            u_tol=self.u_tol,
            q_tol=self.q_tol,
            xi_tol=self.xi_tol,
            event_tol=self.event_tol,
            margin_tol=self.margin_tol,
            res_tol=self.res_tol,
            decay_tol=self.decay_tol,
            fd_tol=self.fd_tol,
            integrator=IntegratorConfig(
                abs_tol=self.abs_tol,
                rel_tol=self.rel_tol,
                r_start=self.r_start,
                h_max=self.h_max,
                sample_stride=self.stride,
            ),
        )

    def minimize_config(self) -> variational.MinimizeConfig:
        return variational.MinimizeConfig(
            n=self.n_cells,
            eps_s=self.eps_s,
            grad_tol=self.grad_tol,
            max_iters=self.max_iters,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# defaults that differ by subcommand: the solve pipeline needs tighter
# ground-candidate tolerances (so bisection reaches the bracket-width
# tolerance before a candidate fires), a larger radius budget for slowly
# decaying dimensions, and a finer profile stride for the finite
# difference residual check
_COMMAND_DEFAULTS = {
    "shoot": {"stride": 0.05},
    "solve": {"stride": 0.01, "r_max": 250.0, "u_tol": 1e-7, "q_tol": 1e-7},
    "scan": {},
    "thresholds": {},
}


def build_parser() -> _Parser:
    p = _Parser(prog="minkground", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"minkground {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--family", choices=["power", "sine", "table"])
        sp.add_argument("--lambda", "--lam", dest="lam", type=float, help="power family coefficient")
        sp.add_argument("--q", type=float, help="family exponent")
        sp.add_argument("--table", help="CSV of s,f(s) samples for the tabulated family")
        sp.add_argument("--N", type=int, help="space dimension (>= 2)")
        sp.add_argument("--scan-max", dest="scan_max", type=float)
        sp.add_argument("--abs-tol", dest="abs_tol", type=float)
        sp.add_argument("--rel-tol", dest="rel_tol", type=float)
        sp.add_argument("--r-start", dest="r_start", type=float)
        sp.add_argument("--h-max", dest="h_max", type=float)
        sp.add_argument("--stride", type=float, help="profile sample spacing")
        sp.add_argument("--r-max", dest="r_max", type=float)
        sp.add_argument("--u-tol", dest="u_tol", type=float)
        sp.add_argument("--q-tol", dest="q_tol", type=float)
        sp.add_argument("--xi-tol", dest="xi_tol", type=float)
        sp.add_argument("--event-tol", dest="event_tol", type=float)
        sp.add_argument("--margin-tol", dest="margin_tol", type=float)
        sp.add_argument("--res-tol", dest="res_tol", type=float)
        sp.add_argument("--decay-tol", dest="decay_tol", type=float)
        sp.add_argument("--fd-tol", dest="fd_tol", type=float)
        sp.add_argument("--n-cells", dest="n_cells", type=int)
        sp.add_argument("--eps-s", dest="eps_s", type=float)
        sp.add_argument("--grad-tol", dest="grad_tol", type=float)
        sp.add_argument("--max-iters", dest="max_iters", type=int)
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)

    common(sub.add_parser("thresholds", help="sign-change heights and the assumption audit"))
    sp = sub.add_parser("shoot", help="classify one trajectory")
    common(sp)
    sp.add_argument("--xi", type=float, help="initial height (required)")
    sp = sub.add_parser("solve", help="bracket, bisect and certify a ground state")
    common(sp)
    sp = sub.add_parser("scan", help="classification table over a height grid")
    common(sp)
    sp.add_argument("--xi-min", dest="xi_min", type=float)
    sp.add_argument("--xi-max", dest="xi_max", type=float)
    sp.add_argument("--points", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then per-command defaults, then config file, then flags."""
    cfg = RunConfig(command=args.command)
    for key, val in _COMMAND_DEFAULTS[args.command].items():
        setattr(cfg, key, val)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        flat: dict = {}
        for key, val in data.items():
            if isinstance(val, dict):  # nested section
                flat.update(val)
            else:
                flat[key] = val
        for key, val in flat.items():
            name = key.replace("-", "_")
            if name == "lambda":
                name = "lam"
            if not hasattr(cfg, name) or name == "command":
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, name, val)
    for f in dataclasses.fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------
# emission helpers


def _sanitize(obj):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(_sanitize(summary), indent=2, sort_keys=True) + "\n")


def _write_profile_csv(path: Path, profile: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in profile:
            w.writerow([repr(float(x)) for x in row])


def _print_summary(summary: dict) -> None:
    print(json.dumps(_sanitize(summary), indent=2, sort_keys=True))


# ----------------------------------------------------------------------
# subcommands


def _base_summary(cfg: RunConfig) -> dict:
    return {"version": __version__, "config": cfg.to_dict()}


def cmd_thresholds(cfg: RunConfig) -> int:
    nl = from_spec(cfg.family_spec())
    summary = _base_summary(cfg)
    try:
        th = compute_thresholds(nl, cfg.N)
    except NonlinearityError as exc:
        summary["error"] = str(exc)
        _print_summary(summary)
        return EXIT_ASSUMPTIONS
    rep = check_assumptions(nl, cfg.N)
    summary["thresholds"] = th.to_dict()
    summary["assumption_report"] = rep.to_dict()
    summary["timings"] = {"shots": 0, "steps": 0, "f_evals": 0}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "thresholds_summary.json", summary)
    _print_summary(summary)
    return EXIT_OK if rep.required_pass(cfg.N) else EXIT_ASSUMPTIONS


def cmd_shoot(cfg: RunConfig) -> int:
    nl = from_spec(cfg.family_spec())
    th = compute_thresholds(nl, cfg.N)
    scfg = cfg.shoot_config()
    if cfg.xi is None:
        raise ConfigError("shoot needs --xi")
    nlw = truncate_at_beta(nl, th)
    try:
        rec = shoot(cfg.N, nlw, cfg.xi, scfg, thresholds=th, sample=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary = _base_summary(cfg)
    summary["thresholds"] = th.to_dict()
    summary["outcome"] = rec.to_dict()
    summary["timings"] = {"shots": 1, "steps": rec.n_steps, "f_evals": rec.n_fevals}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_profile_csv(out / "shoot_profile.csv", rec.profile)
    _write_json(out / "shoot_summary.json", summary)
    _print_summary(summary)
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    nl = from_spec(cfg.family_spec())
    summary = _base_summary(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    th = compute_thresholds(nl, cfg.N)
    rep = check_assumptions(nl, cfg.N)
    summary["thresholds"] = th.to_dict()
    summary["assumption_report"] = rep.to_dict()
    scfg = cfg.shoot_config()
    shots_steps = [0, 0, 0]  # shots, steps, fevals

    def emit(code: int) -> int:
        summary["timings"] = {
            "shots": shots_steps[0],
            "steps": shots_steps[1],
            "f_evals": shots_steps[2],
        }
        _write_json(out / "solve_summary.json", summary)
        _print_summary(summary)
        return code

    if not rep.required_pass(cfg.N):
        summary["error"] = f"assumption audit failed: {rep.failures()}"
        return emit(EXIT_ASSUMPTIONS)
    try:
        bracket = find_bracket(cfg.N, nl, scfg, thresholds=th, report=rep, mcfg=cfg.minimize_config())
    except (BracketError, AssumptionFailure) as exc:
        summary["error"] = str(exc)
        return emit(EXIT_BRACKET if isinstance(exc, BracketError) else EXIT_ASSUMPTIONS)
    summary["bracket"] = {
        "xi_plus": bracket.xi_plus,
        "xi_minus": bracket.xi_minus,
        "seed_info": bracket.seed_info,
    }
    for rec in (bracket.plus_record, bracket.minus_record):
        if rec is not None:
            shots_steps[0] += 1
            shots_steps[1] += rec.n_steps
            shots_steps[2] += rec.n_fevals
    sol = bisect_ground_state(cfg.N, nl, bracket, scfg, thresholds=th)
    nlw = truncate_at_beta(nl, th)
    checks = verify_ground_state(sol, nlw, cfg.N, scfg)
    sol.report["verification"] = checks
    summary["solution"] = sol.to_dict()
    summary["verification"] = checks
    shots_steps[0] += sol.iterations + 1
    _write_profile_csv(out / "solve_profile.csv", sol.profile)
    return emit(EXIT_OK if checks["all_passed"] else EXIT_VERIFICATION)


def cmd_scan(cfg: RunConfig) -> int:
    nl = from_spec(cfg.family_spec())
    th = compute_thresholds(nl, cfg.N)
    scfg = cfg.shoot_config()
    lo = cfg.xi_min if cfg.xi_min is not None else th.alpha + 1e-3
    hi = cfg.xi_max if cfg.xi_max is not None else min(th.beta, nl.scan_max) * 0.999
    if not (lo < hi and cfg.points >= 1):
        raise ConfigError(f"bad scan grid: [{lo}, {hi}] with {cfg.points} points")
    nlw = truncate_at_beta(nl, th)
    grid = np.linspace(lo, hi, cfg.points)
    records = classify_scan(cfg.N, nlw, grid, scfg, thresholds=th, workers=cfg.workers)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "scan_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "class", "event_r", "max_residual"])
        for rec in records:
            w.writerow(
                [repr(rec.xi), rec.outcome.kind, repr(rec.outcome.r), repr(rec.max_energy_residual)]
            )
    gaps = []
    for a, b in zip(records, records[1:]):
        if a.outcome.kind != b.outcome.kind:
            gaps.append(
                {"lo": a.xi, "hi": b.xi, "classes": [a.outcome.kind, b.outcome.kind], "width": b.xi - a.xi}
            )
    summary = _base_summary(cfg)
    summary["thresholds"] = th.to_dict()
    summary["scan"] = {
        "points": len(records),
        "classes": {
            kind: sum(1 for r in records if r.outcome.kind == kind)
            for kind in ("turning", "crossing", "ground_candidate", "undetermined")
        },
        "double_classified": sum(1 for r in records if r.double_classified),
        "errors": [r.error for r in records if r.error],
        "gaps": gaps,
    }
    summary["timings"] = {
        "shots": len(records),
        "steps": sum(r.n_steps for r in records),
        "f_evals": sum(r.n_fevals for r in records),
    }
    _write_json(out / "scan_summary.json", summary)
    _print_summary(summary)
    return EXIT_OK


def main(argv=None) -> int:
    t0 = time.monotonic()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        handler = {
            "thresholds": cmd_thresholds,
            "shoot": cmd_shoot,
            "solve": cmd_solve,
            "scan": cmd_scan,
        }[cfg.command]
        code = handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonlinearityError as exc:
        print(f"nonlinearity rejected: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTIONS
    except AssumptionFailure as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTIONS
    except BracketError as exc:
        print(f"bracket failure: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    print(f"wall time: {time.monotonic() - t0:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
