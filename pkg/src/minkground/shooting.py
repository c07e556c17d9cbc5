"""Shooting classification and ground-state bisection.

A shot integrates the radial Cauchy problem from an initial height xi in
the admissible interval (alpha, beta) and watches for two terminal
events:

* turning  -- the slope returns to zero while u is still positive
              (xi belongs to the turning set), and
* crossing -- u reaches zero with negative slope (xi belongs to the
              crossing set).

Both sets are open and disjoint, so bisecting between a turning height
and a crossing height pins the ground state between them.  Trajectories
that enter the small-height/small-flux box before any event are accepted
as ground-state candidates; trajectories that exhaust the radius budget
are undetermined.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import variational
from .integrator import (
    IntegratorConfig,
    RadialIntegrator,
    RadialState,
    StiffnessError,
    energy_residual,
    lorentz_h,
    slope_from_flux,
)
from .nonlinearity import (
    AssumptionReport,
    Nonlinearity,
    NonlinearityError,
    Thresholds,
    check_assumptions,
    compute_thresholds,
    eval_F,
    from_spec,
    truncate_at_beta,
)

# a turning event with u at or below this, or a crossing with q at or
# above its negative, counts as a (theoretically excluded) double event
DOUBLE_EVENT_TOL = 1e-9


class BracketError(RuntimeError):
    """No valid turning/crossing bracket could be produced."""


class AssumptionFailure(RuntimeError):
    """The (f1)-(f6) audit failed for the requested dimension."""

    def __init__(self, report: AssumptionReport):
        super().__init__(f"assumption audit failed: {', '.join(report.failures())}")
        self.report = report


@dataclass
class ShootConfig:
    """Shooting parameters; integrator settings ride along."""

    r_max: float = 100.0
    u_tol: float = 1e-4
    q_tol: float = 1e-4
    xi_tol: float = 1e-10
    event_tol: float = 1e-12
    margin_tol: float = 1e-3
    res_tol: float = 1e-7
    decay_tol: float = 1e-3
    fd_tol: float = 1e-5
    max_bisect_iters: int = 200
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def validate(self) -> None:
        self.integrator.validate()
        for name in ("r_max", "u_tol", "q_tol", "xi_tol", "event_tol", "margin_tol",
                     "res_tol", "decay_tol", "fd_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r_max <= self.integrator.r_start:
            raise ValueError("r_max must exceed the startup radius")


@dataclass(frozen=True)
class Outcome:
    """Tagged classification of one shot."""

    kind: str  # "turning" | "crossing" | "ground_candidate" | "undetermined"
    r: float
    u: float
    q: float

    @staticmethod
    def turning(r: float, u: float, q: float) -> "Outcome":
        return Outcome("turning", r, u, q)

    @staticmethod
    def crossing(r: float, u: float, q: float) -> "Outcome":
        return Outcome("crossing", r, u, q)

    @staticmethod
    def ground_candidate(r: float, u: float, q: float) -> "Outcome":
        return Outcome("ground_candidate", r, u, q)

    @staticmethod
    def undetermined(r: float, u: float, q: float) -> "Outcome":
        return Outcome("undetermined", r, u, q)

    @property
    def r_turn(self) -> float:
        assert self.kind == "turning"
        return self.r

    @property
    def r_cross(self) -> float:
        assert self.kind == "crossing"
        return self.r

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "turning":
            d["r_turn"] = self.r
        elif self.kind == "crossing":
            d["r_cross"] = self.r
        elif self.kind == "ground_candidate":
            d.update({"r_reached": self.r, "u_final": self.u, "q_final": self.q})
        else:
            d["r_max"] = self.r
        d.update({"u_at_event": self.u, "q_at_event": self.q})
        return d


@dataclass
class ShotRecord:
    xi: float
    outcome: Outcome
    profile: np.ndarray | None  # rows (r, u, uprime, q, D, energy_residual)
    max_energy_residual: float
    min_slope_margin: float
    n_steps: int = 0
    n_fevals: int = 0
    error: str | None = None

    @property
    def double_classified(self) -> bool:
        """True if the event also satisfies the opposite event's condition."""
        if self.outcome.kind == "turning":
            return self.outcome.u <= DOUBLE_EVENT_TOL
        if self.outcome.kind == "crossing":
            return self.outcome.q >= -DOUBLE_EVENT_TOL
        return False

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "outcome": self.outcome.to_dict(),
            "max_energy_residual": self.max_energy_residual,
            "min_slope_margin": self.min_slope_margin,
            "n_steps": self.n_steps,
            "n_fevals": self.n_fevals,
            "double_classified": self.double_classified,
            "error": self.error,
        }


@dataclass
class GroundStateSolution:
    xi_star: float
    bracket_width: float
    profile: np.ndarray  # trimmed to the strictly decreasing positive part
    report: dict
    outcome_kind: str
    iterations: int

    def to_dict(self) -> dict:
        return {
            "xi_star": self.xi_star,
            "bracket_width": self.bracket_width,
            "outcome_kind": self.outcome_kind,
            "iterations": self.iterations,
            "profile_rows": int(self.profile.shape[0]),
            "report": self.report,
        }


@dataclass
class Bracket:
    xi_plus: float   # turning side
    xi_minus: float  # crossing side
    plus_record: ShotRecord | None = None
    minus_record: ShotRecord | None = None
    thresholds: Thresholds | None = None
    seed_info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.xi_plus, self.xi_minus))


# ----------------------------------------------------------------------
# single shot


def _locate(stepper, s0, k0, s1, k1, comp, lo_sign_neg, tol):
    """Bisect the Hermite interpolant of component comp to a sign change.

    lo_sign_neg: True when the component is negative at s0 and >= 0 at s1
    (turning on q); False for positive-to-nonpositive (crossing on u).
    Returns the event radius with bracket width <= tol.
    """
    lo, hi = s0.r, s1.r
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = stepper.hermite(s0, k0, s1, k1, mid, comp)
        before = (val < 0.0) if lo_sign_neg else (val > 0.0)
        if before:
            lo = mid
        else:
            hi = mid
    return hi


def shoot(
    N: int,
    nl: Nonlinearity,
    xi: float,
    cfg: ShootConfig,
    thresholds: Thresholds | None = None,
    sample: bool = False,
    r_max: float | None = None,
) -> ShotRecord:
    """Integrate one shot from height xi and classify its outcome.

    xi must lie strictly inside (alpha, min(beta, scan_max)).  Event
    radii are refined to ``cfg.event_tol``; the state at the event is
    recomputed by a direct sub-step, not read off the interpolant.  When
    ``sample`` is true (and the integrator config carries a stride) the
    record carries dense profile rows (r, u, u', q, D, energy_residual).
    """
    cfg.validate()
    th = thresholds if thresholds is not None else compute_thresholds(nl, N)
    hi = min(th.beta, nl.scan_max)
    if not (th.alpha < xi < hi):
        raise ValueError(
            f"initial height {xi!r} outside the admissible open interval "
            f"({th.alpha!r}, {hi!r})"
        )
    r_stop = cfg.r_max if r_max is None else r_max

    stepper = RadialIntegrator(N, nl, cfg.integrator)
    state = stepper.start(xi)
    k = stepper.rhs(state.r, state.u, state.q)
    h = min(cfg.integrator.h_max, state.r)

    F_xi = eval_F(nl, xi)
    stride = cfg.integrator.sample_stride if sample else None
    rows: list[tuple] = []
    max_res = 0.0
    min_margin = 1.0
    last_emitted = -1.0

    def note_state(s: RadialState) -> None:
        nonlocal min_margin
        min_margin = min(min_margin, 1.0 - abs(s.slope))

    def emit(s: RadialState) -> None:
        nonlocal max_res, last_emitted
        if s.r <= last_emitted:
            return
        res = lorentz_h(s.q) + (N - 1) * s.D - F_xi + eval_F(nl, s.u)
        max_res = max(max_res, abs(res))
        rows.append((s.r, s.u, s.slope, s.q, s.D, res))
        last_emitted = s.r

    note_state(state)
    emit(state)
    next_sample = None
    sample_idx = 0
    if stride is not None:
        sample_idx = math.floor(state.r / stride + 1e-9) + 1
        next_sample = sample_idx * stride

    outcome: Outcome | None = None
    err_msg: str | None = None
    try:
        while outcome is None:
            ceil = r_stop if next_sample is None else min(r_stop, next_sample)
            prev, kprev = state, k
            state, k, h = stepper.step(state, k, h, ceil)
            note_state(state)

            # events, earliest first
            r_cross = r_turn = None
            if state.u <= 0.0:
                r_cross = _locate(stepper, prev, kprev, state, k, 0, False, cfg.event_tol)
            if state.q >= 0.0:
                r_turn = _locate(stepper, prev, kprev, state, k, 1, True, cfg.event_tol)
            if r_cross is not None or r_turn is not None:
                if r_turn is None or (r_cross is not None and r_cross <= r_turn):
                    ev = stepper.restep(prev, kprev, r_cross)
                    outcome = Outcome.crossing(ev.r, ev.u, ev.q)
                else:
                    ev = stepper.restep(prev, kprev, r_turn)
                    outcome = Outcome.turning(ev.r, ev.u, ev.q)
                note_state(ev)
                emit(ev)
                break

            if next_sample is not None and state.r >= next_sample - 1e-15:
                emit(state)
                sample_idx += 1
                next_sample = sample_idx * stride

            if 0.0 < state.u < cfg.u_tol and abs(state.q) < cfg.q_tol:
                outcome = Outcome.ground_candidate(state.r, state.u, state.q)
                emit(state)
                break
            if state.r >= r_stop - 1e-12:
                outcome = Outcome.undetermined(state.r, state.u, state.q)
                emit(state)
                break
    except StiffnessError as exc:
        outcome = Outcome.undetermined(exc.state.r, exc.state.u, exc.state.q)
        err_msg = str(exc)

    profile = np.array(rows) if stride is not None else None
    return ShotRecord(
        xi=xi,
        outcome=outcome,
        profile=profile,
        max_energy_residual=max_res,
        min_slope_margin=min_margin,
        n_steps=stepper.n_steps,
        n_fevals=stepper.n_fevals,
        error=err_msg,
    )


# ----------------------------------------------------------------------
# scans


def _scan_worker(args):
    spec, N, xi, cfg = args
    nl = from_spec(spec)
    try:
        return shoot(N, nl, xi, cfg)
    except Exception as exc:  # per-shot errors are collected, not fatal
        return ShotRecord(
            xi=xi,
            outcome=Outcome.undetermined(0.0, xi, 0.0),
            profile=None,
            max_energy_residual=math.nan,
            min_slope_margin=math.nan,
            error=str(exc),
        )


def classify_scan(
    N: int,
    nl: Nonlinearity,
    xi_grid,
    cfg: ShootConfig,
    thresholds: Thresholds | None = None,
    workers: int = 1,
) -> list[ShotRecord]:
    """One ShotRecord per grid height, in input order.

    Shots are independent; with ``workers > 1`` and a rebuildable family
    they fan out to a process pool (results stay ordered by the input
    grid, so the output is identical across worker counts).  Per-shot
    failures are recorded on the ShotRecord and do not stop the scan.
    """
    th = thresholds if thresholds is not None else compute_thresholds(nl, N)
    xis = [float(x) for x in xi_grid]
    if workers > 1 and nl.spec is not None:
        tasks = [(nl.spec, N, xi, cfg) for xi in xis]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_scan_worker, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    out = []
    for xi in xis:
        try:
            out.append(shoot(N, nl, xi, cfg, thresholds=th))
        except Exception as exc:
            out.append(
                ShotRecord(
                    xi=xi,
                    outcome=Outcome.undetermined(0.0, xi, 0.0),
                    profile=None,
                    max_energy_residual=math.nan,
                    min_slope_margin=math.nan,
                    error=str(exc),
                )
            )
    return out


# ----------------------------------------------------------------------
# bracketing


def find_bracket(
    N: int,
    nl: Nonlinearity,
    cfg: ShootConfig,
    thresholds: Thresholds | None = None,
    report: AssumptionReport | None = None,
    mcfg: "variational.MinimizeConfig | None" = None,
) -> Bracket:
    """Produce a turning height and a crossing height.

    The turning side is taken from (alpha, xi0) (midpoint first).  The
    crossing side is seeded by the variational minimizer on a ball,
    falling back to a geometric scan upward from xi0.  All shots use the
    truncated nonlinearity when beta is finite.
    """
    th = thresholds if thresholds is not None else compute_thresholds(nl, N)
    rep = report if report is not None else check_assumptions(nl, N)
    if not rep.required_pass(N):
        raise AssumptionFailure(rep)
    nlw = truncate_at_beta(nl, th)
    seed_info: dict = {}

    plus_rec = None
    for frac in (0.5, 0.25, 0.75):
        xi_p = th.alpha + frac * (th.xi0 - th.alpha)
        rec = shoot(N, nlw, xi_p, cfg, thresholds=th)
        if rec.outcome.kind == "turning":
            plus_rec = rec
            break
    if plus_rec is None:
        raise BracketError("no turning height detected inside (alpha, xi0)")

    minus_rec = None
    try:
        mc = mcfg if mcfg is not None else variational.MinimizeConfig()
        gamma = variational.seed_gamma(N, nlw, th)
        rho = variational.choose_rho(N, nlw, gamma, mc)
        result = variational.minimize_J(N, nlw, rho, mc)
        xi_bar = variational.seed_from_minimizer(result.grid, th)
        seed_info = {
            "gamma": gamma,
            "rho": rho,
            "J": result.J,
            "xi_bar": xi_bar,
            "residual": result.residual,
        }
        rec = shoot(N, nlw, xi_bar, cfg, thresholds=th)
        seed_info["shot_outcome"] = rec.outcome.kind
        if rec.outcome.kind == "crossing":
            minus_rec = rec
    except (variational.VariationalError, NonlinearityError, ValueError) as exc:
        seed_info["error"] = str(exc)

    if minus_rec is None:
        hi = min(th.beta, nl.scan_max)
        candidates = []
        if math.isinf(th.beta):
            step = th.xi0 - th.alpha
            xi = th.xi0 + step
            while xi < hi:
                candidates.append(xi)
                step *= 2.0
                xi = th.xi0 + step
        else:
            for k in range(1, 21):
                candidates.append(th.beta - (th.beta - th.xi0) * 0.5**k)
        for xi_m in candidates:
            rec = shoot(N, nlw, xi_m, cfg, thresholds=th)
            if rec.outcome.kind == "crossing":
                minus_rec = rec
                break
    if minus_rec is None:
        raise BracketError(
            f"crossing set not detected within budget (scanned up to {min(th.beta, nl.scan_max):g})"
        )
    return Bracket(
        xi_plus=plus_rec.xi,
        xi_minus=minus_rec.xi,
        plus_record=plus_rec,
        minus_record=minus_rec,
        thresholds=th,
        seed_info=seed_info,
    )


# ----------------------------------------------------------------------
# bisection


def _shoot_resolving(N, nl, xi, cfg, th, sample=False):
    """Shoot; resolve an undetermined outcome by doubling r_max once.

    A still-undetermined shot after the doubling is treated as a
    ground-state candidate (slow decay is indistinguishable from a ground
    state at finite budget); the record notes the doubling.
    """
    rec = shoot(N, nl, xi, cfg, thresholds=th, sample=sample)
    doubled = False
    if rec.outcome.kind == "undetermined" and rec.error is None:
        doubled = True
        rec = shoot(N, nl, xi, cfg, thresholds=th, sample=sample, r_max=2.0 * cfg.r_max)
        if rec.outcome.kind == "undetermined" and rec.error is None:
            rec = replace(
                rec,
                outcome=Outcome.ground_candidate(rec.outcome.r, rec.outcome.u, rec.outcome.q),
            )
    return rec, doubled


def _trim_profile(profile: np.ndarray) -> np.ndarray:
    """Drop trailing rows that are not strictly decreasing positive states.

    Only event rows can violate (a turning row has u' = 0, a crossing row
    has u <= 0); everything before the event is monotone by construction.
    """
    end = profile.shape[0]
    while end > 1 and (profile[end - 1, 1] <= 0.0 or profile[end - 1, 2] >= 0.0):
        end -= 1
    return profile[:end]


def bisect_ground_state(
    N: int,
    nl: Nonlinearity,
    bracket: Bracket | tuple,
    cfg: ShootConfig,
    thresholds: Thresholds | None = None,
) -> GroundStateSolution:
    """Bisect between a turning and a crossing height.

    Endpoints must classify oppositely.  Midpoints are shot and assigned
    to their side; an undetermined midpoint gets one r_max doubling and
    then counts as a ground-state candidate, which terminates the search,
    as does bracket width <= xi_tol.  The returned profile is the
    midpoint shot at termination, trimmed to its strictly decreasing
    positive part.
    """
    cfg.validate()
    th = thresholds
    if isinstance(bracket, Bracket):
        th = th or bracket.thresholds
        xi_p, xi_m = bracket.xi_plus, bracket.xi_minus
        kinds = {}
        if bracket.plus_record is not None:
            kinds[xi_p] = bracket.plus_record.outcome.kind
        if bracket.minus_record is not None:
            kinds[xi_m] = bracket.minus_record.outcome.kind
    else:
        xi_p, xi_m = bracket
        kinds = {}
    th = th if th is not None else compute_thresholds(nl, N)
    nlw = truncate_at_beta(nl, th)

    for xi in (xi_p, xi_m):
        if xi not in kinds:
            kinds[xi] = shoot(N, nlw, xi, cfg, thresholds=th).outcome.kind
    pair = {kinds[xi_p], kinds[xi_m]}
    if pair != {"turning", "crossing"}:
        raise ValueError(
            f"invalid bracket: endpoints classify as {kinds[xi_p]!r} and {kinds[xi_m]!r}; "
            "one turning and one crossing endpoint are required"
        )
    a = xi_p if kinds[xi_p] == "turning" else xi_m  # turning side
    b = xi_m if a == xi_p else xi_p                 # crossing side

    report: dict = {"terminated_by": None, "r_max_doubled": False}
    iters = 0
    candidate_xi = None
    while abs(b - a) > cfg.xi_tol:
        if iters >= cfg.max_bisect_iters:
            raise RuntimeError(
                f"bisection exceeded {cfg.max_bisect_iters} iterations with bracket "
                f"({a!r}, {b!r}); classifications may oscillate"
            )
        mid = 0.5 * (a + b)
        rec, doubled = _shoot_resolving(N, nlw, mid, cfg, th)
        report["r_max_doubled"] = report["r_max_doubled"] or doubled
        iters += 1
        kind = rec.outcome.kind
        if kind == "turning":
            a = mid
        elif kind == "crossing":
            b = mid
        elif kind == "ground_candidate":
            candidate_xi = mid
            report["terminated_by"] = "ground_candidate"
            break
        else:
            raise RuntimeError(f"unresolvable shot at xi={mid!r}: {rec.error}")

    if candidate_xi is None:
        report["terminated_by"] = report["terminated_by"] or "bracket_width"
        candidate_xi = 0.5 * (a + b)

    final, doubled = _shoot_resolving(N, nlw, candidate_xi, cfg, th, sample=True)
    report["r_max_doubled"] = report["r_max_doubled"] or doubled
    report["final_outcome"] = final.outcome.to_dict()
    report["bisection_iterations"] = iters
    if final.profile is None:
        raise RuntimeError("final shot produced no profile; set integrator.sample_stride")
    profile = _trim_profile(final.profile)
    return GroundStateSolution(
        xi_star=candidate_xi,
        bracket_width=abs(b - a),
        profile=profile,
        report=report,
        outcome_kind=final.outcome.kind,
        iterations=iters,
    )


# ----------------------------------------------------------------------
# verification


def profile_ode_residual(profile: np.ndarray, nl: Nonlinearity, N: int, r_min: float = 0.5) -> float:
    """Max residual of the radial equation on the uniform part of a profile.

    Differentiates the flux r^(N-1)*q with a five-point stencil on the
    longest uniformly spaced run of rows and checks it against
    -r^(N-1)*f(u), normalized back to the equation's own scale.  Rows
    below ``r_min`` are skipped: dividing by r^(N-1) amplifies stencil
    error without bound as r -> 0, so the check is ill-conditioned there.
    """
    r = profile[:, 0]
    if r.size < 7:
        return math.nan
    dr = np.diff(r)
    # longest run of equal spacing
    best_lo, best_hi = 0, 0
    lo = 0
    for i in range(1, dr.size):
        if abs(dr[i] - dr[lo]) > 1e-9 * max(dr[i], dr[lo]):
            if i - lo > best_hi - best_lo:
                best_lo, best_hi = lo, i
            lo = i
    if dr.size - lo > best_hi - best_lo:
        best_lo, best_hi = lo, dr.size
    sl = slice(best_lo, best_hi + 1)
    rr, uu, qq = r[sl], profile[sl, 1], profile[sl, 3]
    if rr.size < 7:
        return math.nan
    h = rr[1] - rr[0]
    flux = rr ** (N - 1) * qq
    dflux = (flux[:-4] - 8.0 * flux[1:-3] + 8.0 * flux[3:-1] - flux[4:]) / (12.0 * h)
    mid_r = rr[2:-2]
    mid_u = uu[2:-2]
    keep = mid_r >= r_min
    if not np.any(keep):
        return math.nan
    fvals = np.array([nl.f(float(v)) for v in mid_u]) if nl.f_arr is None else nl.f_arr(mid_u)
    res = np.abs(dflux / mid_r ** (N - 1) + fvals)
    return float(res[keep].max())


def verify_ground_state(
    sol: GroundStateSolution,
    nl: Nonlinearity,
    N: int,
    cfg: ShootConfig | None = None,
) -> dict:
    """Run the five certification checks on a ground-state profile.

    (i) positivity and strict decrease at all samples, (ii) slope margin,
    (iii) first-integral residual, (iv) tail decay, (v) finite-difference
    residual of the radial equation.  Returns per-check verdicts; never
    raises on a failed check.
    """
    cfg = cfg if cfg is not None else ShootConfig()
    p = sol.profile
    u = p[:, 1]
    uprime = p[:, 2]
    checks = {}
    checks["positive_decreasing"] = {
        "passed": bool(np.all(u > 0.0) and np.all(uprime < 0.0) and np.all(np.diff(u) < 0.0)),
        "min_u": float(u.min()),
        "max_uprime": float(uprime.max()),
    }
    margin = float((1.0 - np.abs(uprime)).min())
    checks["slope_margin"] = {"passed": bool(margin >= cfg.margin_tol), "value": margin, "tol": cfg.margin_tol}
    max_res = float(np.abs(p[:, 5]).max())
    checks["energy_residual"] = {"passed": bool(max_res <= cfg.res_tol), "value": max_res, "tol": cfg.res_tol}
    checks["tail_decay"] = {
        "passed": bool(u[-1] <= cfg.decay_tol),
        "value": float(u[-1]),
        "tol": cfg.decay_tol,
        "r_final": float(p[-1, 0]),
    }
    fd = profile_ode_residual(p, nl, N)
    checks["ode_residual_fd"] = {
        "passed": bool(math.isfinite(fd) and fd <= cfg.fd_tol),
        "value": fd,
        "tol": cfg.fd_tol,
    }
    checks["all_passed"] = all(v["passed"] for k, v in checks.items() if isinstance(v, dict))
    return checks
