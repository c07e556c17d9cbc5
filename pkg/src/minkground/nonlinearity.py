"""Nonlinearities, their primitives, and the structural thresholds.

Every stage of the solver consumes a nonlinearity f through the same small
surface: point evaluation (extended by 0 on negative heights), the
primitive F(s) = int_0^s f, the three sign-change heights

    alpha = inf{s > 0 : f(s) >= 0}
    xi0   = inf{s > 0 : F(s) > 0}
    beta  = inf{s > xi0 : f(s) = 0}   (may be +inf)

a positivity witness gamma with F(gamma) > 0, and a sampling audit of the
structural assumptions (f1)-(f6) that the shooting and variational stages
rely on.  Two families are built in: ``power`` with f(s) = -lam*s + s**q
and ``sine`` with f(s) = -s*sin(s)*|sin(s)|**(q-1); arbitrary tabulated
data is accepted through monotone-cubic interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

SCAN_POINTS = 10_000
BISECT_WIDTH = 1e-12
QUAD_ABS_TOL = 1e-12
# (f2) is not verifiable exactly by sampling; difference quotients on a
# dyadic grid bounded by this constant count as a pass.
LIPSCHITZ_BOUND = 1e6
F4_QUOTIENT_FLOOR = 1e-6


class NonlinearityError(ValueError):
    """Raised when a nonlinearity violates a structural precondition."""


@dataclass(frozen=True)
class Nonlinearity:
    """A nonlinearity together with optional fast-path evaluators.

    ``f`` is the scalar evaluator with the negative-height extension
    already applied (f(s) = 0 for s <= 0 apart from f(0) = 0 itself).
    ``F_closed`` is the closed-form primitive when one exists; otherwise
    ``eval_F`` falls back to adaptive quadrature.  The ``*_arr`` members
    are vectorized equivalents used by the scan and variational code.
    ``spec`` is a plain-dict descriptor for built-in families so that
    worker processes and config files can rebuild the object.
    """

    f: Callable[[float], float]
    F_closed: Callable[[float], float] | None = None
    f_arr: Callable[[np.ndarray], np.ndarray] | None = None
    F_arr: Callable[[np.ndarray], np.ndarray] | None = None
    df_arr: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "custom"
    scan_max: float = 50.0
    threshold_hints: dict | None = None
    spec: dict | None = None
    tabulated: bool = False
    truncated_at: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.scan_max) and self.scan_max > 0):
            raise NonlinearityError(f"scan_max must be positive and finite, got {self.scan_max}")


def _extend(f_pos: Callable[[float], float]) -> Callable[[float], float]:
    def f(s: float) -> float:
        if s <= 0.0:
            return 0.0
        return f_pos(s)

    return f


def power_family(lam: float, q: float, scan_max: float = 50.0) -> Nonlinearity:
    """f(s) = -lam*s + s**q with lam > 0, q > 1."""
    if not (lam > 0 and q > 1):
        raise NonlinearityError(f"power family needs lam > 0 and q > 1, got lam={lam}, q={q}")
    lam = float(lam)
    q = float(q)

    def f_pos(s, _l=lam, _q=q):
        return -_l * s + s**_q

    def F_pos(s, _l=lam, _q=q):
        return -0.5 * _l * s * s + s ** (_q + 1.0) / (_q + 1.0)

    def f_arr(s, _l=lam, _q=q):
        sp = np.maximum(s, 0.0)
        return np.where(s > 0.0, -_l * sp + sp**_q, 0.0)

    def F_arr(s, _l=lam, _q=q):
        sp = np.maximum(s, 0.0)
        return np.where(s > 0.0, -0.5 * _l * sp * sp + sp ** (_q + 1.0) / (_q + 1.0), 0.0)

    def df_arr(s, _l=lam, _q=q):
        sp = np.maximum(s, 0.0)
        return np.where(s > 0.0, -_l + _q * sp ** (_q - 1.0), 0.0)

    return Nonlinearity(
        f=_extend(f_pos),
        F_closed=lambda s: F_pos(s) if s > 0.0 else 0.0,
        f_arr=f_arr,
        F_arr=F_arr,
        df_arr=df_arr,
        label=f"power(lam={lam:g}, q={q:g})",
        scan_max=float(scan_max),
        spec={"family": "power", "lam": lam, "q": q, "scan_max": float(scan_max)},
    )


def sine_family(q: float = 1.0, scan_max: float = 50.0) -> Nonlinearity:
    """f(s) = -s*sin(s)*|sin(s)|**(q-1) with q >= 1.

    A closed-form primitive exists only for q = 1, where
    F(s) = s*cos(s) - sin(s); other exponents fall back to quadrature.
    """
    if not q >= 1:
        raise NonlinearityError(f"sine family needs q >= 1, got q={q}")
    q = float(q)

    def f_pos(s, _q=q):
        sn = math.sin(s)
        return -s * sn * abs(sn) ** (_q - 1.0)

    def f_arr(s, _q=q):
        sn = np.sin(s)
        return np.where(s > 0.0, -s * sn * np.abs(sn) ** (_q - 1.0), 0.0)

    def df_arr(s, _q=q):
        sn = np.sin(s)
        cs = np.cos(s)
        mag = np.abs(sn) ** (_q - 1.0)
        return np.where(s > 0.0, -sn * mag - _q * s * cs * mag, 0.0)

    F_closed = None
    F_arr = None
    if q == 1.0:

        def F_closed(s):
            return s * math.cos(s) - math.sin(s) if s > 0.0 else 0.0

        def F_arr(s):
            return np.where(s > 0.0, s * np.cos(s) - np.sin(s), 0.0)

    return Nonlinearity(
        f=_extend(f_pos),
        F_closed=F_closed,
        f_arr=f_arr,
        F_arr=F_arr,
        df_arr=df_arr,
        label=f"sine(q={q:g})",
        scan_max=float(scan_max),
        spec={"family": "sine", "q": q, "scan_max": float(scan_max)},
    )


def tabulated_family(s_samples, f_samples, scan_max: float | None = None) -> Nonlinearity:
    """Nonlinearity from (s, f(s)) samples via monotone-cubic interpolation.

    Flagged as tabulated in reports.  Samples must start at s = 0 with
    f(0) = 0; evaluation beyond the table is rejected.
    """
    s = np.asarray(s_samples, dtype=float)
    v = np.asarray(f_samples, dtype=float)
    if s.ndim != 1 or s.shape != v.shape or s.size < 4:
        raise NonlinearityError("tabulated family needs matching 1-d arrays with >= 4 samples")
    if s[0] != 0.0 or abs(v[0]) > 1e-14:
        raise NonlinearityError("tabulated family must start at s=0 with f(0)=0")
    if np.any(np.diff(s) <= 0):
        raise NonlinearityError("tabulated sample heights must be strictly increasing")
    interp = PchipInterpolator(s, v, extrapolate=False)
    prim = interp.antiderivative()
    s_hi = float(s[-1])

    def f(x: float) -> float:
        if x <= 0.0:
            return 0.0
        if x > s_hi:
            raise NonlinearityError(f"tabulated f evaluated at {x} beyond table end {s_hi}")
        return float(interp(x))

    def F_closed(x: float) -> float:
        if x <= 0.0:
            return 0.0
        if x > s_hi:
            raise NonlinearityError(f"tabulated F evaluated at {x} beyond table end {s_hi}")
        return float(prim(x))

    def f_arr(x):
        out = np.where(np.asarray(x) > 0.0, interp(np.minimum(x, s_hi)), 0.0)
        return np.nan_to_num(out, nan=0.0)

    def F_arr(x):
        out = np.where(np.asarray(x) > 0.0, prim(np.minimum(x, s_hi)), 0.0)
        return np.nan_to_num(out, nan=0.0)

    def df_arr(x):
        d = interp.derivative()(np.minimum(x, s_hi))
        return np.where(np.asarray(x) > 0.0, np.nan_to_num(d, nan=0.0), 0.0)

    return Nonlinearity(
        f=f,
        F_closed=F_closed,
        f_arr=f_arr,
        F_arr=F_arr,
        df_arr=df_arr,
        label="tabulated",
        scan_max=float(scan_max if scan_max is not None else s_hi),
        spec={"family": "table", "s": s.tolist(), "f": v.tolist(), "scan_max": float(scan_max or s_hi)},
        tabulated=True,
    )


def from_spec(spec: dict) -> Nonlinearity:
    """Rebuild a built-in nonlinearity from its descriptor dict."""
    kind = spec.get("family")
    if kind == "power":
        nl = power_family(spec["lam"], spec["q"], spec.get("scan_max", 50.0))
    elif kind == "sine":
        nl = sine_family(spec["q"], spec.get("scan_max", 50.0))
    elif kind == "table":
        nl = tabulated_family(spec["s"], spec["f"], spec.get("scan_max"))
    else:
        raise NonlinearityError(f"unknown family descriptor {spec!r}")
    cut = spec.get("truncated_at")
    if cut is not None:
        nl = _truncate(nl, float(cut))
    return nl


# ----------------------------------------------------------------------
# evaluation


def eval_f(nl: Nonlinearity, s: float) -> float:
    """Evaluate f(s); negative heights return 0 by the standing extension."""
    if not math.isfinite(s):
        raise NonlinearityError(f"f evaluated at non-finite height {s}")
    return nl.f(s)


def eval_F(nl: Nonlinearity, s: float) -> float:
    """Evaluate the primitive F(s) = int_0^s f.

    Uses the closed form when available, else adaptive quadrature with
    absolute tolerance 1e-12; a quadrature error estimate above 1e-9 is
    reported as non-convergence.
    """
    if not math.isfinite(s):
        raise NonlinearityError(f"F evaluated at non-finite height {s}")
    if s <= 0.0:
        return 0.0
    if nl.F_closed is not None:
        return nl.F_closed(s)
    val, err = quad(nl.f, 0.0, s, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=300)
    if err > 1e-9:
        raise NonlinearityError(
            f"quadrature for F({s:g}) did not converge; achieved error estimate {err:.3e}"
        )
    return val


def _f_grid(nl: Nonlinearity, grid: np.ndarray) -> np.ndarray:
    if nl.f_arr is not None:
        return np.asarray(nl.f_arr(grid), dtype=float)
    return np.array([nl.f(float(s)) for s in grid])


def _F_grid(nl: Nonlinearity, grid: np.ndarray) -> np.ndarray:
    """F on an increasing grid; segment-wise quadrature when no closed form."""
    if nl.F_arr is not None:
        return np.asarray(nl.F_arr(grid), dtype=float)
    if nl.F_closed is not None:
        return np.array([nl.F_closed(float(s)) for s in grid])
    vals = np.empty(grid.size)
    acc = 0.0
    prev = 0.0
    for i, s in enumerate(grid):
        seg, _ = quad(nl.f, prev, float(s), epsabs=1e-13, epsrel=1e-13, limit=100)
        acc += seg
        vals[i] = acc
        prev = float(s)
    return vals


# ----------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class Thresholds:
    """Sign-change heights of f and F plus a positivity witness for F."""

    alpha: float
    xi0: float
    beta: float  # math.inf when f never returns to zero past xi0
    gamma: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "xi0": self.xi0,
            "beta": None if math.isinf(self.beta) else self.beta,
            "gamma": self.gamma,
        }


def _bisect(fun, lo: float, hi: float, lo_neg: bool = True, width: float = BISECT_WIDTH) -> float:
    """Bisection keeping fun(lo) on the negative side, fun(hi) on the other."""
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (fun(mid) < 0.0) == lo_neg:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def compute_thresholds(nl: Nonlinearity, N: int = 3) -> Thresholds:
    """Locate alpha, xi0, beta by sign scan plus bisection; pick gamma.

    A uniform scan with ``SCAN_POINTS`` points on (0, scan_max] brackets
    each sign change, which bisection then narrows to width 1e-12.  beta
    is +inf when f has no sign change past xi0 inside the scan range.
    gamma is the first scan point with F > 0, refined once toward xi0.
    """
    smax = nl.scan_max
    grid = np.linspace(0.0, smax, SCAN_POINTS + 1)[1:]
    hints = nl.threshold_hints or {}

    if "alpha" in hints:
        lo, hi = hints["alpha"]
        if not (nl.f(lo) < 0.0 <= nl.f(hi)):
            raise NonlinearityError(f"alpha hint ({lo}, {hi}) does not bracket a sign change")
        alpha = _bisect(nl.f, float(lo), float(hi))
        i_alpha = int(np.searchsorted(grid, alpha))
    else:
        fv = _f_grid(nl, grid)
        if fv[0] >= 0.0:
            raise NonlinearityError(
                "(f3) violated: f is already nonnegative at the first scan point; "
                "no positive alpha = inf{s > 0 : f(s) >= 0} can be bracketed"
            )
        nonneg = np.flatnonzero(fv >= 0.0)
        if nonneg.size == 0:
            raise NonlinearityError(
                f"(f3) violated: no alpha found in (0, {smax:g}]; f stays negative on the scan"
            )
        i_alpha = int(nonneg[0])
        alpha = _bisect(nl.f, float(grid[i_alpha - 1]), float(grid[i_alpha]))

    # xi0 and gamma: walk F along the grid until it turns positive
    Fv = _F_grid(nl, grid)
    pos = np.flatnonzero(Fv > 0.0)
    if pos.size == 0:
        raise NonlinearityError(
            f"(f5) violated: no gamma with F(gamma) > 0 found in (0, {smax:g}]"
        )
    j = int(pos[0])
    if j == 0:
        raise NonlinearityError("F is already positive at the first scan point; xi0 <= 0 impossible")
    Ffun = lambda s: eval_F(nl, s)
    xi0 = _bisect(lambda s: Ffun(s), float(grid[j - 1]), float(grid[j]), lo_neg=True)
    gamma = float(grid[j])
    mid = 0.5 * (gamma + xi0)
    if Ffun(mid) > 0.0:
        gamma = mid

    # beta: first zero of f past xi0
    if "beta" in hints:
        lo, hi = hints["beta"]
        beta = _bisect(lambda s: -nl.f(s), float(lo), float(hi))
    else:
        fv_tail = _f_grid(nl, grid[j:])
        nonpos = np.flatnonzero(fv_tail <= 0.0)
        if nonpos.size == 0:
            beta = math.inf
        else:
            k = j + int(nonpos[0])
            beta = _bisect(lambda s: -nl.f(s), float(grid[k - 1]), float(grid[k]))

    if not (0.0 < alpha < xi0 < beta):
        raise NonlinearityError(
            f"threshold ordering violated: alpha={alpha!r}, xi0={xi0!r}, beta={beta!r}"
        )
    if not Ffun(gamma) > 0.0:
        raise NonlinearityError(f"gamma witness failed: F({gamma!r}) <= 0")
    return Thresholds(alpha=alpha, xi0=xi0, beta=beta, gamma=gamma)


# ----------------------------------------------------------------------
# assumption audit


@dataclass
class AssumptionReport:
    """Sampling-based verdicts for the structural assumptions (f1)-(f6)."""

    N: int
    statuses: dict = field(default_factory=dict)  # name -> "pass" | "fail" | "not-applicable"
    evidence: dict = field(default_factory=dict)  # name -> short description + samples
    f4_limit_estimate: float | None = None
    f4_unbounded: bool = False
    thresholds: Thresholds | None = None

    def required_pass(self, N: int | None = None) -> bool:
        """True when every assumption required for this dimension passes.

        (f4) is only required for N >= 3.
        """
        N = self.N if N is None else N
        needed = ["f1", "f2", "f3", "f5", "f6"]
        if N >= 3:
            needed.append("f4")
        return all(self.statuses.get(name) == "pass" for name in needed)

    def failures(self) -> list[str]:
        return [k for k, v in self.statuses.items() if v == "fail"]

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "statuses": dict(self.statuses),
            "evidence": self.evidence,
            "f4_limit_estimate": self.f4_limit_estimate,
            "f4_unbounded": self.f4_unbounded,
            "required_pass": self.required_pass(),
        }


def check_assumptions(nl: Nonlinearity, N: int) -> AssumptionReport:
    """Audit (f1)-(f6) by sampling; failures are verdicts, not errors.

    (f2) uses the documented heuristic: difference quotients on a dyadic
    grid bounded by 1e6.  (f4) estimates the one-sided limit of
    f(s)/(s - alpha) at s = alpha + 10**-k for k = 3..8 and requires the
    minimum quotient to exceed 1e-6; it is not applicable for N = 2.
    """
    if N < 2:
        raise NonlinearityError(f"N must be >= 2, got {N}")
    rep = AssumptionReport(N=N)

    # f1: f(0) = 0
    f0 = nl.f(0.0)
    rep.statuses["f1"] = "pass" if abs(f0) <= 1e-14 else "fail"
    rep.evidence["f1"] = {"f(0)": f0}

    # f2: bounded difference quotients on a dyadic grid (heuristic)
    base = np.linspace(0.0, nl.scan_max, 65)[1:]
    worst = 0.0
    try:
        for x in base:
            for k in range(8, 21, 4):
                d = 2.0**-k
                if x + d > nl.scan_max:
                    continue
                quot = abs(nl.f(float(x + d)) - nl.f(float(x))) / d
                worst = max(worst, quot)
        rep.statuses["f2"] = "pass" if worst <= LIPSCHITZ_BOUND else "fail"
        rep.evidence["f2"] = {"max_difference_quotient": worst, "bound": LIPSCHITZ_BOUND}
    except NonlinearityError as exc:
        rep.statuses["f2"] = "fail"
        rep.evidence["f2"] = {"error": str(exc)}

    # f3/f5 ride on the threshold search
    try:
        th = compute_thresholds(nl, N)
        rep.thresholds = th
        rep.statuses["f3"] = "pass"
        rep.evidence["f3"] = {"alpha": th.alpha, "f(alpha/2)": nl.f(th.alpha / 2.0)}
        rep.statuses["f5"] = "pass"
        rep.evidence["f5"] = {"gamma": th.gamma, "F(gamma)": eval_F(nl, th.gamma)}
    except NonlinearityError as exc:
        msg = str(exc)
        rep.statuses["f3"] = "fail" if "(f3)" in msg else "unknown"
        rep.statuses["f5"] = "fail" if "(f5)" in msg else "unknown"
        rep.evidence["f3"] = rep.evidence["f5"] = {"error": msg}
        rep.statuses.setdefault("f4", "fail")
        rep.statuses["f6"] = "fail"
        return rep

    # f4: one-sided limit of f(s)/(s - alpha) from above (N >= 3 only)
    if N == 2:
        rep.statuses["f4"] = "not-applicable"
        rep.evidence["f4"] = {"reason": "not required for N = 2"}
    else:
        quotients = []
        for k in range(3, 9):
            d = 10.0**-k
            quotients.append(nl.f(th.alpha + d) / d)
        rep.f4_limit_estimate = quotients[-1]
        rep.f4_unbounded = (
            all(b > a for a, b in zip(quotients, quotients[1:])) and quotients[-1] > 10.0 * quotients[0]
        )
        rep.statuses["f4"] = "pass" if min(quotients) > F4_QUOTIENT_FLOOR else "fail"
        rep.evidence["f4"] = {"quotients_at_alpha_plus_10^-k": quotients, "k": list(range(3, 9))}

    # f6: f > 0 on (alpha, xi0]
    samples = np.linspace(th.alpha + 1e-7, th.xi0, 1000)
    fvals = _f_grid(nl, samples)
    bad = np.flatnonzero(fvals <= 0.0)
    rep.statuses["f6"] = "pass" if bad.size == 0 else "fail"
    rep.evidence["f6"] = {
        "samples": len(samples),
        "min_f": float(fvals.min()),
        "first_bad_height": None if bad.size == 0 else float(samples[bad[0]]),
    }
    return rep


# ----------------------------------------------------------------------
# truncation


def _truncate(nl: Nonlinearity, beta: float) -> Nonlinearity:
    base_f, base_F = nl.f, nl.F_closed

    def f(s, _b=beta, _f=base_f):
        return 0.0 if s > _b else _f(s)

    F_closed = None
    if base_F is not None:

        def F_closed(s, _b=beta, _F=base_F):
            return _F(min(s, _b))

    f_arr = None
    if nl.f_arr is not None:

        def f_arr(s, _b=beta, _fa=nl.f_arr):
            return np.where(np.asarray(s) > _b, 0.0, _fa(s))

    F_arr = None
    if nl.F_arr is not None:

        def F_arr(s, _b=beta, _Fa=nl.F_arr):
            return _Fa(np.minimum(s, _b))

    df_arr = None
    if nl.df_arr is not None:

        def df_arr(s, _b=beta, _da=nl.df_arr):
            return np.where(np.asarray(s) > _b, 0.0, _da(s))

    spec = dict(nl.spec, truncated_at=beta) if nl.spec is not None else None
    return replace(
        nl,
        f=f,
        F_closed=F_closed,
        f_arr=f_arr,
        F_arr=F_arr,
        df_arr=df_arr,
        spec=spec,
        truncated_at=beta,
        label=nl.label + f" cut at {beta:.6g}",
    )


def truncate_at_beta(nl: Nonlinearity, th: Thresholds) -> Nonlinearity:
    """Zero f beyond beta; the identity transformation when beta = +inf.

    Idempotent: re-truncating at the same beta returns the input object.
    """
    if math.isinf(th.beta):
        return nl
    if nl.truncated_at is not None and nl.truncated_at == th.beta:
        return nl
    return _truncate(nl, th.beta)
