"""Adaptive integration of the radial Cauchy problem in flux variables.

The radial equation

    (u'/sqrt(1-(u')^2))' + ((N-1)/r) * u'/sqrt(1-(u')^2) + f(u) = 0,
    u(0) = xi,  u'(0) = 0

is integrated in the flux variable q = u'/sqrt(1-(u')^2), which removes
the square-root singularity as |u'| -> 1 and makes the gradient
constraint |u'| < 1 structural: the recovered slope q/sqrt(1+q^2) lies in
(-1, 1) for every real q.  The state additionally carries the dissipation

    D(r) = int_0^r (u')^2 / (s*sqrt(1-(u')^2)) ds

so that the first integral

    H(u') + (N-1)*D(r) - F(xi) + F(u(r)) = 0,
    H(t) = (1 - sqrt(1-t^2)) / sqrt(1-t^2)

is checkable pointwise at integrator accuracy (in flux variables H is
simply sqrt(1+q^2) - 1).

The coordinate singularity at r = 0 is handled by a second-order Taylor
startup at a small radius; from there a Dormand-Prince 5(4) embedded pair
with PI-free step control integrates outward.  Steps never pass a caller
ceiling, so sample points and event radii are landed on exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .nonlinearity import Nonlinearity, eval_F

STEP_UNDERFLOW = 1e-14


class StiffnessError(RuntimeError):
    """Step-size underflow; the system is non-stiff away from r = 0, so this signals misuse."""

    def __init__(self, message: str, state: "RadialState"):
        super().__init__(message)
        self.state = state


@dataclass
class RadialState:
    """Integration state (r, u, q, D) with q the flux and D the dissipation."""

    r: float
    u: float
    q: float
    D: float

    @property
    def slope(self) -> float:
        return slope_from_flux(self.q)

    def to_dict(self) -> dict:
        return {"r": self.r, "u": self.u, "q": self.q, "D": self.D, "uprime": self.slope}


@dataclass
class IntegratorConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    r_start: float = 1e-4
    h_max: float = 0.1
    sample_stride: float | None = None
    max_steps: int = 2_000_000

    def validate(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.r_start <= 1e-3):
            raise ValueError(f"r_start must lie in (0, 1e-3], got {self.r_start}")
        if not self.h_max > 0:
            raise ValueError("h_max must be positive")
        if self.sample_stride is not None and not self.sample_stride > 0:
            raise ValueError("sample_stride must be positive when set")
        if not self.max_steps > 0:
            raise ValueError("max_steps must be positive")


_SLOPE_CAP = math.nextafter(1.0, 0.0)

def slope_from_flux(q: float) -> float:
    """Inverse of the flux map: u' = q/sqrt(1+q^2), strictly inside (-1, 1).

    For |q| beyond ~1e8 the correctly rounded ratio is exactly 1, so the
    result is clamped to the nearest representable interior value (error
    under one ulp) to preserve the strict gradient bound.
    """
    if not math.isfinite(q):
        raise ValueError(f"non-finite flux {q}")
    t = q / math.hypot(1.0, q)
    if t >= 1.0:
        return _SLOPE_CAP
    if t <= -1.0:
        return -_SLOPE_CAP
    return t

def flux_from_slope(t: float) -> float:
    """phi'(t) = t/sqrt(1-t^2).  (1-t)*(1+t) keeps precision as |t| -> 1."""
    return t / math.sqrt((1.0 - t) * (1.0 + t))

def lorentz_h(q: float) -> float:
    """sqrt(1+q^2) - 1 without cancellation for small q."""
    return q * q / (1.0 + math.hypot(1.0, q))


def vector_field(N: int, nl: Nonlinearity, s: RadialState) -> tuple[float, float, float]:
    """Right-hand side (du, dq, dD) at state s; r = 0 is rejected.

    dD uses the algebraic identity (u')^2/sqrt(1-(u')^2) = q^2/sqrt(1+q^2).
    """
    if not s.r > 0.0:
        raise ValueError("vector field is singular at r = 0; use the Taylor startup")
    root = math.hypot(1.0, s.q)
    du = s.q / root
    dq = -(N - 1) * s.q / s.r - nl.f(s.u)
    dD = s.q * s.q / (s.r * root)
    return du, dq, dD


def taylor_start(N: int, nl: Nonlinearity, xi: float, r0: float) -> RadialState:
    """Second-order series startup at radius r0.

    From u''(0) = -f(xi)/N (the radial symmetry limit of the equation):

        u(r0) = xi - f(xi)*r0^2/(2N),   q(r0) = -f(xi)*r0/N,
        D(r0) = f(xi)^2*r0^2/(2N^2),

    each accurate to O(r0^3) or better.
    """
    if not (r0 > 0):
        raise ValueError("startup radius must be positive")
    fx = nl.f(xi)
    return RadialState(
        r=r0,
        u=xi - fx * r0 * r0 / (2.0 * N),
        q=-fx * r0 / N,
        D=fx * fx * r0 * r0 / (2.0 * N * N),
    )


def energy_residual(nl: Nonlinearity, N: int, xi: float, s: RadialState, F_xi: float | None = None) -> float:
    """First-integral defect H + (N-1)*D - F(xi) + F(u); zero on exact solutions."""
    if F_xi is None:
        F_xi = eval_F(nl, xi)
    return lorentz_h(s.q) + (N - 1) * s.D - F_xi + eval_F(nl, s.u)


# ----------------------------------------------------------------------
# Dormand-Prince 5(4) with FSAL, scalar-unrolled for the 3-component system

_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


class RadialIntegrator:
    """Owns one trajectory; instances are not shared across threads."""

    def __init__(self, N: int, nl: Nonlinearity, cfg: IntegratorConfig):
        if int(N) != N or N < 2:
            raise ValueError(f"dimension N must be an integer >= 2, got {N}")
        cfg.validate()
        self.N = int(N)
        self.nl = nl
        self.cfg = cfg
        self.n_steps = 0
        self.n_fevals = 0

    def rhs(self, r: float, u: float, q: float) -> tuple[float, float, float]:
        self.n_fevals += 1
        root = math.hypot(1.0, q)
        return q / root, -(self.N - 1) * q / r - self.nl.f(u), q * q / (r * root)

    def start(self, xi: float) -> RadialState:
        return taylor_start(self.N, self.nl, xi, self.cfg.r_start)

    def step(
        self,
        s: RadialState,
        k1: tuple[float, float, float],
        h: float,
        r_ceil: float,
    ) -> tuple[RadialState, tuple[float, float, float], float]:
        """One accepted adaptive step from s, never stepping past r_ceil.

        k1 is the derivative at s (FSAL: the previous step's end derivative).
        Returns (new state, derivative at the new state, suggested next h).
        A step is accepted when the embedded error estimate satisfies
        err_i <= abs_tol + rel_tol*max(|y0_i|, |y1_i|) in the RMS sense.
        """
        atol, rtol = self.cfg.abs_tol, self.cfg.rel_tol
        r0, u0, q0, D0 = s.r, s.u, s.q, s.D
        k1u, k1q, k1D = k1
        gap = r_ceil - r0
        if gap < STEP_UNDERFLOW:
            # the ceiling sits within float resolution of the current radius:
            # snap to it (the state change over such a gap is far below
            # tolerance) instead of forcing an impossible step
            return RadialState(r_ceil, u0, q0, D0), k1, h
        while True:
            hit_ceil = False
            if h >= gap:
                h = gap
                hit_ceil = True
            if self.n_steps >= self.cfg.max_steps:
                raise StiffnessError(
                    f"step budget {self.cfg.max_steps} exhausted at r={r0:.6g}", s
                )

            k2u, k2q, k2D = self.rhs(r0 + _C2 * h, u0 + h * _A21 * k1u, q0 + h * _A21 * k1q)
            k3u, k3q, k3D = self.rhs(
                r0 + _C3 * h,
                u0 + h * (_A31 * k1u + _A32 * k2u),
                q0 + h * (_A31 * k1q + _A32 * k2q),
            )
            k4u, k4q, k4D = self.rhs(
                r0 + _C4 * h,
                u0 + h * (_A41 * k1u + _A42 * k2u + _A43 * k3u),
                q0 + h * (_A41 * k1q + _A42 * k2q + _A43 * k3q),
            )
            k5u, k5q, k5D = self.rhs(
                r0 + _C5 * h,
                u0 + h * (_A51 * k1u + _A52 * k2u + _A53 * k3u + _A54 * k4u),
                q0 + h * (_A51 * k1q + _A52 * k2q + _A53 * k3q + _A54 * k4q),
            )
            k6u, k6q, k6D = self.rhs(
                r0 + h,
                u0 + h * (_A61 * k1u + _A62 * k2u + _A63 * k3u + _A64 * k4u + _A65 * k5u),
                q0 + h * (_A61 * k1q + _A62 * k2q + _A63 * k3q + _A64 * k4q + _A65 * k5q),
            )
            u1 = u0 + h * (_B1 * k1u + _B3 * k3u + _B4 * k4u + _B5 * k5u + _B6 * k6u)
            q1 = q0 + h * (_B1 * k1q + _B3 * k3q + _B4 * k4q + _B5 * k5q + _B6 * k6q)
            D1 = D0 + h * (_B1 * k1D + _B3 * k3D + _B4 * k4D + _B5 * k5D + _B6 * k6D)
            r1 = r_ceil if hit_ceil else r0 + h
            k7u, k7q, k7D = self.rhs(r1, u1, q1)

            eu = h * (_E1 * k1u + _E3 * k3u + _E4 * k4u + _E5 * k5u + _E6 * k6u + _E7 * k7u)
            eq = h * (_E1 * k1q + _E3 * k3q + _E4 * k4q + _E5 * k5q + _E6 * k6q + _E7 * k7q)
            eD = h * (_E1 * k1D + _E3 * k3D + _E4 * k4D + _E5 * k5D + _E6 * k6D + _E7 * k7D)
            su = atol + rtol * max(abs(u0), abs(u1))
            sq = atol + rtol * max(abs(q0), abs(q1))
            sD = atol + rtol * max(abs(D0), abs(D1))
            err = math.sqrt(((eu / su) ** 2 + (eq / sq) ** 2 + (eD / sD) ** 2) / 3.0)

            if err <= 1.0:
                self.n_steps += 1
                factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
                h_next = min(self.cfg.h_max, h * factor)
                return RadialState(r1, u1, q1, D1), (k7u, k7q, k7D), h_next
            h *= max(0.2, 0.9 * err**-0.2)
            if h < STEP_UNDERFLOW:
                raise StiffnessError(
                    f"step size underflow ({h:.3e}) at r={r0:.6g}; declared stiff", s
                )

    def restep(self, s: RadialState, k1: tuple[float, float, float], r_to: float) -> RadialState:
        """Single fixed 5th-order step from s to r_to (no error control).

        Used to evaluate the state at a located event radius inside an
        already-accepted step; the sub-step is shorter than the accepted
        one, so its local error is no larger.
        """
        h = r_to - s.r
        if h <= 0.0:
            return RadialState(s.r, s.u, s.q, s.D)
        r0, u0, q0, D0 = s.r, s.u, s.q, s.D
        k1u, k1q, k1D = k1
        k2u, k2q, k2D = self.rhs(r0 + _C2 * h, u0 + h * _A21 * k1u, q0 + h * _A21 * k1q)
        k3u, k3q, k3D = self.rhs(
            r0 + _C3 * h, u0 + h * (_A31 * k1u + _A32 * k2u), q0 + h * (_A31 * k1q + _A32 * k2q)
        )
        k4u, k4q, k4D = self.rhs(
            r0 + _C4 * h,
            u0 + h * (_A41 * k1u + _A42 * k2u + _A43 * k3u),
            q0 + h * (_A41 * k1q + _A42 * k2q + _A43 * k3q),
        )
        k5u, k5q, k5D = self.rhs(
            r0 + _C5 * h,
            u0 + h * (_A51 * k1u + _A52 * k2u + _A53 * k3u + _A54 * k4u),
            q0 + h * (_A51 * k1q + _A52 * k2q + _A53 * k3q + _A54 * k4q),
        )
        k6u, k6q, k6D = self.rhs(
            r0 + h,
            u0 + h * (_A61 * k1u + _A62 * k2u + _A63 * k3u + _A64 * k4u + _A65 * k5u),
            q0 + h * (_A61 * k1q + _A62 * k2q + _A63 * k3q + _A64 * k4q + _A65 * k5q),
        )
        return RadialState(
            r_to,
            u0 + h * (_B1 * k1u + _B3 * k3u + _B4 * k4u + _B5 * k5u + _B6 * k6u),
            q0 + h * (_B1 * k1q + _B3 * k3q + _B4 * k4q + _B5 * k5q + _B6 * k6q),
            D0 + h * (_B1 * k1D + _B3 * k3D + _B4 * k4D + _B5 * k5D + _B6 * k6D),
        )

    @staticmethod
    def hermite(
        s0: RadialState,
        k0: tuple[float, float, float],
        s1: RadialState,
        k1: tuple[float, float, float],
        r: float,
        comp: int,
    ) -> float:
        """Cubic Hermite interpolation of component comp (0=u, 1=q, 2=D)."""
        h = s1.r - s0.r
        th = (r - s0.r) / h
        y0 = (s0.u, s0.q, s0.D)[comp]
        y1 = (s1.u, s1.q, s1.D)[comp]
        d0 = k0[comp]
        d1 = k1[comp]
        dy = y1 - y0
        a = h * d0 - dy
        b = -h * d1 + dy
        return (1.0 - th) * y0 + th * y1 + th * (1.0 - th) * (a * (1.0 - th) + b * th)


def advance(
    N: int,
    nl: Nonlinearity,
    cfg: IntegratorConfig,
    s: RadialState,
    r_target: float,
) -> tuple[RadialState, list[RadialState]]:
    """Integrate from s to r_target; dense samples at sample_stride spacing.

    Samples are landed on exactly (the step ceiling is set to the next
    sample point), so every returned state is a full-accuracy step end,
    not an interpolant.  Raises StiffnessError on step-size underflow.
    """
    if not s.r < r_target:
        raise ValueError(f"r_target {r_target} must exceed current radius {s.r}")
    stepper = RadialIntegrator(N, nl, cfg)
    k = stepper.rhs(s.r, s.u, s.q)
    h = min(cfg.h_max, max(cfg.r_start, 1e-6 * (r_target - s.r)))
    stride = cfg.sample_stride
    samples: list[RadialState] = []
    next_sample = None
    sample_idx = 0
    if stride is not None:
        sample_idx = math.floor(s.r / stride + 1e-9) + 1
        next_sample = sample_idx * stride
    while s.r < r_target - 1e-15:
        ceil = r_target if next_sample is None else min(r_target, next_sample)
        s, k, h = stepper.step(s, k, h, ceil)
        if next_sample is not None and s.r >= next_sample - 1e-15:
            samples.append(RadialState(s.r, s.u, s.q, s.D))
            sample_idx += 1
            next_sample = sample_idx * stride
    return s, samples
