"""Closed-form oracle suite for the singular IVP solver.

Every oracle compares the solver against an exact solution or an exact
structural property and returns an :class:`OracleResult`.  The
``theta_shift`` argument of :func:`run_oracles` perturbs the slope formula
inside the solver calls; it exists so that the suite can be shown to detect
a broken formula.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .singular_ivp import (
    SingularProblem,
    boundary_slope_limit,
    initial_slope,
    reflect,
    solve,
    solve_fixed_step,
    solve_regularized,
)


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "seconds": round(self.seconds, 6)}


# ---------------------------------------------------------------------------
# Problem families with closed forms
# ---------------------------------------------------------------------------


def linear_problem(gamma: float, theta: float, x0: float = 0.0) -> SingularProblem:
    """``f = gamma t + theta (x - x0)``, ``g = 1``; smooth solution ``x0 + gamma t / (1 - theta)``."""
    return SingularProblem(
        f=lambda x, t: gamma * t + theta * (x - x0),
        f_x=lambda x, t: theta,
        f_t=lambda x, t: gamma,
        g=lambda x, t: 1.0,
        g_x=lambda x, t: 0.0,
        x0=x0,
        t_max=1.0,
    )


def affine_g_problem() -> SingularProblem:
    """``f = t - x``, ``g = 1 + t``."""
    return SingularProblem(
        f=lambda x, t: t - x,
        f_x=lambda x, t: -1.0,
        f_t=lambda x, t: 1.0,
        g=lambda x, t: 1.0 + t,
        g_x=lambda x, t: 0.0,
        x0=0.0,
        t_max=1.0,
    )


def affine_g_exact(t: float) -> float:
    """Smooth solution of :func:`affine_g_problem`.

    With ``y = t + t^2 / 2`` the equation is linear; the integrating factor
    ``t / (1 + t/2)`` gives ``x = (2 + t) / (2 t) * 4 [ln((2+t)/2) + 2/(2+t) - 1]``.
    """
    if t == 0.0:
        return 0.0
    if t < 1e-3:
        # Series of the closed form; avoids cancellation in the bracket.
        return t / 2.0 - t * t / 12.0 + t**3 / 48.0 - t**4 / 160.0
    return (2.0 + t) / (2.0 * t) * 4.0 * (math.log((2.0 + t) / 2.0) + 2.0 / (2.0 + t) - 1.0)


def positive_theta_affine_problem() -> SingularProblem:
    """``f = t + x / 2``, ``g = 1 + t``; ``theta = 1/2``."""
    return SingularProblem(
        f=lambda x, t: t + 0.5 * x,
        f_x=lambda x, t: 0.5,
        f_t=lambda x, t: 1.0,
        g=lambda x, t: 1.0 + t,
        g_x=lambda x, t: 0.0,
        x0=0.0,
        t_max=1.0,
    )


def positive_theta_affine_exact(t: float) -> float:
    """``x = 2 sqrt(2) sqrt(t / (1 + t/2)) asinh(sqrt(t / 2))``."""
    return 2.0 * math.sqrt(2.0) * math.sqrt(t / (1.0 + 0.5 * t)) * math.asinh(math.sqrt(0.5 * t))


@dataclass(frozen=True)
class Manufactured:
    """Problem built around a known smooth solution ``xs``.

    ``f = xs'(t) Y(t) + k (x - xs(t))`` with ``Y = int_0^t g(xs, s) ds``, so
    ``xs`` is the smooth solution and ``theta = k / g(xs(0), 0)``.
    """

    name: str
    xs: Callable[[float], float]
    dxs: Callable[[float], float]
    d2xs: Callable[[float], float]
    g: Callable[[float, float], float]
    g_x: Callable[[float, float], float]
    Y: Callable[[float], float]
    k: float

    def problem(self, t_max: float = 1.0) -> SingularProblem:
        xs, dxs, d2xs, g, Y, k = self.xs, self.dxs, self.d2xs, self.g, self.Y, self.k
        return SingularProblem(
            f=lambda x, t: dxs(t) * Y(t) + k * (x - xs(t)),
            f_x=lambda x, t: k,
            f_t=lambda x, t: d2xs(t) * Y(t) + dxs(t) * g(xs(t), t) - k * dxs(t),
            g=g,
            g_x=self.g_x,
            x0=xs(0.0),
            t_max=t_max,
        )


def manufactured_problems() -> list[Manufactured]:
    return [
        Manufactured("sin", math.sin, math.cos, lambda t: -math.sin(t),
                     lambda x, t: 1.0 + x * x, lambda x, t: 2.0 * x,
                     lambda t: 1.5 * t - math.sin(2.0 * t) / 4.0, -1.0),
        Manufactured("expm1", math.expm1, math.exp, math.exp,
                     lambda x, t: 2.0, lambda x, t: 0.0, lambda t: 2.0 * t, 0.5),
        Manufactured("quadratic", lambda t: t + t * t, lambda t: 1.0 + 2.0 * t, lambda t: 2.0,
                     lambda x, t: 1.0 + t, lambda x, t: 0.0, lambda t: t + 0.5 * t * t, -3.0),
        Manufactured("log1p", math.log1p, lambda t: 1.0 / (1.0 + t), lambda t: -1.0 / (1.0 + t) ** 2,
                     lambda x, t: math.cos(t), lambda x, t: 0.0, math.sin, 0.3),
        Manufactured("shifted", lambda t: 2.0 + t * math.exp(-t), lambda t: (1.0 - t) * math.exp(-t),
                     lambda t: (t - 2.0) * math.exp(-t),
                     lambda x, t: 1.0 + 0.1 * x, lambda x, t: 0.1,
                     lambda t: 1.2 * t + 0.1 * (1.0 - (1.0 + t) * math.exp(-t)), -2.0),
    ]


def extrapolated_quotient(times: np.ndarray, values: np.ndarray, x0: float,
                          t_lo: float, t_hi: float) -> float:
    """Limit of ``(x(t) - x0) / t`` as ``t -> 0`` from samples in ``[t_lo, t_hi]``.

    Fits a quadratic in ``t`` to the quotients and evaluates it at zero.
    """
    sel = (times >= t_lo) & (times <= t_hi)
    t = times[sel]
    q = (values[sel] - x0) / t
    coef = np.polyfit(t, q, 2)
    return float(coef[-1])


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def oracle_linear(theta_shift: float = 0.0) -> OracleResult:
    """Affine problems with ``g = 1`` are reproduced exactly."""
    worst_slope = 0.0
    worst_sup = 0.0
    for gamma, theta in ((1.0, 0.5), (1.0, -1.0), (-2.0, 0.9), (0.7, -30.0)):
        p = linear_problem(gamma, theta)
        exact = gamma / (1.0 - theta)
        tr = solve(p, tol=1e-12, theta_shift=theta_shift)
        worst_slope = max(worst_slope, abs(tr.slope0 - exact))
        worst_sup = max(worst_sup, float(np.max(np.abs(tr.values - exact * tr.times))))
    passed = worst_slope <= 1e-12 and worst_sup <= 1e-9
    return OracleResult("linear_exact", passed, {"slope_err": worst_slope, "sup_err": worst_sup})


def oracle_convergence_order(theta_shift: float = 0.0) -> OracleResult:
    """Observed order of the explicit scheme on ``f = t - x``, ``g = 1 + t``."""
    p = affine_g_problem()
    exact = affine_g_exact(1.0)
    steps = [0.1 / 2**k for k in range(4)]
    errs = [abs(solve_fixed_step(p, h, t0=1e-7, theta_shift=theta_shift).endpoint - exact)
            for h in steps]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    fit = float(np.polyfit(np.log2(steps), np.log2(errs), 1)[0])
    passed = 3.5 <= fit <= 4.5
    return OracleResult("rk4_order", passed, {"errors": errs, "orders": orders, "fitted_order": fit})


def oracle_affine_g(theta_shift: float = 0.0) -> OracleResult:
    """Endpoints against the two closed forms with ``g = 1 + t``."""
    e1 = abs(solve(affine_g_problem(), tol=1e-11, theta_shift=theta_shift).endpoint - affine_g_exact(1.0))
    e2 = abs(solve(positive_theta_affine_problem(), tol=1e-11, theta_shift=theta_shift).endpoint
             - positive_theta_affine_exact(1.0))
    passed = e1 <= 1e-9 and e2 <= 1e-9
    return OracleResult("affine_g_closed_form", passed, {"err_negative_theta": e1, "err_positive_theta": e2})


def oracle_zero_branch(theta_shift: float = 0.0) -> OracleResult:
    """``f = alpha x`` and ``f = x^2`` with ``g = 1``: the smooth branch is ``x = 0``."""
    probs = {
        "f=0.5x": SingularProblem(f=lambda x, t: 0.5 * x, f_x=lambda x, t: 0.5, f_t=lambda x, t: 0.0,
                                  g=lambda x, t: 1.0, g_x=lambda x, t: 0.0, x0=0.0),
        "f=x^2": SingularProblem(f=lambda x, t: x * x, f_x=lambda x, t: 2.0 * x, f_t=lambda x, t: 0.0,
                                 g=lambda x, t: 1.0, g_x=lambda x, t: 0.0, x0=0.0),
    }
    detail = {}
    passed = True
    for name, p in probs.items():
        a = float(np.max(np.abs(solve(p, tol=1e-12, theta_shift=theta_shift).values)))
        b = float(np.max(np.abs(solve_regularized(p, 1e-4, 1e-2).values)))
        # Closed-form boundary slope: F_r = 0 so the limit slope is zero.
        c = abs(boundary_slope_limit(0.0, float(p.f_x(0.0, 0.0)), 1.0))
        detail[name] = {"solve_sup": a, "regularized_sup": b, "boundary_slope": c}
        passed = passed and a <= 1e-10 and b <= 1e-10 and c == 0.0
    return OracleResult("zero_branch", passed, detail)


def oracle_slopes(theta_shift: float = 0.0) -> OracleResult:
    """Slope formula and trajectory difference quotients on manufactured problems."""
    detail = {}
    passed = True
    for mp in manufactured_problems():
        p = mp.problem(t_max=0.05)
        exact = mp.dxs(0.0)
        formula = initial_slope(p, theta_shift=theta_shift)
        tr = solve(p, T=0.05, tol=1e-13, step=1e-3, theta_shift=theta_shift)
        dq = extrapolated_quotient(tr.times, tr.values, p.x0, 2e-4, 2e-3)
        detail[mp.name] = {"formula_err": abs(formula - exact), "quotient_err": abs(dq - exact)}
        passed = passed and abs(formula - exact) <= 1e-10 and abs(dq - exact) <= 1e-6
    return OracleResult("slope_quotients", passed, detail)


def oracle_regularization(theta_shift: float = 0.0) -> OracleResult:
    """Endpoints of the regularized solver approach the smooth one as ``eps -> 0``."""
    detail = {}
    passed = True
    for name, p in (("theta=-1", affine_g_problem()), ("theta=0.5", positive_theta_affine_problem())):
        ref = solve(p, tol=1e-12, theta_shift=theta_shift).endpoint
        ends = [solve_regularized(p, eps, 1e-3).endpoint for eps in (1e-3, 1e-4, 1e-5)]
        d1 = abs(ends[0] - ends[1])
        d2 = abs(ends[1] - ends[2])
        gaps = [abs(e - ref) for e in ends]
        ok = d2 < d1 and gaps[0] > gaps[1] > gaps[2]
        detail[name] = {"cauchy": [d1, d2], "gaps": gaps}
        passed = passed and ok
    return OracleResult("regularization_cauchy", passed, detail)


def oracle_start_independence(theta_shift: float = 0.0) -> OracleResult:
    """Two start offsets give the same endpoint (uniqueness of the smooth branch)."""
    p = affine_g_problem()
    a = solve(p, tol=1e-11, t0=1e-6, theta_shift=theta_shift).endpoint
    b = solve(p, tol=1e-11, t0=1e-5, theta_shift=theta_shift).endpoint
    return OracleResult("start_independence", abs(a - b) <= 1e-10, {"diff": abs(a - b)})


def oracle_reflection(theta_shift: float = 0.0) -> OracleResult:
    """Reflected problem reproduces ``x(-t)`` for ``f = t - x``, ``g = 1``."""
    q = reflect(linear_problem(1.0, -1.0))
    tr = solve(q, tol=1e-12, theta_shift=theta_shift)
    err = float(np.max(np.abs(tr.values + 0.5 * tr.times)))
    return OracleResult("reflection", err <= 1e-10, {"sup_err": err})


ORACLES = (
    oracle_linear,
    oracle_convergence_order,
    oracle_affine_g,
    oracle_zero_branch,
    oracle_slopes,
    oracle_regularization,
    oracle_start_independence,
    oracle_reflection,
)


def run_oracles(theta_shift: float = 0.0) -> list[OracleResult]:
    out = []
    for fn in ORACLES:
        t0 = time.perf_counter()
        try:
            res = fn(theta_shift)
        except Exception as exc:  # a crash counts as a failed oracle
            res = OracleResult(fn.__name__.removeprefix("oracle_"), False,
                               {"error": f"{type(exc).__name__}: {exc}"})
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
