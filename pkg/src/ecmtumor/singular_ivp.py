"""Initial value problems of the form ``dx/dt = f(x, t) / int_0^t g(x(s), s) ds``.

The denominator vanishes at ``t = 0``.  Writing ``y(t) = int_0^t g`` turns the
problem into the regular system ``x' = f / y``, ``y' = g`` away from the
origin.  With ``theta = f_x(x0, 0) / g(x0, 0) < 1`` there is a unique
solution that is continuously differentiable at the origin; its slope is

    x'(0) = f_t(x0, 0) / (g(x0, 0) - f_x(x0, 0)).

:func:`solve` starts on that branch with a first-order Taylor step and then
integrates the regular system.  :func:`solve_regularized` instead freezes
``x = x0`` on ``[0, eps]``, which selects a nearby branch that approaches the
smooth one as ``eps -> 0``.

Two fixed-step schemes drive the integration:

``"rk4"``
    classical explicit Runge-Kutta of order four;
``"radau"``
    two-stage Radau IIA (order three, L-stable), needed when
    ``|f_x / y|`` is large, as in the shooting problem for the matrix density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BlowUp,
    DegenerateDenominator,
    DenominatorVanished,
    EcmTumorError,
    NonConvergent,
    StepFailure,
)

Scalar2 = Callable[[float, float], float]

# Radau IIA, two stages.
_A11, _A12, _A21, _A22 = 5.0 / 12.0, -1.0 / 12.0, 3.0 / 4.0, 1.0 / 4.0
_C1 = 1.0 / 3.0

# Step outcome when a stage denominator loses its sign.
_SIGN = "sign"


@dataclass(frozen=True)
class SingularProblem:
    """Data of a singular IVP.

    ``f``, ``f_x``, ``f_t``, ``g`` and the optional ``g_x`` take ``(x, t)``
    and return floats.  When ``g_x`` is omitted the implicit scheme uses a
    central difference.
    """

    f: Scalar2
    f_x: Scalar2
    f_t: Scalar2
    g: Scalar2
    x0: float
    t_max: float = 1.0
    g_x: Scalar2 | None = None

    @property
    def g0(self) -> float:
        return float(self.g(self.x0, 0.0))

    def theta(self) -> float:
        g0 = self.g0
        if g0 == 0.0:
            raise DegenerateDenominator("g(x0, 0) vanishes")
        return float(self.f_x(self.x0, 0.0)) / g0

    def validate(self, atol: float = 1e-10) -> None:
        """Check ``f(x0, 0) = 0`` and ``g(x0, 0) != 0``."""
        f0 = float(self.f(self.x0, 0.0))
        if abs(f0) > atol * max(1.0, abs(self.g0)):
            raise ValueError(f"f(x0, 0) = {f0:g} must vanish")
        if self.g0 == 0.0:
            raise DegenerateDenominator("g(x0, 0) vanishes")
        if not self.t_max > 0.0:
            raise ValueError("t_max must be positive")

    def gx(self, x: float, t: float) -> float:
        if self.g_x is not None:
            return float(self.g_x(x, t))
        d = 1e-7 * (1.0 + abs(x))
        return (float(self.g(x + d, t)) - float(self.g(x - d, t))) / (2.0 * d)


@dataclass
class Trajectory:
    """Sampled solution ``x(t)`` with the running denominator ``y(t)``."""

    times: np.ndarray
    values: np.ndarray
    slope0: float | None = None
    denominators: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> float:
        return float(self.values[-1])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"])
            for t, x in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(x))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(times=data[:, 0].copy(), values=data[:, 1].copy())


@dataclass
class MarchResult:
    """Output of :func:`march`.

    ``status`` is one of ``"complete"``, ``"denominator"`` (``y`` reached the
    floor), ``"bound"`` (``x`` left the admissible interval), ``"blowup"`` or
    ``"stepfail"``.  The arrays hold every accepted grid point; ``t_stop`` is
    the interpolated crossing for ``"denominator"`` and the offending grid
    time otherwise.
    """

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    status: str
    t_stop: float | None = None


# ---------------------------------------------------------------------------
# Slope at the origin
# ---------------------------------------------------------------------------


def initial_slope(p: SingularProblem, theta_shift: float = 0.0) -> float:
    """Slope of the smooth solution at ``t = 0``.

    ``theta_shift`` adds a constant to ``theta`` inside the formula.  It is a
    mutation hook for the oracle suite and must stay zero in normal use.
    """
    g0 = p.g0
    fx = float(p.f_x(p.x0, 0.0))
    ft = float(p.f_t(p.x0, 0.0))
    den = g0 - fx - theta_shift * g0
    if den == 0.0 or abs(den) <= 1e-14 * (abs(g0) + abs(fx)):
        raise DegenerateDenominator("g(x0, 0) - f_x(x0, 0) vanishes (theta = 1)")
    return ft / den


def boundary_slope_limit(F_r: float, F_phi: float, v_prime: float) -> float:
    """Limit of ``phi'`` at a simple zero of ``v`` in ``v phi' = F(r, phi)``.

    Differentiating ``v phi' = F`` at the zero gives
    ``phi' = F_r / (v' - F_phi)``.
    """
    den = v_prime - F_phi
    if den == 0.0:
        raise DegenerateDenominator("v' - F_phi vanishes")
    return F_r / den


def reflect(p: SingularProblem) -> SingularProblem:
    """Problem satisfied by ``t -> x(-t)``; solves on negative times."""
    f, fx, ft, g, gxf = p.f, p.f_x, p.f_t, p.g, p.g_x
    return SingularProblem(
        f=lambda x, t: f(x, -t),
        f_x=lambda x, t: fx(x, -t),
        f_t=lambda x, t: -ft(x, -t),
        g=lambda x, t: g(x, -t),
        x0=p.x0,
        t_max=p.t_max,
        g_x=None if gxf is None else (lambda x, t: gxf(x, -t)),
    )


# ---------------------------------------------------------------------------
# Fixed-step marching
# ---------------------------------------------------------------------------


def _rk4_step(p: SingularProblem, t: float, x: float, y: float, h: float, sgn: float):
    f, g = p.f, p.g
    k1x = f(x, t) / y
    k1y = g(x, t)
    th = t + 0.5 * h
    y2 = y + 0.5 * h * k1y
    if sgn * y2 <= 0.0:
        return _SIGN
    x2 = x + 0.5 * h * k1x
    k2x = f(x2, th) / y2
    k2y = g(x2, th)
    y3 = y + 0.5 * h * k2y
    if sgn * y3 <= 0.0:
        return _SIGN
    x3 = x + 0.5 * h * k2x
    k3x = f(x3, th) / y3
    k3y = g(x3, th)
    y4 = y + h * k3y
    if sgn * y4 <= 0.0:
        return _SIGN
    x4 = x + h * k3x
    k4x = f(x4, t + h) / y4
    k4y = g(x4, t + h)
    xn = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    yn = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return xn, yn, k4x


def _radau_step(
    p: SingularProblem,
    t: float,
    x: float,
    y: float,
    h: float,
    sgn: float,
    slope: float,
    newton_tol: float = 1e-13,
    max_iter: int = 30,
):
    """One Radau IIA step exploiting that ``y' = g`` does not involve ``y``.

    The ``y`` stages are explicit functions of the ``x`` stages, so Newton
    iterates on the two ``x`` stages only, with the exact 2x2 Jacobian.
    """
    f, fx_, g = p.f, p.f_x, p.g
    gx = p.gx
    t1 = t + _C1 * h
    t2 = t + h
    X1 = x + _C1 * h * slope
    X2 = x + h * slope
    for _ in range(max_iter):
        G1 = g(X1, t1)
        G2 = g(X2, t2)
        Y1 = y + h * (_A11 * G1 + _A12 * G2)
        Y2 = y + h * (_A21 * G1 + _A22 * G2)
        if sgn * Y1 <= 0.0 or sgn * Y2 <= 0.0:
            return _SIGN
        F1 = f(X1, t1)
        F2 = f(X2, t2)
        z1 = F1 / Y1
        z2 = F2 / Y2
        R1 = X1 - x - h * (_A11 * z1 + _A12 * z2)
        R2 = X2 - x - h * (_A21 * z1 + _A22 * z2)
        d1 = fx_(X1, t1) / Y1
        d2 = fx_(X2, t2) / Y2
        q1 = z1 / Y1
        q2 = z2 / Y2
        hh1 = h * h * gx(X1, t1)
        hh2 = h * h * gx(X2, t2)
        J11 = 1.0 - h * _A11 * d1 + (_A11 * q1 * _A11 + _A12 * q2 * _A21) * hh1
        J12 = -h * _A12 * d2 + (_A11 * q1 * _A12 + _A12 * q2 * _A22) * hh2
        J21 = -h * _A21 * d1 + (_A21 * q1 * _A11 + _A22 * q2 * _A21) * hh1
        J22 = 1.0 - h * _A22 * d2 + (_A21 * q1 * _A12 + _A22 * q2 * _A22) * hh2
        det = J11 * J22 - J12 * J21
        if det == 0.0 or not math.isfinite(det):
            return None
        dx1 = (R1 * J22 - R2 * J12) / det
        dx2 = (J11 * R2 - J21 * R1) / det
        X1 -= dx1
        X2 -= dx2
        if abs(dx1) + abs(dx2) <= newton_tol * (1.0 + abs(X2)):
            G1 = g(X1, t1)
            G2 = g(X2, t2)
            Y2 = y + h * (_A21 * G1 + _A22 * G2)
            if sgn * Y2 <= 0.0:
                return _SIGN
            return X2, Y2, (X2 - x) / h
        if not (math.isfinite(X1) and math.isfinite(X2)):
            return None
    return None


def march(
    p: SingularProblem,
    times: Sequence[float] | np.ndarray,
    x_start: float,
    y_start: float,
    scheme: str = "rk4",
    slope_start: float = 0.0,
    y_floor: float = 0.0,
    stop_after: float = -math.inf,
    x_bounds: tuple[float, float] | None = None,
    blowup_bound: float | None = None,
) -> MarchResult:
    """Integrate the regular system over the given time grid.

    ``times[0]`` must be positive (the start is away from the origin) and
    ``y_start`` must carry the sign of ``g(x0, 0)``.  Marching stops early
    when ``sign(g0) * y <= y_floor`` at a time ``>= stop_after``, when ``x``
    leaves the open interval ``x_bounds``, or when ``|x|`` exceeds
    ``blowup_bound``.
    """
    if scheme not in ("rk4", "radau"):
        raise ValueError(f"unknown scheme {scheme!r}")
    ts = np.asarray(times, dtype=float)
    n = ts.size
    sgn = 1.0 if p.g0 > 0.0 else -1.0
    if sgn * y_start <= 0.0:
        raise DenominatorVanished("starting denominator has the wrong sign", t=float(ts[0]))
    xs = np.empty(n)
    ys = np.empty(n)
    xs[0] = x_start
    ys[0] = y_start
    x, y, slope = float(x_start), float(y_start), float(slope_start)
    lo, hi = x_bounds if x_bounds is not None else (-math.inf, math.inf)
    for k in range(n - 1):
        t = float(ts[k])
        h = float(ts[k + 1]) - t
        if scheme == "rk4":
            res = _rk4_step(p, t, x, y, h, sgn)
        else:
            res = _radau_step(p, t, x, y, h, sgn, slope)
        if res is None or res is _SIGN:
            status = "stepfail" if res is None else "denominator"
            return MarchResult(ts[: k + 1], xs[: k + 1], ys[: k + 1], status, t)
        xn, yn, slope = res
        if not math.isfinite(xn) or (blowup_bound is not None and abs(xn) > blowup_bound):
            return MarchResult(ts[: k + 1], xs[: k + 1], ys[: k + 1], "blowup", float(ts[k + 1]))
        if not lo < xn < hi:
            return MarchResult(ts[: k + 1], xs[: k + 1], ys[: k + 1], "bound", float(ts[k + 1]))
        floor = y_floor if ts[k + 1] >= stop_after else 0.0
        if sgn * yn <= floor:
            ya = sgn * y - floor
            yb = sgn * yn - floor
            w = ya / (ya - yb) if ya != yb else 1.0
            t_cross = t + w * h
            return MarchResult(ts[: k + 1], xs[: k + 1], ys[: k + 1], "denominator", t_cross)
        x, y = xn, yn
        xs[k + 1] = x
        ys[k + 1] = y
    return MarchResult(ts, xs, ys, "complete", None)


def graded_grid(t_start: float, T: float, step: float, ratio: float) -> np.ndarray:
    """Grid from ``t_start`` to ``T``: steps ``min(step, ratio * t)`` then uniform."""
    if t_start >= T:
        return np.array([T])
    pts = [t_start]
    t = t_start
    while t < T:
        h = min(step, ratio * t)
        if T - t <= h * (1.0 + 1e-12):
            pts.append(T)
            break
        if h >= step:
            m = int(math.ceil((T - t) / step - 1e-9))
            pts.extend(np.linspace(t, T, m + 1)[1:].tolist())
            break
        t = t + h
        pts.append(t)
    return np.asarray(pts)


def _raise_for(res: MarchResult, bound: float) -> None:
    if res.status == "denominator":
        raise DenominatorVanished(f"denominator vanished near t = {res.t_stop:.6g}", t=res.t_stop)
    if res.status == "blowup":
        raise BlowUp(f"|x| exceeded {bound:g} near t = {res.t_stop:.6g}")
    if res.status == "stepfail":
        raise StepFailure(f"implicit step failed near t = {res.t_stop:.6g}")


def _blowup_bound(p: SingularProblem) -> float:
    return 1e6 * (abs(p.x0) + 1.0)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def start_offset(theta: float, T: float, tol: float) -> float:
    """Offset ``t0`` at which the linear Taylor start is accurate to ``tol``.

    The start error ``O(t0^2)`` is amplified by ``(T / t0)^theta`` when
    ``theta > 0``, hence the exponent ``1 / (2 - max(theta, 0))``.
    """
    return T * tol ** (1.0 / (2.0 - max(theta, 0.0)))


def _solve_once(
    p: SingularProblem,
    slope: float,
    theta: float,
    t0: float,
    T: float,
    step: float,
    scheme: str,
    grade: float = 1.0,
) -> Trajectory:
    x_t0 = p.x0 + slope * t0
    y_t0 = 0.5 * t0 * (p.g0 + float(p.g(x_t0, t0)))
    ratio = grade * (0.5 / max(1.0, abs(theta)) if scheme == "rk4" else 1.0)
    grid = graded_grid(t0, T, step, ratio)
    bound = _blowup_bound(p)
    res = march(p, grid, x_t0, y_t0, scheme=scheme, slope_start=slope, blowup_bound=bound)
    _raise_for(res, bound)
    times = np.concatenate([[0.0], res.times])
    values = np.concatenate([[p.x0], res.xs])
    dens = np.concatenate([[0.0], res.ys])
    return Trajectory(times, values, slope0=slope, denominators=dens,
                      meta={"t0": t0, "step": step, "scheme": scheme})


def solve(
    p: SingularProblem,
    T: float | None = None,
    tol: float = 1e-10,
    step: float | None = None,
    scheme: str = "rk4",
    max_refinements: int = 12,
    theta_margin: float = 1e-6,
    t0: float | None = None,
    theta_shift: float = 0.0,
) -> Trajectory:
    """Integrate along the solution that is smooth at the origin.

    The step is halved until the endpoints of two successive runs differ by
    at most ``tol * max(1, |x(T)|)``; the finer run is returned.  Raises
    :class:`NonConvergent` when that fails within ``max_refinements`` halvings
    or when ``1 - theta < theta_margin``: there every neighbouring branch
    ``x + c t^theta`` is numerically indistinguishable from the smooth one.
    """
    T = float(p.t_max if T is None else T)
    p.validate()
    theta = p.theta()
    if theta > 1.0:
        raise ValueError(f"theta = {theta:g} > 1: no distinguished smooth solution")
    slope = initial_slope(p, theta_shift=theta_shift)
    if 1.0 - theta < theta_margin:
        raise NonConvergent(f"theta = {theta:.12g} is within {theta_margin:g} of 1")
    if t0 is None:
        t0 = start_offset(theta, T, tol)
    h = float(step) if step is not None else T / 16.0
    prev: Trajectory | None = None
    # The graded part near the origin is refined together with the uniform
    # part; for theta > 0 its errors are amplified by (T / t)^theta.
    for k in range(max_refinements + 1):
        traj = _solve_once(p, slope, theta, t0, T, h, scheme, grade=0.5**k)
        if prev is not None:
            diff = abs(traj.endpoint - prev.endpoint)
            if diff <= tol * max(1.0, abs(traj.endpoint)):
                traj.meta["richardson_diff"] = diff
                return traj
        prev = traj
        h *= 0.5
    raise NonConvergent(f"no convergence to tol={tol:g} after {max_refinements} halvings")


def solve_fixed_step(
    p: SingularProblem,
    step: float,
    T: float | None = None,
    t0: float | None = None,
    tol: float = 1e-14,
    scheme: str = "rk4",
    theta_shift: float = 0.0,
) -> Trajectory:
    """Single run of :func:`solve` at a given step, without refinement.

    Used to measure the convergence order; ``t0`` defaults to
    :func:`start_offset` with ``tol``.
    """
    T = float(p.t_max if T is None else T)
    p.validate()
    theta = p.theta()
    slope = initial_slope(p, theta_shift=theta_shift)
    if t0 is None:
        t0 = start_offset(theta, T, tol)
    return _solve_once(p, slope, theta, t0, T, step, scheme)


def _gauss_integral(func: Callable[[float], float], a: float, b: float, n: int = 8) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * float(sum(w * func(mid + half * z) for z, w in zip(nodes, weights)))


def solve_regularized(
    p: SingularProblem,
    eps: float,
    step: float,
    T: float | None = None,
    scheme: str = "rk4",
) -> Trajectory:
    """Freeze ``x = x0`` on ``[0, eps]`` and integrate the regular system after.

    Steps grow geometrically from ``eps`` up to ``step`` so the explicit scheme
    stays stable where ``|f_x / y| ~ |theta| / t`` is large.
    """
    T = float(p.t_max if T is None else T)
    if not 0.0 < eps < T:
        raise ValueError("eps must lie in (0, T)")
    g0 = p.g0
    if g0 == 0.0:
        raise DegenerateDenominator("g(x0, 0) vanishes")
    theta = float(p.f_x(p.x0, 0.0)) / g0
    x0 = p.x0
    y_eps = _gauss_integral(lambda s: float(p.g(x0, s)), 0.0, eps)
    ratio = 0.5 / max(1.0, abs(theta)) if scheme == "rk4" else 1.0
    grid = graded_grid(eps, T, step, ratio)
    bound = _blowup_bound(p)
    res = march(p, grid, x0, y_eps, scheme=scheme, slope_start=0.0, blowup_bound=bound)
    _raise_for(res, bound)
    times = np.concatenate([[0.0], res.times])
    values = np.concatenate([[x0], res.xs])
    dens = np.concatenate([[0.0], res.ys])
    return Trajectory(times, values, slope0=None, denominators=dens,
                      meta={"eps": eps, "step": step, "scheme": scheme})


# ---------------------------------------------------------------------------
# Parameter continuation
# ---------------------------------------------------------------------------


@dataclass
class ContinuationTable:
    """Endpoints of a one-parameter family; failed members carry the error name."""

    params: np.ndarray
    endpoints: np.ndarray
    errors: list[str | None]

    def max_jump(self) -> float:
        ok = np.isfinite(self.endpoints)
        e = self.endpoints[ok]
        return float(np.max(np.abs(np.diff(e)))) if e.size > 1 else 0.0

    def rows(self) -> list[tuple[float, float, str | None]]:
        return [(float(a), float(b), c) for a, b, c in zip(self.params, self.endpoints, self.errors)]


def continuation_sweep(
    family: Callable[[float], SingularProblem],
    param_grid: Iterable[float],
    T: float | None = None,
    tol: float = 1e-10,
    **solve_kwargs,
) -> ContinuationTable:
    """Solve every member of ``family`` and tabulate the endpoints ``x(T)``."""
    grid = np.asarray(list(param_grid), dtype=float)
    ends = np.full(grid.size, np.nan)
    errs: list[str | None] = []
    for i, a in enumerate(grid):
        try:
            traj = solve(family(float(a)), T=T, tol=tol, **solve_kwargs)
            ends[i] = traj.endpoint
            errs.append(None)
        except EcmTumorError as exc:
            errs.append(type(exc).__name__)
    return ContinuationTable(grid, ends, errs)
