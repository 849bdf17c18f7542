"""Radially symmetric stationary solutions.

For a trial radius ``R`` the nutrient is known in closed form and the MDE
density sits at ``alpha / beta``.  The matrix density solves

    E'(r) = Q(sigma(r), m, E) r^2 / I(r),   I'(r) = mu(E) (sigma - sigma_bar) r^2,

integrated inward from ``E(R) = h(1, alpha / beta)``, ``I(R) = 0``.  In the
variable ``s = R - r`` this is a singular IVP with ``x = E`` and ``y = -I``,
so the start uses the smooth-branch slope of :mod:`ecmtumor.singular_ivp`.
The stationary radius ``R*`` is the unique ``R`` for which the inward
integral reaches the center with ``I(0) = 0``.  For smaller radii ``I(0) < 0``;
for larger ones ``I`` returns to zero at some ``tau > 0`` before the center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import model
from .errors import BracketFailure, SeedFailure, StepFailure
from .model import ConstitutiveSet, ModelParams
from .singular_ivp import SingularProblem, initial_slope, march

TERMINATIONS = ("ReachedZero", "DenominatorVanished", "BoundViolated")
_TINY = 1e-300


# ---------------------------------------------------------------------------
# Shooting problem
# ---------------------------------------------------------------------------


def _sinhc_scalar(x: float) -> float:
    if x < 1e-4:
        x2 = x * x
        return 1.0 + x2 / 6.0 + x2 * x2 / 120.0
    return math.sinh(x) / x


def _sinhc_prime_scalar(x: float) -> float:
    if x < 0.5:
        x2 = x * x
        # sum_{k>=1} 2k x^(2k-1) / (2k+1)!
        return x * (1.0 / 3.0 + x2 * (1.0 / 30.0 + x2 * (1.0 / 840.0 + x2 * (1.0 / 45360.0
                    + x2 * (1.0 / 3991680.0 + x2 / 518918400.0)))))
    return (x * math.cosh(x) - math.sinh(x)) / (x * x)


def tumor_problem(R: float, params: ModelParams, laws: ConstitutiveSet) -> SingularProblem:
    """Singular IVP in ``s = R - r`` for the matrix density at radius ``R``.

    ``x = E``, ``t = s`` and the denominator is ``y = -I``.
    """
    a = math.sqrt(params.lam)
    SR = _sinhc_scalar(a * R)
    m = params.m_eq
    gam_m = params.gamma * m
    sb = params.sigma_bar
    mu, mup = laws.mu_of_E, laws.mu_prime
    phi, phip = laws.phi_of_E, laws.phi_prime

    def sig(s):
        return _sinhc_scalar(a * (R - s)) / SR

    def f(x, s):
        r = R - s
        return (-gam_m * x + phi(x) - x * mu(x) * (sig(s) - sb)) * r * r

    def f_x(x, s):
        r = R - s
        mx = mu(x)
        return (-gam_m + phip(x) - (mx + x * mup(x)) * (sig(s) - sb)) * r * r

    def f_t(x, s):
        r = R - s
        sg = sig(s)
        q = -gam_m * x + phi(x) - x * mu(x) * (sg - sb)
        sig_r = a * _sinhc_prime_scalar(a * r) / SR
        q_sigma = -x * mu(x)
        return -q_sigma * sig_r * r * r - 2.0 * r * q

    def g(x, s):
        r = R - s
        return mu(x) * (sig(s) - sb) * r * r

    def g_x(x, s):
        r = R - s
        return mup(x) * (sig(s) - sb) * r * r

    x0 = model.h_root(1.0, m, params, laws)
    return SingularProblem(f=f, f_x=f_x, f_t=f_t, g=g, g_x=g_x, x0=x0, t_max=R)


def boundary_slope(R: float, params: ModelParams, laws: ConstitutiveSet) -> float:
    """``dE/dr`` at ``r = R`` on the smooth branch, in closed form."""
    m = params.m_eq
    E_R = model.h_root(1.0, m, params, laws)
    _, sig_r, _ = model.sigma_stationary_derivs(np.array([R]), R, params.lam)
    mu_R = float(laws.mu_of_E(E_R))
    qE = float(model.dQ_dE(1.0, m, E_R, params, laws))
    return E_R * mu_R * float(sig_r[0]) / (qE - mu_R * (1.0 - params.sigma_bar))


@dataclass
class ShootResult:
    """Inward integration at a trial radius.

    ``r``, ``E`` and ``I`` run from ``r = R`` inward over the accepted grid
    points.  ``tau`` is zero unless ``I`` returned to zero before the center.
    ``I0`` is ``I(0)`` when the center was reached.  ``miss`` continues the
    ``I``-integral to the center along ``E = h(sigma)`` from the last accepted
    point; it is negative below ``R*`` and positive above, and equals ``I0``
    whenever the center was reached.
    """

    R: float
    r: np.ndarray
    E: np.ndarray
    I: np.ndarray
    tau: float
    termination: str
    I0: float | None
    miss: float
    tol_I: float

    @property
    def indicator(self) -> bool:
        """True when ``R`` lies at or beyond the stationary radius."""
        if self.termination != "ReachedZero":
            return True
        return self.I0 is not None and self.I0 > -self.tol_I


def tol_I(R: float, params: ModelParams, laws: ConstitutiveSet) -> float:
    return 1e-12 * R**3 * float(laws.mu_of_E(params.E_cap))


def _center_extension(r_last: float, R: float, params: ModelParams, laws: ConstitutiveSet) -> float:
    """``int_0^{r_last} mu(h(sigma)) (sigma - sigma_bar) rho^2 d rho``."""
    if r_last <= 0.0:
        return 0.0
    nodes, weights = np.polynomial.legendre.leggauss(16)
    rho = 0.5 * r_last * (nodes + 1.0)
    sig = model.sigma_stationary(rho, R, params.lam)
    hh = model.h_root(sig, params.m_eq, params, laws)
    vals = laws.mu_of_E(hh) * (sig - params.sigma_bar) * rho**2
    return 0.5 * r_last * float(np.dot(weights, vals))


def shoot(
    R: float,
    params: ModelParams,
    laws: ConstitutiveSet,
    grid_n: int = 1024,
) -> ShootResult:
    """Integrate inward from ``r = R`` on ``grid_n`` uniform steps.

    The first step is the linear Taylor seed on the smooth branch for ``E``
    with a trapezoidal value for ``I``; the remaining steps use the two-stage
    Radau IIA scheme.  ``I`` returning to zero is only reported once
    ``r < 0.9 R``.
    """
    if not R > 0.0:
        raise ValueError("R must be positive")
    if grid_n < 4:
        raise ValueError("grid_n must be at least 4")
    p = tumor_problem(R, params, laws)
    h = R / grid_n
    slope = initial_slope(p)
    E1 = p.x0 + slope * h
    if not 0.0 < E1 < params.E_cap:
        raise SeedFailure(f"seed E = {E1:g} outside (0, E_cap)")
    y1 = 0.5 * h * (p.g0 + p.g(E1, h))
    if not y1 > 0.0:
        raise SeedFailure("seed value of -I is not positive")
    tI = tol_I(R, params, laws)
    s_grid = np.linspace(0.0, R, grid_n + 1)
    s_grid[-1] = R
    res = march(
        p,
        s_grid[1:],
        E1,
        y1,
        scheme="radau",
        slope_start=slope,
        y_floor=tI,
        stop_after=0.1 * R,
        x_bounds=(0.0, params.E_cap),
    )
    s = np.concatenate([[0.0], res.times])
    E = np.concatenate([[p.x0], res.xs])
    I = -np.concatenate([[0.0], res.ys])
    r = R - s
    r[-1] = max(r[-1], 0.0)
    if res.status == "complete":
        I0 = float(I[-1])
        return ShootResult(R, r, E, I, 0.0, "ReachedZero", I0, I0, tI)
    if res.status == "stepfail":
        raise StepFailure(f"implicit step failed at r = {R - res.t_stop:.6g} for R = {R:.6g}")
    r_last = float(r[-1])
    miss = float(I[-1]) - _center_extension(r_last, R, params, laws)
    if res.status == "denominator":
        tau = max(R - float(res.t_stop), 0.0)
        return ShootResult(R, r, E, I, tau, "DenominatorVanished", None, miss, tI)
    return ShootResult(R, r, E, I, r_last, "BoundViolated", None, miss, tI)


def tau_of(R: float, params: ModelParams, laws: ConstitutiveSet, grid_n: int = 1024) -> float:
    """Radius where ``I`` first returns to zero on the way in (0 if never)."""
    return shoot(R, params, laws, grid_n).tau


@dataclass
class ProbeTable:
    """Scaled profiles of two shoots on the common grid ``s = r / R1``.

    ``du = u~(s, R2) - u~(s, R1)`` with ``u~ = I / R^3`` and
    ``dE = E~(s, R2) - E~(s, R1)``; only ``s`` in ``[s_min, 1)`` is kept,
    where ``s_min`` is the larger scaled blow-down radius.
    """

    R1: float
    R2: float
    s: np.ndarray
    du: np.ndarray
    dE: np.ndarray
    s_min: float

    @property
    def min_du(self) -> float:
        return float(np.min(self.du)) if self.du.size else math.nan

    @property
    def min_dE(self) -> float:
        return float(np.min(self.dE)) if self.dE.size else math.nan


def monotonicity_probe(
    R1: float,
    R2: float,
    params: ModelParams,
    laws: ConstitutiveSet,
    grid_n: int = 1024,
) -> ProbeTable:
    """Compare the scaled shoots at ``R1 <= R2``.

    For ``R2 > R1`` both differences should be positive on the kept range.
    The ``R2`` shoot is resampled onto the ``R1`` grid by a cubic spline in
    ``s``; when ``R1 == R2`` the same shoot is reused and both differences
    vanish identically.
    """
    if not 0.0 < R1 <= R2:
        raise ValueError("need 0 < R1 <= R2")
    a = shoot(R1, params, laws, grid_n)
    b = a if R2 == R1 else shoot(R2, params, laws, grid_n)
    s_min = max(a.tau / R1, b.tau / R2)
    s_a = a.r / R1
    s_b = b.r / R2
    keep = (s_a >= s_min) & (s_a < 1.0) & (s_a >= s_b[-1])
    s = s_a[keep]
    if b is a:
        uB, EB = a.I[keep] / R1**3, a.E[keep]
    else:
        # Splines need increasing abscissae; the shoot runs inward.
        uB = CubicSpline(s_b[::-1], b.I[::-1] / R2**3)(s)
        EB = CubicSpline(s_b[::-1], b.E[::-1])(s)
    du = uB - a.I[keep] / R1**3
    dE = EB - a.E[keep]
    return ProbeTable(R1, R2, s, du, dE, s_min)


# ---------------------------------------------------------------------------
# Stationary radius
# ---------------------------------------------------------------------------


@dataclass
class RStarResult:
    """Outcome of the radius search."""

    R_star: float
    bracket: tuple[float, float]
    n_shoots: int
    I0: float | None
    tau: float
    flip_checked: bool
    grid_n: int

    def __float__(self) -> float:
        return self.R_star


def find_R_star(
    params: ModelParams,
    laws: ConstitutiveSet,
    grid_n: int = 1024,
    tol_R: float = 1e-6,
    bracket: tuple[float, float] = (0.1, 10.0),
    max_expand: int = 30,
    verify_flip: bool = True,
) -> RStarResult:
    """Locate the stationary radius.

    The bracket is widened (halving the lower end, doubling the upper) until
    the indicator of :class:`ShootResult` is false at the lower end and true
    at the upper.  Inside it Brent's method runs on the continuous shooting
    miss down to a radius accuracy far below ``tol_R``.  The returned radius
    is the evaluated one with the smallest miss, so ``|I(0, R*)| <= tol_I``
    and ``tau(R*)`` is at most one grid spacing.  With ``verify_flip`` the
    indicator is finally evaluated at ``R* -/+ tol_R / 2`` to confirm the flip.
    """
    cache: dict[float, ShootResult] = {}

    def run(R: float) -> ShootResult:
        if R not in cache:
            cache[R] = shoot(R, params, laws, grid_n)
        return cache[R]

    lo, hi = bracket
    for _ in range(max_expand):
        if not run(lo).indicator:
            break
        lo *= 0.5
    else:
        raise BracketFailure(f"indicator true down to R = {lo:g}")
    for _ in range(max_expand):
        if run(hi).indicator:
            break
        lo = hi
        hi *= 2.0
    else:
        raise BracketFailure(f"indicator false up to R = {hi:g}")

    def miss(R: float) -> float:
        res = run(R)
        if res.termination == "BoundViolated" and res.miss <= 0.0:
            return _TINY
        return res.miss

    brentq(miss, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    R_star = min(cache.values(), key=lambda v: abs(v.miss)).R
    res = run(R_star)
    flip = False
    if verify_flip:
        below = run(R_star - 0.5 * tol_R).indicator
        above = run(R_star + 0.5 * tol_R).indicator
        flip = (not below) and above
    return RStarResult(
        R_star=float(R_star),
        bracket=(float(lo), float(hi)),
        n_shoots=len(cache),
        I0=res.miss,
        tau=res.tau,
        flip_checked=flip,
        grid_n=grid_n,
    )


# ---------------------------------------------------------------------------
# Assembled stationary solution
# ---------------------------------------------------------------------------


@dataclass
class StationarySolution:
    """Stationary profiles on the uniform grid ``r_k = k R* / grid_n``."""

    R_star: float
    r: np.ndarray
    sigma: np.ndarray
    m: np.ndarray
    E: np.ndarray
    u: np.ndarray
    residuals: dict[str, float]
    params: ModelParams
    meta: dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict[str, Any]:
        return {
            "R_star": self.R_star,
            "params": self.params.to_dict(),
            "residuals": self.residuals,
            "grid_n": int(self.r.size - 1),
        }

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.r, self.sigma, self.m, self.E, self.u])
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            fh.write("r,sigma,m,E,u\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "StationarySolution":
        with open(path) as fh:
            first = fh.readline()
        if not first.startswith("# "):
            raise ValueError("missing JSON header line")
        hdr = json.loads(first[2:])
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(
            R_star=float(hdr["R_star"]),
            r=data[:, 0].copy(),
            sigma=data[:, 1].copy(),
            m=data[:, 2].copy(),
            E=data[:, 3].copy(),
            u=data[:, 4].copy(),
            residuals={k: float(v) for k, v in hdr["residuals"].items()},
            params=ModelParams.from_dict(hdr["params"]),
        )

    def E_interpolant(self) -> CubicSpline:
        return CubicSpline(self.r, self.E)


def centered_velocity(r: np.ndarray, E: np.ndarray, sigma_fn, params: ModelParams,
                      laws: ConstitutiveSet, n_gauss: int = 16) -> np.ndarray:
    """``u(r) = r^-2 int_0^r mu(E)(sigma - sigma_bar) rho^2 d rho``.

    Written as ``r int_0^1 G(r s) s^2 ds`` and evaluated by Gauss-Legendre
    with ``E`` interpolated by a cubic spline, which keeps ``u`` accurate
    near the center where dividing a cumulative integral by ``r^2`` would
    amplify its error.
    """
    spline = CubicSpline(r, E)
    nodes, weights = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (nodes + 1.0)
    w = 0.5 * weights * s**2
    rho = np.outer(r, s)
    Eq = spline(rho)
    G = laws.mu_of_E(Eq) * (sigma_fn(rho) - params.sigma_bar)
    return r * (G @ w)


def residuals(sol: StationarySolution, laws: ConstitutiveSet) -> dict[str, float]:
    """Max-norm residuals of the three stationary equations on the grid."""
    p = sol.params
    r = sol.r
    s, s_r, s_rr = model.sigma_stationary_derivs(r, sol.R_star, p.lam)
    lap = np.empty_like(r)
    lap[0] = 3.0 * s_rr[0]
    lap[1:] = s_rr[1:] + 2.0 * s_r[1:] / r[1:]
    res_sigma = float(np.max(np.abs(lap - p.lam * s)))

    E_r = np.gradient(sol.E, r, edge_order=2)
    Q = model.eval_Q(sol.sigma, sol.m, sol.E, p, laws)
    res_E = float(np.max(np.abs(sol.u * E_r - Q)))

    G = laws.mu_of_E(sol.E) * (sol.sigma - p.sigma_bar)
    u_r = np.gradient(sol.u, r, edge_order=2)
    div = np.empty_like(r)
    div[0] = 3.0 * u_r[0]
    div[1:] = u_r[1:] + 2.0 * sol.u[1:] / r[1:]
    res_u = float(np.max(np.abs(div - G)))
    return {"sigma": res_sigma, "E": res_E, "u": res_u}


def assemble_stationary(
    R_star: float,
    params: ModelParams,
    laws: ConstitutiveSet,
    grid_n: int = 1024,
) -> StationarySolution:
    """Build the profiles at ``R_star`` on ``grid_n`` uniform intervals."""
    sh = shoot(R_star, params, laws, grid_n)
    r_in = sh.r[::-1]
    E_in = sh.E[::-1]
    r = np.linspace(0.0, R_star, grid_n + 1)
    E = np.empty_like(r)
    k = r_in.size
    # r_in holds the accepted points r_{grid_n - k + 1}, ..., r_{grid_n}.
    E[grid_n + 1 - k:] = E_in
    filled = grid_n + 1 - k
    if filled > 0:
        sig_c = model.sigma_stationary(r[:filled], R_star, params.lam)
        E[:filled] = model.h_root(sig_c, params.m_eq, params, laws)
    sigma = model.sigma_stationary(r, R_star, params.lam)
    m = np.full_like(r, params.m_eq)
    u = centered_velocity(r, E, lambda x: model.sigma_stationary(x, R_star, params.lam), params, laws)
    u[0] = 0.0
    sol = StationarySolution(R_star, r, sigma, m, E, u, {}, params,
                             meta={"termination": sh.termination, "tau": sh.tau, "I0": sh.I0})
    sol.residuals = residuals(sol, laws)
    return sol


def stationary_solution(
    params: ModelParams,
    laws: ConstitutiveSet | None = None,
    grid_n: int = 1024,
    tol_R: float = 1e-6,
) -> StationarySolution:
    """Find ``R*`` and assemble the profiles at the same resolution."""
    laws = laws if laws is not None else model.default_laws(params)
    found = find_R_star(params, laws, grid_n=grid_n, tol_R=tol_R)
    sol = assemble_stationary(found.R_star, params, laws, grid_n)
    sol.meta.update({"n_shoots": found.n_shoots, "flip_checked": found.flip_checked})
    return sol


def constant_mu_radius(params: ModelParams) -> float:
    """Stationary radius when ``mu`` does not depend on ``E``.

    Then ``u(R) = 0`` reduces to ``3 (x coth x - 1) / x^2 = sigma_bar`` with
    ``x = sqrt(lambda) R``, independent of the matrix equation.
    """
    def fun(x):
        return 3.0 * (x / math.tanh(x) - 1.0) / (x * x) - params.sigma_bar

    x = brentq(fun, 1e-3, 700.0, xtol=1e-15)
    return x / math.sqrt(params.lam)
