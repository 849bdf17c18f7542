"""Time-dependent solver on the fixed unit domain ``r in [0, 1]``.

The physical ball of radius ``R(t)`` is mapped to the unit ball.  On the
uniform grid ``r_i = i / n`` the unknowns are the nutrient ``sigma``, the MDE
density ``m`` and the matrix density ``E``.  One step of :func:`advance` is
split as

1. velocity ``u`` from the current ``sigma`` and ``E``, and ``v = u - r u(1)``;
2. radius update ``R <- R exp(u(1) dt)``;
3. backward-Euler steps for ``sigma`` and ``m``;
4. semi-Lagrangian transport of ``E`` along ``dr/dt = v``.

The diffusion operator is the finite-volume form of ``r^-2 (r^2 f_r)_r`` on
cells ``[r_{i-1/2}, r_{i+1/2}]``, which reduces to ``3 f_rr`` at the center
and conserves mass under the Neumann closure for ``m``.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import solve_banded

from . import model
from .errors import InvariantViolation, RadiusCollapse, StepTooLarge
from .model import ConstitutiveSet, ModelParams
from .stationary import StationarySolution

COLLAPSE_RADIUS = 1e-6


def unit_grid(n: int) -> np.ndarray:
    """Nodes ``0, 1/n, ..., 1``."""
    return _unit_grid(n).copy()


@functools.lru_cache(maxsize=16)
def _unit_grid(n: int) -> np.ndarray:
    if n < 4:
        raise ValueError("grid needs at least 4 intervals")
    r = np.arange(n + 1, dtype=float) / n
    r[-1] = 1.0
    r.setflags(write=False)
    return r


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------


@dataclass
class SimState:
    """Fields on the unit grid at time ``t``; ``u`` and ``v`` match ``sigma`` and ``E``."""

    t: float
    R: float
    sigma: np.ndarray
    m: np.ndarray
    E: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def n(self) -> int:
        return self.sigma.size - 1

    @property
    def r(self) -> np.ndarray:
        return unit_grid(self.n)


@dataclass
class InitialData:
    """Initial radius and profiles on a common unit grid.

    Checked on construction: ``sigma0(1) = 1``, nonnegative profiles that do
    not vanish identically, and one-sided slopes at ``r = 0`` (and at ``r = 1``
    for ``m0``) below ``slope_tol`` times the profile's maximum.
    """

    R0: float
    sigma0: np.ndarray
    m0: np.ndarray
    E0: np.ndarray
    slope_tol: float = 1e-2
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sigma0 = np.asarray(self.sigma0, dtype=float).copy()
        self.m0 = np.asarray(self.m0, dtype=float).copy()
        self.E0 = np.asarray(self.E0, dtype=float).copy()
        if not self.R0 > 0.0:
            raise ValueError("R0 must be positive")
        n = self.sigma0.size
        if self.m0.size != n or self.E0.size != n or n < 5:
            raise ValueError("profiles must share a grid with at least 5 nodes")
        if abs(self.sigma0[-1] - 1.0) > 1e-12:
            raise ValueError("sigma0(1) must equal 1")
        self.sigma0[-1] = 1.0
        h = 1.0 / (n - 1)
        for name, f in (("sigma0", self.sigma0), ("m0", self.m0), ("E0", self.E0)):
            if np.any(f < 0.0) or not np.any(f > 0.0):
                raise ValueError(f"{name} must be nonnegative and not identically zero")
            scale = self.slope_tol * max(float(np.max(np.abs(f))), 1.0)
            if abs(-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h) > scale:
                raise ValueError(f"{name} must have zero slope at r = 0")
        if abs(3.0 * self.m0[-1] - 4.0 * self.m0[-2] + self.m0[-3]) / (2.0 * h) > \
                self.slope_tol * max(float(np.max(self.m0)), 1.0):
            raise ValueError("m0 must have zero slope at r = 1")

    @property
    def n(self) -> int:
        return self.sigma0.size - 1


def smooth_bump(n: int, seed: int | None, n_modes: int = 5) -> np.ndarray:
    """Shape ``p(r)`` with ``max |p| = 1`` and zero slope at both ends.

    ``seed=None`` gives ``p = 1``; otherwise a random cosine series drawn
    from ``numpy.random.default_rng(seed)``.
    """
    r = unit_grid(n)
    if seed is None:
        return np.ones_like(r)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(n_modes)
    p = sum(c * np.cos(k * math.pi * r) for k, c in enumerate(coef))
    return p / np.max(np.abs(p))


def initial_from_stationary(
    sol: StationarySolution,
    n: int = 512,
    amplitude: float = 0.0,
    seed: int | None = None,
) -> InitialData:
    """Resample a stationary solution onto the unit grid.

    With ``amplitude > 0`` the matrix density is multiplied by
    ``1 + amplitude * p(r)`` where ``p`` comes from :func:`smooth_bump`.
    """
    if not 0.0 <= amplitude <= 0.5:
        raise ValueError("amplitude must lie in [0, 0.5]")
    r = unit_grid(n)
    Rs = sol.R_star
    sigma0 = model.sigma_stationary(r * Rs, Rs, sol.params.lam)
    sigma0[-1] = 1.0
    E0 = CubicSpline(sol.r, sol.E)(np.minimum(r * Rs, sol.r[-1]))
    if amplitude > 0.0:
        E0 = E0 * (1.0 + amplitude * smooth_bump(n, seed))
    m0 = np.interp(r * Rs, sol.r, sol.m)
    return InitialData(Rs, sigma0, m0, E0,
                       meta={"kind": "perturbed" if amplitude > 0 else "stationary",
                             "amplitude": amplitude, "seed": seed})


# ---------------------------------------------------------------------------
# Velocity
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _product_trapezoid_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell weights of ``int rho^2 G`` for piecewise linear ``G``."""
    r = _unit_grid(n)
    a = r[:-1]
    h = np.diff(r)
    w_left = h * (a * a / 2.0 + a * h / 3.0 + h * h / 12.0)
    w_right = h * (a * a / 2.0 + 2.0 * a * h / 3.0 + h * h / 4.0)
    return w_left, w_right


def velocity_from_profiles(
    sigma: np.ndarray, E: np.ndarray, params: ModelParams, laws: ConstitutiveSet
) -> tuple[np.ndarray, np.ndarray]:
    """``u = r^-2 int_0^r mu(E)(sigma - sigma_bar) rho^2 d rho`` and ``v = u - r u(1)``.

    The integrand ``G = mu(E)(sigma - sigma_bar)`` is taken piecewise linear
    and ``rho^2 G`` is integrated exactly on each cell, so constant ``G = k``
    gives ``u = k r / 3`` up to rounding.
    """
    n = sigma.size - 1
    r = _unit_grid(n)
    G = laws.mu_of_E(E) * (sigma - params.sigma_bar)
    wl, wr = _product_trapezoid_weights(n)
    J = np.concatenate([[0.0], np.cumsum(wl * G[:-1] + wr * G[1:])])
    u = np.empty_like(r)
    u[0] = 0.0
    u[1:] = J[1:] / r[1:] ** 2
    v = u - r * u[-1]
    v[0] = 0.0
    v[-1] = 0.0
    return u, v


# ---------------------------------------------------------------------------
# Parabolic steps
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _operator_geometry(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face-flux factors divided by the cell volumes, and ``r / (2h)``."""
    r = _unit_grid(n)
    h = 1.0 / n
    half = np.concatenate([[0.0], 0.5 * (r[:-1] + r[1:]), [1.0]])
    vol = (half[1:] ** 3 - half[:-1] ** 3) / 3.0
    vol[0] = (0.5 * h) ** 3 / 3.0
    face = half[1:-1] ** 2 / h
    up = np.zeros(n + 1)
    lo = np.zeros(n + 1)
    up[:-1] = face / vol[:-1]
    lo[1:] = face / vol[1:]
    adv = r[1:-1] / (2.0 * h)
    return lo, up, adv


def radial_operator(n: int, D: float, b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients of ``L f = D r^-2 (r^2 f_r)_r + b r f_r`` at every node.

    Returns ``(lower, center, upper)`` of length ``n + 1`` with
    ``(L f)_i = lower_i f_{i-1} - center_i f_i + upper_i f_{i+1}``;
    ``lower[0]`` and ``upper[n]`` are zero (symmetry at the center, no flux
    through ``r = 1``).  The advection term uses central differences at
    interior nodes and drops out at both ends, where ``r f_r`` vanishes, so it
    only shifts the off-diagonals.
    """
    lo, up, adv = _operator_geometry(n)
    lower = D * lo
    upper = D * up
    center = lower + upper
    if b != 0.0:
        lower[1:-1] -= b * adv
        upper[1:-1] += b * adv
    return lower, center, upper


def _check_monotone(lower: np.ndarray, upper: np.ndarray, what: str) -> None:
    if np.any(lower < 0.0) or np.any(upper < 0.0):
        raise StepTooLarge(f"{what}: negative off-diagonal in the step matrix (advection too strong)")


def _solve_tridiag(lower, diag, upper, rhs) -> np.ndarray:
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def parabolic_step_sigma(
    sigma: np.ndarray,
    R: float,
    growth_rate: float,
    dt: float,
    params: ModelParams,
    verbatim: bool = False,
) -> np.ndarray:
    """Backward-Euler step for the nutrient with ``sigma(1) = 1``.

    ``growth_rate`` is ``R'/R``.  The equation divided by ``c`` reads
    ``sigma_t = (c R^2)^-1 r^-2 (r^2 sigma_r)_r + b r sigma_r - (lambda / c) sigma``
    with ``b = R'/R``; ``verbatim=True`` uses ``b = R' / (c R)`` instead.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = sigma.size - 1
    D = 1.0 / (params.c * R * R)
    b = growth_rate / params.c if verbatim else growth_rate
    lower, center, upper = radial_operator(n, D, b)
    _check_monotone(lower[:n], upper[:n], "sigma")
    diag = 1.0 + dt * center[:n] + dt * params.lam / params.c
    rhs = sigma[:n].copy()
    rhs[-1] += dt * upper[n - 1]
    out = np.empty_like(sigma)
    out[:n] = _solve_tridiag(-dt * lower[:n], diag, -dt * upper[:n], rhs)
    out[n] = 1.0
    return out


def parabolic_step_m(
    m: np.ndarray,
    R: float,
    growth_rate: float,
    dt: float,
    params: ModelParams,
) -> np.ndarray:
    """Backward-Euler step for the MDE density with no-flux ends.

    The production ``alpha`` is explicit and the decay ``beta m`` implicit.
    The system is solved for the increment with the operator applied to
    differences of neighbours, so ``m = alpha / beta`` is kept bit for bit
    instead of drifting by rounding in the large near-center coefficients.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = m.size - 1
    D = params.D_m / (R * R)
    lower, center, upper = radial_operator(n, D, growth_rate)
    _check_monotone(lower, upper, "m")
    diag = 1.0 + dt * center + dt * params.beta
    Lm = np.zeros_like(m)
    dm = np.diff(m)
    Lm[1:] += lower[1:] * (-dm)
    Lm[:-1] += upper[:-1] * dm
    rhs = dt * (params.alpha - params.beta * m + Lm)
    return m + _solve_tridiag(-dt * lower, diag, -dt * upper, rhs)


# ---------------------------------------------------------------------------
# Matrix transport
# ---------------------------------------------------------------------------


def transport_E(
    E: np.ndarray,
    v: np.ndarray,
    sigma: np.ndarray,
    m: np.ndarray,
    dt: float,
    params: ModelParams,
    laws: ConstitutiveSet,
    reaction: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None,
    interpolation: str = "pchip",
) -> np.ndarray:
    """Semi-Lagrangian step for ``E_t + v E_r = Q(sigma, m, E)``.

    Each node is traced back along ``dr/dt = v`` with the midpoint rule, the
    foot is clamped to ``[0, 1]`` and ``E`` is interpolated there (monotone
    cubic, or linear with ``interpolation="linear"``).  The reaction is then
    integrated along the segment with Heun's method, using ``sigma`` and ``m``
    interpolated at the foot and taken at the node on arrival.
    """
    r = _unit_grid(E.size - 1)
    mid = r - 0.5 * dt * v
    foot = r - dt * np.interp(mid, r, v)
    np.clip(foot, 0.0, 1.0, out=foot)
    if interpolation == "pchip":
        E_foot = PchipInterpolator(r, E)(foot)
    elif interpolation == "linear":
        E_foot = np.interp(foot, r, E)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    s_foot = np.interp(foot, r, sigma)
    m_foot = np.interp(foot, r, m)
    if reaction is None:
        def reaction(s_, m_, e_):
            return model.eval_Q(s_, m_, e_, params, laws)
    q1 = reaction(s_foot, m_foot, E_foot)
    E_pred = E_foot + dt * q1
    q2 = reaction(sigma, m, E_pred)
    return E_foot + 0.5 * dt * (q1 + q2)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def initial_state(init: InitialData, params: ModelParams, laws: ConstitutiveSet) -> SimState:
    u, v = velocity_from_profiles(init.sigma0, init.E0, params, laws)
    return SimState(0.0, float(init.R0), init.sigma0.copy(), init.m0.copy(), init.E0.copy(), u, v)


def advance(
    state: SimState,
    dt: float,
    params: ModelParams,
    laws: ConstitutiveSet,
    verbatim: bool = False,
    pin_R: bool = False,
    interpolation: str = "pchip",
) -> SimState:
    """One split step: velocity, radius, parabolic fields, matrix transport.

    ``pin_R=True`` freezes the radius and drops the ``R'/R`` advection terms.
    """
    u1 = float(state.u[-1])
    if pin_R:
        R_new, rate = state.R, 0.0
    else:
        R_new, rate = state.R * math.exp(u1 * dt), u1
    sigma = parabolic_step_sigma(state.sigma, R_new, rate, dt, params, verbatim=verbatim)
    m = parabolic_step_m(state.m, R_new, rate, dt, params)
    E = transport_E(state.E, state.v, sigma, m, dt, params, laws, interpolation=interpolation)
    u, v = velocity_from_profiles(sigma, E, params, laws)
    return SimState(state.t + dt, R_new, sigma, m, E, u, v)


def check_invariants(state: SimState, m_bound: float) -> None:
    """Raise :class:`InvariantViolation` when a discrete invariant fails."""
    if state.sigma[-1] != 1.0:
        raise InvariantViolation("sigma(1) != 1")
    if not np.all(state.sigma > 0.0):
        raise InvariantViolation("sigma lost positivity")
    if np.max(state.m) > m_bound + 1e-12:
        raise InvariantViolation(f"max m = {np.max(state.m):.17g} exceeds {m_bound:.17g}")
    if state.v[0] != 0.0 or state.v[-1] != 0.0:
        raise InvariantViolation("v does not vanish at the ends")
    if np.min(state.E) < 0.0:
        raise InvariantViolation("E became negative")
    if not state.R > 0.0:
        raise InvariantViolation("R not positive")


# ---------------------------------------------------------------------------
# Distances to a stationary solution
# ---------------------------------------------------------------------------


@dataclass
class Distances:
    sup: dict[str, float]
    l2: dict[str, float]
    dR: float

    @property
    def sup_all(self) -> float:
        return max(self.sup.values())

    def to_dict(self) -> dict:
        return {"sup": self.sup, "l2": self.l2, "dR": self.dR}


@dataclass
class ReferenceProfiles:
    """Stationary fields sampled on the unit grid at ``r R*``."""

    R_star: float
    sigma: np.ndarray
    m: np.ndarray
    E: np.ndarray
    u: np.ndarray

    @classmethod
    def from_solution(cls, sol: StationarySolution, n: int) -> "ReferenceProfiles":
        r = unit_grid(n)
        Rs = sol.R_star
        x = np.minimum(r * Rs, sol.r[-1])
        sigma = model.sigma_stationary(r * Rs, Rs, sol.params.lam)
        sigma[-1] = 1.0
        return cls(Rs, sigma, np.interp(x, sol.r, sol.m), CubicSpline(sol.r, sol.E)(x),
                   CubicSpline(sol.r, sol.u)(x) / Rs)


def _l2(diff: np.ndarray, r: np.ndarray) -> float:
    return float(math.sqrt(np.trapezoid(diff * diff, r)))


def distance_to_stationary(state: SimState, ref: StationarySolution | ReferenceProfiles) -> Distances:
    """Sup and L2 distances of ``sigma``, ``E``, ``m`` plus ``|R - R*|``.

    The stationary solution is resampled to the state grid through
    ``r_physical = r R*``; the nutrient uses the closed form directly.
    """
    if isinstance(ref, StationarySolution):
        ref = ReferenceProfiles.from_solution(ref, state.n)
    r = state.r
    sup, l2 = {}, {}
    for name in ("sigma", "E", "m"):
        d = getattr(state, name) - getattr(ref, name)
        sup[name] = float(np.max(np.abs(d)))
        l2[name] = _l2(d, r)
    return Distances(sup, l2, abs(state.R - ref.R_star))


def distance_on_reference_grid(state: SimState, sol: StationarySolution) -> Distances:
    """Same distances with the state interpolated onto the stationary grid."""
    x = sol.r / sol.R_star
    r = state.r
    sup, l2 = {}, {}
    for name in ("sigma", "E", "m"):
        d = CubicSpline(r, getattr(state, name))(x) - getattr(sol, name)
        sup[name] = float(np.max(np.abs(d)))
        l2[name] = _l2(d, x)
    return Distances(sup, l2, abs(state.R - sol.R_star))


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------

SERIES_COLUMNS = ("t", "R", "u1", "dist_sigma", "dist_E", "dist_m")
SNAPSHOT_COLUMNS = ("t", "r", "sigma", "m", "E", "u")


@dataclass
class Snapshot:
    t: float
    R: float
    sigma: np.ndarray
    m: np.ndarray
    E: np.ndarray
    u: np.ndarray


@dataclass
class TimeSeries:
    """Snapshots at the configured cadence and per-step scalar series.

    Distances are ``nan`` when no reference solution was supplied.
    """

    snapshots: list[Snapshot]
    scalars: dict[str, np.ndarray]
    final: SimState

    def write_snapshots(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SNAPSHOT_COLUMNS)
            for snap in self.snapshots:
                r = unit_grid(snap.sigma.size - 1)
                for i in range(r.size):
                    w.writerow([_fmt(snap.t), _fmt(r[i]), _fmt(snap.sigma[i]), _fmt(snap.m[i]),
                                _fmt(snap.E[i]), _fmt(snap.u[i])])

    def write_series(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            cols = [self.scalars[c] for c in SERIES_COLUMNS]
            for row in zip(*cols):
                w.writerow([_fmt(x) for x in row])

    def sup_distance(self) -> np.ndarray:
        """Largest of the three field distances at every recorded step."""
        return np.maximum.reduce([self.scalars["dist_sigma"], self.scalars["dist_E"],
                                  self.scalars["dist_m"]])


def _fmt(x: float) -> str:
    return repr(float(x))


def simulate(
    params: ModelParams,
    laws: ConstitutiveSet,
    init: InitialData,
    T: float,
    dt: float = 1e-3,
    cadence: float = 0.5,
    reference: StationarySolution | None = None,
    verbatim: bool = False,
    pin_R: bool = False,
    interpolation: str = "pchip",
    check: bool = True,
) -> TimeSeries:
    """March from ``init`` to time ``T`` with fixed ``dt``.

    Snapshots are taken at ``t = 0``, every ``cadence`` and at ``T``.  Raises
    :class:`RadiusCollapse` when ``R`` drops below ``1e-6`` and, with
    ``check=True``, :class:`InvariantViolation` on a failed invariant.
    """
    if T < 0.0 or dt <= 0.0 or cadence <= 0.0:
        raise ValueError("T must be nonnegative and dt, cadence positive")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of dt")
    every = max(1, int(round(cadence / dt)))
    state = initial_state(init, params, laws)
    m_bound = max(params.m_eq, float(np.max(init.m0)))
    ref = ReferenceProfiles.from_solution(reference, init.n) if reference is not None else None

    cols = {c: np.empty(n_steps + 1) for c in SERIES_COLUMNS}

    def record(k: int, st: SimState) -> None:
        cols["t"][k] = st.t
        cols["R"][k] = st.R
        cols["u1"][k] = st.u[-1]
        if ref is None:
            cols["dist_sigma"][k] = cols["dist_E"][k] = cols["dist_m"][k] = math.nan
        else:
            cols["dist_sigma"][k] = np.max(np.abs(st.sigma - ref.sigma))
            cols["dist_E"][k] = np.max(np.abs(st.E - ref.E))
            cols["dist_m"][k] = np.max(np.abs(st.m - ref.m))

    def snap(st: SimState) -> Snapshot:
        return Snapshot(st.t, st.R, st.sigma.copy(), st.m.copy(), st.E.copy(), st.u.copy())

    record(0, state)
    snapshots = [snap(state)]
    for k in range(1, n_steps + 1):
        state = advance(state, dt, params, laws, verbatim=verbatim, pin_R=pin_R,
                        interpolation=interpolation)
        state.t = k * dt
        if state.R < COLLAPSE_RADIUS:
            raise RadiusCollapse(f"R = {state.R:.3g} at t = {state.t:.6g}")
        if check:
            check_invariants(state, m_bound)
        record(k, state)
        if k % every == 0 or k == n_steps:
            snapshots.append(snap(state))
    return TimeSeries(snapshots, cols, state)


def converged(series: TimeSeries, tol: float = 1e-2, monotone_slack: float = 0.0) -> bool:
    """Convergence test on the sup-distance at snapshot times.

    Requires the final distance to be at most ``tol`` and the distance to be
    nonincreasing (up to ``monotone_slack``) over the last half of the run.
    """
    d = series.sup_distance()
    if not np.all(np.isfinite(d)):
        return False
    t = series.scalars["t"]
    T = t[-1]
    if d[-1] > tol:
        return False
    snap_t = np.array([s.t for s in series.snapshots])
    idx = np.searchsorted(t, snap_t[snap_t >= 0.5 * T] - 1e-12)
    tail = d[idx]
    return bool(np.all(np.diff(tail) <= monotone_slack))
