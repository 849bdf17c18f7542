import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import stationary_cached
from ecmtumor import model, timedep
from ecmtumor.errors import InvariantViolation, StepTooLarge
from ecmtumor.model import ModelParams
from ecmtumor.timedep import unit_grid


@pytest.fixture(scope="module")
def P():
    p = ModelParams()
    return p, model.default_laws(p)


# --- initial data -------------------------------------------------------------------------


def _flat_init(n=64, R0=1.0, m0=0.5, E0=0.2):
    r = unit_grid(n)
    return timedep.InitialData(R0, np.ones_like(r), np.full_like(r, m0), np.full_like(r, E0))


def test_initial_data_validation():
    n = 32
    r = unit_grid(n)
    ones = np.ones_like(r)
    with pytest.raises(ValueError):
        timedep.InitialData(1.0, 0.5 * ones, ones, ones)  # sigma0(1) != 1
    with pytest.raises(ValueError):
        timedep.InitialData(0.0, ones, ones, ones)
    with pytest.raises(ValueError):
        timedep.InitialData(1.0, ones, ones, 0.0 * ones)
    with pytest.raises(ValueError):
        timedep.InitialData(1.0, ones, ones, 1.0 + r)  # slope at the center
    with pytest.raises(ValueError):
        timedep.InitialData(1.0, ones, 1.0 + r**2, ones)  # m0 slope at r = 1


def test_smooth_bump_seeded():
    a = timedep.smooth_bump(128, 12345)
    b = timedep.smooth_bump(128, 12345)
    c = timedep.smooth_bump(128, 54321)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.max(np.abs(a)) == pytest.approx(1.0)
    assert np.all(timedep.smooth_bump(16, None) == 1.0)


def test_initial_from_stationary_amplitude_bounds(sol05):
    with pytest.raises(ValueError):
        timedep.initial_from_stationary(sol05, n=64, amplitude=0.6)
    init = timedep.initial_from_stationary(sol05, n=64, amplitude=0.05)
    base = timedep.initial_from_stationary(sol05, n=64)
    assert np.allclose(init.E0, 1.05 * base.E0, rtol=1e-14)


# --- velocity -------------------------------------------------------------------------------


def test_velocity_constant_integrand(P):
    p, _ = P
    n = 1024
    r = unit_grid(n)
    k = 0.37
    laws = model.constant_mu_laws(ModelParams(mu=1.0))
    sigma = np.full_like(r, p.sigma_bar + k)
    u, v = timedep.velocity_from_profiles(sigma, np.full_like(r, 0.3), p, laws)
    assert np.max(np.abs(u - k * r / 3)) <= 1e-10
    assert np.max(np.abs(v - (u - r * u[-1]))) <= 1e-15


def test_velocity_vanishes_at_sigma_bar(P):
    p, L = P
    r = unit_grid(64)
    u, v = timedep.velocity_from_profiles(np.full_like(r, p.sigma_bar), 0.2 + 0 * r, p, L)
    assert np.all(u == 0.0) and np.all(v == 0.0)


def test_velocity_matches_stationary(sol05, P):
    p, L = P
    ref = timedep.ReferenceProfiles.from_solution(sol05, 512)
    u, _ = timedep.velocity_from_profiles(ref.sigma, ref.E, p, L)
    assert np.max(np.abs(u - ref.u)) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_velocity_ends(seed):
    p = ModelParams()
    L = model.default_laws(p)
    n = 64
    r = unit_grid(n)
    rng = np.random.default_rng(seed)
    sigma = np.clip(rng.uniform(0.1, 1.0, n + 1), 0.1, 1.0)
    sigma[-1] = 1.0
    E = rng.uniform(0.0, 1.0, n + 1)
    u, v = timedep.velocity_from_profiles(sigma, E, p, L)
    assert u[0] == 0.0 and v[0] == 0.0 and v[-1] == 0.0


# --- parabolic steps -------------------------------------------------------------------------


def test_sigma_constant_one_unchanged():
    p = ModelParams(lam=1e-300)
    s = np.ones(65)
    out = timedep.parabolic_step_sigma(s, 1.0, 0.0, 1e-3, p)
    assert np.max(np.abs(out - 1.0)) <= 1e-12


def test_sigma_stationary_drift_decreases_with_refinement(sol05, P):
    p, _ = P
    drifts = []
    for n in (64, 128, 256):
        ref = timedep.ReferenceProfiles.from_solution(sol05, n)
        out = timedep.parabolic_step_sigma(ref.sigma, sol05.R_star, 0.0, 1e-3, p)
        drifts.append(np.max(np.abs(out - ref.sigma)))
    assert drifts[0] > drifts[1] > drifts[2]
    assert drifts[1] / drifts[2] >= 3.0


def test_sigma_pure_decay_maximum_principle():
    p = ModelParams(c=1.0, lam=5.0)
    s = np.full(65, 0.8)
    s[-1] = 1.0
    prev = np.max(s[:-1])
    for _ in range(5):
        s = timedep.parabolic_step_sigma(s, 1e3, 0.0, 0.1, p)
        cur = np.max(s[:-1])
        assert cur < prev and np.all(s > 0.0)
        prev = cur


def test_sigma_step_too_large_flagged():
    p = ModelParams(c=1.0)
    with pytest.raises(StepTooLarge):
        timedep.parabolic_step_sigma(np.ones(257), 1e3, 50.0, 1e-3, p)


def test_m_equilibrium_bit_exact(P):
    p, _ = P
    m = np.full(513, p.m_eq)
    for _ in range(100):
        m = timedep.parabolic_step_m(m, 1.9, 0.01, 1e-3, p)
    assert np.all(m == p.m_eq)


def test_m_constant_follows_ode(P):
    p, _ = P
    m = np.full(129, 2.0)
    dt, steps = 1e-3, 1000
    for _ in range(steps):
        m = timedep.parabolic_step_m(m, 1.5, 0.0, dt, p)
    exact = p.m_eq + (2.0 - p.m_eq) * math.exp(-p.beta * dt * steps)
    assert np.max(np.abs(m - exact)) <= 1e-3
    assert np.ptp(m) <= 1e-12


def test_m_neumann_zero_flux_conserves_mass():
    # beta small and alpha tiny: total mass changes only through the source
    p = ModelParams(alpha=1e-12, beta=1e-12)
    r = unit_grid(128)
    m = 1.0 + 0.3 * np.cos(np.pi * r)
    lo, up, _ = timedep._operator_geometry(128)
    h = 1.0 / 128
    half = np.concatenate([[0.0], 0.5 * (r[:-1] + r[1:]), [1.0]])
    vol = (half[1:] ** 3 - half[:-1] ** 3) / 3.0
    vol[0] = (0.5 * h) ** 3 / 3.0
    mass0 = np.dot(vol, m)
    for _ in range(20):
        m = timedep.parabolic_step_m(m, 1.0, 0.0, 1e-2, p)
    assert np.dot(vol, m) == pytest.approx(mass0, rel=1e-10)


# --- transport -------------------------------------------------------------------------------


def test_transport_identity(P):
    p, L = P
    r = unit_grid(64)
    E = 0.3 + 0.1 * np.cos(np.pi * r)
    zero = lambda s, m, e: 0.0 * e
    out = timedep.transport_E(E, 0 * r, 0 * r + 1, 0 * r + 0.5, 1e-2, p, L, reaction=zero)
    assert np.array_equal(out, E)


def test_transport_exponential_decay(P):
    p, L = P
    r = unit_grid(64)
    E = 0.3 + 0.1 * np.cos(np.pi * r)
    m = 0.5
    dt = 1e-3
    decay = lambda s, m_, e: -p.gamma * m * e
    out = timedep.transport_E(E, 0 * r, 0 * r + 1, 0 * r + m, dt, p, L, reaction=decay)
    # Heun truncates exp(-z) after z^2 / 2, leaving E z^3 / 6 per step
    z = p.gamma * m * dt
    err = np.abs(out - E * math.exp(-z))
    assert np.allclose(err, E * z**3 / 6, rtol=1e-2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 5e-2))
def test_transport_no_new_extrema(seed, dt):
    p = ModelParams()
    L = model.default_laws(p)
    n = 128
    r = unit_grid(n)
    rng = np.random.default_rng(seed)
    E = 0.2 + 0.1 * timedep.smooth_bump(n, int(rng.integers(2**31)))
    v = 0.5 * np.sin(np.pi * r) * rng.uniform(-1, 1)
    v[0] = v[-1] = 0.0
    zero = lambda s, m, e: 0.0 * e
    out = timedep.transport_E(E, v, 0 * r + 1, 0 * r, dt, p, L, reaction=zero)
    assert out.max() <= E.max() + 1e-8 and out.min() >= E.min() - 1e-8
    # feet stay inside [0, 1] before clamping
    mid = r - 0.5 * dt * v
    foot = r - dt * np.interp(mid, r, v)
    assert foot.min() >= -1e-10 and foot.max() <= 1 + 1e-10


def test_transport_rejects_unknown_interpolation(P):
    p, L = P
    r = unit_grid(16)
    with pytest.raises(ValueError):
        timedep.transport_E(r + 1, 0 * r, r, r, 1e-3, p, L, interpolation="spline")


# --- advance / simulate ------------------------------------------------------------------------


def test_advance_zero_growth_keeps_R(P):
    p, L = P
    st0 = timedep.initial_state(_flat_init(), p, L)
    st0.u[-1] = 0.0
    st1 = timedep.advance(st0, 1e-3, p, L)
    assert st1.R == st0.R


def test_positive_proliferation_grows():
    p = ModelParams(sigma_bar=0.01)
    L = model.default_laws(p)
    ts = timedep.simulate(p, L, _flat_init(R0=0.5), T=0.2, dt=1e-3)
    R = ts.scalars["R"]
    assert np.all(np.diff(R) > 0.0)
    assert all(np.all(s.sigma > p.sigma_bar) for s in ts.snapshots)


def test_simulate_T0_snapshot_is_initial_state(sol05, P):
    p, L = P
    init = timedep.initial_from_stationary(sol05, n=64, amplitude=0.05)
    ts = timedep.simulate(p, L, init, T=0.0)
    assert len(ts.snapshots) == 1
    s = ts.snapshots[0]
    assert s.t == 0.0 and s.R == init.R0
    assert np.array_equal(s.sigma, init.sigma0) and np.array_equal(s.E, init.E0)
    assert np.array_equal(s.m, init.m0)


def test_simulate_stationary_data_self_consistent(sol05, P):
    p, L = P
    init = timedep.initial_from_stationary(sol05, n=512)
    ts = timedep.simulate(p, L, init, T=1.0, dt=1e-3, reference=sol05)
    d = timedep.distance_to_stationary(ts.final, sol05)
    assert d.sup_all <= 1e-3
    assert np.all(np.diff(ts.scalars["t"]) > 0.0) and np.all(ts.scalars["R"] > 0.0)


def test_convergence_order_pinned_radius():
    sol = stationary_cached(0.5, 2048)
    p = sol.params
    L = model.default_laws(p)
    errs = []
    for n, dt in ((64, 8e-3), (128, 4e-3), (256, 2e-3)):
        init = timedep.initial_from_stationary(sol, n=n)
        ts = timedep.simulate(p, L, init, T=1.0, dt=dt, pin_R=True)
        errs.append(timedep.distance_to_stationary(ts.final, sol).sup_all)
    assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8


def test_invariant_check_catches_violation(P):
    p, L = P
    st0 = timedep.initial_state(_flat_init(m0=0.5), p, L)
    st0.m[3] = 0.9
    with pytest.raises(InvariantViolation):
        timedep.check_invariants(st0, 0.5)


def test_simulate_rejects_bad_times(P):
    p, L = P
    with pytest.raises(ValueError):
        timedep.simulate(p, L, _flat_init(), T=0.0105, dt=1e-3)
    with pytest.raises(ValueError):
        timedep.simulate(p, L, _flat_init(), T=-1.0)


# --- distances -----------------------------------------------------------------------------------


def test_distance_zero_on_resampled_solution(sol05, P):
    p, L = P
    init = timedep.initial_from_stationary(sol05, n=256)
    st0 = timedep.initial_state(init, p, L)
    d = timedep.distance_to_stationary(st0, sol05)
    assert d.sup_all == 0.0 and d.dR == 0.0
    assert all(v == 0.0 for v in d.l2.values())


def test_distance_symmetric_under_resampling(sol05, P):
    p, L = P
    init = timedep.initial_from_stationary(sol05, n=256, amplitude=0.05, seed=3)
    st0 = timedep.initial_state(init, p, L)
    a = timedep.distance_to_stationary(st0, sol05)
    b = timedep.distance_on_reference_grid(st0, sol05)
    for k in ("sigma", "E", "m"):
        assert a.sup[k] == pytest.approx(b.sup[k], abs=1e-4)


# --- output ----------------------------------------------------------------------------------


def test_series_and_snapshot_csv(tmp_path, sol05, P):
    p, L = P
    init = timedep.initial_from_stationary(sol05, n=32, amplitude=0.05)
    ts = timedep.simulate(p, L, init, T=0.01, dt=1e-3, cadence=0.005, reference=sol05)
    ts.write_series(tmp_path / "series.csv")
    ts.write_snapshots(tmp_path / "snap.csv")
    series = (tmp_path / "series.csv").read_text().splitlines()
    snaps = (tmp_path / "snap.csv").read_text().splitlines()
    assert series[0] == "t,R,u1,dist_sigma,dist_E,dist_m"
    assert len(series) == 1 + 11
    assert snaps[0] == "t,r,sigma,m,E,u"
    assert len(snaps) == 1 + 3 * 33
