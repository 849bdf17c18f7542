import numpy as np
import pytest

from conftest import stationary_cached
from ecmtumor import model, stationary
from ecmtumor.model import ModelParams
from ecmtumor.singular_ivp import boundary_slope_limit

H_SIGMA1_MU05 = 0.134857784796612323902790726485


def _setup(mu=0.5, **kw):
    p = ModelParams(mu=mu, **kw)
    return p, model.default_laws(p)


# --- shooting -----------------------------------------------------------------------------


def test_shoot_small_radius_reaches_center():
    p, L = _setup()
    sh = stationary.shoot(0.5, p, L)
    assert sh.termination == "ReachedZero"
    assert sh.tau == 0.0
    assert sh.I0 < 0.0 and sh.miss == sh.I0
    assert not sh.indicator


def test_shoot_large_radius_blows_down():
    p, L = _setup()
    sh = stationary.shoot(6.0, p, L)
    assert sh.tau > 0.0
    assert sh.indicator


@pytest.mark.parametrize("R", [0.5, 1.0, 1.5, 1.9, 3.0, 6.0])
def test_shoot_sign_structure_and_sandwich(R):
    p, L = _setup()
    sh = stationary.shoot(R, p, L)
    inner = slice(1, -1)
    assert np.all(sh.I[inner] < 0.0)
    # E increases inward (E' < 0 in r)
    assert np.all(np.diff(sh.E) > 0.0)
    sig = model.sigma_stationary(sh.r, R, p.lam)
    h = model.h_root(sig, p.m_eq, p, L)
    assert np.all(sh.E >= sh.E[0] - 1e-8)
    assert np.all(sh.E <= h + 1e-8)


def test_boundary_slope_matches_generic_limit():
    p, L = _setup()
    R = 1.9635
    E_R = model.h_root(1.0, p.m_eq, p, L)
    mu_R = float(L.mu_of_E(E_R))
    _, s_r, _ = model.sigma_stationary_derivs(np.array([R]), R, p.lam)
    F_r = -E_R * mu_R * s_r[0]
    F_phi = model.dQ_dE(1.0, p.m_eq, E_R, p, L)
    v_prime = mu_R * (1.0 - p.sigma_bar)
    expect = boundary_slope_limit(F_r, F_phi, v_prime)
    assert stationary.boundary_slope(R, p, L) == pytest.approx(expect, rel=1e-14)


def test_shoot_seed_reproduces_boundary_slope():
    p, L = _setup()
    R = 1.9635
    sh = stationary.shoot(R, p, L, grid_n=4096)
    s = R - sh.r[:16]
    coef = np.polyfit(s, sh.E[:16], 3)
    # E as a function of s = R - r, so dE/ds = -dE/dr
    assert abs(-coef[-2] - stationary.boundary_slope(R, p, L)) <= 1e-6


def test_tau_scaled_monotone():
    p, L = _setup()
    taus = [stationary.tau_of(R, p, L) / R for R in (4.0, 5.0, 6.0)]
    assert taus[0] > 0.0
    assert taus[0] <= taus[1] <= taus[2]


# --- stationary radius ----------------------------------------------------------------------


@pytest.mark.parametrize("mu, target", [(0.5, 1.9635), (3.0, 1.9715), (10.0, 1.99282)])
def test_R_star_values(mu, target):
    sol = stationary_cached(mu)
    assert sol.R_star == pytest.approx(target, rel=1e-2)
    assert sol.meta["flip_checked"]


def test_R_star_increasing_in_mu():
    r = [stationary_cached(mu).R_star for mu in (0.5, 3.0, 10.0)]
    assert r[0] < r[1] < r[2]


def test_R_star_deterministic():
    p, L = _setup()
    a = stationary.find_R_star(p, L)
    b = stationary.find_R_star(p, L)
    assert a.R_star == b.R_star
    assert abs(a.I0) <= stationary.tol_I(a.R_star, p, L)


def test_R_star_grid_cauchy():
    p, L = _setup()
    rs = [stationary.find_R_star(p, L, grid_n=n, verify_flip=False).R_star for n in (256, 512, 1024, 2048)]
    d = np.abs(np.diff(rs))
    assert np.all(np.diff(d) < 0.0)


def test_constant_mu_against_closed_form():
    p = ModelParams(mu=0.5)
    L = model.constant_mu_laws(p)
    found = stationary.find_R_star(p, L)
    assert found.R_star == pytest.approx(stationary.constant_mu_radius(p), abs=1e-6)


@pytest.mark.parametrize("lam", [0.05, 2.0])
def test_viable_across_lambda_range(lam):
    p, L = _setup(lam=lam)
    R = stationary.find_R_star(p, L).R_star
    assert model.viability(R, p)


def test_bracket_expansion_from_narrow_bracket():
    p, L = _setup()
    a = stationary.find_R_star(p, L, bracket=(2.5, 3.0)).R_star
    b = stationary.find_R_star(p, L).R_star
    assert a == pytest.approx(b, abs=1e-9)


# --- assembled solution -----------------------------------------------------------------------


def test_assembled_profile_shape(sol05):
    assert np.all(np.diff(sol05.E) < 0.0)
    assert sol05.E[-1] == pytest.approx(H_SIGMA1_MU05, abs=1e-9)
    sig0 = model.sigma_stationary(0.0, sol05.R_star, 2.0)
    assert sol05.E[0] == pytest.approx(model.h_root(sig0, 0.5, sol05.params,
                                                    model.default_laws(sol05.params)), abs=1e-4)
    assert abs(sol05.u[0]) <= 1e-6 and abs(sol05.u[-1]) <= 1e-6
    assert np.all(sol05.u[1:-1] < 0.0)
    dr = sol05.r[1]
    assert abs(sol05.E[1] - sol05.E[0]) / dr <= 1e-3
    assert np.all(sol05.m == 0.5)


def test_sigma_residual_machine_level(sol05):
    assert sol05.residuals["sigma"] <= 1e-12


def test_residuals_shrink_with_grid():
    p, L = _setup()
    R = stationary_cached(0.5).R_star
    coarse = stationary.assemble_stationary(R, p, L, 512).residuals
    fine = stationary.assemble_stationary(R, p, L, 1024).residuals
    for k in ("E", "u"):
        assert fine[k] <= 0.5 * coarse[k]


def test_csv_round_trip(tmp_path, sol05):
    path = tmp_path / "s.csv"
    sol05.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# {") and lines[1] == "r,sigma,m,E,u"
    back = stationary.StationarySolution.from_csv(path)
    assert back.R_star == sol05.R_star
    assert np.array_equal(back.E, sol05.E)
    assert back.params == sol05.params
    assert back.residuals == sol05.residuals


# --- monotonicity probe ----------------------------------------------------------------------


def test_probe_positive_for_larger_radius():
    p, L = _setup()
    t = stationary.monotonicity_probe(1.5, 2.5, p, L)
    assert t.s.size > 100
    assert t.min_du > 0.0 and t.min_dE > 0.0


def test_probe_identical_radii_zero():
    p, L = _setup()
    t = stationary.monotonicity_probe(1.5, 1.5, p, L)
    assert np.all(t.du == 0.0) and np.all(t.dE == 0.0)


def test_probe_restricted_beyond_blow_down():
    p, L = _setup()
    t = stationary.monotonicity_probe(0.5, 6.0, p, L)
    tau6 = stationary.tau_of(6.0, p, L) / 6.0
    assert t.s_min == pytest.approx(tau6)
    assert np.all(t.s >= tau6) and np.all(t.s < 1.0)
    assert t.min_du > 0.0


def test_probe_rejects_bad_order():
    p, L = _setup()
    with pytest.raises(ValueError):
        stationary.monotonicity_probe(2.0, 1.0, p, L)
