import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from meanfield import equilibria as E, potentials as P, spectral as S
from meanfield import linvlasov as L
from meanfield.harness import fit_exponential

TS = E.two_stream(0.05, 0.5)
COS = P.cosine(1.0)
LAM0 = S.find_real_growth_rate(TS, COS, 1)
MODE = S.build_eigenfunction(TS, LAM0, 1).normalized("envelope")


@pytest.fixture(scope="module")
def hierarchy():
    return L.build_hierarchy(MODE, TS, COS, K=3, t_end=4.5 / LAM0, dt=0.01, epsilon=1e-3,
                             n_v=768, save_every=5)


def _grid(n=512):
    return TS.velocity_grid(n)


def test_apply_L_eigenmode_residual():
    st_ = L.SpectralState.from_eigenmode(MODE, 2, _grid(4001))
    out = L.apply_L(st_, TS, COS)
    assert np.linalg.norm(out.profiles - LAM0 * st_.profiles) <= 1e-6 * np.linalg.norm(st_.profiles)


def test_apply_L_kills_homogeneous_states(rng):
    st_ = L.SpectralState.zeros(3, _grid())
    st_.profiles[3] = rng.normal(size=st_.v.size)
    assert np.all(L.apply_L(st_, TS, COS).profiles == 0)


def test_apply_L_without_equilibrium_slope_is_free_streaming(rng):
    st_ = L.random_band_limited(TS, _grid(), 3, rng)
    out = L.apply_L(st_, TS, COS, fprime=np.zeros(st_.v.size))
    expect = -2j * np.pi * st_.modes[:, None] * st_.v[None, :] * st_.profiles
    assert np.allclose(out.profiles, expect, rtol=0, atol=1e-15)


def test_free_streaming_is_exact_and_phase_mixes():
    v = _grid(2048)
    st_ = L.SpectralState.zeros(2, v)
    phi = np.exp(-v ** 2 / (2 * 0.05))
    st_.profiles[3] = phi
    st_.profiles[1] = phi
    traj = L.propagate(st_, TS, COS, 4.0, 0.05, fprime=np.zeros(v.size), save_every=10)
    for s in traj.states:
        assert np.allclose(s.mode(1), phi * np.exp(-2j * np.pi * v * s.t), atol=1e-13)
    rho = np.abs(traj.rho_hat(1))
    assert rho[-1] < 1e-5 * rho[0]


def test_constant_mode_zero_forcing_grows_linearly():
    v = _grid()
    F = L.SpectralState.zeros(1, v)
    F.profiles[1] = TS.eval(v)
    traj = L.propagate(L.SpectralState.zeros(1, v), TS, COS, 3.0, 0.1, forcing=lambda t: F)
    for s in traj.states:
        assert np.allclose(s.mode(0), s.t * TS.eval(v), atol=1e-12)


def test_mass_drift_is_rejected():
    v = _grid()
    calls = {"n": 0}

    def erratic(t):
        calls["n"] += 1
        F = L.SpectralState.zeros(1, v)
        F.profiles[1] = TS.eval(v) * (calls["n"] % 3)
        return F

    with pytest.raises(L.PropagationError):
        L.propagate(L.SpectralState.zeros(1, v), TS, COS, 1.0, 0.1, forcing=erratic)


def test_eigenmode_grows_at_spectral_rate():
    st_ = L.SpectralState.from_eigenmode(MODE, 1, TS.velocity_grid(1024))
    traj = L.propagate(st_, TS, COS, 5 / LAM0, 0.01, save_every=5)
    rate, _, _ = fit_exponential(traj.times, np.abs(traj.rho_hat(1)), (0.0, 5 / LAM0))
    assert abs(rate - LAM0) <= 0.01 * LAM0
    assert st_.reality_defect() == 0.0


def test_time_step_convergence_is_second_order(rng):
    st_ = L.random_band_limited(TS, _grid(512), 2, rng)
    T = 2.0
    ref = L.propagate(st_, TS, COS, T, 0.1 / 16).states[-1].density_hat()[st_.M + 1]
    errs = [abs(L.propagate(st_, TS, COS, T, dt).states[-1].density_hat()[st_.M + 1] - ref)
            for dt in (0.1, 0.05, 0.025)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders


def test_propagation_preserves_reality(rng):
    st_ = L.random_band_limited(TS, _grid(), 3, rng)
    out = L.propagate(st_, TS, COS, 1.0, 0.05).states[-1]
    assert out.reality_defect() <= 1e-13 * np.abs(out.profiles).max()


def test_hierarchy_support_closure(hierarchy):
    h = hierarchy
    t = h.times[-1]
    for j in range(1, 4):
        sup = h.level(j, t).support()
        assert all(abs(k) <= j for k in sup)
    assert set(h.level(2, t).support()) <= {-2, 0, 2}
    assert set(h.level(1, t).support()) == {-1, 1}


def test_hierarchy_level_growth_exponents(hierarchy):
    h = hierarchy
    norms = h.level_norms()
    window = (2 / LAM0, 4 / LAM0)
    for j in range(1, 4):
        rate, _, _ = fit_exponential(h.times, norms[:, j - 1], window)
        assert abs(rate - j * LAM0) <= 0.05 * j * LAM0, (j, rate)


def test_first_level_matches_growing_solution(hierarchy):
    h = hierarchy
    t = 5.0 / LAM0 * 0.8
    t = h.times[np.searchsorted(h.times, t)]
    exact = L.SpectralState.from_eigenmode(MODE, h.M, h.v, t).profiles
    assert np.allclose(h.level(1, t).profiles, exact, rtol=0, atol=1e-6 * np.abs(exact).max())


def test_hierarchy_sign_flip_parity():
    kw = dict(K=3, t_end=1.5, dt=0.02, epsilon=1e-3, n_v=256, save_every=25)
    hp = L.build_hierarchy(MODE, TS, COS, **kw)
    hm = L.build_hierarchy(MODE.rescaled(-1.0), TS, COS, **kw)
    assert np.allclose(hm.profiles[:, 0], -hp.profiles[:, 0], atol=0)
    assert np.allclose(hm.profiles[:, 1], hp.profiles[:, 1], rtol=1e-13, atol=1e-300)
    assert np.allclose(hm.profiles[:, 2], -hp.profiles[:, 2], rtol=1e-13, atol=1e-300)


def test_propagated_first_level_converges_to_analytic():
    errs = []
    for dt in (0.02, 0.01, 0.005):
        kw = dict(K=1, t_end=3.0, dt=dt, epsilon=1e-3, n_v=512, save_every=10 ** 6)
        a = L.build_hierarchy(MODE, TS, COS, analytic_g1=True, **kw).profiles[-1, 0]
        b = L.build_hierarchy(MODE, TS, COS, analytic_g1=False, **kw).profiles[-1, 0]
        errs.append(np.linalg.norm(a - b) / np.linalg.norm(a))
    assert errs[-1] < 2e-4
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) >= 1.9)


def test_hierarchy_rejects_bad_order():
    with pytest.raises(ValueError):
        L.build_hierarchy(MODE, TS, COS, K=0, t_end=1.0, dt=0.1)


def test_fapp_assembly(hierarchy):
    h = hierarchy
    f0 = L.assemble_fapp(h, TS, 0.0, epsilon=0.0)
    assert np.array_equal(f0.mode(0), TS.eval(h.v).astype(complex))
    assert all(np.all(f0.mode(k) == 0) for k in range(1, h.M + 1))
    for t in (0.0, h.times[len(h.times) // 2], h.times[-1]):
        f = L.assemble_fapp(h, TS, t)
        assert abs(f.density_hat()[h.M] - np.trapezoid(TS.eval(h.v), h.v)) <= 1e-10
        grid = f.profiles.T @ np.exp(2j * np.pi * np.outer(f.modes, np.arange(32) / 32 - 0.5))
        assert np.max(np.abs(grid.imag)) <= 1e-12


def test_fapp_first_order_at_time_zero():
    h = L.build_hierarchy(MODE, TS, COS, K=1, t_end=0.2, dt=0.1, epsilon=0.01, n_v=256)
    f = L.assemble_fapp(h, TS, 0.0)
    expect = L.SpectralState.from_eigenmode(MODE, 1, h.v).profiles * 0.01
    expect[1] += TS.eval(h.v)
    assert np.allclose(f.profiles, expect, atol=1e-15)


def test_fapp_negativity_warning():
    h = L.build_hierarchy(MODE, TS, COS, K=1, t_end=0.2, dt=0.1, epsilon=2.0, n_v=256)
    with pytest.warns(L.NegativityWarning):
        L.assemble_fapp(h, TS, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        L.assemble_fapp(h, TS, 0.0, epsilon=0.5)


def test_residual_growth_and_epsilon_scaling(hierarchy):
    h = hierarchy
    ts = h.times[(h.times >= 2 / LAM0) & (h.times <= 4 / LAM0)]
    norms = [L.residual_Rapp(h, TS, COS, t)[1] for t in ts]
    rate, _, _ = fit_exponential(ts, norms, (ts[0], ts[-1]))
    assert abs(rate - 4 * LAM0) <= 0.05 * 4 * LAM0
    t = ts[len(ts) // 2]
    r1 = L.residual_Rapp(h, TS, COS, t, epsilon=1e-3)[1]
    r2 = L.residual_Rapp(h, TS, COS, t, epsilon=5e-4)[1]
    assert r2 / r1 == pytest.approx(2.0 ** -4, rel=0.10)


def test_first_order_residual_is_quadratic_in_epsilon():
    h = L.build_hierarchy(MODE, TS, COS, K=1, t_end=1.0, dt=0.05, epsilon=1e-2, n_v=256)
    _, r1 = L.residual_Rapp(h, TS, COS, 1.0)
    _, r2 = L.residual_Rapp(h, TS, COS, 1.0, epsilon=5e-3)
    assert r2 / r1 == pytest.approx(0.25, rel=1e-12)


def test_hierarchy_dump_load_roundtrip(hierarchy, tmp_path):
    path = tmp_path / "h.bin"
    hierarchy.dump(path)
    back = L.GrenierHierarchy.load(path)
    assert back.K == hierarchy.K and back.k0 == hierarchy.k0 and back.lam0 == hierarchy.lam0
    assert np.array_equal(back.profiles, hierarchy.profiles)
    assert np.allclose(back.v, hierarchy.v, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        hierarchy.level(1, hierarchy.times[-1] + 1.0)


def test_weighted_norm_examples():
    v = np.linspace(-2, 2, 401)
    assert L.weighted_norm(L.SpectralState.zeros(2, v)) == 0.0
    st_ = L.SpectralState.zeros(2, v)
    st_.profiles[2 + 1] = 1.0
    spec = L.NormSpec(n=2, m=1.0)
    expect = np.sqrt((1 + (2 * np.pi) ** 2) ** 2 * np.trapezoid(1 + v ** 2, v))
    assert L.weighted_norm(st_, spec) == pytest.approx(expect, rel=1e-14)
    direct = np.sqrt(sum((1 + (2 * np.pi) ** 2) ** 2 * 1 * (1 + x * x) * w
                         for x, w in zip(v, np.r_[0.5, np.ones(399), 0.5] * 0.01)))
    assert L.weighted_norm(st_, spec) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        L.NormSpec(v_order=2)


@given(seed=st.integers(0, 2 ** 31), n=st.integers(0, 3), m=st.floats(0, 3), v_order=st.sampled_from([0, 1]))
def test_weighted_norm_monotone_in_weights(seed, n, m, v_order):
    st_ = L.random_band_limited(TS, _grid(256), 3, np.random.default_rng(seed))
    base = L.weighted_norm(st_, L.NormSpec(n, v_order, m))
    assert base > 0
    assert L.weighted_norm(st_, L.NormSpec(n + 1, v_order, m)) >= base
    assert L.weighted_norm(st_, L.NormSpec(n, v_order, m + 0.5)) >= base
    assert L.weighted_norm(st_, L.NormSpec(n, 1, m)) >= L.weighted_norm(st_, L.NormSpec(n, 0, m))


def test_dv_derivative_fourth_order():
    errs = []
    for n in (101, 201, 401):
        v = np.linspace(-3, 3, n)
        errs.append(np.max(np.abs(L.dv_derivative(np.sin(2 * v), v[1] - v[0]) - 2 * np.cos(2 * v))))
    assert np.log2(errs[0] / errs[1]) > 3.8 and np.log2(errs[1] / errs[2]) > 3.8


@given(seed=st.integers(0, 2 ** 31))
def test_convolve_modes_matches_pointwise_product(seed):
    rng = np.random.default_rng(seed)
    Me, Md, nv = 2, 3, 5
    E_ = rng.normal(size=2 * Me + 1) + 1j * rng.normal(size=2 * Me + 1)
    D = rng.normal(size=(2 * Md + 1, nv)) + 1j * rng.normal(size=(2 * Md + 1, nv))
    Mo = Me + Md
    out = L.convolve_modes(E_, D, Mo)
    x = np.arange(32) / 32
    e = np.exp(2j * np.pi * np.outer(x, np.arange(-Me, Me + 1))) @ E_
    d = np.exp(2j * np.pi * np.outer(x, np.arange(-Md, Md + 1))) @ D
    prod = e[:, None] * d
    coeff = np.exp(-2j * np.pi * np.outer(np.arange(-Mo, Mo + 1), x)) @ prod / 32
    assert np.allclose(out, coeff, atol=1e-12)


def test_semigroup_envelope_small(rng):
    states = [L.random_band_limited(TS, _grid(512), 3, rng) for _ in range(3)]
    rep = L.semigroup_envelope(states, TS, COS, 1.5 * LAM0, t_end=6 / LAM0, dt=0.02,
                               t_min=1 / LAM0, t_fit=3 / LAM0)
    assert rep.violations == 0 and rep.max_excess <= 1.0


def test_records_and_jsonl(tmp_path):
    st_ = L.SpectralState.from_eigenmode(MODE, 1, _grid())
    traj = L.propagate(st_, TS, COS, 0.5, 0.1)
    recs = list(L.trajectory_records(traj))
    assert len(recs) == len(traj.times) and set(recs[0]) == {"t", "rho_abs", "norm"}
    L.write_jsonl(tmp_path / "a.jsonl", recs)
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == len(recs)


def test_fit_window():
    lo, hi = L.fit_window(1.0, 1e-3)
    assert lo == 2.0 and hi == 4.0
    lo, hi = L.fit_window(1.0, 0.05)
    assert hi == pytest.approx(np.log(2.0))
