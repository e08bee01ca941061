"""End-to-end acceptance checks; each test reports a one-line verdict in the
terminal summary (see conftest)."""
import itertools
import json
import time

import numpy as np
import pytest
import scipy.integrate as si
from scipy.optimize import brentq

from meanfield import equilibria as E, harness as H, nbody as N, potentials as P, spectral as S
from meanfield import linvlasov as L, transport as T
from meanfield.cli import main

TS = E.two_stream(0.05, 0.5)
COS = P.cosine(1.0)


@pytest.fixture(scope="module")
def lam0():
    return S.find_real_growth_rate(TS, COS, 1)


# -- 1. Penrose classification --------------------------------------------------------

def test_c1_penrose_classification(record_property):
    t0 = time.perf_counter()
    stable = S.penrose_check(E.maxwellian(1.0), COS)
    unstable = S.penrose_check(TS, COS)
    errs = []
    for theta in (0.25, 1.0, 4.0):
        eq = E.maxwellian(theta)
        pv, _ = si.quad(eq.deriv, -eq.v_max, eq.v_max, weight="cauchy", wvar=0.0,
                        epsabs=1e-13, epsrel=1e-12)
        got = E.penrose_integral(eq)
        errs.append(max(abs(got + 1 / theta), abs(got - pv)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"maxwellian unstable={stable.unstable}, two-stream unstable="
                              f"{unstable.unstable} k0={unstable.k0}, max |P+1/theta|={max(errs):.1e}, "
                              f"{elapsed:.2f}s")
    assert not stable.unstable
    assert unstable.unstable and unstable.k0 == 1
    assert max(errs) <= 1e-8
    assert elapsed < 1.0


# -- 2. dispersion root ------------------------------------------------------------------

def _lhs_grid(eq, pot, lams, k, n_quad=40001):
    """xi^2 Phi_k int v f'/(lam^2 + xi^2 v^2) for many real lam at once, on a
    plain uniform trapezoid grid (independent of the library's pole-adapted rule)."""
    xi = 2 * np.pi * k
    v = np.linspace(-eq.v_max, eq.v_max, n_quad)
    dv = v[1] - v[0]
    vfp = v * eq.deriv(v)
    out = np.empty(lams.size)
    for s in range(0, lams.size, 500):
        lam = lams[s:s + 500, None]
        out[s:s + 500] = np.sum(vfp / (lam ** 2 + (xi * v) ** 2), axis=1) * dv
    return xi * xi * float(pot.fourier_coefficient(k)) * out


def _lhs_quad(eq, pot, lam, k):
    xi = 2 * np.pi * k
    pts = sorted({0.0, eq.v0, -eq.v0, lam / xi, -lam / xi})
    val, _ = si.quad(lambda v: v * float(eq.deriv(v)) / (lam * lam + xi * xi * v * v),
                     -eq.v_max, eq.v_max, points=pts, limit=400, epsabs=1e-14, epsrel=1e-13)
    return xi * xi * float(pot.fourier_coefficient(k)) * val


def test_c2_dispersion_root(lam0, record_property):
    t0 = time.perf_counter()
    D = abs(S.dispersion(TS, COS, lam0, 1))
    grid = np.linspace(0.05, 3.0, 10_000)
    vals = _lhs_grid(TS, COS, grid, 1) - 1.0
    changes = np.nonzero(np.diff(np.sign(vals)))[0]
    i = changes[-1]
    oracle = brentq(lambda x: _lhs_quad(TS, COS, x, 1) - 1.0, grid[i], grid[i + 1], xtol=1e-14)
    mode = S.build_eigenfunction(TS, lam0, 1)
    st = L.SpectralState.from_eigenmode(mode, 2, TS.velocity_grid(4001))
    res = np.linalg.norm(L.apply_L(st, TS, COS).profiles - lam0 * st.profiles) / np.linalg.norm(st.profiles)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"lam0={lam0:.10f} |D|={D:.1e} grid-scan root={oracle:.10f} "
                              f"sign changes={changes.size} residual={res:.1e} {elapsed:.1f}s")
    assert D <= 1e-10
    assert changes.size == 1
    assert abs(lam0 - oracle) <= 1e-8
    assert res <= 1e-6
    assert elapsed < 10


# -- 3. linear growth ---------------------------------------------------------------------

def test_c3_linear_growth(lam0, record_property):
    t0 = time.perf_counter()
    mode = S.growing_mode(TS, COS)
    st = L.SpectralState.from_eigenmode(mode, 1, TS.velocity_grid(1024))
    traj = L.propagate(st, TS, COS, 5 / lam0, 0.01, save_every=5)
    rate, _, r2 = H.fit_exponential(traj.times, np.abs(traj.rho_hat(1)))
    rel = abs(rate - lam0) / lam0
    elapsed = time.perf_counter() - t0
    record_property("detail", f"fitted rate {rate:.6f} vs lam0 {lam0:.6f}, rel.err {rel:.1e}, "
                              f"R2 {r2:.6f}, {elapsed:.1f}s")
    assert rel <= 0.01
    assert elapsed < 60


# -- 4. hierarchy scaling ---------------------------------------------------------------

def test_c4_hierarchy_scaling(lam0, record_property):
    t0 = time.perf_counter()
    eps, K = 1e-3, 3
    mode = S.growing_mode(TS, COS).normalized("envelope")
    lo, hi = L.fit_window(lam0, eps)
    h = L.build_hierarchy(mode, TS, COS, K, hi, 0.01, eps, n_v=1024, save_every=5)
    norms = h.level_norms()
    ratios = [H.fit_exponential(h.times, norms[:, k - 1], (lo, hi))[0] / (k * lam0)
              for k in range(1, K + 1)]
    sel = h.times[(h.times >= lo) & (h.times <= hi)]
    r = [L.residual_Rapp(h, TS, COS, t)[1] for t in sel]
    ratios.append(H.fit_exponential(sel, r)[0] / ((K + 1) * lam0))
    elapsed = time.perf_counter() - t0
    record_property("detail", "slope/(k lam0) for g1,g2,g3,R_app = "
                    + ", ".join(f"{x:.4f}" for x in ratios) + f", {elapsed:.0f}s")
    assert all(abs(x - 1) <= 0.05 for x in ratios)
    assert elapsed < 300


# -- 5. semigroup envelope -----------------------------------------------------------------

def test_c5_semigroup_envelope(lam0, record_property):
    t0 = time.perf_counter()
    gen = np.random.default_rng(5)
    v = TS.velocity_grid(1024)
    states = [L.random_band_limited(TS, v, 3, gen) for _ in range(20)]
    rep = L.semigroup_envelope(states, TS, COS, 1.5 * lam0, t_end=10 / lam0, dt=0.01,
                               t_min=1 / lam0, t_fit=3 / lam0)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"C={rep.C:.3f}, violations={rep.violations}, "
                              f"max ratio/C on t>=1/lam0 = {rep.max_excess:.4f}, {elapsed:.0f}s")
    assert rep.violations == 0
    assert rep.max_excess <= 1.0
    assert elapsed < 300


# -- 6. force oracle and conservation --------------------------------------------------------

def test_c6_forces_energy_momentum(record_property):
    t0 = time.perf_counter()
    gen = np.random.default_rng(6)
    coul = P.coulomb1d()
    worst = 0.0
    for i in range(1000):
        n = (2, 3, 10, 1000)[i % 4]
        x = gen.uniform(-0.5, 0.5, n)
        if i % 8 == 3:
            x = np.floor(x * 16) / 16  # exact ties, still in [-1/2, 1/2)
        worst = max(worst, float(np.max(np.abs(N.forces_coulomb_fast(x) - N.forces_direct(x, coul)))))
    state = N.sample_initial(TS, None, 0.0, 10_000, 0)
    _, recs = N.run(state, COS, 20.0, 1e-3, [N.EnergyObserver(), N.MomentumObserver()], output_every=100)
    e = np.array([r["energy"] for r in recs])
    p = np.array([r["momentum"] for r in recs])
    drift = float(np.max(np.abs(e - e[0])) / abs(e[0]))
    pdrift = float(np.max(np.abs(p - p[0])))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |fast-direct|={worst:.1e}, HMF rel. energy drift={drift:.1e}, "
                              f"momentum drift={pdrift:.1e}, {elapsed:.0f}s")
    assert worst <= 1e-12
    assert recs[-1]["t"] == pytest.approx(20.0)
    assert drift <= 1e-6
    assert pdrift <= 1e-12
    assert elapsed < 300


# -- 7. transport oracle -------------------------------------------------------------------

def _brute_force(mu, nu, atoms):
    ia = np.repeat(np.arange(mu.n), np.rint(mu.w * atoms).astype(int))
    ib = np.repeat(np.arange(nu.n), np.rint(nu.w * atoms).astype(int))
    C = T.cost_matrix(mu, nu)[ia][:, ib]
    rows = np.arange(atoms)
    return min(C[rows, list(p)].sum() for p in itertools.permutations(rows)) / atoms


def _instance(gen, uniform):
    if uniform:
        n = int(gen.integers(1, 7))
        return (T.EmpiricalMeasure(gen.uniform(-0.5, 0.5, n), gen.normal(size=n)),
                T.EmpiricalMeasure(gen.uniform(-0.5, 0.5, n), gen.normal(size=n)), n)
    out = []
    for _ in range(2):
        n = int(gen.integers(1, 7))
        cuts = np.sort(gen.choice(np.arange(1, 7), n - 1, replace=False))
        w = np.diff(np.r_[0, cuts, 7]) / 7
        out.append(T.EmpiricalMeasure(gen.uniform(-0.5, 0.5, n), gen.normal(size=n), w))
    return out[0], out[1], 7


def test_c7_transport_oracle(record_property):
    t0 = time.perf_counter()
    gen = np.random.default_rng(7)
    worst, chain_bad = 0.0, 0
    for i in range(100):
        mu, nu, atoms = _instance(gen, uniform=i % 2 == 0)
        exact = T.w1_exact(mu, nu)[0]
        worst = max(worst, abs(exact - _brute_force(mu, nu, atoms)))
        ent = T.w1_entropic(mu, nu)
        lower = max([ent.lower] + [T.w1_dual_lower_bound(mu, nu, k) for k in (1, 2, 3)])
        if not (lower <= exact + 1e-10 and exact <= ent.upper + 1e-10):
            chain_bad += 1
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |exact-brute|={worst:.1e} over 100 instances, "
                              f"bound-chain violations={chain_bad}, {elapsed:.0f}s")
    assert worst <= 1e-9
    assert chain_bad == 0
    assert elapsed < 60


# -- 8. sampling rate -----------------------------------------------------------------------

@pytest.mark.slow
def test_c8_sampling_rate(tmp_path, capsys, record_property):
    t0 = time.perf_counter()
    status = main(["experiment", "sampling-rate", "--out", str(tmp_path)])
    rec = json.loads(capsys.readouterr().out.splitlines()[-1])
    elapsed = time.perf_counter() - t0
    record_property("detail", f"m={rec['m']} mean W1={[round(x, 5) for x in rec['mean']]} "
                              f"slope={rec['slope']:.3f} max rel. gap={rec['max_rel_gap']:.3f}, "
                              f"{elapsed / 60:.1f} min")
    assert status == 0
    assert rec["m"] == [100, 1000, 10000]
    assert -0.6 <= rec["slope"] <= -0.4
    assert elapsed < 1800


# -- 9. instability experiment ----------------------------------------------------------------

@pytest.mark.slow
def test_c9_instability_experiment(tmp_path, record_property):
    t0 = time.perf_counter()
    cfg = H.ExperimentConfig()
    rep = H.instability_experiment(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    fit = rep["fit"]
    growth = rep["growth_rate_rel_errors"]
    record_property("detail", f"fit={None if fit is None else {k: round(v, 4) for k, v in fit.items()}} "
                              f"predicted a={rep['predicted_slope']:.4f} "
                              f"slope rel.err={rep['slope_rel_error']}, "
                              f"control crossings={rep['control_crossings']}, "
                              f"growth-rate rel.errs={[round(g, 3) for g in growth]}, "
                              f"{elapsed / 60:.1f} min")
    assert fit is not None
    assert fit["r2"] >= 0.95
    assert rep["slope_rel_error"] <= 0.25
    assert rep["control_crossings"] == 0
    assert len(growth) == len(cfg.N_list) and max(growth) <= 0.10
    assert elapsed < 7200


# -- 10. Dobrushin inequality --------------------------------------------------------------------

def test_c10_dobrushin(record_property):
    t0 = time.perf_counter()
    cfg = H.ExperimentConfig()
    rep = H.dobrushin_check(cfg)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"C0={rep['C0']:.3f}, pairs={rep['pairs']}, N={rep['N']}, "
                              f"violations={len(rep['violations'])}, "
                              f"max fitted rate/C0={rep['max_rate_over_C0']:.3f}, {elapsed:.0f}s")
    assert rep["pairs"] == 10 and rep["N"] == 1000
    assert rep["C0"] == pytest.approx(2 * COS.hessian_sup())
    assert max(r[1] for r in rep["rows"]) == pytest.approx(2.0)
    assert rep["violations"] == []
    assert elapsed < 600
