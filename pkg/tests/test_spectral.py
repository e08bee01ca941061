import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as si

from meanfield import equilibria as E, potentials as P, spectral as S
from meanfield.linvlasov import SpectralState, apply_L

TS = E.two_stream(0.05, 0.5)
COS = P.cosine(1.0)


@pytest.fixture(scope="module")
def lam0():
    return S.find_real_growth_rate(TS, COS, 1)


def _real_branch(eq, pot, k, lam):
    """Independent quadrature of xi^2 Phi_k int v f' / (lam^2 + xi^2 v^2) - 1."""
    xi = 2 * np.pi * k
    g = lambda v: v * float(eq.deriv(v)) / (lam * lam + xi * xi * v * v)
    pts = sorted({0.0, eq.v0, -eq.v0, lam / xi, -lam / xi})
    val, _ = si.quad(g, -eq.v_max, eq.v_max, points=pts, limit=400, epsabs=1e-13, epsrel=1e-12)
    return xi * xi * float(pot.fourier_coefficient(k)) * val - 1.0


def _grid_zoom_root(fun, lo, hi, n=200, levels=6):
    """Bracket the last sign change on successively finer uniform grids."""
    for _ in range(levels):
        grid = np.linspace(lo, hi, n)
        vals = np.array([fun(x) for x in grid])
        idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        assert idx.size, "no sign change on the grid"
        i = idx[-1]
        lo, hi = grid[i], grid[i + 1]
    return 0.5 * (lo + hi)


def test_maxwellian_is_stable_with_expected_margin():
    pc = S.penrose_check(E.maxwellian(1.0), COS)
    assert not pc.unstable
    assert pc.margin == pytest.approx(-0.5 - 1.0, rel=1e-9)


def test_two_stream_is_unstable_at_first_mode():
    pc = S.penrose_check(TS, COS)
    assert pc.penrose_integral > 2
    assert pc.unstable and pc.k0 == 1
    assert pc.margin == pytest.approx(0.5 * pc.penrose_integral - 1)


def test_attractive_cosine_reports_no_positive_mode():
    pc = S.penrose_check(TS, P.cosine(-1.0))
    assert not pc.unstable and pc.margin == -np.inf
    assert pc.diagnostic


def test_penrose_tie_breaks_to_smallest_mode():
    pot = P.fourier_series([(1, 0.5), (2, 0.5), (3, 0.1)])
    assert S.penrose_check(TS, pot).k0 == 1
    pot = P.fourier_series([(1, 0.1), (2, 0.5)])
    assert S.penrose_check(TS, pot).k0 == 2


@pytest.mark.parametrize("v0", [0.1, 0.3, 0.5, 0.8])
@pytest.mark.parametrize("a", [0.3, 1.0, 3.0])
def test_penrose_verdict_independent_of_fourier_convention(v0, a):
    eq = E.two_stream(0.05, v0)
    pot = P.cosine(a)
    # 2pi-periodic bookkeeping: y = 2 pi x, coefficients over [0, 2pi), background density 1/(2pi)
    phi_2pi, _ = si.quad(lambda y: float(pot.value(y / (2 * np.pi))) * np.cos(y), 0, 2 * np.pi)
    verdict_2pi = phi_2pi / (2 * np.pi) * E.penrose_integral(eq) > 1
    assert S.penrose_check(eq, pot).unstable == verdict_2pi


def test_dispersion_tends_to_one_at_large_lambda():
    # D - 1 = Phi_k xi^2 (1 - 3 xi^2 <v^2> / lam^2) / lam^2 + O(lam^-6), xi = 2 pi k
    xi2 = (2 * np.pi) ** 2
    m2 = E.moment(TS, 2)
    for lam in (100.0, 300.0, 1000.0):
        lead = 0.5 * xi2 / lam ** 2 * (1 - 3 * xi2 * m2 / lam ** 2)
        assert S.dispersion(TS, COS, lam, 1) - 1 == pytest.approx(lead, rel=1e-4)
    assert abs(S.dispersion(TS, COS, 150.0, 1) - 1) < 1e-3


@given(lam=st.floats(0.01, 5.0))
def test_dispersion_real_on_real_axis(lam):
    assert abs(S.dispersion(TS, COS, lam, 1).imag) < 1e-10


def test_dispersion_rejects_lambda_below_floor():
    with pytest.raises(S.QuadratureError):
        S.dispersion(TS, COS, 1e-8, 1)


def test_growth_rate_is_a_root_and_matches_grid_scan(lam0):
    assert lam0 > 0
    assert abs(S.dispersion(TS, COS, lam0, 1)) <= 1e-10
    oracle = _grid_zoom_root(lambda x: _real_branch(TS, COS, 1, x), 0.05, 3.0)
    assert abs(lam0 - oracle) <= 1e-8


def test_real_branch_decreasing_so_root_is_maximal(lam0):
    lams = np.linspace(0.02, 4.0, 60)
    vals = [S.real_dispersion_lhs(TS, COS, x, 1) for x in lams]
    assert np.all(np.diff(vals) < 0)


def test_growth_rate_shrinks_toward_stability_boundary():
    # boundary: P(v0) = 2 for cosine(1); crossed between v0 = 0.32 and 0.33 at theta = 0.05
    v0s = np.linspace(0.5, 0.33, 7)
    lams = [S.find_real_growth_rate(E.two_stream(0.05, v0), COS, 1) for v0 in v0s]
    assert np.all(np.diff(lams) < 0)
    assert lams[-1] < 0.5 * lams[0]


def test_growth_rate_increases_with_amplitude():
    lams = [S.find_real_growth_rate(TS, P.cosine(a), 1) for a in (0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(lams) > 0)


def test_growth_rate_bracket_error_when_stable():
    with pytest.raises(S.BracketError):
        S.find_real_growth_rate(E.maxwellian(1.0), COS, 1)


def test_eigenfunction_zero_mass_finite_support_and_residual(lam0):
    mode = S.build_eigenfunction(TS, lam0, 1)
    x = np.arange(256) / 256 - 0.5
    v = TS.velocity_grid(2001)
    g = mode.evaluate(x[:, None], v[None, :])
    dv = v[1] - v[0]
    assert abs(np.sum(g) / 256 * dv) < 1e-12
    spec = np.fft.fft(g, axis=0)
    power = np.max(np.abs(spec), axis=1)
    assert set(np.nonzero(power > 1e-10 * power.max())[0]) == {1, 255}
    st = SpectralState.from_eigenmode(mode, 3, TS.velocity_grid(4001))
    r = apply_L(st, TS, COS).profiles - lam0 * st.profiles
    assert np.linalg.norm(r) / np.linalg.norm(st.profiles) <= 1e-6
    assert sorted(st.support(1e-300)) == [-1, 1]


def test_eigenfunction_matches_explicit_real_profile(lam0):
    mode = S.build_eigenfunction(TS, lam0, 1)
    xi = 2 * np.pi
    x = np.linspace(-0.5, 0.5, 17)[:, None]
    v = np.linspace(-1, 1, 33)[None, :]
    fp = TS.deriv(v)
    expect = (xi * v * fp * np.cos(xi * x) - lam0 * fp * np.sin(xi * x)) / (lam0 ** 2 + xi ** 2 * v ** 2)
    assert np.allclose(mode.evaluate(x, v), expect, atol=1e-13)


def test_normalizations(lam0):
    mode = S.build_eigenfunction(TS, lam0, 1)
    assert mode.normalized("envelope").envelope() == pytest.approx(1.0, rel=1e-12)
    assert 2 * abs(mode.normalized("density").density_hat()) == pytest.approx(1.0, rel=1e-12)
    assert mode.normalized("raw").scale == 1.0
    with pytest.raises(ValueError):
        mode.normalized("bogus")


def test_scan_empty_for_stable_maxwellian():
    assert S.scan_unstable_spectrum(E.maxwellian(1.0), COS, (0.05, 3.0, -2.0, 2.1)) == []


def test_scan_finds_real_root_and_nothing_beyond_it(lam0):
    roots = S.scan_unstable_spectrum(TS, COS, (0.05, 3.0, -2.0, 2.1))
    assert roots
    assert abs(roots[0].lam - lam0) < 1e-9
    assert all(r.lam.real <= lam0 + 1e-9 for r in roots)
    assert all(r.residual <= 1e-10 for r in roots)
    lams = {complex(round(r.lam.real, 8), round(r.lam.imag, 8)) for r in roots}
    assert lams == {z.conjugate() for z in lams}
    assert S.scan_unstable_spectrum(TS, COS, (lam0 + 0.05, 3.0, -2.0, 2.1)) == []


def test_scan_conjugate_closure_with_complex_roots():
    # a fast symmetric beam pair has complex-conjugate unstable roots at k = 1
    eq = E.two_stream(0.01, 0.5)
    pot = P.cosine(0.2)
    roots = S.scan_unstable_spectrum(eq, pot, (0.01, 3.0, -6.07, 6.13))
    lams = [r.lam for r in roots]
    for z in lams:
        assert min(abs(w - z.conjugate()) for w in lams) < 1e-8


def test_scan_rejects_region_below_floor():
    with pytest.raises(ValueError):
        S.scan_unstable_spectrum(TS, COS, (0.0, 1.0, -1.0, 1.0))


def test_growing_mode_pipeline(lam0):
    mode = S.growing_mode(TS, COS)
    assert mode.k0 == 1 and mode.lam == pytest.approx(lam0)
    with pytest.raises(S.BracketError):
        S.growing_mode(E.maxwellian(1.0), COS)
