"""Penrose classification, dispersion roots and the growing mode.

Wavenumbers are integers on the unit torus; the physical wavenumber is
xi = 2 pi k.  For even f_inf the dispersion function

    D(lam, k) = 1 - Phi_hat_k * int 2 pi i k f'(v) / (lam + 2 pi i k v) dv

satisfies D(lam, -k) = D(lam, k) and D(conj lam, k) = conj D(lam, k).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .equilibria import Equilibrium, penrose_integral, pole_rule
from .potentials import Potential
from .quadrature import QuadratureError

RE_FLOOR = 1e-6


class BracketError(RuntimeError):
    pass


class ContourError(RuntimeError):
    """|D| is (numerically) zero on a scan contour; shift the region."""


@dataclass(frozen=True)
class PenroseResult:
    unstable: bool
    margin: float
    k0: int
    penrose_integral: float
    diagnostic: str = ""


@dataclass(frozen=True)
class SpectralRoot:
    k: int
    lam: complex
    residual: float


@dataclass(frozen=True, eq=False)
class Eigenmode:
    """Growing mode supported on the Fourier modes +-k0.

    The real-valued mode is g(x, v) = 2 Re(g_hat(v) exp(2 pi i k0 x)) with

        g_hat(v) = scale * i f'(v) / (2 (lam + i xi v)),   xi = 2 pi k0,

    which for real lam and scale = 1 is the profile

        [xi v f' cos(xi x) - lam f' sin(xi x)] / (lam^2 + xi^2 v^2).
    """

    k0: int
    lam: complex
    eq: Equilibrium
    scale: complex = 1.0

    @property
    def xi(self) -> float:
        return 2.0 * np.pi * self.k0

    def profile(self, v):
        v = np.asarray(v, dtype=float)
        return self.scale * 1j * self.eq.deriv(v) / (2.0 * (self.lam + 1j * self.xi * v))

    def cos_part(self, v):
        """Coefficient of cos(xi x) in g(x, v)."""
        return 2.0 * self.profile(v).real

    def sin_part(self, v):
        """Coefficient of sin(xi x) in g(x, v)."""
        return -2.0 * self.profile(v).imag

    def evaluate(self, x, v):
        phase = np.exp(1j * self.xi * np.asarray(x, dtype=float))
        return 2.0 * (self.profile(v) * phase).real

    def density_hat(self, n_v: int = 4097) -> complex:
        """rho_hat at mode +k0, i.e. the integral of g_hat over v."""
        v = self.eq.velocity_grid(n_v)
        return complex(np.trapezoid(self.profile(v), v))

    def envelope(self, n_v: int = 40001) -> float:
        """B = sup_{x,v} |g(x, v)| / f_inf(v)."""
        v = self.eq.velocity_grid(n_v)
        f = self.eq.eval(v)
        ok = f > 1e-300
        return float(np.max(2.0 * np.abs(self.profile(v[ok])) / f[ok]))

    def rescaled(self, factor: complex) -> "Eigenmode":
        return Eigenmode(self.k0, self.lam, self.eq, self.scale * factor)

    def normalized(self, how: str = "envelope") -> "Eigenmode":
        """Unit envelope (sup |g|/f = 1), unit density amplitude, or the raw profile."""
        if how == "envelope":
            return self.rescaled(1.0 / self.envelope())
        if how == "density":
            return self.rescaled(1.0 / (2.0 * abs(self.density_hat())))
        if how == "raw":
            return Eigenmode(self.k0, self.lam, self.eq, 1.0)
        raise ValueError(f"unknown normalization {how!r}")


# -- Penrose ------------------------------------------------------------------

def penrose_check(eq: Equilibrium, pot: Potential, k_max: int = 64) -> PenroseResult:
    """Margin = max over {k : Phi_hat_k > 0} of Phi_hat_k * P - 1."""
    P = penrose_integral(eq)
    k_top = pot.k_cut if pot.k_cut is not None else k_max
    ks = np.arange(1, max(k_top, 1) + 1)
    phi = pot.fourier_coefficient(ks)
    pos = phi > 0
    if not np.any(pos):
        return PenroseResult(False, -np.inf, 0, P, "no Fourier mode with Phi_hat_k > 0")
    margins = phi[pos] * P - 1.0
    best = int(np.argmax(margins))  # argmax returns the first, i.e. smallest |k|
    margin = float(margins[best])
    return PenroseResult(margin > 0, margin, int(ks[pos][best]), P)


# -- dispersion function ------------------------------------------------------

def _rule(eq: Equilibrium, lam: complex, xi: float):
    center = -lam.imag / xi
    width = abs(lam.real / xi)
    return pole_rule(eq, center, width)


def dispersion(eq: Equilibrium, pot: Potential, lam, k: int, floor: float = RE_FLOOR) -> complex:
    lam = complex(lam)
    if lam.real < floor:
        raise QuadratureError(f"Re(lambda) = {lam.real:g} below the quadrature floor {floor:g}")
    if k == 0:
        return 1.0 + 0j
    xi = 2.0 * np.pi * k
    v, w = _rule(eq, lam, xi)
    integral = np.sum(w * 1j * xi * eq.deriv(v) / (lam + 1j * xi * v))
    return complex(1.0 - float(pot.fourier_coefficient(k)) * integral)


def dispersion_derivative(eq: Equilibrium, pot: Potential, lam, k: int) -> complex:
    lam = complex(lam)
    xi = 2.0 * np.pi * k
    v, w = _rule(eq, lam, xi)
    integral = np.sum(w * 1j * xi * eq.deriv(v) / (lam + 1j * xi * v) ** 2)
    return complex(float(pot.fourier_coefficient(k)) * integral)


def real_dispersion_lhs(eq: Equilibrium, pot: Potential, lam: float, k: int) -> float:
    """xi^2 Phi_hat_k int v f'(v) / (lam^2 + xi^2 v^2) dv, so D = 1 - lhs."""
    xi = 2.0 * np.pi * k
    v, w = pole_rule(eq, 0.0, lam / xi)
    return float(xi * xi * pot.fourier_coefficient(k)
                 * np.sum(w * v * eq.deriv(v) / (lam * lam + xi * xi * v * v)))


def find_real_growth_rate(eq: Equilibrium, pot: Potential, k0: int,
                          xtol: float = 1e-12, maxiter: int = 200) -> float:
    """Largest real root lam0 > 0 of D(lam, k0) by bracketing bisection."""
    if float(pot.fourier_coefficient(k0)) * penrose_integral(eq) <= 1.0:
        raise BracketError(f"Penrose margin at k = {k0} is not positive")
    g = lambda lam: real_dispersion_lhs(eq, pot, lam, k0) - 1.0
    hi = 1.0
    while g(hi) >= 0:
        hi *= 2.0
        if hi > 1e8:
            raise BracketError("no upper bracket for the growth rate")
    lo = 0.5 * hi
    while g(lo) <= 0:
        lo *= 0.5
        if lo < RE_FLOOR:
            raise BracketError("growth rate below the quadrature floor")
    lam0 = bisect(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=maxiter)
    grid = np.linspace(lam0 / 64, hi, 48)
    vals = np.array([g(x) for x in grid])
    if np.any(np.diff(vals) > 0):
        warnings.warn("real dispersion branch is not monotone; lam0 may not be maximal")
    return float(lam0)


def build_eigenfunction(eq: Equilibrium, lam0, k0: int) -> Eigenmode:
    return Eigenmode(int(k0), complex(lam0), eq)


def growing_mode(eq: Equilibrium, pot: Potential, k_max: int = 64) -> Eigenmode:
    """Penrose check, real root and the explicit growing profile in one go."""
    pc = penrose_check(eq, pot, k_max)
    if not pc.unstable:
        raise BracketError(f"equilibrium is Penrose stable (margin {pc.margin:.4g})")
    lam0 = find_real_growth_rate(eq, pot, pc.k0)
    return build_eigenfunction(eq, lam0, pc.k0)


# -- spectrum scan ------------------------------------------------------------

def _winding(fun, corners, max_depth: int = 16) -> int:
    """Winding number of fun around the closed polygon through ``corners``."""

    def arc(za, zb, fa, fb, depth):
        d = np.angle(fb / fa)
        if abs(d) <= np.pi / 6 or depth >= max_depth:
            return d
        zm = 0.5 * (za + zb)
        fm = fun(zm)
        return arc(za, zm, fa, fm, depth + 1) + arc(zm, zb, fm, fb, depth + 1)

    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        pts = a + np.linspace(0.0, 1.0, 17) * (b - a)
        vals = [fun(p) for p in pts]
        for i in range(len(pts) - 1):
            total += arc(pts[i], pts[i + 1], vals[i], vals[i + 1], 0)
    return int(round(total / (2 * np.pi)))


def _newton(fun, dfun, z0, tol=1e-12, maxiter=60):
    z = complex(z0)
    for _ in range(maxiter):
        try:
            step = fun(z) / dfun(z)
        except QuadratureError:
            return None
        z = z - step
        if abs(step) < tol * max(1.0, abs(z)):
            return z
    return None


def scan_unstable_spectrum(eq: Equilibrium, pot: Potential, region, k_list=None,
                           min_size: float = 1e-3, tol: float = 1e-10) -> list[SpectralRoot]:
    """All roots of D(., k) inside ``region = (re_min, re_max, im_min, im_max)``.

    The winding number of D along each cell boundary counts the roots; cells
    are split (off-centre, so that split lines avoid the real axis) until a
    single root remains, which Newton's method then polishes.
    """
    re_min, re_max, im_min, im_max = map(float, region)
    if re_min < RE_FLOOR:
        raise ValueError("region must lie in Re(lambda) >= floor")
    if k_list is None:
        top = pot.k_cut if pot.k_cut is not None else 8
        k_list = pot.positive_modes(max(top, 1))
    roots: list[SpectralRoot] = []
    for k in k_list:
        k = int(k)
        scale = max(abs(float(pot.fourier_coefficient(k))), 1e-300)

        def fun(z, k=k):
            d = dispersion(eq, pot, z, k)
            if abs(d) < 1e-12 * max(1.0, scale):
                raise ContourError(f"|D| ~ 0 on the contour at lambda = {z}")
            return d

        dfun = lambda z, k=k: dispersion_derivative(eq, pot, z, k)
        raw = lambda z, k=k: dispersion(eq, pot, z, k)
        found: list[complex] = []

        def visit(r0, r1, i0, i1, depth=0):
            corners = [complex(r0, i0), complex(r1, i0), complex(r1, i1), complex(r0, i1)]
            n = _winding(fun, corners)
            if n <= 0:
                return
            if n == 1 or max(r1 - r0, i1 - i0) < min_size or depth > 24:
                pad_r, pad_i = 1e-9 * (r1 - r0), 1e-9 * (i1 - i0)
                z = _newton(raw, dfun, complex(0.5 * (r0 + r1), 0.5 * (i0 + i1)))
                if (z is not None and r0 - pad_r <= z.real <= r1 + pad_r
                        and i0 - pad_i <= z.imag <= i1 + pad_i and abs(raw(z)) <= tol):
                    found.append(z)
                    if n == 1:
                        return
                if max(r1 - r0, i1 - i0) < min_size or depth > 24:
                    return
            rs = r0 + 0.4937 * (r1 - r0)
            is_ = i0 + 0.4873 * (i1 - i0)
            for a, b, c, d in ((r0, rs, i0, is_), (rs, r1, i0, is_),
                               (r0, rs, is_, i1), (rs, r1, is_, i1)):
                visit(a, b, c, d, depth + 1)

        visit(re_min, re_max, im_min, im_max)
        for z in found:
            if abs(z.imag) < 1e-10:
                z = complex(z.real, 0.0)
            if not any(abs(z - r.lam) < 1e-8 and r.k == k for r in roots):
                roots.append(SpectralRoot(k, z, abs(raw(z))))
    roots.sort(key=lambda r: (-r.lam.real, r.lam.imag, r.k))
    return roots
