"""Homogeneous equilibria f_inf(v): evaluation, Penrose integrand, moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .quadrature import QuadratureError, adaptive_gl, graded_breaks, panel_rule

KINDS = ("maxwellian", "two_stream", "tabulated")
DENSITY_FLOOR = 1e-16


class MomentDivergence(QuadratureError):
    """The velocity tail of a moment integral does not settle."""


def _gauss(v, theta):
    return np.exp(-0.5 * v * v / theta) / np.sqrt(2.0 * np.pi * theta)


def _gauss_cutoff(theta: float) -> float:
    # exp(-v^2/2θ)/sqrt(2πθ) = DENSITY_FLOOR
    arg = np.log(1.0 / DENSITY_FLOOR) - 0.5 * np.log(2.0 * np.pi * theta)
    return float(np.sqrt(2.0 * theta * max(arg, 1.0)))


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """A radial velocity profile f_inf with closed-form derivatives.

    ``theta`` is the temperature (velocity^2), ``v0`` the stream offset of a
    two_stream profile.  ``v_max`` defaults to the speed beyond which
    f_inf < 1e-16.
    """

    kind: str
    theta: float = 1.0
    v0: float = 0.0
    v_max: float = 0.0
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown equilibrium kind {self.kind!r}")
        if self.kind != "tabulated":
            if self.theta <= 0:
                raise ValueError("theta must be positive")
            if self.v0 < 0:
                raise ValueError("v0 must be non-negative")
            if self.v_max <= 0:
                object.__setattr__(self, "v_max", self.v0 + _gauss_cutoff(self.theta))
        else:
            v, f = self.table
            spline = CubicSpline(v, f, bc_type="clamped")
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "_dspline", spline.derivative())
            object.__setattr__(self, "_ddspline", spline.derivative(2))
            if self.v_max <= 0:
                object.__setattr__(self, "v_max", float(min(-v[0], v[-1])))

    # -- pointwise evaluation -------------------------------------------------
    def __call__(self, v):
        return self.eval(v)

    def eval(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "maxwellian":
            return _gauss(v, self.theta)
        if self.kind == "two_stream":
            return 0.5 * (_gauss(v - self.v0, self.theta) + _gauss(v + self.v0, self.theta))
        return self._from_table(self._spline, v)

    def deriv(self, v):
        v = np.asarray(v, dtype=float)
        th = self.theta
        if self.kind == "maxwellian":
            return -v / th * _gauss(v, th)
        if self.kind == "two_stream":
            a, b = v - self.v0, v + self.v0
            return -0.5 * (a * _gauss(a, th) + b * _gauss(b, th)) / th
        return self._from_table(self._dspline, v)

    def second_deriv(self, v):
        v = np.asarray(v, dtype=float)
        th = self.theta
        if self.kind == "maxwellian":
            return (v * v / th - 1.0) / th * _gauss(v, th)
        if self.kind == "two_stream":
            a, b = v - self.v0, v + self.v0
            return 0.5 * ((a * a / th - 1.0) * _gauss(a, th)
                          + (b * b / th - 1.0) * _gauss(b, th)) / th
        return self._from_table(self._ddspline, v)

    def _from_table(self, spline, v):
        lo, hi = self.table[0][0], self.table[0][-1]
        out = spline(np.clip(v, lo, hi))
        return np.where((v < lo) | (v > hi), 0.0, out)

    # -- sampling -------------------------------------------------------------
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` velocities distributed according to f_inf."""
        if self.kind == "maxwellian":
            return rng.normal(0.0, np.sqrt(self.theta), n)
        if self.kind == "two_stream":
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return sign * self.v0 + rng.normal(0.0, np.sqrt(self.theta), n)
        grid = np.linspace(self.table[0][0], self.table[0][-1], 20001)
        dens = np.maximum(self.eval(grid), 0.0)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        return np.interp(rng.random(n), cdf, grid)

    def cdf(self, v):
        from scipy.special import ndtr
        v = np.asarray(v, dtype=float)
        s = np.sqrt(self.theta)
        if self.kind == "maxwellian":
            return ndtr(v / s)
        if self.kind == "two_stream":
            return 0.5 * (ndtr((v - self.v0) / s) + ndtr((v + self.v0) / s))
        raise NotImplementedError("cdf is only available in closed form for built-in kinds")

    def velocity_grid(self, n_v: int) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, n_v)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "v_max": self.v_max}
        if self.kind != "tabulated":
            d.update(theta=self.theta, v0=self.v0)
        return d


def maxwellian(theta: float = 1.0, v_max: float = 0.0) -> Equilibrium:
    return Equilibrium("maxwellian", theta=theta, v_max=v_max)


def two_stream(theta: float, v0: float, v_max: float = 0.0) -> Equilibrium:
    return Equilibrium("two_stream", theta=theta, v0=v0, v_max=v_max)


def tabulated(v, f) -> Equilibrium:
    v = np.asarray(v, dtype=float)
    f = np.asarray(f, dtype=float)
    if v.ndim != 1 or v.shape != f.shape or len(v) < 4:
        raise ValueError("tabulated profile needs matching 1-D arrays with >= 4 nodes")
    if np.any(np.diff(v) <= 0):
        raise ValueError("tabulated velocities must be strictly increasing")
    return Equilibrium("tabulated", table=(v, f))


def load_tabulated(path) -> Equilibrium:
    """Read a two-column (v, f) text file."""
    data = np.loadtxt(path, ndmin=2)
    return tabulated(data[:, 0], data[:, 1])


def from_config(cfg: dict) -> Equilibrium:
    kind = cfg.get("kind", "maxwellian")
    if kind == "tabulated":
        return load_tabulated(cfg["file"])
    return Equilibrium(kind, theta=float(cfg.get("theta", 1.0)),
                       v0=float(cfg.get("v0", 0.0)), v_max=float(cfg.get("v_max", 0.0)))


# -- integrals ----------------------------------------------------------------

def _breaks(eq: Equilibrium, lo: float, hi: float) -> np.ndarray:
    """Panel breakpoints resolving the bumps of f_inf."""
    scale = np.sqrt(eq.theta) if eq.kind != "tabulated" else (hi - lo) / 64
    pts = [np.linspace(lo, hi, max(int((hi - lo) / (0.5 * scale)), 8) + 1)]
    if eq.kind == "two_stream":
        pts.append([c for c in (-eq.v0, eq.v0) if lo < c < hi])
    if lo < 0.0 < hi:
        pts.append([0.0])
    return np.unique(np.concatenate(pts))


def integrate(eq: Equilibrium, func, tol: float = 1e-13) -> float:
    """Adaptive integral of func(v) over [-v_max, v_max]."""
    V = eq.v_max
    return adaptive_gl(func, -V, V, tol=tol, breaks=_breaks(eq, -V, V))


def normalization(eq: Equilibrium) -> float:
    return integrate(eq, eq.eval)


def penrose_integral(eq: Equilibrium, tol: float = 1e-12) -> float:
    """Principal value of the integral of (f(v) - f(0)) / v^2 over the line.

    Integration by parts turns it into the regular integral of f'(v)/v
    (f' is odd, so the integrand extends smoothly through v = 0 with value
    f''(0)).  The tail beyond v_max contributes -2 f(0) / v_max from the
    subtracted constant, which the regular form already contains.
    """
    V = eq.v_max
    if abs(float(eq.deriv(0.0))) > 1e-10 * max(abs(float(eq.second_deriv(0.0))), 1.0):
        raise QuadratureError("f_inf'(0) != 0: the Penrose integrand is singular at v = 0")
    f2 = float(eq.second_deriv(0.0))

    def integrand(v):
        small = np.abs(v) < 1e-8
        safe = np.where(small, 1.0, v)
        return np.where(small, f2, eq.deriv(v) / safe)

    # even integrand: integrate on [0, V] and double
    half = adaptive_gl(integrand, 0.0, V, tol=0.5 * tol, breaks=_breaks(eq, 0.0, V))
    return 2.0 * half


def moment(eq: Equilibrium, q: float, tol: float = 1e-12) -> float:
    """Integral of |v|^q f_inf(v) dv."""
    if q < 0:
        raise ValueError("moment order must be non-negative")
    inner = integrate(eq, lambda v: np.abs(v) ** q * eq.eval(v), tol=tol)
    # tail check: the shell [V, 2V] must be negligible for the moment to exist
    V = eq.v_max
    if eq.kind != "tabulated":
        tail = 2.0 * adaptive_gl(lambda v: v ** q * eq.eval(v), V, 2 * V, tol=tol)
        if tail > max(1e-10 * abs(inner), 1e-14):
            raise MomentDivergence(f"moment of order {q} has tail mass {tail:.3e}")
    return inner


def ratio_bound(eq: Equilibrium, n: int = 20001) -> float:
    """sup |f'(v)| / ((1+|v|) f(v)) sampled on [-v_max, v_max]."""
    v = eq.velocity_grid(n)
    f = eq.eval(v)
    ok = f > 0
    return float(np.max(np.abs(eq.deriv(v[ok])) / ((1 + np.abs(v[ok])) * f[ok])))


def dense_rule(eq: Equilibrium, n_panels: int = 256, n: int = 16):
    """A fixed composite rule on [-v_max, v_max] (for vectorized integrals)."""
    return panel_rule(np.linspace(-eq.v_max, eq.v_max, n_panels + 1), n)


def pole_rule(eq: Equilibrium, center: float, width: float, n: int = 20):
    """Composite rule refined around ``center`` down to ``width``; used for
    kernels 1/(v - p) with a complex pole p at distance ``width`` from the
    real axis."""
    scale = np.sqrt(eq.theta) if eq.kind != "tabulated" else eq.v_max / 32
    coarse = min(0.25 * scale, eq.v_max / 16)
    br = graded_breaks(-eq.v_max, eq.v_max, center, max(width, 1e-12), coarse)
    extra = [c for c in (-eq.v0, eq.v0, 0.0) if -eq.v_max < c < eq.v_max]
    br = np.unique(np.concatenate([br, extra]))
    return panel_rule(br, n)
