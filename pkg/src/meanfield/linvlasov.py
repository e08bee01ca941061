"""Linearized Vlasov dynamics around f_inf, spectral in x and gridded in v.

A state holds complex velocity profiles g_k(v) for the Fourier modes
k = -M..M of a real function g(x, v) = sum_k g_k(v) exp(2 pi i k x).
The linear operator is

    (L g)_k = -2 pi i k v g_k - E_k[g] f_inf'(v),   E_k = -2 pi i k Phi_hat_k rho_k,

and time stepping removes the free-streaming term exactly with the factor
exp(-2 pi i k v t); the field and any forcing go through an explicit
midpoint rule.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .equilibria import Equilibrium
from .potentials import Potential
from .spectral import Eigenmode

EPS0 = 0.1


class PropagationError(RuntimeError):
    pass


class NegativityWarning(UserWarning):
    pass


# -- states -------------------------------------------------------------------

@dataclass
class SpectralState:
    v: np.ndarray
    profiles: np.ndarray  # shape (2M+1, n_v); row i holds mode i - M
    t: float = 0.0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.profiles = np.asarray(self.profiles, dtype=complex)
        if self.profiles.ndim != 2 or self.profiles.shape[0] % 2 != 1:
            raise ValueError("profiles must have shape (2M+1, n_v)")
        if self.profiles.shape[1] != self.v.size:
            raise ValueError("profile length does not match the velocity grid")

    @classmethod
    def zeros(cls, M: int, v, t: float = 0.0) -> "SpectralState":
        v = np.asarray(v, dtype=float)
        return cls(v, np.zeros((2 * M + 1, v.size), dtype=complex), t)

    @classmethod
    def from_eigenmode(cls, mode: Eigenmode, M: int, v, t: float = 0.0) -> "SpectralState":
        """The real growing solution Re(e^{lam t} h) with h the eigenmode."""
        if mode.k0 > M:
            raise ValueError(f"mode budget M = {M} is below k0 = {mode.k0}")
        st = cls.zeros(M, v, t)
        prof = np.exp(mode.lam * t) * mode.profile(st.v)
        st.profiles[M + mode.k0] = prof
        st.profiles[M - mode.k0] = np.conj(prof)
        return st

    @property
    def M(self) -> int:
        return (self.profiles.shape[0] - 1) // 2

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    @property
    def dv(self) -> float:
        return float(self.v[1] - self.v[0])

    def mode(self, k: int) -> np.ndarray:
        return self.profiles[self.M + k]

    def density_hat(self) -> np.ndarray:
        """rho_k for every mode (trapezoid rule in v)."""
        return np.trapezoid(self.profiles, self.v, axis=1)

    def reality_defect(self) -> float:
        return float(np.max(np.abs(self.profiles - np.conj(self.profiles[::-1])), initial=0.0))

    def support(self, tol: float = 0.0) -> list[int]:
        amp = np.max(np.abs(self.profiles), axis=1)
        return [int(k) for k in self.modes[amp > tol]]

    def copy(self) -> "SpectralState":
        return SpectralState(self.v.copy(), self.profiles.copy(), self.t)

    def padded(self, M: int) -> "SpectralState":
        if M < self.M:
            raise ValueError("cannot pad to a smaller mode budget")
        out = SpectralState.zeros(M, self.v, self.t)
        out.profiles[M - self.M:M + self.M + 1] = self.profiles
        return out

    def on_grid(self, x) -> np.ndarray:
        """Real values g(x_i, v_j) as an array of shape (len(x), n_v)."""
        x = np.asarray(x, dtype=float)
        phase = np.exp(2j * np.pi * np.outer(x, self.modes))
        return (phase @ self.profiles).real

    def __add__(self, other: "SpectralState") -> "SpectralState":
        M = max(self.M, other.M)
        a, b = self.padded(M), other.padded(M)
        return SpectralState(self.v, a.profiles + b.profiles, self.t)

    def scaled(self, c: float) -> "SpectralState":
        return SpectralState(self.v, c * self.profiles, self.t)


@dataclass(frozen=True)
class NormSpec:
    """Weights (1 + (2 pi k)^2)^n <v>^(2m), optionally adding |d_v g_k|^2."""

    n: int = 0
    v_order: int = 0
    m: float = 0.0

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ValueError("norm orders must be non-negative")
        if self.v_order not in (0, 1):
            raise ValueError("v_order must be 0 or 1")


def weighted_norm(state: SpectralState, spec: NormSpec = NormSpec()) -> float:
    k = state.modes
    kw = (1.0 + (2 * np.pi * k) ** 2) ** spec.n
    vw = (1.0 + state.v ** 2) ** spec.m
    dens = np.abs(state.profiles) ** 2
    if spec.v_order:
        dens = dens + np.abs(dv_derivative(state.profiles, state.dv)) ** 2
    per_mode = np.trapezoid(dens * vw, state.v, axis=1)
    return float(np.sqrt(np.sum(kw * per_mode)))


# -- building blocks ----------------------------------------------------------

def dv_derivative(g: np.ndarray, dv: float) -> np.ndarray:
    """Fourth-order finite difference along the last axis."""
    g = np.asarray(g)
    out = np.empty_like(g)
    out[..., 2:-2] = (g[..., :-4] - 8 * g[..., 1:-3] + 8 * g[..., 3:-1] - g[..., 4:]) / 12.0
    out[..., 0] = (-25 * g[..., 0] + 48 * g[..., 1] - 36 * g[..., 2] + 16 * g[..., 3] - 3 * g[..., 4]) / 12.0
    out[..., 1] = (-3 * g[..., 0] - 10 * g[..., 1] + 18 * g[..., 2] - 6 * g[..., 3] + g[..., 4]) / 12.0
    out[..., -1] = (25 * g[..., -1] - 48 * g[..., -2] + 36 * g[..., -3] - 16 * g[..., -4] + 3 * g[..., -5]) / 12.0
    out[..., -2] = (3 * g[..., -1] + 10 * g[..., -2] - 18 * g[..., -3] + 6 * g[..., -4] - g[..., -5]) / 12.0
    return out / dv


def field_modes(profiles: np.ndarray, v: np.ndarray, pot: Potential) -> np.ndarray:
    M = (profiles.shape[-2] - 1) // 2
    rho = np.trapezoid(profiles, v, axis=-1)
    return pot.field_from_density(rho, np.arange(-M, M + 1))


def convolve_modes(E: np.ndarray, D: np.ndarray, M_out: int | None = None) -> np.ndarray:
    """Fourier coefficients of E(x) * D(x, v), truncated to |k| <= M_out.

    ``E`` holds scalar coefficients for modes -Me..Me and ``D`` profiles for
    modes -Md..Md.
    """
    Me = (E.shape[0] - 1) // 2
    Md = (D.shape[0] - 1) // 2
    if M_out is None:
        M_out = Md
    out = np.zeros((2 * M_out + 1, D.shape[1]), dtype=complex)
    for ip in np.flatnonzero(E):
        p = ip - Me
        lo, hi = max(-M_out, p - Md), min(M_out, p + Md)
        if lo > hi:
            continue
        out[lo + M_out:hi + M_out + 1] += E[ip] * D[lo - p + Md:hi - p + Md + 1]
    return out


def apply_L(state: SpectralState, eq: Equilibrium, pot: Potential, fprime=None) -> SpectralState:
    fp = eq.deriv(state.v) if fprime is None else np.asarray(fprime, dtype=float)
    xi = 2 * np.pi * state.modes[:, None]
    E = field_modes(state.profiles, state.v, pot)
    out = -1j * xi * state.v[None, :] * state.profiles - E[:, None] * fp[None, :]
    return SpectralState(state.v, out, state.t)


def velocity_grid(eq: Equilibrium, n_v: int = 1024) -> np.ndarray:
    return eq.velocity_grid(n_v)


# -- time stepping ------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    states: list[SpectralState]

    def rho_hat(self, k: int) -> np.ndarray:
        return np.array([s.density_hat()[s.M + k] for s in self.states])

    def norms(self, spec: NormSpec = NormSpec()) -> np.ndarray:
        return np.array([weighted_norm(s, spec) for s in self.states])


class _Stepper:
    """Integrating-factor midpoint step for dg/dt = L g + F for stacked levels."""

    def __init__(self, v, M, dt, fprime, pot):
        self.v, self.M, self.dt = v, M, dt
        self.fp = fprime
        self.pot = pot
        xi = 2 * np.pi * np.arange(-M, M + 1)[:, None]
        self.half = np.exp(-0.5j * xi * v[None, :] * dt)
        self.full = np.exp(-1j * xi * v[None, :] * dt)

    def field_term(self, g):
        E = field_modes(g, self.v, self.pot)
        return -E[..., None] * self.fp

    def step(self, g, t, rhs):
        """rhs(t, g) returns the non-streaming part of the vector field."""
        dt = self.dt
        k1 = rhs(t, g)
        g_half = self.half * (g + 0.5 * dt * k1)
        k2 = rhs(t + 0.5 * dt, g_half)
        return self.full * g + dt * self.half * k2


def _steps(t_end: float, dt: float) -> tuple[int, float]:
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    n = int(np.ceil(t_end / dt - 1e-9))
    return n, (t_end / n if n else dt)


def propagate(state: SpectralState, eq: Equilibrium, pot: Potential, t_end: float, dt: float,
              forcing=None, save_every: int = 1, fprime=None,
              mass_tol: float = 1e-8) -> Trajectory:
    """Solve (d/dt - L) g = forcing(t) from ``state`` until ``t_end``.

    ``forcing`` is None or a callable t -> profiles array (or SpectralState)
    on the same mode budget.  ``dt`` is shrunk so that it divides the span.
    """
    n, dt = _steps(t_end - state.t, dt)
    fp = eq.deriv(state.v) if fprime is None else np.asarray(fprime, dtype=float)
    st = _Stepper(state.v, state.M, dt, fp, pot)
    M = state.M

    def force(t):
        if forcing is None:
            return 0.0
        f = forcing(t)
        return f.profiles if isinstance(f, SpectralState) else np.asarray(f)

    def rhs(t, g):
        return st.field_term(g) + force(t)

    g = state.profiles.copy()
    t0 = state.t
    mass0 = np.trapezoid(g[M], state.v)
    expected = mass0
    times, states = [t0], [state.copy()]
    for i in range(n):
        t = t0 + i * dt
        if forcing is not None:
            # the midpoint rule adds dt * F_0(t + dt/2) to mode 0
            fm = force(t + 0.5 * dt)
            if np.ndim(fm):
                expected = expected + dt * np.trapezoid(fm[M], state.v)
        g = st.step(g, t, rhs)
        t_new = t0 + (i + 1) * dt
        drift = abs(np.trapezoid(g[M], state.v) - expected)
        if drift > mass_tol * max(t_new - t0, 1.0) * max(1.0, abs(mass0)):
            raise PropagationError(f"mode-0 mass drifted by {drift:.3e} at t = {t_new:.4g}")
        if (i + 1) % save_every == 0 or i == n - 1:
            times.append(t_new)
            states.append(SpectralState(state.v, g.copy(), t_new))
    return Trajectory(np.array(times), states)


# -- semigroup growth envelope --------------------------------------------------

def random_band_limited(eq: Equilibrium, v, M: int, rng: np.random.Generator,
                        bumps: int = 3) -> SpectralState:
    """Random real state on modes |k| <= M: a few Gaussian bumps per mode,
    each damped by sqrt(f_inf) so the profile decays with the equilibrium."""
    st = SpectralState.zeros(M, v)
    damp = np.sqrt(eq.eval(st.v) / eq.eval(st.v).max())
    for k in range(1, M + 1):
        prof = np.zeros(st.v.size, dtype=complex)
        for _ in range(bumps):
            c = rng.uniform(st.v[0], st.v[-1]) * 0.5
            w = rng.uniform(0.05, 0.5)
            amp = rng.normal() + 1j * rng.normal()
            prof += amp * np.exp(-0.5 * ((st.v - c) / w) ** 2)
        st.profiles[M + k] = prof * damp
        st.profiles[M - k] = np.conj(st.profiles[M + k])
    return st


@dataclass
class EnvelopeReport:
    C: float
    rate: float
    max_excess: float  # max over samples after the fit window of ratio / C
    violations: int
    ratios: list


def semigroup_envelope(states, eq: Equilibrium, pot: Potential, rate: float, t_end: float,
                       dt: float, t_min: float, t_fit: float, spec: NormSpec = NormSpec(),
                       save_every: int = 10) -> EnvelopeReport:
    """Fit one C from ||e^{Lt} h|| / (e^{rate t} ||h||) on [t_min, t_fit] over
    all states, then count samples on [t_min, t_end] that exceed C."""
    ratios = []
    for h in states:
        traj = propagate(h, eq, pot, t_end, dt, save_every=save_every)
        r = traj.norms(spec) / (np.exp(rate * traj.times) * weighted_norm(h, spec))
        ratios.append((traj.times, r))
    fit = [r[(t >= t_min) & (t <= t_fit)] for t, r in ratios]
    C = float(max(x.max() for x in fit))
    after = np.concatenate([r[t >= t_min] for t, r in ratios])
    return EnvelopeReport(C, rate, float(after.max() / C), int(np.sum(after > C * (1 + 1e-12))),
                          [r.tolist() for _, r in ratios])


# -- approximate-solution hierarchy--------------------------------------------------------

@dataclass
class GrenierHierarchy:
    K: int
    epsilon: float
    lam0: complex
    k0: int
    v: np.ndarray
    times: np.ndarray
    profiles: np.ndarray  # (n_times, K, 2M+1, n_v); index j-1 holds g_j
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return (self.profiles.shape[2] - 1) // 2

    def _index(self, t: float):
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and abs(self.times[i] - t) <= 1e-9 * max(1.0, abs(t)):
            return i, i, 0.0
        if i > 0 and abs(self.times[i - 1] - t) <= 1e-9 * max(1.0, abs(t)):
            return i - 1, i - 1, 0.0
        if t < self.times[0] or t > self.times[-1] or i == 0:
            raise ValueError(f"t = {t} outside the stored range [{self.times[0]}, {self.times[-1]}]")
        w = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1])
        return i - 1, i, w

    def level(self, j: int, t: float) -> SpectralState:
        if not 1 <= j <= self.K:
            raise ValueError(f"level {j} outside 1..{self.K}")
        a, b, w = self._index(t)
        prof = (1 - w) * self.profiles[a, j - 1] + w * self.profiles[b, j - 1]
        return SpectralState(self.v, prof, t)

    def level_norms(self, spec: NormSpec = NormSpec()) -> np.ndarray:
        """Array (n_times, K) of weighted norms of g_1..g_K."""
        return np.array([[weighted_norm(SpectralState(self.v, p, t), spec) for p in row]
                         for t, row in zip(self.times, self.profiles)])

    def dump(self, path) -> None:
        header = {"kind": "grenier_hierarchy", "K": self.K, "epsilon": self.epsilon,
                  "lam0": [self.lam0.real, self.lam0.imag], "k0": self.k0,
                  "v_max": float(self.v[-1]), "n_v": int(self.v.size),
                  "modes": list(range(-self.M, self.M + 1)), **self.meta}
        binio.dump(path, header, {"times": self.times, "profiles": self.profiles})

    @classmethod
    def load(cls, path) -> "GrenierHierarchy":
        h, arr = binio.load(path)
        v = np.linspace(-h["v_max"], h["v_max"], h["n_v"])
        meta = {k: h[k] for k in h if k not in
                ("kind", "K", "epsilon", "lam0", "k0", "v_max", "n_v", "modes", "arrays")}
        return cls(h["K"], h["epsilon"], complex(*h["lam0"]), h["k0"], v,
                   arr["times"], arr["profiles"], meta)


def _forcing(levels: np.ndarray, k: int, v, pot, M: int) -> np.ndarray:
    """-sum_{j=1}^{k-1} E[g_{k-j}] d_v g_j for level k (1-based)."""
    dv = float(v[1] - v[0])
    out = np.zeros(levels.shape[1:], dtype=complex)
    for j in range(1, k):
        E = field_modes(levels[k - j - 1], v, pot)
        out -= convolve_modes(E, dv_derivative(levels[j - 1], dv), M)
    return out


def build_hierarchy(mode: Eigenmode, eq: Equilibrium, pot: Potential, K: int, t_end: float,
                    dt: float, epsilon: float = 1e-3, n_v: int = 1024,
                    save_every: int = 1, analytic_g1: bool = True) -> GrenierHierarchy:
    """Profiles g_1..g_K of f_app = f_inf + sum_k eps^k g_k on [0, t_end].

    g_1 is the real growing solution Re(e^{lam t} h) (exact in time when
    ``analytic_g1``); g_k for k >= 2 start from zero and are driven by the
    quadratic forcing of lower levels.  All levels advance together, so the
    forcing is evaluated at the same stage times as the field.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    M = K * mode.k0
    v = eq.velocity_grid(n_v)
    n, dt = _steps(t_end, dt)
    fp = eq.deriv(v)
    st = _Stepper(v, M, dt, fp, pot)

    def exact_g1(t):
        return SpectralState.from_eigenmode(mode, M, v, t).profiles

    def rhs(t, G):
        if analytic_g1:
            G = G.copy()
            G[0] = exact_g1(t)
        out = st.field_term(G)
        for k in range(2, K + 1):
            out[k - 1] += _forcing(G, k, v, pot, M)
        return out

    G = np.zeros((K, 2 * M + 1, v.size), dtype=complex)
    G[0] = exact_g1(0.0)
    times, saved = [0.0], [G.copy()]
    for i in range(n):
        G = st.step(G, i * dt, rhs)
        t_new = (i + 1) * dt
        if analytic_g1:
            G[0] = exact_g1(t_new)
        if (i + 1) % save_every == 0 or i == n - 1:
            times.append(t_new)
            saved.append(G.copy())
    return GrenierHierarchy(K, float(epsilon), complex(mode.lam), mode.k0, v,
                            np.array(times), np.array(saved),
                            {"dt": dt, "analytic_g1": analytic_g1})


def assemble_fapp(h: GrenierHierarchy, eq: Equilibrium, t: float, epsilon: float | None = None,
                  n_x: int = 64) -> SpectralState:
    """f_inf + sum_k eps^k g_k(t) as a state whose mode 0 carries f_inf."""
    eps = h.epsilon if epsilon is None else epsilon
    prof = np.zeros(h.profiles.shape[2:], dtype=complex)
    for j in range(1, h.K + 1):
        prof += eps ** j * h.level(j, t).profiles
    prof[h.M] += eq.eval(h.v)
    out = SpectralState(h.v, prof, t)
    if n_x:
        grid = out.on_grid(np.arange(n_x) / n_x - 0.5)
        low = float(grid.min())
        if low < 0:
            warnings.warn(f"f_app has negative values (min {low:.3e}) at t = {t:.4g}",
                          NegativityWarning)
    return out


def residual_Rapp(h: GrenierHierarchy, eq: Equilibrium, pot: Potential, t: float,
                  spec: NormSpec = NormSpec(), epsilon: float | None = None):
    """R_app = -sum_{j, l <= K, j + l >= K+1} eps^(j+l) E[g_j] d_v g_l and its norm."""
    eps = h.epsilon if epsilon is None else epsilon
    M_out = 2 * h.M
    dv = float(h.v[1] - h.v[0])
    g = [h.level(j, t).profiles for j in range(1, h.K + 1)]
    E = [field_modes(p, h.v, pot) for p in g]
    D = [dv_derivative(p, dv) for p in g]
    R = np.zeros((2 * M_out + 1, h.v.size), dtype=complex)
    for j in range(1, h.K + 1):
        for l in range(max(1, h.K + 1 - j), h.K + 1):
            R -= eps ** (j + l) * convolve_modes(E[j - 1], D[l - 1], M_out)
    state = SpectralState(h.v, R, t)
    return state, weighted_norm(state, spec)


def fit_window(lam0: float, epsilon: float, eps0: float = EPS0) -> tuple[float, float]:
    """[2/lam0, min(4/lam0, time at which eps e^{lam0 t} = eps0)]."""
    t_sat = np.log(eps0 / epsilon) / lam0 if epsilon > 0 else np.inf
    return 2.0 / lam0, min(4.0 / lam0, t_sat)


def trajectory_records(traj: Trajectory, spec: NormSpec = NormSpec(), modes=None):
    """Per-time JSON-ready dicts {t, rho_abs, norm}."""
    for s in traj.states:
        rho = s.density_hat()
        ks = s.modes if modes is None else modes
        yield {"t": float(s.t),
               "rho_abs": {str(int(k)): float(abs(rho[s.M + k])) for k in ks if k >= 0},
               "norm": weighted_norm(s, spec)}


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
