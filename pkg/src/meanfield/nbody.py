"""N particles on the torus [-1/2, 1/2) x R with pair potential Phi / N.

Dynamics: dX_i/dt = V_i, dV_i/dt = -(1/N) sum_{j != i} Phi'(X_i - X_j).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from . import binio
from .equilibria import Equilibrium
from .potentials import Potential, wrap
from .spectral import Eigenmode

MAX_ROUNDS = 10_000


class EnvelopeError(ValueError):
    """Rejection sampling needs eps * B < 1."""


@dataclass
class ParticleState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = wrap(np.asarray(self.x, dtype=float))
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape or self.x.ndim != 1:
            raise ValueError("positions and velocities must be 1-D arrays of equal length")

    @property
    def N(self) -> int:
        return self.x.size

    def copy(self) -> "ParticleState":
        return ParticleState(self.x.copy(), self.v.copy(), self.t, self.seed, dict(self.meta))

    def save(self, path, potential: Potential | None = None, equilibrium: Equilibrium | None = None):
        header = {"N": self.N, "t": self.t, "seed": self.seed,
                  "potential": potential.to_dict() if potential else self.meta.get("potential"),
                  "equilibrium": equilibrium.to_dict() if equilibrium else self.meta.get("equilibrium")}
        binio.dump(path, header, {"positions": self.x, "velocities": self.v})

    @classmethod
    def load(cls, path) -> "ParticleState":
        h, arr = binio.load(path)
        meta = {k: h[k] for k in ("potential", "equilibrium") if h.get(k) is not None}
        return cls(arr["positions"], arr["velocities"], h["t"], h["seed"], meta)


# -- sampling -----------------------------------------------------------------

def _velocities(eq: Equilibrium, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Inverse-CDF velocities from two uniforms per particle."""
    if eq.kind == "maxwellian":
        return np.sqrt(eq.theta) * ndtri(u1)
    if eq.kind == "two_stream":
        return np.where(u2 < 0.5, -eq.v0, eq.v0) + np.sqrt(eq.theta) * ndtri(u1)
    grid = np.linspace(eq.table[0][0], eq.table[0][-1], 20001)
    dens = np.maximum(eq.eval(grid), 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    return np.interp(u1, cdf / cdf[-1], grid)


def _uniforms(seed: int, round_: int, n: int) -> np.ndarray:
    # counter-based: row j of round r depends only on (seed, r, j)
    gen = np.random.Generator(np.random.Philox(key=[int(seed), int(round_)]))
    u = gen.random((n, 4))
    return np.where(u == 0.0, np.finfo(float).tiny, u)


def sample_initial(eq: Equilibrium, mode: Eigenmode | None, epsilon: float, N: int,
                   seed: int, return_rate: bool = False):
    """N i.i.d. draws from f_inf(v) + eps g(x, v) by rejection from f_inf x Uniform.

    Particle j only ever consumes the random block (seed, round, j), so the
    first N particles of a larger sample coincide with a sample of size N.
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    B = mode.envelope() if (mode is not None and epsilon != 0) else 0.0
    if epsilon * B >= 1.0:
        raise EnvelopeError(f"eps * B = {epsilon * B:.4g} >= 1: f_app(0) may be negative")
    x = np.empty(N)
    v = np.empty(N)
    todo = np.arange(N)
    proposals = 0
    for r in range(MAX_ROUNDS):
        if todo.size == 0:
            break
        u = _uniforms(seed, r, N)[todo]
        xs = u[:, 0] - 0.5
        vs = _velocities(eq, u[:, 1], u[:, 2])
        proposals += todo.size
        if B > 0:
            f = eq.eval(vs)
            g = mode.evaluate(xs, vs)
            ratio = np.where(f > 0, g / np.where(f > 0, f, 1.0), 0.0)
            accept = u[:, 3] * (1.0 + epsilon * B) <= 1.0 + epsilon * ratio
        else:
            accept = np.ones(todo.size, dtype=bool)
        x[todo[accept]] = xs[accept]
        v[todo[accept]] = vs[accept]
        todo = todo[~accept]
    else:
        raise RuntimeError("rejection sampler did not terminate")
    state = ParticleState(x, v, 0.0, seed, {"epsilon": epsilon, "envelope": B})
    if return_rate:
        return state, (N / proposals if proposals else 1.0)
    return state


# -- forces -------------------------------------------------------------------

def forces_direct(x, pot: Potential, chunk: int = 1024) -> np.ndarray:
    """O(N^2) pair sum (1/N) sum_{j != i} -Phi'(x_i - x_j)."""
    x = np.asarray(x, dtype=float)
    N = x.size
    out = np.zeros(N)
    if N < 2:
        return out
    for s in range(0, N, chunk):
        d = x[s:s + chunk, None] - x[None, :]
        f = pot.force(d)
        rows = np.arange(s, min(s + chunk, N))
        f[rows - s, rows] = 0.0
        out[s:s + chunk] = f.sum(axis=1) / N
    return out


def forces_coulomb_fast(x) -> np.ndarray:
    """O(N log N) force for Phi(x) = (1/2 - |x|)^2 / 2.

    -Phi'(d) = sign(d)/2 - d holds for unwrapped differences d in (-1, 1)
    too, so the sign sum is a rank count (ties count as zero).
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    if N < 2:
        return np.zeros(N)
    s = np.sort(x, kind="stable")
    below = np.searchsorted(s, x, side="left")
    above = N - np.searchsorted(s, x, side="right")
    total = np.sum(s)
    return (0.5 * (below - above) - (N * x - total)) / N


def forces_meanfield(x, pot: Potential) -> np.ndarray:
    """O(N K) force for band-limited potentials through the modes M_k = mean e^{2 pi i k x}."""
    x = np.asarray(x, dtype=float)
    if pot.kind == "cosine":
        terms = [(1, 0.5 * pot.amplitude)]
    elif pot.kind == "fourier_series":
        terms = [(k, c) for k, c in pot.coefficients if k and c]
    else:
        raise ValueError("mean-field force needs a band-limited potential")
    out = np.zeros_like(x)
    for k, c in terms:
        e = np.exp(2j * np.pi * k * x)
        M = e.mean()
        out += 4 * np.pi * k * c * (e * np.conj(M)).imag
    return out


def accelerations(x, pot: Potential, method: str = "auto") -> np.ndarray:
    if method == "direct":
        return forces_direct(x, pot)
    if pot.kind == "coulomb1d":
        return forces_coulomb_fast(x)
    if method in ("auto", "meanfield"):
        return forces_meanfield(x, pot)
    raise ValueError(f"unknown force method {method!r}")


# -- integrator ----------------------------------------------------------------

def step(state: ParticleState, pot: Potential | None, dt: float, acc=None,
         method: str = "auto") -> tuple[ParticleState, np.ndarray]:
    """One kick-drift-kick step; returns the new state and its accelerations."""
    force = (lambda x: np.zeros_like(x)) if pot is None else (lambda x: accelerations(x, pot, method))
    a0 = force(state.x) if acc is None else acc
    v_half = state.v + 0.5 * dt * a0
    x_new = wrap(state.x + dt * v_half)
    a1 = force(x_new)
    v_new = v_half + 0.5 * dt * a1
    return ParticleState(x_new, v_new, state.t + dt, state.seed, state.meta), a1


def empirical_mode(x, k: int) -> complex:
    """(1/N) sum_j exp(-2 pi i k x_j)."""
    if k == 0:
        return 1.0 + 0.0j
    x = np.asarray(x, dtype=float)
    return complex(np.mean(np.exp(-2j * np.pi * k * x)))


def momentum(state: ParticleState) -> float:
    return float(np.mean(state.v))


def kinetic_energy(state: ParticleState) -> float:
    return float(0.5 * np.mean(state.v ** 2))


def potential_energy(x, pot: Potential) -> float:
    """(1/(2 N^2)) sum_{i != j} Phi(x_i - x_j)."""
    x = np.asarray(x, dtype=float)
    N = x.size
    if N < 2:
        return 0.0
    if pot.kind == "cosine":
        M = np.mean(np.exp(2j * np.pi * x))
        return float(0.5 * pot.amplitude * (abs(M) ** 2 - 1.0 / N))
    if pot.kind == "coulomb1d":
        # Phi(d) = 1/8 - (|d| - d^2)/2 also for unwrapped d in (-1, 1)
        s = np.sort(x)
        abs_sum = 2.0 * np.sum(s * (2 * np.arange(N) - N + 1))  # ordered pairs
        sq_sum = 2.0 * N * np.sum(x * x) - 2.0 * np.sum(x) ** 2
        return float((N * (N - 1) / 16.0 - 0.25 * (abs_sum - sq_sum)) / N ** 2)
    total = 0.0
    for k, c in pot.coefficients:
        if k == 0:
            total += c * N * N
        else:
            total += 2.0 * c * N * N * abs(np.mean(np.exp(2j * np.pi * k * x))) ** 2
    total -= N * float(pot.value(0.0))
    return float(0.5 * total / N ** 2)


def energy(state: ParticleState, pot: Potential) -> float:
    return kinetic_energy(state) + potential_energy(state.x, pot)


# -- runs and observers ---------------------------------------------------------

class ModeObserver:
    def __init__(self, k: int):
        self.k = k

    def __call__(self, state, pot):
        m = empirical_mode(state.x, self.k)
        return {"mode_re": m.real, "mode_im": m.imag}


class EnergyObserver:
    def __call__(self, state, pot):
        return {"energy": energy(state, pot)}


class MomentumObserver:
    def __call__(self, state, pot):
        return {"momentum": momentum(state)}


class SnapshotObserver:
    """Writes a binary snapshot named by step index at every call."""

    def __init__(self, directory, equilibrium: Equilibrium | None = None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.eq = equilibrium
        self.count = 0

    def __call__(self, state, pot):
        path = self.dir / f"snap_{self.count:05d}.bin"
        state.save(path, pot, self.eq)
        self.count += 1
        return {"snapshot": str(path)}


def default_observers(k0: int = 1):
    return [ModeObserver(k0), EnergyObserver(), MomentumObserver()]


def run(state: ParticleState, pot: Potential, t_end: float, dt: float, observers=(),
        output_every: int = 1, method: str = "auto", stop=None) -> tuple[ParticleState, list[dict]]:
    """Integrate to ``t_end``; observers see the state every ``output_every`` steps.

    ``stop(record)`` may end the run early once it returns True.
    """
    n = int(round((t_end - state.t) / dt))
    t0 = state.t
    records = []

    def observe(s):
        rec = {"t": s.t}
        for ob in observers:
            rec.update(ob(s, pot))
        records.append(rec)
        return stop is not None and stop(rec)

    if observe(state):
        return state, records
    acc = None
    for i in range(n):
        state, acc = step(state, pot, dt, acc, method)
        state.t = t0 + (i + 1) * dt
        if (i + 1) % output_every == 0 or i == n - 1:
            if observe(state):
                break
    return state, records


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
