"""Wasserstein-1 distances between weighted point clouds on T x R.

Ground metric: sqrt(d_T(x1, x2)^2 + (v1 - v2)^2), d_T the wrapped distance.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp, ndtr

from .potentials import wrap

log = logging.getLogger(__name__)

GUARD = 5000
METRIC = "euclidean(wrapped x, v)"


class NormalizationError(ValueError):
    pass


class SizeGuardError(ValueError):
    pass


class CertificateError(RuntimeError):
    pass


# -- measures -----------------------------------------------------------------

@dataclass
class EmpiricalMeasure:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = wrap(np.atleast_1d(np.asarray(self.x, dtype=float)))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape or self.x.ndim != 1:
            raise ValueError("x and v must be 1-D arrays of equal length")
        if self.w is None:
            self.w = np.full(self.x.size, 1.0 / max(self.x.size, 1))
            self.meta.setdefault("uniform", True)
        else:
            w = np.asarray(self.w, dtype=float)
            if w.shape != self.x.shape:
                raise ValueError("weights must match the number of points")
            if np.any(w < 0):
                raise NormalizationError("negative weights")
            if abs(w.sum() - 1.0) > 1e-9:
                raise NormalizationError(f"weights sum to {w.sum():.12g}, not 1")
            self.w = w / w.sum()

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def is_uniform(self) -> bool:
        return bool(self.meta.get("uniform")) or bool(np.all(self.w == self.w[0]))

    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.v])

    def mode(self, k: int) -> complex:
        """int e^{-2 pi i k x} d mu."""
        return complex(np.sum(self.w * np.exp(-2j * np.pi * k * self.x)))

    def subsample(self, n: int, seed: int) -> "EmpiricalMeasure":
        """Uniform subsample without replacement (uniform weights)."""
        if n >= self.n:
            return self
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        idx = np.sort(rng.choice(self.n, size=n, replace=False))
        return EmpiricalMeasure(self.x[idx], self.v[idx])

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for x, v, w in zip(self.x, self.v, self.w):
                fh.write(json.dumps({"x": float(x), "v": float(v), "w": float(w)}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EmpiricalMeasure":
        rows = [json.loads(line) for line in open(path) if line.strip()]
        w = np.array([r.get("w", 1.0 / len(rows)) for r in rows], dtype=float)
        return cls([r["x"] for r in rows], [r["v"] for r in rows], w)


def ground_distance(z1, z2):
    """Distance between phase-space points given as (..., 2) arrays (x, v)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    # wrapping |dx| rather than dx keeps the distance bitwise symmetric
    dx = np.abs(wrap(np.abs(z1[..., 0] - z2[..., 0])))
    return np.sqrt(dx * dx + (z1[..., 1] - z2[..., 1]) ** 2)


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, rows=None) -> np.ndarray:
    x, v = (mu.x, mu.v) if rows is None else (mu.x[rows], mu.v[rows])
    dx = np.abs(wrap(np.abs(x[:, None] - nu.x[None, :])))
    dv = v[:, None] - nu.v[None, :]
    return np.sqrt(dx * dx + dv * dv)


# -- plans --------------------------------------------------------------------

@dataclass
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    certificate: dict = field(default_factory=dict)

    def marginal_error(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
        r = np.bincount(self.rows, self.mass, minlength=mu.n)
        c = np.bincount(self.cols, self.mass, minlength=nu.n)
        return float(max(np.max(np.abs(r - mu.w)), np.max(np.abs(c - nu.w))))

    def recomputed_cost(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
        d = ground_distance(mu.points()[self.rows], nu.points()[self.cols])
        return float(np.sum(self.mass * d))


def _check_pair(mu, nu):
    for m in (mu, nu):
        if abs(m.w.sum() - 1.0) > 1e-12 or np.any(m.w < 0):
            raise NormalizationError("measures must be probability vectors")


# -- exact solver ---------------------------------------------------------------

def _assignment_duals(C: np.ndarray, perm: np.ndarray, max_iter: int | None = None):
    """Potentials (u, v) with u_i + v_j <= C_ij and equality on the matching.

    v is a shortest-path distance in the graph with arcs perm(i) -> j of
    length C_ij - C_i,perm(i); it exists because an optimal matching has no
    negative cycle.
    """
    n = C.shape[0]
    matched = C[np.arange(n), perm]
    W = C - matched[:, None]
    v = np.zeros(n)
    for _ in range(max_iter or 4 * n + 10):
        cand = np.min(v[perm][:, None] + W, axis=0)
        new = np.minimum(v, cand)
        if np.all(new >= v - 1e-15):
            v = new
            break
        v = new
    u = matched - v[perm]
    return u, v


def w1_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure, guard: int = GUARD):
    """Optimal cost and plan with a dual certificate."""
    if mu.n + nu.n > guard:
        raise SizeGuardError(f"combined support {mu.n + nu.n} exceeds the guard {guard}")
    _check_pair(mu, nu)
    C = cost_matrix(mu, nu)
    if mu.n == nu.n and mu.is_uniform and nu.is_uniform:
        ri, ci = linear_sum_assignment(C)
        u, v = _assignment_duals(C, ci)
        mass = np.full(mu.n, 1.0 / mu.n)
        a, b = mu.w, nu.w
        rows, cols = ri, ci
        method = "assignment"
    else:
        n, m = mu.n, nu.n
        i = np.repeat(np.arange(n), m)
        j = np.tile(np.arange(m), n)
        k = np.arange(n * m)
        A = sparse.csr_matrix((np.ones(2 * n * m), (np.concatenate([i, n + j]), np.concatenate([k, k]))),
                              shape=(n + m, n * m))
        res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.w, nu.w]),
                      bounds=(0, None), method="highs")
        if res.status != 0:
            raise RuntimeError(f"LP solver failed: {res.message}")
        P = res.x.reshape(n, m)
        duals = res.eqlin.marginals
        u, v = duals[:n], duals[n:]
        rows, cols = np.nonzero(P > 0)
        mass = P[rows, cols]
        a, b = mu.w, nu.w
        method = "highs"
    primal = float(np.sum(mass * C[rows, cols]))
    dual = float(a @ u + b @ v)
    viol = float(max(np.max(u[:, None] + v[None, :] - C), 0.0))
    cert = {"method": method, "dual": dual, "gap": primal - dual, "dual_violation": viol}
    return primal, TransportPlan(rows, cols, mass, primal, cert)


# -- entropic solver ------------------------------------------------------------

@dataclass
class EntropicResult:
    upper: float
    lower: float
    reg: float
    iterations: int
    converged: bool

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    def __iter__(self):
        return iter((self.upper, self.lower))


def _round_cost(logP, C, a, b) -> float:
    """Cost of the feasible plan obtained by rounding P onto Pi(a, b)."""
    P = np.exp(logP)
    r = P.sum(axis=1)
    P *= np.minimum(1.0, a / np.where(r > 0, r, 1.0))[:, None]
    c = P.sum(axis=0)
    P *= np.minimum(1.0, b / np.where(c > 0, c, 1.0))[None, :]
    er = a - P.sum(axis=1)
    ec = b - P.sum(axis=0)
    tot = er.sum()
    cost = float(np.sum(P * C))
    if tot > 0:
        cost += float(er @ C @ ec) / tot
    return cost


def _ctransform_bound(f, C, a, b) -> float:
    g = np.min(C - f[:, None], axis=0)
    f2 = np.min(C - g[None, :], axis=1)
    return float(a @ f2 + b @ g)


def w1_entropic(mu: EmpiricalMeasure, nu: EmpiricalMeasure, reg: float | None = None,
                target_gap: float = 0.05, abs_gap: float = 1e-12, reg_floor: float = 1e-4,
                max_iter: int = 5000, marg_tol: float = 1e-9,
                max_entries: int = 40_000_000) -> EntropicResult:
    """Upper and lower bounds on W1 from log-domain Sinkhorn.

    ``reg`` is the final regularization; if None it is halved from a coarse
    start until gap <= target_gap * upper (or abs_gap) or reg_floor is hit.
    Both bounds are valid for any iterate: the upper one is the cost of a
    rounded feasible plan, the lower one a c-transformed dual objective.
    """
    _check_pair(mu, nu)
    if mu.n * nu.n > max_entries:
        raise SizeGuardError("dense entropic solver size limit exceeded")
    C = cost_matrix(mu, nu)
    a, b = mu.w, nu.w
    la, lb = np.log(np.maximum(a, 1e-300)), np.log(np.maximum(b, 1e-300))
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    schedule = [reg] if reg is not None else []
    if reg is None:
        r = max(float(C.max()), 1e-3) / 4
        while r > reg_floor:
            schedule.append(r)
            r *= 0.5
        schedule.append(reg_floor)
    total = 0
    best_up, best_lo = np.inf, -np.inf
    eps_used = schedule[0]
    for eps in schedule:
        eps_used = eps
        for it in range(max_iter):
            f = -eps * logsumexp(lb[None, :] + (g[None, :] - C) / eps, axis=1)
            g = -eps * logsumexp(la[:, None] + (f[:, None] - C) / eps, axis=0)
            total += 1
            if it % 10 == 9 or it == max_iter - 1:
                logP = la[:, None] + lb[None, :] + (f[:, None] + g[None, :] - C) / eps
                err = np.sum(np.abs(np.exp(logsumexp(logP, axis=1)) - a))
                if err < marg_tol:
                    break
        logP = la[:, None] + lb[None, :] + (f[:, None] + g[None, :] - C) / eps
        best_up = min(best_up, _round_cost(logP, C, a, b))
        best_lo = max(best_lo, _ctransform_bound(f, C, a, b))
        if best_up - best_lo <= max(target_gap * abs(best_up), abs_gap):
            return EntropicResult(best_up, best_lo, eps, total, True)
    return EntropicResult(best_up, best_lo, eps_used, total, reg is not None)


def w1_dual_lower_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure, k: int = 1) -> float:
    """|rho_k(mu) - rho_k(nu)| / (2 pi |k|).

    Optimizing the phase of the 1-Lipschitz witness cos(2 pi k x + c)/(2 pi k)
    gives this value, which never exceeds W1.
    """
    if k == 0:
        return 0.0
    return abs(mu.mode(k) - nu.mode(k)) / (2 * np.pi * abs(k))


# -- quantized references -------------------------------------------------------

def quantize(density, x_centers, v_centers, M: int, dx: float | None = None,
             dv: float | None = None) -> EmpiricalMeasure:
    """Keep the M most massive cells of a gridded density, renormalized.

    ``density[i, j]`` is the density at cell (x_centers[i], v_centers[j]).
    The reported error bound is the largest cell diameter plus the dropped
    mass times the largest distance in the grid.
    """
    density = np.asarray(density, dtype=float)
    xc = np.asarray(x_centers, dtype=float)
    vc = np.asarray(v_centers, dtype=float)
    if density.shape != (xc.size, vc.size):
        raise ValueError("density shape must be (len(x_centers), len(v_centers))")
    if np.any(density < 0):
        raise ValueError("density must be non-negative")
    if M > density.size:
        raise ValueError(f"M = {M} exceeds the number of grid cells {density.size}")
    dx = dx if dx is not None else (xc[1] - xc[0] if xc.size > 1 else 1.0)
    dv = dv if dv is not None else (vc[1] - vc[0] if vc.size > 1 else 1.0)
    mass = density * dx * dv
    total = mass.sum()
    if total <= 0:
        raise ValueError("density has zero mass")
    flat = mass.ravel()
    order = np.argsort(-flat, kind="stable")[:M]
    order.sort()
    ii, jj = np.unravel_index(order, mass.shape)
    w = flat[order]
    kept = w.sum()
    diam = math.hypot(dx, dv)
    span = math.hypot(0.5, float(vc.max() - vc.min()) if vc.size > 1 else 0.0)
    meta = {"cell_diameter": diam, "dropped_mass": float(1 - kept / total),
            "error_bound": 0.5 * diam + float(1 - kept / total) * span, "metric": METRIC}
    return EmpiricalMeasure(xc[ii], vc[jj], w / kept, meta)


def fapp_cell_masses(eq, mode, epsilon: float, n_x: int, n_v: int, v_max: float | None = None):
    """Exact cell masses of f_inf(v) + eps g(x, v) on a uniform (x, v) grid.

    Mass beyond +-v_max is folded into the boundary velocity cells.
    Returns (masses, x_centers, v_centers, dx, dv).
    """
    V = eq.v_max if v_max is None else v_max
    xe = np.linspace(-0.5, 0.5, n_x + 1)
    ve = np.linspace(-V, V, n_v + 1)
    # lower tail from the cdf, upper tail from the survival function cdf(-v)
    # (even f_inf), so tiny tail cells keep full relative precision
    lo, hi = ve[:-1], ve[1:]
    right = lo >= 0
    fv = np.where(right, eq.cdf(-lo) - eq.cdf(-hi), eq.cdf(hi) - eq.cdf(lo))
    fv[0] += eq.cdf(ve[0])
    fv[-1] += eq.cdf(-ve[-1])
    dx = 1.0 / n_x
    masses = np.outer(np.full(n_x, dx), fv)
    if mode is not None and epsilon:
        xi = mode.xi
        ex = (np.exp(1j * xi * xe[1:]) - np.exp(1j * xi * xe[:-1])) / (1j * xi)
        nodes, weights = np.polynomial.legendre.leggauss(8)
        half = 0.5 * (ve[1] - ve[0])
        mid = 0.5 * (ve[1:] + ve[:-1])
        gv = sum(wt * mode.profile(mid + half * nd) for nd, wt in zip(nodes, weights)) * half
        masses = masses + epsilon * 2.0 * np.real(np.outer(ex, gv))
    xc = 0.5 * (xe[1:] + xe[:-1])
    vc = 0.5 * (ve[1:] + ve[:-1])
    return masses, xc, vc, dx, ve[1] - ve[0]


def quantize_fapp(eq, mode, epsilon: float, n_x: int, n_v: int, M: int | None = None):
    masses, xc, vc, dx, dv = fapp_cell_masses(eq, mode, epsilon, n_x, n_v)
    if np.any(masses < 0):
        raise ValueError("negative cell mass: eps is too large for this mode")
    M = masses.size if M is None else M
    return quantize(masses / (dx * dv), xc, vc, M, dx, dv)


def quantile_reference(eq, mode, epsilon: float, Q: int, n_x: int = 200,
                       n_v: int = 8000) -> EmpiricalMeasure:
    """Q equal-weight points representing f_inf + eps g on the cylinder.

    Column i of an n_x-column split of the torus receives a number of points
    proportional to its mass (largest remainder); within the column the
    velocities sit at the conditional quantiles (k + 1/2)/c and the positions
    are spread across the column by golden-ratio offsets.  Points therefore
    follow the mass, so the resolution is highest where the density is.
    """
    masses, xc, _, dx, dv = fapp_cell_masses(eq, mode, epsilon, n_x, n_v)
    if np.any(masses < 0):
        raise ValueError("negative cell mass: eps is too large for this mode")
    V = eq.v_max
    ve = np.linspace(-V, V, n_v + 1)
    col = masses.sum(axis=1)
    counts = _largest_remainder(col / col.sum(), int(Q))
    golden = 0.5 * (math.sqrt(5.0) - 1.0)
    xs, vs = [], []
    bound = 0.5 * float(np.abs(counts / Q - col / col.sum()).sum())  # column rounding
    for i, c in enumerate(counts):
        if c == 0:
            continue
        cdf = np.concatenate([[0.0], np.cumsum(masses[i])])
        levels = np.arange(c + 1) / c * cdf[-1]
        edges = np.interp(levels, cdf, ve)
        # each point stands for one quantile slab of width dx
        bound += float(np.sum(np.hypot(dx, np.diff(edges)))) / Q
        vs.append(np.interp(0.5 * (levels[1:] + levels[:-1]), cdf, ve))
        xs.append(xc[i] - 0.5 * dx + dx * np.mod(np.arange(c) * golden + 0.5, 1.0))
    v = np.concatenate(vs)
    meta = {"error_bound": bound, "dropped_mass": 0.0, "metric": METRIC}
    return EmpiricalMeasure(np.concatenate(xs), v, None, meta)


# -- certified sparse exact solver ---------------------------------------------

def _int_cost(xa, va, xb, vb, scale):
    # x already lies in [-1/2, 1/2), so the torus distance is min(d, 1 - d)
    dx = np.abs(xa - xb)
    dx = np.minimum(dx, 1.0 - dx)
    dv = va - vb
    return np.rint(np.sqrt(dx * dx + dv * dv) * scale).astype(np.int64)


def _largest_remainder(w: np.ndarray, S: int) -> np.ndarray:
    raw = w * S
    base = np.floor(raw).astype(np.int64)
    short = S - int(base.sum())
    if short > 0:
        base[np.argsort(-(raw - base), kind="stable")[:short]] += 1
    return base


def _kneighbors(src: np.ndarray, dst: np.ndarray, k: int):
    """k nearest dst points (periodic in x) for every src point."""
    from scipy.spatial import cKDTree

    lo = min(src[:, 1].min(), dst[:, 1].min())
    hi = max(src[:, 1].max(), dst[:, 1].max())
    box = [1.0, 4.0 * (hi - lo) + 10.0]
    shift = np.array([0.5, -lo])
    tree = cKDTree(np.mod(dst + shift, box), boxsize=box)
    k = min(k, dst.shape[0])
    _, idx = tree.query(np.mod(src + shift, box), k=k)
    return np.asarray(idx).reshape(src.shape[0], k)


def _staircase(a: np.ndarray, b: np.ndarray):
    """Support of the north-west-corner plan (guarantees feasibility)."""
    i = j = 0
    ra, rb = a.astype(np.int64).copy(), b.astype(np.int64).copy()
    rows, cols = [], []
    while i < ra.size and j < rb.size:
        rows.append(i)
        cols.append(j)
        t = min(ra[i], rb[j])
        ra[i] -= t
        rb[j] -= t
        if ra[i] == 0:
            i += 1
        else:
            j += 1
    return np.array(rows), np.array(cols)


def _potentials(n_nodes, tail, head, w, max_rounds=200000):
    """Integer shortest-path potentials from a virtual source (Bellman-Ford)."""
    d = np.zeros(n_nodes, dtype=np.int64)
    for _ in range(max_rounds):
        cand = d[tail] + w
        new = d.copy()
        np.minimum.at(new, head, cand)
        if np.array_equal(new, d):
            return d
        d = new
    raise CertificateError("residual graph has a negative cycle")


@dataclass
class SparseResult:
    upper: float
    lower: float
    rounds: int
    arcs: int
    exact: bool  # integer problem solved to optimality (certificate over all pairs)
    rounding_error_bound: float
    metric: str = METRIC

    @property
    def value(self) -> float:
        return 0.5 * (self.upper + self.lower)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def w1_sparse(mu: EmpiricalMeasure, nu: EmpiricalMeasure, rel_gap: float = 0.0, k: int = 12,
              cost_scale: float = 1e6, mass_scale: int = 10 ** 10, add: int = 4,
              max_rounds: int = 200) -> SparseResult:
    """W1 by min-cost flow on a sparse candidate graph grown by pricing.

    Each round solves the flow problem restricted to the candidate arcs
    (a feasible plan, hence an upper bound) and turns its potentials into a
    dual-feasible pair by c-transforms over all pairs (a lower bound).
    Stops when upper - lower <= rel_gap * upper, or, with rel_gap = 0, when
    no pair has negative reduced cost for the integer costs
    rint(c * cost_scale), i.e. the integer problem is solved exactly.
    Masses are rounded to multiples of 1/S (S ~ mass_scale); the resulting
    shift of the upper bound is at most ``rounding_error_bound``, which is
    added to it.
    """
    from ortools.graph.python import min_cost_flow

    from ._kernels import ctransform, violating_arcs

    _check_pair(mu, nu)
    n, m = mu.n, nu.n
    S = int(mass_scale)
    sa = _largest_remainder(mu.w, S)
    sb = _largest_remainder(nu.w, S)
    P, Q = mu.points(), nu.points()
    xa, va, xb, vb = mu.x, mu.v, nu.x, nu.v
    span = float(math.hypot(0.5, np.ptp(np.r_[va, vb])))
    slack = (np.abs(sa / S - mu.w).sum() + np.abs(sb / S - nu.w).sum()) * span

    # each source spreads over about m/n targets: give it a few times that
    k = max(k, int(np.ceil(3.0 * m / n)))
    add = max(add, int(np.ceil(m / n)))
    nb = _kneighbors(P, Q, k)
    rows = [np.repeat(np.arange(n), nb.shape[1])]
    cols = [nb.ravel()]
    back = _kneighbors(Q, P, max(2, int(np.ceil(2.0 * n / m))))
    rows.append(back.ravel())
    cols.append(np.repeat(np.arange(m), back.shape[1]))
    oa = np.argsort(va, kind="stable")
    ob = np.argsort(vb, kind="stable")
    sr, sc = _staircase(sa[oa], sb[ob])
    rows.append(oa[sr])
    cols.append(ob[sc])
    key = np.unique(np.concatenate(rows) * m + np.concatenate(cols))
    upper, lower = np.inf, -np.inf
    for rnd in range(max_rounds):
        clock = time.perf_counter()
        ri, ci = key // m, key % m
        cst = _int_cost(xa[ri], va[ri], xb[ci], vb[ci], cost_scale)
        smcf = min_cost_flow.SimpleMinCostFlow()
        smcf.add_arcs_with_capacity_and_unit_cost(ri, n + ci, np.minimum(sa[ri], sb[ci]), cst)
        smcf.set_nodes_supplies(np.arange(n + m), np.concatenate([sa, -sb]))
        status = smcf.solve()
        if status != smcf.OPTIMAL:
            raise RuntimeError(f"min-cost flow failed with status {status}")
        flow = smcf.flows(np.arange(ri.size))
        pos = flow > 0
        t_flow = time.perf_counter() - clock
        exact_cost = ground_distance(P[ri[pos]], Q[ci[pos]])
        upper = min(upper, float(flow[pos] @ exact_cost) / S + slack)
        pi = _potentials(n + m, np.concatenate([ri, n + ci[pos]]),
                         np.concatenate([n + ci, ri[pos]]), np.concatenate([cst, -cst[pos]]))
        u, v = -pi[:n].astype(float), pi[n:].astype(float)
        # dual-feasible pair for the true costs
        fa, _ = ctransform(xa, va, xb, vb, v / cost_scale, 0.0)
        gb, _ = ctransform(xb, vb, xa, va, fa, 0.0)
        lower = max(lower, float(mu.w @ fa + nu.w @ gb))
        nr, nc = violating_arcs(xa, va, xb, vb, u, v, cost_scale, add)
        log.debug("round %d: %d arcs, flow %.2fs, total %.2fs, bracket [%.6g, %.6g], %d new",
                  rnd, ri.size, t_flow, time.perf_counter() - clock, lower, upper, nr.size)
        done = nr.size == 0 or (rel_gap > 0 and upper - lower <= rel_gap * upper)
        if done:
            return SparseResult(upper, min(lower, upper), rnd + 1, int(ri.size), nr.size == 0, slack)
        key = np.unique(np.concatenate([key, nr * m + nc]))
    raise CertificateError("column generation did not reach the requested gap")


# -- sampling-rate experiment ---------------------------------------------------

@dataclass
class SamplingTable:
    m: list
    mean: list
    stderr: list
    slope: float
    intercept: float
    values: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("m,mean,stderr,slope\n")
            for m, mu, se in zip(self.m, self.mean, self.stderr):
                fh.write(f"{m},{mu:.12g},{se:.12g},{self.slope:.12g}\n")


def sample_fapp_points(eq, mode, epsilon, m, seed):
    from .nbody import sample_initial

    st = sample_initial(eq, mode, epsilon, m, seed)
    return EmpiricalMeasure(st.x, st.v)


def sampling_rate_experiment(eq, mode, epsilon: float, m_list, trials: int, seed: int,
                             Q: int = 40000, n_x: int = 200, n_v: int = 8000,
                             solver: str = "sparse", rel_gap: float = 0.02,
                             progress=None) -> SamplingTable:
    """Mean W1 between m-samples of f_app(0) and a fixed fine quantization.

    The reference is ``quantile_reference`` with Q points; every distance is
    certified to relative gap ``rel_gap`` and the midpoint of the bracket is
    averaged.
    """
    m_list = [int(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be strictly ascending")
    ref = quantile_reference(eq, mode, epsilon, Q, n_x, n_v)
    means, errs, values = [], [], []
    worst_gap = 0.0
    for mi, m in enumerate(m_list):
        vals = []
        for t in range(trials):
            mu = sample_fapp_points(eq, mode, epsilon, m, seed + 1_000_003 * mi + t)
            if solver == "sparse":
                res = w1_sparse(mu, ref, rel_gap=rel_gap, k=48, add=16)
                val = res.value
                worst_gap = max(worst_gap, res.gap / res.upper)
            elif solver == "entropic":
                res = w1_entropic(mu, ref)
                val = 0.5 * (res.upper + res.lower)
                worst_gap = max(worst_gap, res.gap / res.upper)
            else:
                raise ValueError(f"unknown solver {solver!r}")
            vals.append(val)
            if progress:
                progress(m, t, val)
        vals = np.array(vals)
        values.append(vals.tolist())
        means.append(float(vals.mean()))
        errs.append(float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan"))
    slope, intercept = np.polyfit(np.log(m_list), np.log(means), 1) if len(m_list) > 1 else (np.nan, np.nan)
    meta = {"reference_points": ref.n, "reference_error_bound": ref.meta["error_bound"],
            "epsilon": epsilon, "solver": solver, "max_rel_gap": worst_gap, "metric": METRIC}
    return SamplingTable(m_list, means, errs, float(slope), float(intercept), values, meta)
