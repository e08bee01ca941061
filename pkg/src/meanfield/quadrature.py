"""Composite Gauss-Legendre rules used by the velocity integrals."""
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(breaks, n: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of an n-point Gauss-Legendre rule on every panel."""
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    x, w = gauss_legendre(n)
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def graded_breaks(a: float, b: float, center: float, width: float,
                  coarse: float) -> np.ndarray:
    """Uniform breakpoints of spacing ``coarse`` on [a, b], refined
    geometrically down to ``width`` around ``center``."""
    n = max(int(np.ceil((b - a) / coarse)), 1)
    pts = [np.linspace(a, b, n + 1)]
    if a < center < b and width < coarse:
        steps = width * 2.0 ** np.arange(int(np.ceil(np.log2(coarse / width))) + 1)
        pts.append(center + steps)
        pts.append(center - steps)
        pts.append([center])
    out = np.unique(np.concatenate(pts))
    return out[(out >= a) & (out <= b)]


def adaptive_gl(func, a: float, b: float, tol: float = 1e-13, n: int = 16,
                max_panels: int = 20000, breaks=None):
    """Globally adaptive panel quadrature of a vectorized ``func``.

    Each panel is compared against its two halves; panels are split until
    the summed error estimate is below ``tol`` (absolute, scaled by the
    magnitude of the result when that exceeds one).
    """
    x, w = gauss_legendre(n)

    def rule(lo, hi):
        half = 0.5 * (hi - lo)
        return half * np.dot(w, func(0.5 * (lo + hi) + half * x))

    if breaks is None:
        breaks = [a, b]
    todo = [(lo, hi, rule(lo, hi)) for lo, hi in zip(breaks[:-1], breaks[1:])]
    total = 0.0
    count = 0
    while todo:
        lo, hi, whole = todo.pop()
        mid = 0.5 * (lo + hi)
        left, right = rule(lo, mid), rule(mid, hi)
        count += 1
        local_tol = tol * (hi - lo) / (b - a)
        if abs(left + right - whole) <= local_tol or hi - lo < 1e-15 * (b - a):
            total += left + right
            continue
        if count > max_panels:
            raise QuadratureError(
                f"no convergence on [{a}, {b}] after {max_panels} panel splits")
        todo.append((lo, mid, left))
        todo.append((mid, hi, right))
    return total
