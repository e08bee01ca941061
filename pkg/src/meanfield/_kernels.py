"""Compiled all-pairs loops for transport certificates (never materialize n x m)."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _dist(xa, va, xb, vb, scale):
    dx = abs(xa - xb)
    if dx > 0.5:
        dx = 1.0 - dx
    dv = va - vb
    d = np.sqrt(dx * dx + dv * dv)
    if scale > 0:
        return np.rint(d * scale)
    return d


@numba.njit(cache=True)
def ctransform(xa, va, xb, vb, pot_b, scale):
    """out_i = min_j c(a_i, b_j) - pot_b[j] and the minimizing j.

    ``scale > 0`` uses the integer costs rint(c * scale)."""
    n, m = xa.size, xb.size
    out = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(m):
            r = _dist(xa[i], va[i], xb[j], vb[j], scale) - pot_b[j]
            if r < best:
                best = r
                bj = j
        out[i] = best
        arg[i] = bj
    return out, arg


@numba.njit(cache=True)
def violating_arcs(xa, va, xb, vb, pot_a, pot_b, scale, add):
    """For each row with some reduced cost c_ij - pot_a[i] - pot_b[j] < 0,
    the (up to) ``add`` most negative columns; returns flat (rows, cols)."""
    n, m = xa.size, xb.size
    rows = np.empty(n * add, dtype=np.int64)
    cols = np.empty(n * add, dtype=np.int64)
    cnt = 0
    vals = np.empty(add)
    idx = np.empty(add, dtype=np.int64)
    for i in range(n):
        filled = 0
        for j in range(m):
            r = _dist(xa[i], va[i], xb[j], vb[j], scale) - pot_a[i] - pot_b[j]
            if r >= 0:
                continue
            if filled < add:
                p = filled
                filled += 1
            elif r < vals[add - 1]:
                p = add - 1
            else:
                continue
            while p > 0 and vals[p - 1] > r:
                vals[p] = vals[p - 1]
                idx[p] = idx[p - 1]
                p -= 1
            vals[p] = r
            idx[p] = j
        for q in range(filled):
            rows[cnt] = i
            cols[cnt] = idx[q]
            cnt += 1
    return rows[:cnt], cols[:cnt]
