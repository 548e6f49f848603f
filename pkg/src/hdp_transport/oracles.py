"""Exhaustive reference solvers used by the experiment harness."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["brute_force_transport"]


def brute_force_transport(a, b, C, scale: float = 1e12) -> float:
    """Minimum cost over every vertex of the transportation polytope.

    Each vertex has a forest support, and repeatedly saturating a leaf edge
    reproduces it.  Exploring every order of "pick an open cell, ship
    min(remaining supply, remaining demand)" therefore visits every vertex;
    the dynamic program below takes the minimum over all of them.  Masses are
    rounded to integer multiples of ``1 / scale`` so states compare exactly
    (relative cost error of order ``1 / scale``).  Feasible up to about 6 x 6.
    """
    C = [[float(c) / scale for c in row] for row in np.asarray(C, float)]
    m, n = len(C), len(C[0])
    ia = [int(round(float(v) * scale)) for v in a]
    ib = [int(round(float(v) * scale)) for v in b]
    # absorb rounding so both sides carry the same total
    ib[int(np.argmax(ib))] += sum(ia) - sum(ib)

    @lru_cache(maxsize=None)
    def best(state):
        rows = [i for i in range(m) if state[i] > 0]
        cols = [j for j in range(n) if state[m + j] > 0]
        if not rows or not cols:
            return 0.0
        out = float("inf")
        for i in rows:
            si = state[i]
            for j in cols:
                sj = state[m + j]
                s = list(state)
                if si <= sj:
                    q = si
                    s[i], s[m + j] = 0, sj - si
                else:
                    q = sj
                    s[i], s[m + j] = si - sj, 0
                v = q * C[i][j] + best(tuple(s))
                if v < out:
                    out = v
        return out

    return best(tuple(ia + ib))
