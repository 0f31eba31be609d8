"""Dense tableau simplex with Bland's rule.

Solves  max c.x  s.t.  A x <= b,  x >= 0  with b >= 0, so the slack basis is
feasible and no phase one is needed.  Intended for small cross-checks of the
HiGHS-based solvers; cost is O(m (m + n)) per pivot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray
    y: np.ndarray  # dual values of the inequality rows, >= 0
    value: float
    iterations: int


def simplex_max(c, A, b, max_iter: int = 100_000, eps: float = 1e-12, pivot_tol: float = 1e-9) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise SimplexError("right-hand side must be nonnegative")
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))

    for it in range(max_iter):
        cost = T[m, :-1]
        cand = np.flatnonzero(cost < -eps)
        if cand.size == 0:
            x = np.zeros(n + m)
            x[basis] = T[:m, -1]
            return SimplexResult(x[:n], T[m, n : n + m].copy(), float(T[m, -1]), it)
        e = int(cand[0])  # Bland: lowest index entering
        col = T[:m, e]
        pos = col > pivot_tol
        if not np.any(pos):
            raise SimplexError("problem is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + eps * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))  # Bland: lowest index leaving
        T[r] /= T[r, e]
        others = np.arange(m + 1) != r
        T[others] -= np.outer(T[others, e], T[r])
        basis[r] = e
    raise SimplexError(f"no convergence in {max_iter} pivots")
