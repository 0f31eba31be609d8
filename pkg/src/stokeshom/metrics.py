"""Field and measure distances.

* ``lp_distance``: midpoint-rule L^p distance of two MAC-grid velocity fields.
* ``dual_holder_distance``: dual C^{0,alpha} norm of mu - nu on finite
  supports, the bounded-Lipschitz distance for alpha = 1.  It is an exact LP
  over point values because feasible values extend to the whole closed domain
  with unchanged budgets (McShane extension, then clamping to [-s, s]).
* ``w1_distance``: Wasserstein-1 by the transport LP.

Vector measures are handled componentwise and combined by the Euclidean norm
of the component distances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from ._simplex import simplex_max
from .brinkman import StaggeredField, cell_velocity
from .config import DiscreteMeasure

__all__ = [
    "DualNormResult",
    "TransportResult",
    "LPError",
    "lp_distance",
    "dual_holder_distance",
    "w1_distance",
    "MAX_SUPPORT",
]

log = logging.getLogger(__name__)

MAX_SUPPORT = 2000
SIMPLEX_MAX_SUPPORT = 12  # Bland pivoting stalls on larger degenerate instances
GAP_TOL = 1e-8
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class LPError(RuntimeError):
    def __init__(self, message, log_lines):
        super().__init__(message + "\n" + "\n".join(log_lines))
        self.log = list(log_lines)


@dataclass
class DualNormResult:
    """Optimum of the dual-norm LP.

    For vector measures ``value`` is the Euclidean norm of ``components`` and
    ``phi``, ``s``, ``t``, ``primal``, ``dual`` hold one entry per component.
    """

    value: float
    points: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    t: np.ndarray
    primal: np.ndarray
    dual: np.ndarray
    gap: float
    components: np.ndarray
    rounds: int = 0
    n_pairs: int = 0
    max_violation: float = 0.0


@dataclass
class TransportResult:
    value: float
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    primal: float
    dual: float
    gap: float
    marginal_error: float = 0.0
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------- L^p

def lp_distance(a: StaggeredField, b: StaggeredField, p: float) -> float:
    """(sum |ua - ub|^p h^3)^(1/p) over cell-averaged velocities."""
    if a.k != b.k or a.domain != b.domain:
        raise ValueError("fields live on different grids")
    if not 1.0 < p < 6.0:
        raise ValueError("p must lie in (1, 6)")
    d = np.linalg.norm(cell_velocity(a) - cell_velocity(b), axis=-1)
    return float((np.sum(d**p) * a.h**3) ** (1.0 / p))


# ---------------------------------------------------------------- dual Hölder

def _merge(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if mu.is_vector != nu.is_vector or mu.n_components != nu.n_components:
        raise ValueError("measures must have the same number of components")
    pts = np.concatenate([mu.points, nu.points])
    w = np.concatenate([mu.weights, -nu.weights])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    out = np.zeros((len(uniq),) + w.shape[1:])
    np.add.at(out, inv, w)
    return uniq, out


def _pair_rows(pairs, d, n, alpha):
    """Rows phi_i - phi_j - t d^alpha <= 0 and the reverse, for the pair list."""
    m = len(pairs)
    i, j = pairs[:, 0], pairs[:, 1]
    dd = d**alpha
    r = np.arange(m)
    rows = np.concatenate([r, r, r, m + r, m + r, m + r])
    cols = np.concatenate([i, j, np.full(m, n + 1), j, i, np.full(m, n + 1)])
    vals = np.concatenate([np.ones(m), -np.ones(m), -dd, np.ones(m), -np.ones(m), -dd])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * m, n + 2))


def _base_rows(n):
    idx = np.arange(n)
    rows = np.concatenate([idx, idx, n + idx, n + idx, [2 * n, 2 * n]])
    cols = np.concatenate([idx, np.full(n, n), idx, np.full(n, n), [n, n + 1]])
    vals = np.concatenate([np.ones(n), -np.ones(n), -np.ones(n), -np.ones(n), [1.0, 1.0]])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n + 1, n + 2))
    b = np.zeros(2 * n + 1)
    b[-1] = 1.0
    return A, b


def _violations(x, phi, t, alpha, tol, chunk=512):
    """All pairs (i < j) with |phi_i - phi_j| > t |x_i - x_j|^alpha + tol, and the worst excess."""
    n = len(phi)
    found = []
    worst = 0.0
    for lo in range(0, n, chunk):
        xi = x[lo : lo + chunk]
        d = np.sqrt(((xi[:, None, :] - x[None, :, :]) ** 2).sum(-1))
        ex = np.abs(phi[lo : lo + chunk, None] - phi[None, :]) - t * d**alpha
        gi = lo + np.arange(len(xi))[:, None]
        ex = np.where(np.arange(n)[None, :] > gi, ex, -np.inf)
        worst = max(worst, float(ex.max(initial=0.0)))
        ii, jj = np.nonzero(ex > tol)
        if ii.size:
            found.append(np.stack([ii + lo, jj], axis=1))
    pairs = np.concatenate(found) if found else np.zeros((0, 2), dtype=int)
    return pairs, worst


def _scalar_dual(x, w, alpha, tol, max_rounds, neighbours):
    n = len(w)
    if n == 0 or not np.any(w):
        return dict(value=0.0, phi=np.zeros(n), s=0.0, t=0.0, primal=0.0, dual=0.0, gap=0.0, rounds=0, n_pairs=0, viol=0.0)
    if n == 1:
        v = abs(float(w[0]))
        return dict(value=v, phi=np.sign(w).astype(float), s=1.0, t=0.0, primal=v, dual=v, gap=0.0, rounds=0, n_pairs=0, viol=0.0)
    tree = cKDTree(x)
    kk = min(neighbours, n - 1)
    _, nb = tree.query(x, k=kk + 1)
    pairs = np.stack([np.repeat(np.arange(n), kk), nb[:, 1:].ravel()], axis=1)
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    A0, b0 = _base_rows(n)
    c = np.concatenate([-w, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0, None), (0, None)]
    scale = max(1.0, float(np.abs(w).sum()))
    log_lines = []
    for rnd in range(1, max_rounds + 1):
        d = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
        A = sp.vstack([A0, _pair_rows(pairs, d, n, alpha)]).tocsr()
        b = np.concatenate([b0, np.zeros(2 * len(pairs))])
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs", options=_HIGHS)
        log_lines.append(f"round {rnd}: {len(pairs)} pairs, status {res.status} ({res.message})")
        if res.status != 0:
            raise LPError("dual-norm LP failed", log_lines)
        phi, s, t = res.x[:n], res.x[n], res.x[n + 1]
        new, worst = _violations(x, phi, t, alpha, tol)
        log_lines.append(f"round {rnd}: max pair violation {worst:.3e}, {len(new)} new pairs")
        if len(new):
            known = set(map(tuple, pairs.tolist()))
            new = np.array([q for q in new.tolist() if tuple(q) not in known], dtype=int).reshape(-1, 2)
        if len(new) == 0:
            break
        pairs = np.unique(np.concatenate([pairs, new]), axis=0)
    else:
        raise LPError("constraint generation did not terminate", log_lines)

    y = res.ineqlin.marginals  # <= 0 for a minimisation with A x <= b
    primal = float(w @ phi)
    dual = float(-(b @ y))
    # dual feasibility: A^T y = c on free variables, A^T y <= c on s, t >= 0
    r = A.T @ y - c
    dual_infeas = max(float(np.abs(r[:n]).max()), float(max(r[n:].max(), 0.0)), float(max(y.max(), 0.0)))
    slack = b - A @ res.x
    comp = float(np.abs(y * slack).max())
    gap = abs(primal - dual) + dual_infeas * scale + comp
    log.debug("dual norm: %d rounds, %d pairs, gap %.2e", rnd, len(pairs), gap)
    return dict(value=primal, phi=phi, s=float(s), t=float(t), primal=primal, dual=dual, gap=gap,
                rounds=rnd, n_pairs=len(pairs), viol=worst)


def _scalar_dual_simplex(x, w, alpha):
    """Bland's-rule cross-check on all pairs; phi = p - q with p, q >= 0."""
    n = len(w)
    D = np.linalg.norm(x[:, None] - x[None], axis=-1) ** alpha
    ii, jj = np.triu_indices(n, 1)
    nv = 2 * n + 2
    rows = []
    for i in range(n):
        for sign in (1.0, -1.0):
            r = np.zeros(nv)
            r[i], r[n + i], r[2 * n] = sign, -sign, -1.0
            rows.append(r)
    for i, j in zip(ii, jj):
        for sign in (1.0, -1.0):
            r = np.zeros(nv)
            r[i], r[n + i], r[j], r[n + j] = sign, -sign, -sign, sign
            r[2 * n + 1] = -D[i, j]
            rows.append(r)
    r = np.zeros(nv)
    r[2 * n], r[2 * n + 1] = 1.0, 1.0
    rows.append(r)
    A = np.array(rows)
    b = np.zeros(len(rows))
    b[-1] = 1.0
    res = simplex_max(np.concatenate([w, -w, [0.0, 0.0]]), A, b)
    phi = res.x[:n] - res.x[n : 2 * n]
    return dict(value=res.value, phi=phi, s=res.x[2 * n], t=res.x[2 * n + 1], primal=res.value,
                dual=float(res.y[-1]), gap=abs(res.value - res.y[-1]), rounds=res.iterations,
                n_pairs=len(ii), viol=0.0)


def dual_holder_distance(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    alpha: float = 1.0,
    method: str = "highs",
    tol: float = 1e-9,
    max_rounds: int = 50,
    neighbours: int = 12,
) -> DualNormResult:
    """sup { <mu - nu, phi> : ||phi||_inf + [phi]_alpha <= 1 } on the merged support.

    ``method="highs"`` uses constraint generation over the Hölder pairs
    seeded with nearest neighbours; ``method="simplex"`` solves the full LP
    with the dense Bland's-rule simplex (small supports only).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    x, w = _merge(mu, nu)
    W = w if w.ndim == 2 else w[:, None]
    keep = np.any(W != 0, axis=1)
    x, W = x[keep], W[keep]
    if len(x) > MAX_SUPPORT:
        raise ValueError(f"support of {len(x)} points exceeds {MAX_SUPPORT}; coarsen one side first")
    if method == "simplex" and len(x) > SIMPLEX_MAX_SUPPORT:
        raise ValueError(f"the dense simplex is limited to {SIMPLEX_MAX_SUPPORT} support points")
    outs = []
    for c in range(W.shape[1]):
        if method == "highs":
            outs.append(_scalar_dual(x, W[:, c], alpha, tol, max_rounds, neighbours))
        elif method == "simplex":
            outs.append(_scalar_dual_simplex(x, W[:, c], alpha))
        else:
            raise ValueError(f"unknown method {method!r}")
    comps = np.array([o["value"] for o in outs])
    vec = w.ndim == 2

    def pick(key):
        arr = np.array([o[key] for o in outs])
        return arr if vec else arr[0]

    value = float(np.linalg.norm(comps)) if vec else float(comps[0])
    return DualNormResult(
        value=value,
        points=x,
        phi=np.stack([o["phi"] for o in outs], axis=-1) if vec else outs[0]["phi"],
        s=pick("s"),
        t=pick("t"),
        primal=pick("primal"),
        dual=pick("dual"),
        gap=float(max(o["gap"] for o in outs)),
        components=comps,
        rounds=int(max(o["rounds"] for o in outs)),
        n_pairs=int(max(o["n_pairs"] for o in outs)),
        max_violation=float(max(o["viol"] for o in outs)),
    )


# ---------------------------------------------------------------- W1

def w1_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportResult:
    """Earth mover's distance between positive equal-mass measures (Euclidean cost)."""
    if mu.is_vector or nu.is_vector:
        raise ValueError("w1_distance takes scalar measures")
    a, b = mu.weights, nu.weights
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("weights must be nonnegative")
    ma, mb = a.sum(), b.sum()
    if abs(ma - mb) > 1e-10 * max(1.0, ma):
        raise ValueError(f"masses differ ({ma} vs {mb}); W1 needs equal mass")
    n, m = len(a), len(b)
    C = np.linalg.norm(mu.points[:, None] - nu.points[None], axis=-1)
    I, J = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    var = np.arange(n * m)
    A = sp.vstack([
        sp.csr_matrix((np.ones(n * m), (I.ravel(), var)), shape=(n, n * m)),
        sp.csr_matrix((np.ones(n * m), (J.ravel(), var)), shape=(m, n * m)),
    ]).tocsr()
    rhs = np.concatenate([a, b * (ma / mb if mb > 0 else 1.0)])
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs", options=_HIGHS)
    if res.status != 0:
        raise LPError("transport LP failed", [f"status {res.status}: {res.message}"])
    P = res.x.reshape(n, m)
    P[P < 1e-15 * max(ma, 1e-300)] = 0.0
    rr, cc = np.nonzero(P)
    primal = float(np.sum(C * P))
    y = res.eqlin.marginals
    dual = float(rhs @ y)
    # reduced costs must be nonnegative
    red = C.ravel() - A.T @ y
    dual_infeas = float(max(-red.min(), 0.0))
    marg = float(max(np.abs(P.sum(1) - a).max(initial=0.0), np.abs(P.sum(0) - rhs[n:]).max(initial=0.0)))
    gap = abs(primal - dual) + dual_infeas * max(ma, 1.0)
    return TransportResult(primal, rr, cc, P[rr, cc], primal, dual, gap, marg)
