"""Self-check of the closed-form sphere kernels.

Each check returns a :class:`Check`; :func:`run_all` evaluates every check
and the CLI exits nonzero when any of them fails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import special_ortho_group

from .. import kernels as K

__all__ = ["Check", "run_all", "CHECKS", "fd_divergence", "fd_momentum_residual", "observed_order"]


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


def _shell_points(n, r_in, r_out, rng):
    w = rng.normal(size=(n, 3))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    s = rng.uniform(r_in, r_out, size=n)
    return s[:, None] * w


def fd_divergence(vel, x, h):
    div = np.zeros(len(x))
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        div += (vel(x + e)[:, d] - vel(x - e)[:, d]) / (2 * h)
    return div


def fd_momentum_residual(vel, pres, x, h):
    lap = -6 * vel(x)
    grad_p = np.zeros_like(x)
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        lap += vel(x + e) + vel(x - e)
        grad_p[:, d] = (pres(x + e) - pres(x - e)) / (2 * h)
    return np.linalg.norm(-lap / h**2 + grad_p, axis=1)


def observed_order(err_h, err_h2):
    return math.log2(err_h / err_h2) if err_h > 0 and err_h2 > 0 else math.inf


def _order_check(name, fn, h=4e-2, floor=1e-9):
    e1, e2 = fn(h), fn(h / 2)
    order = observed_order(e1, e2)
    ok = (order >= 1.8) or max(e1, e2) <= floor
    return Check(name, ok, f"max error {e1:.3e} -> {e2:.3e}, order {order:.3f}")


def _flows(seed=0):
    rng = np.random.default_rng(seed)
    V = np.array([0.3, -1.1, 0.7])
    co = K.annulus_coefficients(16.0)
    ext_pts = _shell_points(100, 1.5, 10.0, rng)
    ann_pts = _shell_points(100, 1.5, 15.0, rng)
    return [
        ("exterior", lambda x: K.exterior_velocity(x, V, 1.0), lambda x: K.exterior_pressure(x, V, 1.0), ext_pts),
        ("annulus", lambda x: K.annulus_velocity(x, V, co, 1.0), lambda x: K.annulus_pressure(x, V, co, 1.0), ann_pts),
    ]


def check_boundary_exactness() -> Check:
    rng = np.random.default_rng(1)
    V = np.array([1.0, 2.0, -0.5])
    worst = 0.0
    for r in (0.5, 1.0, 2.0):
        w = _shell_points(50, 1.0, 1.0, rng)
        worst = max(worst, np.abs(K.exterior_velocity(r * w, V, r) - V).max())
        for R in (3.0, 16.0, 1000.0):
            co = K.annulus_coefficients(R)
            worst = max(worst, np.abs(K.annulus_velocity(r * w, V, co, r) - V).max())
            worst = max(worst, np.abs(K.annulus_velocity(r * R * w, V, co, r)).max())
    return Check("boundary exactness", bool(worst <= 1e-12), f"max deviation {worst:.3e}")


def check_coefficient_residuals() -> Check:
    worst = max(np.abs(K.annulus_coefficients(R).residuals()).max() for R in (1.5, 2.0, 8.0, 64.0, 1e3, 1e4))
    return Check("coefficient residuals", bool(worst <= 1e-12), f"max residual {worst:.3e}")


def check_divergence() -> list:
    out = []
    for name, vel, _, pts in _flows():
        out.append(_order_check(f"divergence ({name})", lambda h: np.abs(fd_divergence(vel, pts, h)).max()))
    return out


def check_momentum() -> list:
    out = []
    for name, vel, pres, pts in _flows():
        out.append(_order_check(f"momentum residual ({name})",
                                lambda h: fd_momentum_residual(vel, pres, pts, h).max(), h=8e-2))
    return out


def check_stokes_law() -> Check:
    V = np.array([1.0, 0.0, 0.0])
    worst = 0.0
    for r in (0.5, 1.0, 2.0):
        F = K.surface_force(K.exterior_flow(V, r), np.zeros(3), r)
        worst = max(worst, np.linalg.norm(F - K.drag_force_exterior(V, r)) / (6 * math.pi * r))
    return Check("Stokes law", bool(worst <= 1e-6), f"max relative error {worst:.3e}")


def check_force_transfer() -> Check:
    V = np.array([1.0, 0.0, 0.0])
    worst = 0.0
    for r in (0.5, 1.0, 2.0):
        flow = K.exterior_flow(V, r)
        Fs = [K.surface_force(flow, np.zeros(3), t * r) for t in (1.0, 2.0, 4.0, 8.0)]
        worst = max(worst, max(np.linalg.norm(f - Fs[0]) for f in Fs) / np.linalg.norm(Fs[0]))
    return Check("force transfer", bool(worst <= 1e-6), f"max relative spread {worst:.3e}")


def annulus_force(r, R, V=(1.0, 0.0, 0.0)):
    co = K.annulus_coefficients(R / r)
    return K.surface_force(K.annulus_flow(co, np.asarray(V, float), r), np.zeros(3), r)


def check_scaling_identity() -> Check:
    V = np.array([1.0, 0.0, 0.0])
    r, R = 2.0, 32.0
    lhs = annulus_force(r, R) - K.surface_force(K.exterior_flow(V, r), np.zeros(3), r)
    rhs = r * (annulus_force(1.0, R / r) - K.surface_force(K.exterior_flow(V, 1.0), np.zeros(3), 1.0))
    dev = float(np.abs(lhs - rhs).max())
    return Check("scaling identity", bool(dev <= 1e-10), f"max deviation {dev:.3e}")


def annulus_force_slope(radii=(8.0, 16.0, 32.0, 64.0)):
    V = np.array([1.0, 0.0, 0.0])
    F = K.surface_force(K.exterior_flow(V, 1.0), np.zeros(3), 1.0)
    diffs = [np.linalg.norm(annulus_force(1.0, R) - F) for R in radii]
    return float(np.polyfit(np.log(radii), np.log(diffs), 1)[0]), diffs


def check_force_rate() -> Check:
    slope, diffs = annulus_force_slope()
    return Check("annulus force rate", bool(-1.15 <= slope <= -0.85), f"slope {slope:.4f}, |F_R - F| = {np.round(diffs, 6).tolist()}")


def check_equivariance() -> Check:
    rng = np.random.default_rng(2)
    Q = special_ortho_group.rvs(3, random_state=3)
    Q = Q @ np.diag([1.0, 1.0, -1.0])  # include a reflection
    V = rng.normal(size=3)
    co = K.annulus_coefficients(10.0)
    worst = 0.0
    for vel, pres, lo, hi in (
        (lambda x, v: K.exterior_velocity(x, v, 1.0), lambda x, v: K.exterior_pressure(x, v, 1.0), 1.0, 20.0),
        (lambda x, v: K.annulus_velocity(x, v, co, 1.0), lambda x, v: K.annulus_pressure(x, v, co, 1.0), 1.0, 10.0),
    ):
        x = _shell_points(50, lo, hi, rng)
        worst = max(worst, np.abs(vel(x @ Q.T, Q @ V) - vel(x, V) @ Q.T).max())
        worst = max(worst, np.abs(pres(x @ Q.T, Q @ V) - pres(x, V)).max())
    return Check("rotation/reflection equivariance", bool(worst <= 1e-12), f"max deviation {worst:.3e}")


CHECKS = [
    check_boundary_exactness,
    check_coefficient_residuals,
    check_divergence,
    check_momentum,
    check_stokes_law,
    check_force_transfer,
    check_scaling_identity,
    check_force_rate,
    check_equivariance,
]


def run_all() -> list:
    out = []
    for fn in CHECKS:
        res = fn()
        out.extend(res if isinstance(res, list) else [res])
    return out
