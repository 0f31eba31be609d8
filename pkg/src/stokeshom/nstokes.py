"""Monopole surrogate for the N-hole Stokes problem.

Each hole i is replaced by the exterior sphere solution of radius
a_i = r_i / N carrying the force F_i, i.e. boundary velocity F_i / (6 pi a_i).
The forces solve the mobility system

    V_i = F_i / (6 pi a_i) + sum_{j != i} U_{a_j}(x_i - x_j; F_j) [+ w(x_i)]

where ``w`` is the optional grid wall correction that cancels the particle
field on the cube boundary.  In wall-corrected mode ``w`` depends linearly on
the forces, so the coupled system is solved by GMRES preconditioned with the
free-space mobility inverse.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from .brinkman import (
    BrinkmanProblem,
    StaggeredField,
    _core,
    _sl,
    boundary_mask,
    interpolate_velocity,
    padded_coords,
    padded_shape,
    solve_brinkman,
)
from .config import Domain, ParticleCloud
from .kernels import sphere_quadrature

__all__ = [
    "ForceSet",
    "CompositeFlow",
    "DivergenceError",
    "mobility_matrix",
    "particle_field",
    "solve_forces",
    "build_flow",
    "wall_correction",
    "evaluate_extended_field",
    "sample_to_grid",
    "particle_bc_residual",
    "wall_residual",
    "MODES",
]

log = logging.getLogger(__name__)

MODES = ("free_space", "wall_corrected")
_CHUNK = 2_000_000  # target-source pairs per vectorised block


class DivergenceError(RuntimeError):
    """The reflection iteration failed to contract."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass
class ForceSet:
    forces: np.ndarray
    mode: str = "free_space"
    tol: float = 0.0
    iterations: int = 0
    final_residual: float = 0.0
    method: str = "jacobi"
    history: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "forces": np.asarray(self.forces).tolist(),
                "mode": self.mode,
                "tol": self.tol,
                "iterations": self.iterations,
                "final_residual": self.final_residual,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ForceSet":
        d = json.loads(text)
        return cls(
            np.array(d["forces"], dtype=float).reshape(-1, 3),
            d["mode"], float(d["tol"]), int(d["iterations"]), float(d["final_residual"]),
        )


@dataclass
class CompositeFlow:
    cloud: ParticleCloud
    forces: ForceSet
    wall: StaggeredField | None = None
    mode: str = "free_space"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "wall_corrected" and self.wall is None:
            raise ValueError("wall_corrected mode needs a solved wall correction")

    @property
    def boundary_velocities(self) -> np.ndarray:
        a = self.cloud.physical_radii
        return self.forces.forces / (6 * math.pi * a[:, None])


# ---------------------------------------------------------------- kernels

def _pair_tensor(d, a):
    """3x3 blocks K with U_a(d; F) = K F / (6 pi a) for separations d (..., 3)."""
    s = np.linalg.norm(d, axis=-1)
    rho = s / a
    f = 0.75 / rho + 0.25 / rho**3
    h = 0.75 / rho - 0.75 / rho**3
    w = d / s[..., None]
    return f[..., None, None] * np.eye(3) + h[..., None, None] * w[..., :, None] * w[..., None, :]


def mobility_matrix(cloud: ParticleCloud) -> np.ndarray:
    """Dense 3N x 3N free-space mobility of the monopole surrogate."""
    n = cloud.n
    a = cloud.physical_radii
    x = cloud.positions
    d = x[:, None, :] - x[None, :, :]
    off = ~np.eye(n, dtype=bool)
    K = np.zeros((n, n, 3, 3))
    K[off] = _pair_tensor(d[off], np.broadcast_to(a[None, :], (n, n))[off])
    M = K / (6 * math.pi * a[None, :, None, None])
    M[np.arange(n), np.arange(n)] = np.eye(3) / (6 * math.pi * a[:, None, None])
    return M.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def particle_field(targets, centers, a, boundary_vel) -> np.ndarray:
    """Superposed exterior sphere velocities at ``targets``; no domain checks.

    Sources located exactly at a target are skipped.
    """
    t = np.asarray(targets, dtype=float)
    shape = t.shape
    t = t.reshape(-1, 3)
    out = np.zeros_like(t)
    n = len(centers)
    if n == 0:
        return out.reshape(shape)
    step = max(1, _CHUNK // n)
    for lo in range(0, len(t), step):
        d = t[lo : lo + step, None, :] - centers[None, :, :]
        s2 = np.einsum("mnk,mnk->mn", d, d)
        zero = s2 == 0.0
        s2[zero] = 1.0
        s = np.sqrt(s2)
        rho = s / a[None, :]
        f = 0.75 / rho + 0.25 / rho**3
        hh = (0.75 / rho - 0.75 / rho**3) / s2
        f[zero] = 0.0
        hh[zero] = 0.0
        dv = np.einsum("mnk,nk->mn", d, boundary_vel)
        out[lo : lo + step] = f @ boundary_vel + np.einsum("mn,mnk->mk", hh * dv, d)
    return out.reshape(shape)


# ---------------------------------------------------------------- forces

def _jacobi(cloud, rhs, tol, max_iter, relaxation):
    n = cloud.n
    a = cloud.physical_radii
    sixpia = 6 * math.pi * a[:, None]
    M = mobility_matrix(cloud) if n > 1 else None
    F = np.zeros((n, 3))
    norm = np.linalg.norm(rhs)
    history = []
    if norm == 0:
        return F, 0, 0.0, history
    for it in range(1, max_iter + 1):
        if M is None:
            ambient = np.zeros((n, 3))
        else:
            ambient = (M @ F.ravel()).reshape(n, 3) - F / sixpia
        F_new = sixpia * (rhs - ambient)
        F = F + relaxation * (F_new - F) if relaxation != 1.0 else F_new
        res = rhs - (F / sixpia if M is None else (M @ F.ravel()).reshape(n, 3))
        r = float(np.linalg.norm(res) / norm)
        history.append(r)
        if r <= tol:
            return F, it, r, history
        if not np.isfinite(r) or (it > 10 and r > 1e3 * history[0]):
            break
    raise DivergenceError(
        f"reflection iteration stalled or diverged after {len(history)} sweeps "
        f"(residual {history[0]:.3e} -> {history[-1]:.3e}); interaction too strong for Jacobi",
        history,
    )


def solve_forces(
    cloud: ParticleCloud,
    mode: str = "free_space",
    tol: float = 1e-10,
    max_iter: int = 2000,
    method: str = "jacobi",
    background=None,
    relaxation: float = 1.0,
    resolution: int = 32,
    wall_tol: float = 1e-10,
) -> ForceSet:
    """Forces of the monopole surrogate.

    ``method="jacobi"`` is the sweep-by-sweep reflection fixed point,
    ``method="direct"`` a dense LU solve of the same system.  ``background``
    is a prescribed ambient velocity at the particle centres.  In
    ``wall_corrected`` mode the forces are coupled to the grid wall
    correction at ``resolution``; the result carries the final correction in
    ``ForceSet.history`` metadata via :func:`build_flow`.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "wall_corrected":
        return build_flow(cloud, mode, resolution, tol=tol, method=method, wall_tol=wall_tol, max_iter=max_iter).forces
    n = cloud.n
    rhs = cloud.velocities.copy()
    if background is not None:
        rhs = rhs - np.asarray(background, dtype=float).reshape(n, 3)
    if method == "jacobi":
        F, it, r, hist = _jacobi(cloud, rhs, tol, max_iter, relaxation)
    elif method == "direct":
        M = mobility_matrix(cloud)
        F = np.linalg.solve(M, rhs.ravel()).reshape(n, 3)
        norm = np.linalg.norm(rhs)
        r = float(np.linalg.norm(rhs.ravel() - M @ F.ravel()) / norm) if norm else 0.0
        it, hist = 1, [r]
    else:
        raise ValueError(f"unknown method {method!r}")
    return ForceSet(F, mode, tol, it, r, method, hist)


# ---------------------------------------------------------------- wall

def _boundary_data(cloud, F, domain, k):
    a = cloud.physical_radii
    bv = F / (6 * math.pi * a[:, None])
    g = []
    for c in range(3):
        m = boundary_mask(k, c)
        arr = np.zeros(padded_shape(k, c))
        arr[m] = -particle_field(padded_coords(domain, k, c)[m], cloud.positions, a, bv)[:, c]
        g.append(arr)
    return g


def _remove_net_flux(prob: BrinkmanProblem) -> float:
    """Spread the discrete net normal flux uniformly over the six faces; returns the removed flux."""
    k, h = prob.k, prob.h
    flux = prob.boundary_flux()
    corr = flux / (6 * (k * h) ** 2)
    for c in range(3):
        core = prob.g[c][_core(k, c)]
        core[_sl(c, -1)] -= corr
        core[_sl(c, 0)] += corr
    return flux


def wall_correction(cloud: ParticleCloud, forces, k: int, tol: float = 1e-10, domain: Domain | None = None) -> StaggeredField:
    """Stokes flow in the cube whose boundary values cancel the particle field."""
    domain = domain or cloud.domain
    F = forces.forces if isinstance(forces, ForceSet) else np.asarray(forces, dtype=float).reshape(-1, 3)
    g = _boundary_data(cloud, F, domain, k)
    prob = BrinkmanProblem(domain, k, 0.0, [np.zeros(padded_shape(k, c)) for c in range(3)], g, tol=tol)
    removed = _remove_net_flux(prob)
    out = solve_brinkman(prob)
    out.info["removed_flux"] = removed
    # fill unused edge entries of the padded arrays with the data as well
    for c in range(3):
        m = boundary_mask(k, c)
        out.vel[c][m] = prob.g[c][m]
    return out


def build_flow(
    cloud: ParticleCloud,
    mode: str = "wall_corrected",
    resolution: int = 32,
    tol: float = 1e-10,
    method: str = "direct",
    wall_tol: float = 1e-10,
    max_iter: int = 2000,
    coupling_tol: float = 1e-9,
) -> CompositeFlow:
    """Solve forces (and the wall correction) and wrap them as an extended field."""
    if mode == "free_space":
        fs = solve_forces(cloud, "free_space", tol=tol, max_iter=max_iter, method=method)
        return CompositeFlow(cloud, fs, None, mode)

    n = cloud.n
    domain = cloud.domain
    k = resolution
    a = cloud.physical_radii
    V = cloud.velocities
    if n == 0 or not np.any(V):
        fs = ForceSet(np.zeros((n, 3)), mode, tol, 0, 0.0, method)
        return CompositeFlow(cloud, fs, StaggeredField.zeros(domain, k), mode)

    if method == "direct":
        lu = sla.lu_factor(mobility_matrix(cloud))

        def particle_solve(rhs):
            return sla.lu_solve(lu, rhs.ravel()).reshape(n, 3)
    elif method == "jacobi":
        def particle_solve(rhs):
            shifted = cloud.with_velocities(rhs.reshape(n, 3))
            return solve_forces(shifted, "free_space", tol=tol, max_iter=max_iter, method="jacobi").forces
    else:
        raise ValueError(f"unknown method {method!r}")

    def wall_at_particles(F):
        w = wall_correction(cloud, F, k, tol=wall_tol, domain=domain)
        return interpolate_velocity(w, cloud.positions), w

    n_calls = [0]

    def matvec(f):
        n_calls[0] += 1
        F = f.reshape(n, 3)
        w, _ = wall_at_particles(F)
        return (F + particle_solve(w)).ravel()

    op = LinearOperator((3 * n, 3 * n), matvec=matvec, dtype=float)
    b = particle_solve(V).ravel()
    hist = []
    F, info = gmres(op, b, x0=b.copy(), rtol=coupling_tol, atol=0.0, restart=60, maxiter=5,
                    callback=lambda r: hist.append(float(r)), callback_type="pr_norm")
    if info != 0:
        raise DivergenceError(f"wall coupling GMRES did not converge (info={info})", hist)
    F = F.reshape(n, 3)
    w_p, wall = wall_at_particles(F)
    M = mobility_matrix(cloud)
    res = V - (M @ F.ravel()).reshape(n, 3) - w_p
    r = float(np.linalg.norm(res) / np.linalg.norm(V))
    fs = ForceSet(F, mode, tol, n_calls[0], r, method, hist)
    log.debug("wall-coupled forces: %d GMRES applications, residual %.2e", n_calls[0], r)
    return CompositeFlow(cloud, fs, wall, mode)


# ---------------------------------------------------------------- evaluation

def _inside_index(x, cloud):
    """Index of the ball containing each point, -1 when outside all balls."""
    flat = x.reshape(-1, 3)
    idx = np.full(len(flat), -1)
    a = cloud.physical_radii
    n = cloud.n
    if n == 0:
        return idx.reshape(x.shape[:-1])
    step = max(1, _CHUNK // n)
    for lo in range(0, len(flat), step):
        d2 = ((flat[lo : lo + step, None, :] - cloud.positions[None]) ** 2).sum(-1)
        hit = d2 <= (a**2)[None, :]
        any_hit = hit.any(axis=1)
        idx[lo : lo + step][any_hit] = hit[any_hit].argmax(axis=1)
    return idx.reshape(x.shape[:-1])


def evaluate_extended_field(flow: CompositeFlow, x) -> np.ndarray:
    """E[u^N](x): V_i inside ball i, the surrogate flow elsewhere."""
    x = np.asarray(x, dtype=float)
    cloud = flow.cloud
    out = particle_field(x, cloud.positions, cloud.physical_radii, flow.boundary_velocities)
    if flow.mode == "wall_corrected":
        out = out + interpolate_velocity(flow.wall, x)
    idx = _inside_index(x, cloud)
    inside = idx >= 0
    out[inside] = cloud.velocities[idx[inside]]
    return out


def sample_to_grid(flow: CompositeFlow, k: int) -> StaggeredField:
    """Sample E[u^N] on every padded face entry of a k^3 MAC grid; pressure is left at zero."""
    cloud = flow.cloud
    domain = cloud.domain
    out = StaggeredField.zeros(domain, k)
    same_grid = flow.wall is not None and flow.wall.k == k and flow.wall.domain == domain
    for c in range(3):
        X = padded_coords(domain, k, c)
        vals = particle_field(X, cloud.positions, cloud.physical_radii, flow.boundary_velocities)[..., c]
        if flow.mode == "wall_corrected":
            if same_grid:
                vals = vals + flow.wall.vel[c]
            else:
                vals = vals + interpolate_velocity(flow.wall, X)[..., c]
        idx = _inside_index(X, cloud)
        inside = idx >= 0
        vals[inside] = cloud.velocities[idx[inside], c]
        out.vel[c] = vals
    return out


def particle_bc_residual(flow: CompositeFlow, quad_order=(4, 8)) -> np.ndarray:
    """Per particle, max over surface nodes of |u(x) - V_i| with u the full surrogate (own kernel exact)."""
    cloud = flow.cloud
    n = cloud.n
    if n == 0:
        return np.zeros(0)
    a = cloud.physical_radii
    omega, _ = sphere_quadrature(*quad_order)
    nodes = cloud.positions[:, None, :] + a[:, None, None] * omega[None, :, :]
    vals = particle_field(nodes, cloud.positions, a, flow.boundary_velocities)
    if flow.mode == "wall_corrected":
        vals = vals + interpolate_velocity(flow.wall, nodes)
    err = np.linalg.norm(vals - cloud.velocities[:, None, :], axis=-1)
    return err.max(axis=1)


def wall_residual(grid_field: StaggeredField) -> float:
    """Max |velocity| over all Dirichlet entries (boundary faces and wall values) of a sampled field."""
    k = grid_field.k
    return float(max(np.abs(grid_field.vel[c][boundary_mask(k, c)]).max() for c in range(3)))
