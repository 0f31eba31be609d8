"""MAC finite differences for the Stokes-Brinkman system on a cube.

    rho u - Laplace(u) + grad(p) = j,   div u = 0   in the cube,
    u = g                                          on its boundary.

Storage
-------
Velocity component ``c`` lives on faces normal to axis ``c``.  Each component
is kept in a *padded* array of shape (k+1) along axis ``c`` and (k+2) along
the two tangential axes: index 0 and k+1 of a tangential axis hold the
Dirichlet values on the walls (half a cell away from the first unknown), so a
component carries both its face-normal samples (the ``core`` view,
(k+1) x k x k) and its tangential boundary data.  Pressure is cell-centred.

Tangential walls are imposed by linear reflection, ghost = 2 g - u, which
keeps the discrete Laplacian symmetric.  The homogeneous operator is then
diagonalised by a type-I sine transform along the normal axis and type-II
sine transforms along the tangential axes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft
from scipy.interpolate import RegularGridInterpolator

from .config import Domain

__all__ = [
    "StaggeredField",
    "BrinkmanProblem",
    "ConvergenceError",
    "apply_operator",
    "solve_brinkman",
    "l2_stability_check",
    "energy_balance",
    "dirichlet_energy",
    "interpolate_velocity",
    "cell_velocity",
    "padded_coords",
    "boundary_mask",
    "save_field",
    "load_field",
]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


# ---------------------------------------------------------------- geometry

def _sl(axis, s):
    out = [slice(None)] * 3
    out[axis] = s
    return tuple(out)


def padded_shape(k: int, c: int) -> tuple:
    return tuple(k + 1 if d == c else k + 2 for d in range(3))


def _interior(k, c):
    return tuple(slice(1, k) if d == c else slice(1, k + 1) for d in range(3))


def _core(k, c):
    return tuple(slice(0, k + 1) if d == c else slice(1, k + 1) for d in range(3))


def _axis_coords(domain: Domain, k: int, c: int, d: int) -> np.ndarray:
    h = domain.L / k
    if d == c:
        x = np.arange(k + 1) * h
    else:
        x = np.concatenate([[0.0], (np.arange(k) + 0.5) * h, [domain.L]])
    return domain.origin[d] + x


def padded_coords(domain: Domain, k: int, c: int) -> np.ndarray:
    """Coordinates of every entry of the padded array of component ``c``, shape (..., 3)."""
    axes = [_axis_coords(domain, k, c, d) for d in range(3)]
    X = np.meshgrid(*axes, indexing="ij")
    return np.stack(X, axis=-1)


def boundary_mask(k: int, c: int) -> np.ndarray:
    """True on padded entries that carry Dirichlet data (normal boundary faces and walls)."""
    m = np.ones(padded_shape(k, c), dtype=bool)
    m[_interior(k, c)] = False
    return m


def cell_centers(domain: Domain, k: int) -> np.ndarray:
    h = domain.L / k
    x = (np.arange(k) + 0.5) * h
    X = np.meshgrid(x, x, x, indexing="ij")
    return domain.lo + np.stack(X, axis=-1)


# ---------------------------------------------------------------- containers

@dataclass
class StaggeredField:
    domain: Domain
    k: int
    vel: list
    p: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, domain: Domain, k: int) -> "StaggeredField":
        return cls(domain, k, [np.zeros(padded_shape(k, c)) for c in range(3)], np.zeros((k, k, k)))

    @classmethod
    def from_function(cls, domain: Domain, k: int, u_fn, p_fn=None) -> "StaggeredField":
        """Sample a velocity function (..., 3) -> (..., 3) on every padded entry."""
        f = cls.zeros(domain, k)
        for c in range(3):
            f.vel[c] = np.asarray(u_fn(padded_coords(domain, k, c))[..., c], dtype=float).copy()
        if p_fn is not None:
            f.p = np.asarray(p_fn(cell_centers(domain, k)), dtype=float)
        return f

    @property
    def h(self) -> float:
        return self.domain.L / self.k

    @property
    def u(self):
        return self.vel[0][_core(self.k, 0)]

    @property
    def v(self):
        return self.vel[1][_core(self.k, 1)]

    @property
    def w(self):
        return self.vel[2][_core(self.k, 2)]

    def core(self, c):
        return self.vel[c][_core(self.k, c)]

    def interior(self, c):
        return self.vel[c][_interior(self.k, c)]

    def copy(self) -> "StaggeredField":
        return StaggeredField(self.domain, self.k, [a.copy() for a in self.vel], self.p.copy(), dict(self.info))

    def scaled(self, lam: float) -> "StaggeredField":
        return StaggeredField(self.domain, self.k, [lam * a for a in self.vel], lam * self.p)

    def __add__(self, other: "StaggeredField") -> "StaggeredField":
        _check_match(self, other)
        return StaggeredField(self.domain, self.k, [a + b for a, b in zip(self.vel, other.vel)], self.p + other.p)

    def __sub__(self, other: "StaggeredField") -> "StaggeredField":
        return self + other.scaled(-1.0)


def _check_match(a, b):
    if a.k != b.k or a.domain != b.domain:
        raise ValueError("fields live on different grids")


@dataclass
class BrinkmanProblem:
    """Data of one Brinkman solve.

    rho : (k, k, k) cell values, >= 0.
    j   : three padded-shape face arrays; only interior entries are read.
    g   : three padded-shape arrays; only boundary entries are read.
    """

    domain: Domain
    k: int
    rho: np.ndarray
    j: list
    g: list
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        k = self.k
        self.rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (k, k, k)).copy()
        self.j = [np.asarray(a, dtype=float) for a in self.j]
        self.g = [np.asarray(a, dtype=float) for a in self.g]
        for c in range(3):
            if self.j[c].shape != padded_shape(k, c) or self.g[c].shape != padded_shape(k, c):
                raise ValueError(f"component {c} arrays must have shape {padded_shape(k, c)}")
        if np.any(self.rho < 0):
            raise ValueError("rho must be nonnegative")

    @property
    def h(self) -> float:
        return self.domain.L / self.k

    @classmethod
    def from_functions(cls, domain: Domain, k: int, rho=0.0, j=None, g=None, **kw) -> "BrinkmanProblem":
        """Build from callables of points (..., 3); ``rho`` may also be a constant."""
        if callable(rho):
            rho = rho(cell_centers(domain, k))
        zeros = [np.zeros(padded_shape(k, c)) for c in range(3)]
        jj = zeros if j is None else [np.asarray(j(padded_coords(domain, k, c))[..., c], float) for c in range(3)]
        gg = [z.copy() for z in zeros]
        if g is not None:
            for c in range(3):
                gg[c] = np.asarray(g(padded_coords(domain, k, c))[..., c], float)
        return cls(domain, k, rho, jj, gg, **kw)

    def boundary_flux(self) -> float:
        """Net outward flux of the normal boundary data."""
        k, h = self.k, self.h
        tot = 0.0
        for c in range(3):
            core = self.g[c][_core(k, c)]
            tot += core[_sl(c, -1)].sum() - core[_sl(c, 0)].sum()
        return tot * h * h

    def data_scale(self) -> float:
        js = max(np.abs(self.j[c][_interior(self.k, c)]).max(initial=0.0) for c in range(3))
        gs = max(np.abs(self.g[c][boundary_mask(self.k, c)]).max(initial=0.0) for c in range(3))
        return js + gs


# ---------------------------------------------------------------- stencils

def _neg_lap_hom(X, c, h):
    """-Laplace on an unknown-shaped array with zero Dirichlet data."""
    out = 6.0 * X
    for d in range(3):
        out[_sl(d, slice(1, None))] -= X[_sl(d, slice(None, -1))]
        out[_sl(d, slice(None, -1))] -= X[_sl(d, slice(1, None))]
        if d != c:
            out[_sl(d, 0)] += X[_sl(d, 0)]
            out[_sl(d, -1)] += X[_sl(d, -1)]
    return out / (h * h)


def _bc_rhs(G, c, k, h):
    """Contribution of the boundary entries of a padded array to Laplace(u) at the unknowns."""
    out = np.zeros(tuple(k - 1 if d == c else k for d in range(3)))
    inner = _interior(k, c)
    for d in range(3):
        lo = list(inner)
        hi = list(inner)
        if d == c:
            lo[d], hi[d] = 0, k
            out[_sl(d, 0)] += G[tuple(lo)]
            out[_sl(d, -1)] += G[tuple(hi)]
        else:
            lo[d], hi[d] = 0, k + 1
            out[_sl(d, 0)] += 2.0 * G[tuple(lo)]
            out[_sl(d, -1)] += 2.0 * G[tuple(hi)]
    return out / (h * h)


def _face_rho(rho, c):
    return 0.5 * (rho[_sl(c, slice(1, None))] + rho[_sl(c, slice(None, -1))])


def _grad(p, c, h):
    return np.diff(p, axis=c) / h


def _grad_T(q, c, h):
    pad = [(0, 0)] * 3
    pad[c] = (1, 1)
    return -np.diff(np.pad(q, pad), axis=c) / h


def _divergence(vel, k, h):
    div = np.zeros((k, k, k))
    for c in range(3):
        div += np.diff(vel[c][_core(k, c)], axis=c) / h
    return div


@lru_cache(maxsize=16)
def _eigs(k, c, h):
    lam_n = (2 - 2 * np.cos(np.pi * np.arange(1, k) / k)) / h**2
    lam_t = (2 - 2 * np.cos(np.pi * np.arange(1, k + 1) / k)) / h**2
    parts = [lam_n if d == c else lam_t for d in range(3)]
    return parts[0][:, None, None] + parts[1][None, :, None] + parts[2][None, None, :]


def _fast_solve(F, c, h, sigma):
    """Solve (sigma - Laplace) X = F with homogeneous Dirichlet data."""
    k = F.shape[(c + 1) % 3]
    X = F
    for d in range(3):
        X = fft.dst(X, type=1 if d == c else 2, axis=d, norm="ortho")
    X = X / (sigma + _eigs(k, c, h))
    for d in range(3):
        X = fft.idst(X, type=1 if d == c else 2, axis=d, norm="ortho")
    return X


@lru_cache(maxsize=8)
def _neumann_eigs(k, h):
    lam = (2 - 2 * np.cos(np.pi * np.arange(k) / k)) / h**2
    return lam[:, None, None] + lam[None, :, None] + lam[None, None, :]


def _neumann_inverse(r, h):
    k = r.shape[0]
    R = fft.dctn(r, type=2, norm="ortho")
    lam = _neumann_eigs(k, h)
    out = np.zeros_like(R)
    nz = lam > 0
    out[nz] = R[nz] / lam[nz]
    return fft.idctn(out, type=2, norm="ortho")


# ---------------------------------------------------------------- operators

def apply_operator(problem: BrinkmanProblem, fld: StaggeredField):
    """Residuals of the discrete equations for a candidate field.

    Returns (momentum residuals at the interior faces, one array per
    component; continuity residual per cell).  Boundary entries of ``fld``
    are replaced by the problem's Dirichlet data.
    """
    if fld.k != problem.k or fld.domain != problem.domain:
        raise ValueError("field and problem resolutions differ")
    k, h = problem.k, problem.h
    vel = _with_bc(fld.vel, problem.g, k)
    mom = []
    for c in range(3):
        X = vel[c][_interior(k, c)]
        r = _face_rho(problem.rho, c) * X + _neg_lap_hom(X, c, h) - _bc_rhs(vel[c], c, k, h)
        r += _grad(fld.p, c, h) - problem.j[c][_interior(k, c)]
        mom.append(r)
    return mom, _divergence(vel, k, h)


def _with_bc(vel, g, k):
    out = []
    for c in range(3):
        a = np.array(vel[c], dtype=float, copy=True)
        m = boundary_mask(k, c)
        a[m] = g[c][m]
        out.append(a)
    return out


class _VelocitySolver:
    """(rho_f - Laplace)^-1 per component: direct by sine transforms, PCG when rho varies."""

    def __init__(self, rho, k, h, tol):
        self.k, self.h, self.tol = k, h, tol
        self.rho_f = [_face_rho(rho, c) for c in range(3)]
        self.sigma = [float(r.mean()) for r in self.rho_f]
        self.const = [bool(np.ptp(r) == 0.0) for r in self.rho_f]
        self.inner_iterations = 0

    def apply(self, c, X):
        return self.rho_f[c] * X + _neg_lap_hom(X, c, self.h)

    def solve(self, c, F):
        h = self.h
        if self.const[c]:
            return _fast_solve(F, c, h, self.sigma[c])
        x = _fast_solve(F, c, h, self.sigma[c])
        r = F - self.apply(c, x)
        z = _fast_solve(r, c, h, self.sigma[c])
        d = z.copy()
        rz = np.vdot(r, z)
        fn = np.linalg.norm(F)
        if fn == 0:
            return np.zeros_like(F)
        for _ in range(200):
            if np.linalg.norm(r) <= self.tol * fn:
                break
            Ad = self.apply(c, d)
            alpha = rz / np.vdot(d, Ad)
            x += alpha * d
            r -= alpha * Ad
            z = _fast_solve(r, c, h, self.sigma[c])
            rz_new = np.vdot(r, z)
            d = z + (rz_new / rz) * d
            rz = rz_new
            self.inner_iterations += 1
        return x


def solve_brinkman(problem: BrinkmanProblem) -> StaggeredField:
    """Pressure-Schur conjugate gradients with a Cahouet-Chabard preconditioner.

    Raises ``ConvergenceError`` (carrying the residual history) when the
    outer iteration cap is hit, ``ValueError`` on incompatible boundary flux.
    """
    k, h, tol = problem.k, problem.h, problem.tol
    scale = problem.data_scale()
    flux = problem.boundary_flux()
    if abs(flux) > 1e-10 * max(1.0, scale * problem.domain.L**2):
        raise ValueError(f"boundary data has net flux {flux:.3e}; Dirichlet data must be compatible")
    out = StaggeredField.zeros(problem.domain, k)
    if scale == 0.0:
        out.info = {"iterations": 0, "history": [0.0], "inner_iterations": 0}
        return out

    vs = _VelocitySolver(problem.rho, k, h, tol=1e-3 * tol * 1e-3)
    f = [problem.j[c][_interior(k, c)] + _bc_rhs(problem.g[c], c, k, h) for c in range(3)]
    gvel = _with_bc([np.zeros(padded_shape(k, c)) for c in range(3)], problem.g, k)
    b = -_divergence(gvel, k, h)  # D_int u = -D_bc

    Ainv_f = [vs.solve(c, f[c]) for c in range(3)]
    rhs = b + sum(_grad_T(Ainv_f[c], c, h) for c in range(3))
    rhs -= rhs.mean()

    def S(p):
        return sum(_grad_T(vs.solve(c, _grad(p, c, h)), c, h) for c in range(3))

    rho_bar = float(problem.rho.mean())

    def M(r):
        z = r.copy()
        if rho_bar > 0:
            z += rho_bar * _neumann_inverse(r, h)
        return z - z.mean()

    p = np.zeros((k, k, k))
    bn = np.linalg.norm(rhs)
    history = [bn]
    target = 1e-2 * tol * bn
    it = 0
    if bn > 0:
        r = rhs.copy()
        z = M(r)
        d = z.copy()
        rz = np.vdot(r, z)
        while np.linalg.norm(r) > target:
            if it >= problem.max_iter:
                raise ConvergenceError(f"Schur CG did not converge in {it} iterations", history)
            Sd = S(d)
            alpha = rz / np.vdot(d, Sd)
            p += alpha * d
            r -= alpha * Sd
            r -= r.mean()
            z = M(r)
            rz_new = np.vdot(r, z)
            d = z + (rz_new / rz) * d
            rz = rz_new
            it += 1
            history.append(float(np.linalg.norm(r)))
    p -= p.mean()

    for c in range(3):
        X = vs.solve(c, f[c] - _grad(p, c, h))
        out.vel[c] = gvel[c].copy()
        out.vel[c][_interior(k, c)] = X
    out.p = p - p.mean()

    mom, cont = apply_operator(problem, out)
    fscale = max(np.linalg.norm(np.concatenate([x.ravel() for x in f])), 1e-300)
    rel_mom = float(np.linalg.norm(np.concatenate([m.ravel() for m in mom])) / fscale)
    rel_cont = float(np.linalg.norm(cont) / max(bn, 1e-300)) if bn > 0 else float(np.linalg.norm(cont))
    out.info = {
        "iterations": it,
        "inner_iterations": vs.inner_iterations,
        "history": history,
        "momentum_residual": rel_mom,
        "continuity_residual": rel_cont,
    }
    log.debug("brinkman k=%d: %d outer iterations, residuals %.2e / %.2e", k, it, rel_mom, rel_cont)
    return out


# ---------------------------------------------------------------- energies

def _line_energy(P, d, k, h, plane_axis):
    """Sum of squared differences along tangential axis d, planes along plane_axis weighted by trapezoid."""
    inner = [slice(1, k + 1)] * 3
    inner[plane_axis] = slice(0, k + 1)
    inner[d] = slice(None)
    A = P[tuple(inner)]
    body = np.diff(A[_sl(d, slice(1, k + 1))], axis=d) ** 2
    walls = 2.0 * (A[_sl(d, 1)] - A[_sl(d, 0)]) ** 2 + 2.0 * (A[_sl(d, k + 1)] - A[_sl(d, k)]) ** 2
    tot = body.sum(axis=d) + walls
    wt = np.ones(k + 1)
    wt[0] = wt[-1] = 0.5
    shape = [1, 1, 1]
    shape[plane_axis] = k + 1
    del shape[d]
    return float((tot * wt.reshape(shape)).sum() * h)


def dirichlet_energy(fld: StaggeredField) -> float:
    """Discrete integral of |grad u|^2 over the cube.

    Normal differences use all face samples; tangential differences include
    half-cell differences to the wall values, and tangential differences on
    boundary face planes carry trapezoid weight 1/2.
    """
    k, h = fld.k, fld.h
    tot = 0.0
    for c in range(3):
        core = fld.vel[c][_core(k, c)]
        tot += float((np.diff(core, axis=c) ** 2).sum() * h)
        for d in range(3):
            if d != c:
                tot += _line_energy(fld.vel[c], d, k, h, c)
    return tot


def _boundary_viscous_terms(vel, k, h):
    """E(u) minus the interior sum of u . (-Laplace u) h^3, in closed form from boundary-adjacent values."""
    tot = 0.0
    for c in range(3):
        P = vel[c]
        core = P[_core(k, c)]
        u0, u1 = core[_sl(c, 0)], core[_sl(c, 1)]
        un, un1 = core[_sl(c, k)], core[_sl(c, k - 1)]
        tot += float((un * (un - un1) - u0 * (u1 - u0)).sum() * h)
        for d in range(3):
            if d == c:
                continue
            sel = [slice(1, k + 1)] * 3
            sel[c] = slice(1, k)
            sel[d] = slice(None)
            A = P[tuple(sel)]
            g0, a1 = A[_sl(d, 0)], A[_sl(d, 1)]
            gn, an = A[_sl(d, k + 1)], A[_sl(d, k)]
            tot += float((-2 * g0 * (a1 - g0) - 2 * gn * (an - gn)).sum() * h)
            for plane in (0, k):
                sel = [slice(1, k + 1)] * 3
                sel[c] = plane
                sel[d] = slice(None)
                A = P[tuple(sel)]
                dd = d if d < c else d - 1
                body = (np.diff(A[_sl1(dd, slice(1, k + 1))], axis=dd) ** 2).sum()
                walls = 2 * (A[_sl1(dd, 1)] - A[_sl1(dd, 0)]) ** 2 + 2 * (A[_sl1(dd, k + 1)] - A[_sl1(dd, k)]) ** 2
                tot += 0.5 * float(body + walls.sum()) * h
    return tot


def _sl1(axis, s):
    out = [slice(None)] * 2
    out[axis] = s
    return tuple(out)


def energy_balance(problem: BrinkmanProblem, fld: StaggeredField) -> tuple[float, float]:
    """Both sides of the discrete energy identity

        E(u) + sum rho |u|^2 h^3 = sum j . u h^3 + boundary terms,

    with the boundary terms (viscous and pressure) evaluated from the
    boundary data and the boundary-adjacent values only.
    """
    k, h = problem.k, problem.h
    vel = _with_bc(fld.vel, problem.g, k)
    h3 = h**3
    lhs = dirichlet_energy(StaggeredField(problem.domain, k, vel, fld.p))
    rhs = 0.0
    for c in range(3):
        X = vel[c][_interior(k, c)]
        lhs += float((_face_rho(problem.rho, c) * X * X).sum() * h3)
        rhs += float((problem.j[c][_interior(k, c)] * X).sum() * h3)
    gvel = _with_bc([np.zeros(padded_shape(k, c)) for c in range(3)], problem.g, k)
    d_bc = _divergence(gvel, k, h)
    rhs += _boundary_viscous_terms(vel, k, h) - float((fld.p * d_bc).sum() * h3)
    return lhs, rhs


def l2_stability_check(problem: BrinkmanProblem, fld: StaggeredField) -> tuple[float, float]:
    """lhs = sum (|grad u|^2 + rho |u|^2) h^3, rhs = ||j||_2 ||u||_2 (+ |boundary terms|)."""
    k, h = problem.k, problem.h
    vel = _with_bc(fld.vel, problem.g, k)
    lhs, bal_rhs = energy_balance(problem, fld)
    h3 = h**3
    jn = sum(float((problem.j[c][_interior(k, c)] ** 2).sum()) for c in range(3)) * h3
    un = sum(float((vel[c][_interior(k, c)] ** 2).sum()) for c in range(3)) * h3
    jdotu = sum(float((problem.j[c][_interior(k, c)] * vel[c][_interior(k, c)]).sum()) for c in range(3)) * h3
    rhs = np.sqrt(jn) * np.sqrt(un) + abs(bal_rhs - jdotu)
    return lhs, float(rhs)


# ---------------------------------------------------------------- sampling

def cell_velocity(fld: StaggeredField) -> np.ndarray:
    """Cell averages of the two faces of each component, shape (k, k, k, 3)."""
    out = np.empty((fld.k,) * 3 + (3,))
    for c in range(3):
        core = fld.core(c)
        out[..., c] = 0.5 * (core[_sl(c, slice(1, None))] + core[_sl(c, slice(None, -1))])
    return out


def interpolate_velocity(fld: StaggeredField, points) -> np.ndarray:
    """Trilinear interpolation of each padded component at arbitrary points in the closed cube."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 3)
    out = np.empty_like(flat)
    for c in range(3):
        axes = [_axis_coords(fld.domain, fld.k, c, d) for d in range(3)]
        interp = RegularGridInterpolator(axes, fld.vel[c], bounds_error=True)
        out[:, c] = interp(flat)
    return out.reshape(pts.shape)


# ---------------------------------------------------------------- dump

def save_field(fld: StaggeredField, path) -> Path:
    """JSON header at ``path`` plus little-endian float64 sidecar ``path.bin``."""
    path = Path(path)
    bin_path = path.with_suffix(path.suffix + ".bin")
    arrays = [*fld.vel, fld.p]
    header = {
        "resolution": fld.k,
        "spacing": fld.h,
        "domain": fld.domain.to_dict(),
        "component_order": "u,v,w,p",
        "layout": "velocity components padded with tangential wall values; row-major (C order)",
        "shapes": [list(a.shape) for a in arrays],
        "dtype": "<f8",
        "data_file": bin_path.name,
    }
    path.write_text(json.dumps(header, indent=1), encoding="utf-8")
    with open(bin_path, "wb") as fh:
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))
    return path


def load_field(path) -> StaggeredField:
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    raw = np.fromfile(path.parent / header["data_file"], dtype="<f8")
    arrays, pos = [], 0
    for shp in header["shapes"]:
        n = int(np.prod(shp))
        arrays.append(raw[pos : pos + n].reshape(shp).astype(float))
        pos += n
    if pos != raw.size:
        raise ValueError("sidecar size does not match header shapes")
    return StaggeredField(Domain.from_dict(header["domain"]), int(header["resolution"]), arrays[:3], arrays[3])
