"""Closed-form Stokes flows around a translating sphere.

Two configurations are covered: the exterior of a ball B(0, r) with velocity
``V`` on the sphere and decay at infinity, and the annulus A(0, r, R) with
velocity ``V`` on the inner sphere and no slip on the outer one.  At unit
inner radius both velocity fields read

    u(x) = f(s) (I - P) V + g(s) P V,     s = |x|,  P = w w^T,  w = x / s

    f(s) = -(4 a s^2 + 2 b + c / s - d / s^3)
    g(s) = -2 (a s^2 + b + c / s + d / s^3)

with (a, b, c, d) = (0, 0, -3/4, 1/4) for the exterior problem.  Other radii
follow from u_r(x) = u_1(x / r), p_r(x) = p_1(x / r) / r.

All evaluators are vectorised over leading axes of ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "DomainError",
    "AnnulusCoefficients",
    "FlowSample",
    "annulus_coefficients",
    "annulus_velocity",
    "annulus_pressure",
    "exterior_velocity",
    "exterior_pressure",
    "exterior_flow",
    "annulus_flow",
    "drag_force_exterior",
    "sphere_quadrature",
    "surface_force",
    "outer_annulus_energy",
    "REFERENCE_QUAD_ORDER",
]

# polar Gauss-Legendre nodes x uniform azimuthal nodes
REFERENCE_QUAD_ORDER = (32, 64)
MIN_QUAD_ORDER = (2, 3)

_RADIUS_SLACK = 1e-10
_EXTERIOR_ABCD = (0.0, 0.0, -0.75, 0.25)


class DomainError(ValueError):
    """Raised when a closed form is evaluated outside its domain of validity."""


class FlowSample(NamedTuple):
    velocity: np.ndarray
    pressure: np.ndarray


@dataclass(frozen=True)
class AnnulusCoefficients:
    """Coefficients of the unit-inner-radius annulus solution."""

    a: float
    b: float
    c: float
    d: float
    outer_radius: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)

    def residuals(self) -> np.ndarray:
        """Residuals of the four boundary equations (zero for exact coefficients)."""
        a, b, c, d = self.as_tuple()
        R = self.outer_radius
        return np.array(
            [
                -(4 * a + 2 * b + c - d) - 1.0,
                -2 * (a + b + c + d) - 1.0,
                4 * a * R**2 + 2 * b + c / R - d / R**3,
                a * R**2 + b + c / R + d / R**3,
            ]
        )


def annulus_coefficients(R: float) -> AnnulusCoefficients:
    """Solve the 4x4 boundary system of the annulus A(0, 1, R) exactly.

    The system is solved symbolically once; the rational closed forms below
    are evaluated in floating point.  They avoid the (R - 1)^3 cancellation
    that a generic dense solve suffers from for large ``R``.
    """
    R = float(R)
    if not np.isfinite(R) or R <= 1.0 + 1e-6:
        raise DomainError(f"annulus outer radius must exceed 1 + 1e-6, got {R!r}")
    q = (R - 1.0) ** 3 * (4 * R * R + 7 * R + 4)
    a = -3.0 * R * (R + 1.0) / (2.0 * q)
    b = (9 * R**4 + 9 * R**3 + 4 * R**2 + 4 * R + 4) / (2.0 * q)
    c = -3.0 * R * (R**4 + R**3 + R**2 + R + 1) / q
    d = R**3 * (R**2 + R + 1) / q
    return AnnulusCoefficients(a, b, c, d, R)


def _radial(s, abcd):
    a, b, c, d = abcd
    f = -(4 * a * s**2 + 2 * b + c / s - d / s**3)
    g = -2.0 * (a * s**2 + b + c / s + d / s**3)
    return f, g


def _radial_derivs(s, abcd):
    a, b, c, d = abcd
    df = -(8 * a * s - c / s**2 + 3 * d / s**4)
    dg = -2.0 * (2 * a * s - c / s**2 - 3 * d / s**4)
    return df, dg


def _unit_velocity(xh, V, abcd):
    s = np.linalg.norm(xh, axis=-1)
    w = xh / s[..., None]
    wv = np.einsum("...i,...i->...", w, np.broadcast_to(V, xh.shape))
    f, g = _radial(s, abcd)
    return f[..., None] * V + ((g - f) * wv)[..., None] * w


def _unit_gradient(xh, V, abcd):
    """Analytic gradient G[..., i, j] = d u_i / d x_j at unit scale."""
    s = np.linalg.norm(xh, axis=-1)
    w = xh / s[..., None]
    Vb = np.broadcast_to(V, xh.shape)
    wv = np.einsum("...i,...i->...", w, Vb)
    f, g = _radial(s, abcd)
    df, dg = _radial_derivs(s, abcd)
    h, dh = g - f, dg - df
    eye = np.eye(3)
    ww = w[..., :, None] * w[..., None, :]
    G = df[..., None, None] * Vb[..., :, None] * w[..., None, :]
    G = G + (dh * wv)[..., None, None] * ww
    G = G + (h / s)[..., None, None] * (
        wv[..., None, None] * (eye - ww)
        + w[..., :, None] * (Vb - wv[..., None] * w)[..., None, :]
    )
    return G


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError("points must have a trailing axis of length 3")
    return x


def _check_exterior(s, r):
    if r <= 0:
        raise DomainError("sphere radius must be positive")
    if np.any(s < r * (1.0 - _RADIUS_SLACK)):
        raise DomainError("point inside the sphere")


def _check_annulus(s, r, R):
    if r <= 0:
        raise DomainError("sphere radius must be positive")
    if np.any(s < r * (1.0 - _RADIUS_SLACK)) or np.any(s > r * R * (1.0 + _RADIUS_SLACK)):
        raise DomainError("point outside the annulus")


def exterior_velocity(x, V, r: float) -> np.ndarray:
    """Velocity of the exterior Stokes flow of a sphere of radius ``r`` moving with ``V``."""
    x = _as_points(x)
    V = np.asarray(V, dtype=float)
    s = np.linalg.norm(x, axis=-1)
    _check_exterior(s, r)
    return _unit_velocity(x / r, V, _EXTERIOR_ABCD)


def exterior_pressure(x, V, r: float) -> np.ndarray:
    """Stokeslet pressure 3 r (V . x) / (2 |x|^3); the dipole part carries none."""
    x = _as_points(x)
    V = np.asarray(V, dtype=float)
    s = np.linalg.norm(x, axis=-1)
    _check_exterior(s, r)
    return 1.5 * r * (x @ V) / s**3


def annulus_velocity(x, V, coeffs: AnnulusCoefficients, r: float) -> np.ndarray:
    """Velocity in A(0, r, r * coeffs.outer_radius); ``coeffs`` are built for R / r."""
    x = _as_points(x)
    V = np.asarray(V, dtype=float)
    s = np.linalg.norm(x, axis=-1)
    _check_annulus(s, r, coeffs.outer_radius)
    return _unit_velocity(x / r, V, coeffs.as_tuple())


def annulus_pressure(x, V, coeffs: AnnulusCoefficients, r: float) -> np.ndarray:
    x = _as_points(x)
    V = np.asarray(V, dtype=float)
    s = np.linalg.norm(x, axis=-1)
    _check_annulus(s, r, coeffs.outer_radius)
    a, b = coeffs.a, coeffs.b
    sh = s / r
    xv = (x / r) @ V
    unit = 1.5 * xv / sh**3 + (-20.0 * a * sh + (5 * a + 3 * b) / sh**2) * xv / sh
    return unit / r


def exterior_flow(V, r: float) -> Callable[[np.ndarray], FlowSample]:
    """Pointwise evaluator (velocity, pressure) of the exterior solution centred at 0."""
    V = np.asarray(V, dtype=float)

    def flow(x):
        return FlowSample(exterior_velocity(x, V, r), exterior_pressure(x, V, r))

    return flow


def annulus_flow(coeffs: AnnulusCoefficients, V, r: float) -> Callable[[np.ndarray], FlowSample]:
    V = np.asarray(V, dtype=float)

    def flow(x):
        return FlowSample(annulus_velocity(x, V, coeffs, r), annulus_pressure(x, V, coeffs, r))

    return flow


def drag_force_exterior(V, r: float) -> np.ndarray:
    """Stokes law, 6 pi r V."""
    return 6.0 * np.pi * r * np.asarray(V, dtype=float)


def sphere_quadrature(n_polar: int, n_azim: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta), uniform in phi.

    Returns unit nodes of shape (n_polar * n_azim, 3) and weights summing to 4 pi.
    """
    if n_polar < MIN_QUAD_ORDER[0] or n_azim < MIN_QUAD_ORDER[1]:
        raise ValueError(f"quadrature order must be at least {MIN_QUAD_ORDER}")
    ct, wt = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azim) / n_azim
    st = np.sqrt(1.0 - ct**2)
    nodes = np.stack(
        [
            np.outer(st, np.cos(phi)),
            np.outer(st, np.sin(phi)),
            np.outer(ct, np.ones_like(phi)),
        ],
        axis=-1,
    ).reshape(-1, 3)
    weights = np.outer(wt, np.full(n_azim, 2.0 * np.pi / n_azim)).ravel()
    return nodes, weights


def surface_force(
    flow: Callable[[np.ndarray], FlowSample],
    center,
    eval_radius: float,
    quad_order: tuple[int, int] = REFERENCE_QUAD_ORDER,
    rel_step: float = 1e-5,
    stencil: str = "auto",
) -> np.ndarray:
    """Integrate (grad u - p I) n over the sphere |x - center| = eval_radius.

    ``n`` points towards ``center``; with this orientation the exterior
    solution yields +6 pi r V.  Only the normal derivative of ``u`` enters,
    so it is taken by finite differences along the radial direction with step
    ``rel_step * eval_radius``.  ``stencil`` is ``"central"``, ``"outward"``
    (second-order one-sided, for spheres lying on the inner boundary of the
    flow domain) or ``"auto"``, which falls back to the outward stencil when
    the central one leaves the domain of ``flow``.
    """
    center = np.asarray(center, dtype=float)
    omega, wts = sphere_quadrature(*quad_order)
    pts = center + eval_radius * omega
    h = rel_step * eval_radius

    def radial_derivative(kind):
        if kind == "central":
            up = flow(center + (eval_radius + h) * omega).velocity
            um = flow(center + (eval_radius - h) * omega).velocity
            return (up - um) / (2 * h)
        u0 = flow(pts).velocity
        u1 = flow(center + (eval_radius + h) * omega).velocity
        u2 = flow(center + (eval_radius + 2 * h) * omega).velocity
        return (-3 * u0 + 4 * u1 - u2) / (2 * h)

    if stencil == "auto":
        try:
            du = radial_derivative("central")
        except DomainError:
            du = radial_derivative("outward")
    elif stencil in ("central", "outward"):
        du = radial_derivative(stencil)
    else:
        raise ValueError(f"unknown stencil {stencil!r}")

    p = flow(pts).pressure
    n = -omega
    integrand = -du - p[:, None] * n
    return eval_radius**2 * (wts @ integrand)


def outer_annulus_energy(
    coeffs: AnnulusCoefficients,
    V,
    r: float,
    n_radial: int = 48,
    quad_order: tuple[int, int] = (12, 24),
) -> float:
    """Dirichlet energy of the annulus flow on its outer half A(0, R/2, R), R = r * outer_radius.

    Integrated in physical coordinates with the analytic gradient
    grad u_r(x) = grad u_1(x / r) / r.
    """
    V = np.asarray(V, dtype=float)
    R = r * coeffs.outer_radius
    if R / 2 < r:
        raise DomainError("outer half-annulus overlaps the inner sphere")
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    rho = R / 2 + (xg + 1) * (R / 4)
    wr = wg * (R / 4) * rho**2
    omega, wa = sphere_quadrature(*quad_order)
    pts = rho[:, None, None] * omega[None, :, :]
    G = _unit_gradient(pts / r, V, coeffs.as_tuple()) / r
    dens = np.einsum("...ij,...ij->...", G, G)
    return float(wr @ dens @ wa)
