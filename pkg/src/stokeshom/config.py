"""Particle clouds under the dilution assumptions and their empirical moments.

A cloud carries N balls B(x_i, r_i / N) in a cube, their velocities, and the
three dilution constants (c0, r0, e0):

* (H1) ball-ball and ball-wall gaps are at least c0 * N^(-1/3),
* (H2) normalised radii are at most r0,
* (H3) the mean kinetic energy (1/N) sum |V_i|^2 is at most e0^2,

plus the size restriction N >= (4 r0 / c0)^(3/2).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "Domain",
    "ParticleCloud",
    "DilutionReport",
    "DiscreteMeasure",
    "InfeasibleError",
    "sample_perturbed_lattice",
    "sample_iid",
    "verify_assumptions",
    "empirical_moments",
    "discretize_density",
    "lattice_geometry",
]

SIX_PI = 6.0 * math.pi

RadiusLaw = Union[float, tuple]
VectorField = Union[Callable[[np.ndarray], np.ndarray], Sequence[float], np.ndarray]


class InfeasibleError(ValueError):
    """The requested separation constant cannot be certified for this lattice."""

    def __init__(self, message: str, achievable_c0: float):
        super().__init__(f"{message} (achievable c0 = {achievable_c0:.6g})")
        self.achievable_c0 = achievable_c0


@dataclass(frozen=True)
class Domain:
    """Open axis-aligned cube origin + (0, L)^3."""

    L: float = 1.0
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("side length must be positive")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.L

    @property
    def volume(self) -> float:
        return self.L**3

    def to_dict(self) -> dict:
        return {"L": self.L, "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(L=float(d["L"]), origin=tuple(d.get("origin", (0.0, 0.0, 0.0))))


@dataclass
class ParticleCloud:
    positions: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray
    c0: float
    r0: float
    e0: float
    domain: Domain = field(default_factory=Domain)
    # placement box (lo, hi) used by the sampler; the limit density lives there
    region: tuple | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if not (len(self.positions) == len(self.velocities) == len(self.radii)):
            raise ValueError("positions, velocities and radii must have equal length")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def physical_radii(self) -> np.ndarray:
        return self.radii / self.n

    def with_velocities(self, velocities) -> "ParticleCloud":
        return ParticleCloud(
            self.positions.copy(), velocities, self.radii.copy(),
            self.c0, self.r0, self.e0, self.domain, self.region,
        )

    def translated(self, shift) -> "ParticleCloud":
        shift = np.asarray(shift, dtype=float)
        dom = Domain(self.domain.L, tuple(self.domain.lo + shift))
        region = None
        if self.region is not None:
            region = (tuple(np.asarray(self.region[0]) + shift), tuple(np.asarray(self.region[1]) + shift))
        return ParticleCloud(
            self.positions + shift, self.velocities.copy(), self.radii.copy(),
            self.c0, self.r0, self.e0, dom, region,
        )

    def to_json(self) -> str:
        # repr() of a float is its shortest round-tripping decimal, so json is exact
        doc = {
            "n": self.n,
            "c0": self.c0,
            "r0": self.r0,
            "e0": self.e0,
            "domain": self.domain.to_dict(),
            "region": None if self.region is None else [list(self.region[0]), list(self.region[1])],
            "particles": [
                {"x": x.tolist(), "v": v.tolist(), "r": float(r)}
                for x, v, r in zip(self.positions, self.velocities, self.radii)
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ParticleCloud":
        doc = json.loads(text)
        parts = doc["particles"]
        if len(parts) != doc["n"]:
            raise ValueError("particle count does not match n")
        region = doc.get("region")
        return cls(
            positions=np.array([p["x"] for p in parts], dtype=float).reshape(-1, 3),
            velocities=np.array([p["v"] for p in parts], dtype=float).reshape(-1, 3),
            radii=np.array([p["r"] for p in parts], dtype=float),
            c0=float(doc["c0"]),
            r0=float(doc["r0"]),
            e0=float(doc["e0"]),
            domain=Domain.from_dict(doc.get("domain", {"L": 1.0})),
            region=None if region is None else (tuple(region[0]), tuple(region[1])),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParticleCloud":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class DilutionReport:
    min_pair_gap: float
    min_boundary_gap: float
    max_radius: float
    mean_square_velocity: float
    h1_ok: bool
    h2_ok: bool
    h3_ok: bool
    n_threshold_ok: bool

    @property
    def ok(self) -> bool:
        return self.h1_ok and self.h2_ok and self.h3_ok and self.n_threshold_ok


@dataclass
class DiscreteMeasure:
    """Weighted point masses; ``weights`` is (n,) for scalar or (n, 3) for vector measures."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape[0] != self.points.shape[0]:
            raise ValueError("one weight row per point expected")

    @property
    def is_vector(self) -> bool:
        return self.weights.ndim == 2

    @property
    def n_components(self) -> int:
        return self.weights.shape[1] if self.is_vector else 1

    @property
    def mass(self):
        """Total mass, per component for vector measures."""
        return self.weights.sum(axis=0)

    def component(self, c: int) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights[:, c] if self.is_vector else self.weights)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        return cls(np.array(d["points"], dtype=float), np.array(d["weights"], dtype=float))


def _as_field(f: VectorField) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f):
        return f
    const = np.asarray(f, dtype=float)

    def field_fn(x):
        x = np.asarray(x)
        return np.broadcast_to(const, x.shape[:-1] + const.shape).copy()

    return field_fn


def _radius_bounds(radius_law: RadiusLaw) -> tuple[float, float]:
    if np.isscalar(radius_law):
        return float(radius_law), float(radius_law)
    lo, hi = radius_law
    if not 0 < lo <= hi:
        raise ValueError("uniform radius law needs 0 < r_lo <= r0")
    return float(lo), float(hi)


def lattice_geometry(L: float, cells: int, n: int, r0: float, margin: float | None = None):
    """Cell size and wall margin of the placement lattice.

    With ``margin=None`` the margin balances wall and pair gaps:
    cell = (L + 2 a) / (cells + 1), margin = cell / 2 - a with a = r0 / n.
    """
    a = r0 / n
    if margin is None:
        cell = (L + 2 * a) / (cells + 1)
        margin = cell / 2 - a
    else:
        cell = (L - 2 * margin) / cells
    return cell, margin


def _achievable_c0(cell, margin, n, r0, jitter):
    b = cell / 2 - r0 / n
    if b <= 0:
        return 0.0
    u = min(2 * b, (margin + (1 - jitter) * b) / (1 - jitter / 2))
    return max(u, 0.0) * n ** (1 / 3)


def sample_perturbed_lattice(
    domain: Domain,
    m: int,
    density: Callable[[np.ndarray], np.ndarray] | None = None,
    velocity_field: VectorField = (1.0, 0.0, 0.0),
    radius_law: RadiusLaw = 1.0,
    jitter: float = 0.0,
    seed: int = 0,
    c0: float | None = None,
    e0: float | None = None,
    margin: float | None = None,
    oversample: float = 2.0,
) -> ParticleCloud:
    """Place N = m^3 particles on a jittered cell-centred lattice.

    Uniform density uses an m^3 lattice.  A non-uniform ``density`` uses a
    finer lattice of ceil(oversample * m) cells per side, keeps cells by
    Bernoulli thinning with probability proportional to the density, then
    trims (lowest density first) or fills (highest density first) to exactly
    N cells.  Each centre moves by at most
    jitter * (cell/2 - c0 N^(-1/3)/2 - r0/N) per coordinate, which keeps the
    (H1) certificate for the requested ``c0``.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0.0 <= jitter < 1.0:
        raise ValueError("jitter must lie in [0, 1)")
    n = m**3
    r_lo, r0 = _radius_bounds(radius_law)
    cells = m if density is None else int(math.ceil(oversample * m))
    if cells < m:
        raise ValueError("oversample must be >= 1")
    cell, margin = lattice_geometry(domain.L, cells, n, r0, margin)
    if margin < 0:
        raise InfeasibleError("balls do not fit in the lattice cells", 0.0)
    achievable = _achievable_c0(cell, margin, n, r0, jitter)
    if c0 is None:
        # leave room for the jitter: at the maximal c0 the jitter amplitude is zero
        c0 = min((1 - jitter) * _achievable_c0(cell, margin, n, r0, 0.0), achievable)
    if c0 > achievable * (1 + 1e-12) or achievable <= 0:
        raise InfeasibleError(f"c0={c0} cannot be certified for m={m}, L={domain.L}, jitter={jitter}", achievable)
    delta = jitter * (cell / 2 - c0 * n ** (-1 / 3) / 2 - r0 / n)

    rng = np.random.default_rng(seed)
    idx = np.arange(cells)
    I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
    ijk = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=-1)
    centers = domain.lo + margin + (ijk + 0.5) * cell

    if density is not None:
        w = np.asarray(density(centers), dtype=float)
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("density must be nonnegative and not identically zero")
        p = np.minimum(1.0, n * w / w.sum())
        accept = rng.random(len(w)) < p
        order = np.lexsort((np.arange(len(w)), -w))  # densest first, stable
        kept = [i for i in order if accept[i]]
        if len(kept) > n:
            kept = kept[:n]
        else:
            extra = [i for i in order if not accept[i]][: n - len(kept)]
            kept = kept + extra
        centers = centers[np.sort(np.asarray(kept, dtype=int))]

    positions = centers + delta * rng.uniform(-1.0, 1.0, size=centers.shape)
    if r_lo == r0:
        radii = np.full(n, r0)
    else:
        radii = rng.uniform(r_lo, r0, size=n)
    velocities = np.asarray(_as_field(velocity_field)(positions), dtype=float).reshape(n, 3)
    if e0 is None:
        e0 = math.sqrt(float(np.mean(np.sum(velocities**2, axis=1))))
    region_lo = domain.lo + margin
    region = (tuple(region_lo), tuple(region_lo + cells * cell))
    return ParticleCloud(positions, velocities, radii, float(c0), r0, float(e0), domain, region)


def sample_iid(
    domain: Domain,
    n: int,
    density: Callable[[np.ndarray], np.ndarray] | None = None,
    velocity_field: VectorField = (1.0, 0.0, 0.0),
    radius_law: RadiusLaw = 1.0,
    seed: int = 0,
    e0: float | None = None,
    max_density: float | None = None,
) -> ParticleCloud:
    """Unsafe iid sampling by rejection; the stored c0 is the realised one, not a guarantee."""
    rng = np.random.default_rng(seed)
    r_lo, r0 = _radius_bounds(radius_law)
    a = r0 / n
    lo, hi = domain.lo + a, domain.hi - a
    pts = []
    while len(pts) < n:
        cand = rng.uniform(lo, hi, size=(2 * n, 3))
        if density is not None:
            w = np.asarray(density(cand), dtype=float)
            top = max_density if max_density is not None else max(w.max(), 1e-300)
            cand = cand[rng.random(len(cand)) * top < w]
        pts.extend(cand.tolist())
    positions = np.array(pts[:n])
    radii = np.full(n, r0) if r_lo == r0 else rng.uniform(r_lo, r0, size=n)
    velocities = np.asarray(_as_field(velocity_field)(positions), dtype=float).reshape(n, 3)
    if e0 is None:
        e0 = math.sqrt(float(np.mean(np.sum(velocities**2, axis=1))))
    cloud = ParticleCloud(positions, velocities, radii, 0.0, r0, float(e0), domain, None)
    rep = verify_assumptions(cloud)
    cloud.c0 = max(0.0, min(rep.min_pair_gap, rep.min_boundary_gap)) * n ** (1 / 3)
    return cloud


def verify_assumptions(cloud: ParticleCloud) -> DilutionReport:
    """Exhaustive O(N^2) check of (H1)-(H3) and the size restriction."""
    n = cloud.n
    a = cloud.physical_radii
    if n >= 2:
        d = pdist(cloud.positions)
        ii, jj = np.triu_indices(n, k=1)
        min_pair = float(np.min(d - a[ii] - a[jj]))
    else:
        min_pair = math.inf
    lo, hi = cloud.domain.lo, cloud.domain.hi
    wall = np.minimum(cloud.positions - lo, hi - cloud.positions).min(axis=1) - a
    min_wall = float(wall.min()) if n else math.inf
    max_r = float(cloud.radii.max()) if n else 0.0
    msv = float(np.mean(np.sum(cloud.velocities**2, axis=1))) if n else 0.0

    need = cloud.c0 * n ** (-1 / 3) * (1 - 1e-12) if n else 0.0
    h1 = min_pair >= need and min_wall >= need and min_wall >= 0
    h2 = max_r <= cloud.r0
    h3 = msv <= cloud.e0**2
    thr = cloud.c0 > 0 and n >= (4 * cloud.r0 / cloud.c0) ** 1.5
    return DilutionReport(min_pair, min_wall, max_r, msv, bool(h1), bool(h2), bool(h3), bool(thr))


def empirical_moments(cloud: ParticleCloud, weighting: str = "radius") -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Density and flux moments with the 6 pi factor.

    ``weighting="radius"`` gives rho^N = (6 pi / N) sum r_i delta_{x_i} and
    j^N = (6 pi / N) sum r_i V_i delta_{x_i}; ``"unweighted"`` drops r_i.
    """
    if weighting == "radius":
        w = cloud.radii
    elif weighting == "unweighted":
        w = np.ones(cloud.n)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    scale = SIX_PI / cloud.n * w
    rho = DiscreteMeasure(cloud.positions.copy(), scale)
    j = DiscreteMeasure(cloud.positions.copy(), scale[:, None] * cloud.velocities)
    return rho, j


def discretize_density(field_fn, k: int, domain: Domain | None = None, subsamples: int = 1, drop_zero: bool = False) -> DiscreteMeasure:
    """Cell-centre point masses from a midpoint rule on a k^3 grid of the domain.

    ``subsamples > 1`` uses a composite midpoint rule with subsamples^3 points
    per cell (useful for discontinuous densities); the mass still sits at the
    cell centre.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    domain = domain or Domain()
    h = domain.L / k
    c = (np.arange(k) + 0.5) * h
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    centers = domain.lo + np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
    s = int(subsamples)
    off = ((np.arange(s) + 0.5) / s - 0.5) * h
    OX, OY, OZ = np.meshgrid(off, off, off, indexing="ij")
    offsets = np.stack([OX.ravel(), OY.ravel(), OZ.ravel()], axis=-1)
    vals = np.asarray(field_fn(centers[:, None, :] + offsets[None, :, :]), dtype=float)
    weights = vals.mean(axis=1) * h**3
    if drop_zero:
        keep = np.abs(weights).reshape(len(centers), -1).max(axis=1) > 0
        centers, weights = centers[keep], weights[keep]
    return DiscreteMeasure(centers, weights)
