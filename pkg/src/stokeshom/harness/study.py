"""Convergence study: surrogate N-hole flows against the Brinkman limit.

For every N the study samples a cloud, checks the dilution assumptions,
solves the mobility system (with wall coupling by default), samples the
extended field on the MAC grid, solves the Brinkman problem with the limit
density and flux, and records errors, dual-norm data distances and the two
bound combinations.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..brinkman import (
    BrinkmanProblem,
    _axis_coords,
    cell_centers,
    dirichlet_energy,
    padded_coords,
    padded_shape,
    solve_brinkman,
)
from ..config import (
    DiscreteMeasure,
    Domain,
    empirical_moments,
    sample_perturbed_lattice,
    verify_assumptions,
)
from ..metrics import MAX_SUPPORT, dual_holder_distance, lp_distance
from ..nstokes import MODES, build_flow, particle_bc_residual, sample_to_grid, wall_residual

__all__ = ["StudyConfig", "StudyRow", "StudyReport", "run_study", "run_row", "LimitFields", "row_seed"]

log = logging.getLogger(__name__)

SIX_PI = 6.0 * math.pi
# mean distance of a uniform point in the unit cube from its centre
_CUBE_MEAN_DIST = 0.4803844614


@dataclass
class StudyConfig:
    L: float = 1.0
    n_list: list = field(default_factory=lambda: [27, 64, 125, 216, 343])
    c0: float = 0.5
    r0: float = 1.0
    e0: float = 1.0
    density: dict = field(default_factory=lambda: {"kind": "uniform"})
    velocity: dict = field(default_factory=lambda: {"kind": "constant", "value": [1.0, 0.0, 0.0]})
    radius_law: object = 1.0
    k: int = 48
    p_list: list = field(default_factory=lambda: [1.1, 1.25, 1.4])
    alpha_list: list = field(default_factory=lambda: [1.0])
    q: float = 4.0
    jitter: float = 0.3
    force_method: str = "direct"
    force_tol: float = 1e-10
    wall_tol: float = 1e-9
    brinkman_tol: float = 1e-9
    max_support: int = MAX_SUPPORT
    seed: int = 0
    mode: str = "wall_corrected"

    def __post_init__(self):
        self.n_list = [int(n) for n in self.n_list]
        self.p_list = [float(p) for p in self.p_list]
        self.alpha_list = [float(a) for a in self.alpha_list]
        if isinstance(self.radius_law, list):
            self.radius_law = tuple(self.radius_law)
        self.validate()

    @property
    def r_max(self) -> float:
        return float(max(self.radius_law)) if isinstance(self.radius_law, tuple) else float(self.radius_law)

    @property
    def r_mean(self) -> float:
        return float(np.mean(self.radius_law)) if isinstance(self.radius_law, tuple) else float(self.radius_law)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        thr = (4 * self.r0 / self.c0) ** 1.5 if self.c0 > 0 else math.inf
        for n in self.n_list:
            m = round(n ** (1 / 3))
            if m**3 != n:
                raise ValueError(f"N={n} is not a perfect cube")
            if n < thr:
                raise ValueError(f"N={n} is below the size threshold (4 r0/c0)^1.5 = {thr:.3f}")
        if any(not 1.0 < p < 1.5 for p in self.p_list):
            raise ValueError("p values must lie in (1, 3/2)")
        if any(not 0.0 < a <= 1.0 for a in self.alpha_list):
            raise ValueError("alpha values must lie in (0, 1]")
        if self.r_max > self.r0:
            raise ValueError("radius law exceeds r0")
        if self.density.get("kind") not in ("uniform", "smooth_bump"):
            raise ValueError("density kind must be 'uniform' or 'smooth_bump'")
        if self.velocity.get("kind") not in ("constant", "smooth"):
            raise ValueError("velocity kind must be 'constant' or 'smooth'")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.radius_law, tuple):
            d["radius_law"] = list(self.radius_law)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    # field callables ---------------------------------------------------

    def velocity_fn(self):
        v = self.velocity
        if v["kind"] == "constant":
            V0 = np.asarray(v.get("value", [1.0, 0.0, 0.0]), dtype=float)
            V0 = self.e0 * V0 / np.linalg.norm(V0) if np.any(V0) else V0
            return lambda x: np.broadcast_to(V0, np.shape(x)).copy()
        # smooth: shear profile along e1, peak norm e0 at the cube centre
        amp = self.e0

        def fn(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            out[..., 0] = amp * np.cos(math.pi * (x[..., 1] - 0.5)) * np.cos(math.pi * (x[..., 2] - 0.5))
            return out

        return fn

    def density_fn(self):
        d = self.density
        if d["kind"] == "uniform":
            return None
        center = np.asarray(d.get("center", [0.5, 0.5, 0.5]), dtype=float)
        width = float(d.get("width", 0.25))
        return lambda x: np.exp(-np.sum((np.asarray(x) - center) ** 2, axis=-1) / (2 * width**2))


def row_seed(master: int, n: int) -> int:
    return int(np.random.SeedSequence([int(master), int(n)]).generate_state(1)[0])


# ---------------------------------------------------------------- limit data

def _overlap(lo, hi, a, b):
    return np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)


class LimitFields:
    """Limit density rho = 6 pi r_mean eta and flux j = rho V on the placement region.

    ``eta`` is the normalised placement density (uniform or bump) restricted
    to the region; grid values use exact box-overlap fractions of the region.
    """

    def __init__(self, cfg: StudyConfig, region, domain: Domain):
        self.cfg = cfg
        self.domain = domain
        self.lo = np.asarray(region[0], dtype=float)
        self.hi = np.asarray(region[1], dtype=float)
        self.V = cfg.velocity_fn()
        self.f = cfg.density_fn()
        # normalisation of eta over the region (midpoint rule on a fine box grid)
        if self.f is None:
            self.Z = float(np.prod(self.hi - self.lo))
        else:
            n = 64
            axes = [self.lo[d] + (np.arange(n) + 0.5) * (self.hi[d] - self.lo[d]) / n for d in range(3)]
            X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            self.Z = float(self.f(X).mean() * np.prod(self.hi - self.lo))
        self.scale = SIX_PI * cfg.r_mean / self.Z

    def _fvals(self, x):
        return np.ones(x.shape[:-1]) if self.f is None else self.f(x)

    def _box_fraction(self, a, b, widths):
        """Overlap fraction of boxes [a, b] (per-axis arrays) with the region."""
        out = 1.0
        for d in range(3):
            frac = _overlap(self.lo[d], self.hi[d], a[d], b[d]) / widths[d]
            shape = [1, 1, 1]
            shape[d] = -1
            out = out * frac.reshape(shape)
        return out

    def rho_cells(self, k: int) -> np.ndarray:
        h = self.domain.L / k
        e = [self.domain.origin[d] + np.arange(k) * h for d in range(3)]
        frac = self._box_fraction(e, [x + h for x in e], [h] * 3)
        return self.scale * frac * self._fvals(cell_centers(self.domain, k))

    def j_faces(self, k: int) -> list:
        h = self.domain.L / k
        out = []
        for c in range(3):
            axes = [_axis_coords(self.domain, k, c, d) for d in range(3)]
            frac = self._box_fraction([x - h / 2 for x in axes], [x + h / 2 for x in axes], [h] * 3)
            X = padded_coords(self.domain, k, c)
            out.append(self.scale * frac * self._fvals(X) * self.V(X)[..., c])
        return out

    def jq_norm(self, k: int, q: float) -> float:
        h = self.domain.L / k
        rho = self.rho_cells(k)
        j = rho[..., None] * self.V(cell_centers(self.domain, k))
        return float((np.sum(np.linalg.norm(j, axis=-1) ** q) * h**3) ** (1 / q))

    def discretized(self, kd: int):
        """Point masses of rho and j at the centroids of cell-region overlaps, plus a W1 bound."""
        h = self.domain.L / kd
        e = [self.domain.origin[d] + np.arange(kd) * h for d in range(3)]
        lo = [np.maximum(x, self.lo[d]) for d, x in enumerate(e)]
        hi = [np.minimum(x + h, self.hi[d]) for d, x in enumerate(e)]
        frac = self._box_fraction(e, [x + h for x in e], [h] * 3)
        mid = [0.5 * (lo[d] + hi[d]) for d in range(3)]
        P = np.stack(np.meshgrid(*mid, indexing="ij"), axis=-1)
        w = self.scale * frac * self._fvals(P) * h**3
        keep = w > 0
        pts, wr = P[keep], w[keep]
        wj = wr[:, None] * self.V(pts)
        mass = float(wr.sum())
        per_point = _CUBE_MEAN_DIST * h if self.f is None else 0.5 * math.sqrt(3) * h
        return DiscreteMeasure(pts, wr), DiscreteMeasure(pts, wj), mass * per_point


# ---------------------------------------------------------------- rows

@dataclass
class StudyRow:
    N: int
    errors: dict
    bl_rho: dict
    bl_j: dict
    n_inv_cbrt: float
    bound_thm1: float
    bound_thm2: float
    energy: float
    bc_residual: float
    wall_residual: float
    t_forces_s: float = 0.0
    t_brinkman_s: float = 0.0
    t_metrics_s: float = 0.0
    jq_norm: float = 0.0
    e0: float = 0.0
    seed: int = 0
    disc_bound: float = 0.0
    extra: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _failed_row(cfg, n, seed, reason):
    nan = float("nan")
    return StudyRow(
        N=n, errors={f"{p:g}": nan for p in cfg.p_list}, bl_rho={f"{a:g}": nan for a in cfg.alpha_list},
        bl_j={f"{a:g}": nan for a in cfg.alpha_list}, n_inv_cbrt=n ** (-1 / 3), bound_thm1=nan, bound_thm2=nan,
        energy=nan, bc_residual=nan, wall_residual=nan, seed=seed, error=reason,
    )


def bound_thm1(bl_j, bl_rho, jq, e0, n):
    return bl_j + bl_rho + (jq + e0) * n ** (-1 / 3)


def bound_thm2(bl_j, bl_rho, e0, n):
    return bl_j + (bl_rho + n ** (-1 / 3)) ** (1 / 3) * e0


def run_row(cfg: StudyConfig, n: int) -> StudyRow:
    domain = Domain(cfg.L)
    seed = row_seed(cfg.seed, n)
    m = round(n ** (1 / 3))
    t0 = time.perf_counter()
    cloud = sample_perturbed_lattice(
        domain, m, density=cfg.density_fn(), velocity_field=cfg.velocity_fn(), radius_law=cfg.radius_law,
        jitter=cfg.jitter, seed=seed, c0=cfg.c0, e0=cfg.e0,
    )
    cloud.r0 = cfg.r0
    rep = verify_assumptions(cloud)
    if not rep.ok:
        raise RuntimeError(f"dilution assumptions fail: {rep}")
    flow = build_flow(cloud, cfg.mode, cfg.k, tol=cfg.force_tol, method=cfg.force_method, wall_tol=cfg.wall_tol)
    u_n = sample_to_grid(flow, cfg.k)
    bc = float(particle_bc_residual(flow).max()) if cloud.n else 0.0
    t_forces = time.perf_counter() - t0

    t0 = time.perf_counter()
    limit = LimitFields(cfg, cloud.region, domain)
    k = cfg.k
    zeros = [np.zeros(padded_shape(k, c)) for c in range(3)]
    prob = BrinkmanProblem(domain, k, limit.rho_cells(k), limit.j_faces(k), zeros, tol=cfg.brinkman_tol)
    u_bar = solve_brinkman(prob)
    t_brinkman = time.perf_counter() - t0

    t0 = time.perf_counter()
    errors = {f"{p:g}": lp_distance(u_n, u_bar, p) for p in cfg.p_list}
    rho_n, j_n = empirical_moments(cloud, "radius")
    kd = int(math.floor((cfg.max_support - n) ** (1 / 3) + 1e-9))
    rho_d, j_d, disc = limit.discretized(kd)
    bl_rho, bl_j, gaps = {}, {}, []
    for a in cfg.alpha_list:
        r1 = dual_holder_distance(rho_n, rho_d, a)
        r2 = dual_holder_distance(j_n, j_d, a)
        bl_rho[f"{a:g}"], bl_j[f"{a:g}"] = r1.value, r2.value
        gaps += [r1.gap, r2.gap]
    t_metrics = time.perf_counter() - t0

    a0 = f"{cfg.alpha_list[0]:g}"
    jq = limit.jq_norm(k, cfg.q)
    energy = math.sqrt(max(dirichlet_energy(u_n), 0.0)) / cfg.e0 if cfg.e0 > 0 else 0.0
    return StudyRow(
        N=n,
        errors=errors,
        bl_rho=bl_rho,
        bl_j=bl_j,
        n_inv_cbrt=n ** (-1 / 3),
        bound_thm1=bound_thm1(bl_j[a0], bl_rho[a0], jq, cfg.e0, n),
        bound_thm2=bound_thm2(bl_j[a0], bl_rho[a0], cfg.e0, n),
        energy=energy,
        bc_residual=bc,
        wall_residual=wall_residual(u_n),
        t_forces_s=t_forces,
        t_brinkman_s=t_brinkman,
        t_metrics_s=t_metrics,
        jq_norm=jq,
        e0=cfg.e0,
        seed=seed,
        disc_bound=disc,
        extra={
            "kd": kd,
            "lp_gap_max": float(max(gaps)),
            "force_residual": flow.forces.final_residual,
            "force_iterations": flow.forces.iterations,
            "brinkman_iterations": u_bar.info.get("iterations"),
            "min_pair_gap": rep.min_pair_gap,
            "min_boundary_gap": rep.min_boundary_gap,
        },
    )


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rows": [asdict(r) for r in self.rows],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyReport":
        return cls(StudyConfig.from_dict(d["config"]), [StudyRow(**r) for r in d["rows"]], d.get("provenance", {}))

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        return cls.from_dict(json.loads(text))

    def good_rows(self) -> list:
        return [r for r in self.rows if r.ok]


def _provenance(cfg):
    import platform

    import scipy

    from .. import __version__

    return {
        "seed": cfg.seed,
        "row_seeds": {str(n): row_seed(cfg.seed, n) for n in cfg.n_list},
        "versions": {
            "stokeshom": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def run_study(cfg: StudyConfig, progress=None) -> StudyReport:
    rows = []
    for n in cfg.n_list:
        try:
            row = run_row(cfg, n)
        except Exception as exc:  # a failed row is recorded and the study moves on
            log.warning("row N=%d failed: %s", n, exc)
            row = _failed_row(cfg, n, row_seed(cfg.seed, n), f"{type(exc).__name__}: {exc}")
        rows.append(row)
        if progress is not None:
            progress(row)
    return StudyReport(cfg, rows, _provenance(cfg))
