"""Command line entry point: ``stokeshom <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..brinkman import BrinkmanProblem, energy_balance, padded_shape, save_field, solve_brinkman
from ..config import DiscreteMeasure, Domain, ParticleCloud, sample_perturbed_lattice, verify_assumptions
from ..metrics import dual_holder_distance, w1_distance
from ..nstokes import build_flow, particle_bc_residual, sample_to_grid, wall_residual
from .kernel_check import run_all
from .report import emit, fit_rate, to_csv
from .study import LimitFields, StudyConfig, row_seed, run_study

log = logging.getLogger("stokeshom")


def _mode(s: str) -> str:
    m = s.replace("-", "_")
    if m not in ("free_space", "wall_corrected"):
        raise argparse.ArgumentTypeError("mode must be free-space or wall-corrected")
    return m


def _load_config(args) -> StudyConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        d["mode"] = args.mode
    if getattr(args, "n", None):
        d["n_list"] = args.n
    return StudyConfig.from_dict(d)


def _sample(cfg: StudyConfig, n: int) -> ParticleCloud:
    m = round(n ** (1 / 3))
    cloud = sample_perturbed_lattice(
        Domain(cfg.L), m, density=cfg.density_fn(), velocity_field=cfg.velocity_fn(), radius_law=cfg.radius_law,
        jitter=cfg.jitter, seed=row_seed(cfg.seed, n), c0=cfg.c0, e0=cfg.e0,
    )
    cloud.r0 = cfg.r0
    return cloud


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n in cfg.n_list:
        cloud = _sample(cfg, n)
        rep = verify_assumptions(cloud)
        path = out / f"cloud_N{n}.json"
        cloud.save(path)
        print(json.dumps({"N": n, "path": str(path), **asdict(rep), "ok": rep.ok}))
    return 0


def cmd_brinkman(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n in cfg.n_list:
        cloud = _sample(cfg, n)
        lim = LimitFields(cfg, cloud.region, cloud.domain)
        k = cfg.k
        zeros = [np.zeros(padded_shape(k, c)) for c in range(3)]
        prob = BrinkmanProblem(cloud.domain, k, lim.rho_cells(k), lim.j_faces(k), zeros, tol=cfg.brinkman_tol)
        fld = solve_brinkman(prob)
        lhs, rhs = energy_balance(prob, fld)
        path = save_field(fld, out / f"brinkman_N{n}.json")
        print(json.dumps({"N": n, "path": str(path), "iterations": fld.info.get("iterations"),
                          "energy_lhs": lhs, "energy_rhs": rhs}))
    return 0


def cmd_nhole(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clouds = [ParticleCloud.load(args.cloud)] if args.cloud else [_sample(cfg, n) for n in cfg.n_list]
    for cloud in clouds:
        flow = build_flow(cloud, cfg.mode, cfg.k, tol=cfg.force_tol, method=cfg.force_method, wall_tol=cfg.wall_tol)
        n = cloud.n
        (out / f"forces_N{n}.json").write_text(flow.forces.to_json())
        grid = sample_to_grid(flow, cfg.k)
        path = save_field(grid, out / f"extended_N{n}.json")
        print(json.dumps({"N": n, "forces": str(out / f"forces_N{n}.json"), "field": str(path),
                          "bc_residual": float(particle_bc_residual(flow).max()),
                          "wall_residual": wall_residual(grid), "final_residual": flow.forces.final_residual}))
    return 0


def _load_measure(path) -> DiscreteMeasure:
    with open(path) as fh:
        return DiscreteMeasure.from_dict(json.load(fh))


def cmd_metrics(args) -> int:
    mu, nu = _load_measure(args.mu), _load_measure(args.nu)
    if args.w1:
        res = w1_distance(mu, nu)
        print(json.dumps({"value": res.value, "gap": res.gap}))
        return 0
    res = dual_holder_distance(mu, nu, args.alpha)
    print(json.dumps({"value": res.value, "gap": res.gap, "s": np.asarray(res.s).tolist(), "t": np.asarray(res.t).tolist()}))
    return 0


def cmd_study(args) -> int:
    cfg = _load_config(args)
    formats = [f.strip() for f in args.format.split(",") if f.strip()]

    def progress(row):
        status = "ok" if row.ok else f"FAILED ({row.error})"
        log.info("N=%d %s", row.N, status)

    report = run_study(cfg, progress=progress)
    paths = emit(report, formats, args.out)
    sys.stdout.write(to_csv(report))
    good = report.good_rows()
    if len(good) >= 4:
        col = f"err_p{cfg.p_list[0]:g}"
        try:
            fit = fit_rate(good, col)
            print(f"# fitted slope of {col}: {fit.slope:.4f} +- {fit.stderr:.4f} over {fit.n_rows} rows")
        except ValueError as exc:
            print(f"# no rate fit: {exc}")
    for p in paths:
        print(f"# wrote {p}")
    return 0 if len(good) == len(report.rows) else 1


def cmd_kernel_check(args) -> int:
    results = run_all()
    for c in results:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}: {c.detail}")
    return 0 if all(c.ok for c in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stokeshom", description="Homogenization of many-hole Stokes flows towards Brinkman.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--config", help="JSON file with StudyConfig fields")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
        p.add_argument("--n", type=int, nargs="+", help="override the N list")
        if mode:
            p.add_argument("--mode", type=_mode, default=None, help="free-space or wall-corrected")

    p = sub.add_parser("sample", help="sample particle clouds and check the dilution assumptions")
    common(p, mode=False)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("brinkman", help="solve the limit Brinkman problem")
    common(p, mode=False)
    p.set_defaults(func=cmd_brinkman)

    p = sub.add_parser("nhole", help="solve the surrogate N-hole problem and sample the extended field")
    common(p)
    p.add_argument("--cloud", help="cloud JSON produced by `sample`")
    p.set_defaults(func=cmd_nhole)

    p = sub.add_parser("metrics", help="dual Hölder (or W1) distance of two measure JSON files")
    p.add_argument("mu")
    p.add_argument("nu")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--w1", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("study", help="run the convergence study")
    common(p)
    p.add_argument("--format", default="csv,json,svg")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("kernel-check", help="verify the closed-form sphere kernels")
    p.set_defaults(func=cmd_kernel_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
