"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line; the lines are printed as they happen
(visible with ``-s``) and again in the terminal summary (see conftest.py).
"""
import math
import time

import numpy as np
import pytest

from stokeshom import kernels as K
from stokeshom.brinkman import BrinkmanProblem, StaggeredField, energy_balance, solve_brinkman
from stokeshom.config import DiscreteMeasure, Domain, sample_perturbed_lattice
from stokeshom.harness import StudyConfig, fit_rate, run_study, to_csv
from stokeshom.harness.kernel_check import annulus_force, annulus_force_slope
from stokeshom.harness.report import bound_ratios
from stokeshom.metrics import dual_holder_distance, w1_distance
from stokeshom.nstokes import solve_forces

from test_brinkman import l2_face_error, manufactured
from test_nstokes import cloud_of

RESULTS = []
E1 = np.array([1.0, 0.0, 0.0])
REF_QUAD = (32, 64)


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_criterion_01_stokes_law():
    t0 = time.perf_counter()
    errs = []
    for r in (0.5, 1.0, 2.0):
        F = K.surface_force(K.exterior_flow(E1, r), np.zeros(3), r, quad_order=REF_QUAD)
        errs.append(np.linalg.norm(F - 6 * math.pi * r * E1) / (6 * math.pi * r))
    dt = time.perf_counter() - t0
    ok = max(errs) <= 1e-6 and dt < 1.0
    assert record(1, ok, f"max |F - 6 pi r V| / (6 pi r) = {max(errs):.2e}, {dt:.3f} s")


def test_criterion_02_force_transfer():
    worst = 0.0
    for r in (0.5, 1.0, 2.0):
        flow = K.exterior_flow(E1, r)
        Fs = [K.surface_force(flow, np.zeros(3), t * r, quad_order=REF_QUAD) for t in (1.0, 2.0, 4.0)]
        for i in range(3):
            for j in range(i + 1, 3):
                worst = max(worst, np.linalg.norm(Fs[i] - Fs[j]) / np.linalg.norm(Fs[i]))
    assert record(2, worst <= 1e-6, f"max pairwise relative deviation {worst:.2e}")


def test_criterion_03_annulus_force_rate():
    slope, _ = annulus_force_slope((8.0, 16.0, 32.0, 64.0))
    F2 = K.surface_force(K.exterior_flow(E1, 2.0), np.zeros(3), 2.0)
    F1 = K.surface_force(K.exterior_flow(E1, 1.0), np.zeros(3), 1.0)
    dev = np.abs((annulus_force(2.0, 32.0) - F2) - 2.0 * (annulus_force(1.0, 16.0) - F1)).max()
    ok = -1.15 <= slope <= -0.85 and dev <= 1e-10
    assert record(3, ok, f"slope {slope:.4f}, scaling identity deviation {dev:.2e}")


def test_criterion_04_outer_energy_rate():
    Rs = np.array([8.0, 16.0, 32.0, 64.0])
    E = np.array([K.outer_annulus_energy(K.annulus_coefficients(R), E1, 1.0) for R in Rs])
    slope = float(np.polyfit(np.log(Rs), np.log(E), 1)[0])
    # x = r y: the energy at (r, R) equals r times the energy at (1, R / r)
    devs = []
    for r, R in ((2.0, 32.0), (0.5, 8.0), (3.0, 48.0)):
        er = K.outer_annulus_energy(K.annulus_coefficients(R / r), E1, r)
        e1 = K.outer_annulus_energy(K.annulus_coefficients(R / r), E1, 1.0)
        devs.append(abs(er - r * e1) / abs(er))
    ok = -1.2 <= slope <= -0.8 and max(devs) <= 1e-8
    assert record(4, ok, f"slope {slope:.4f} (window [-1.2, -0.8]), scaling deviation {max(devs):.2e}")


def test_criterion_05_coefficient_asymptotics():
    co = K.annulus_coefficients(1e3)
    R = 1e3
    lim = (abs(R**3 * co.a + 3 / 8), abs(R * co.b - 9 / 8), abs(co.c + 0.75), abs(co.d - 0.25))
    ok_lim = lim[0] <= 5e-3 and lim[1] <= 5e-3 and lim[2] <= 2e-3 and lim[3] <= 2e-3
    seq = [R**3 * K.annulus_coefficients(R).a for R in (1e2, 1e3, 1e4)]
    gaps = [abs(s + 3 / 8) for s in seq]
    ok_mono = gaps[0] > gaps[1] > gaps[2]
    assert record(5, ok_lim and ok_mono, f"limit deviations {[f'{v:.1e}' for v in lim]}, R^3 a = {[f'{s:.6f}' for s in seq]}")


def test_criterion_06_brinkman_manufactured():
    t0 = time.perf_counter()
    uf, jf, rf, _ = manufactured()
    errs, ids = [], []
    for k in (16, 32, 64):
        prob = BrinkmanProblem.from_functions(Domain(1.0), k, rho=rf, j=jf)
        out = solve_brinkman(prob)
        errs.append(l2_face_error(out, StaggeredField.from_function(Domain(1.0), k, uf)))
        lhs, rhs = energy_balance(prob, out)
        ids.append(abs(lhs - rhs) / abs(lhs))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    dt = time.perf_counter() - t0
    ok = orders.min() >= 1.8 and max(ids) <= 1e-8 and dt < 120
    assert record(6, ok, f"orders {np.round(orders, 3).tolist()}, energy identity {max(ids):.1e}, {dt:.1f} s")


def test_criterion_07_mobility():
    V = np.array([1.0, -2.0, 0.5])
    single = cloud_of([[0.4, 0.5, 0.6]], [V], [1.0])
    F1 = solve_forces(single).forces[0]
    drag = np.abs(F1 - 6 * math.pi * single.physical_radii[0] * V).max() / np.abs(F1).max()

    x1 = np.array([0.35, 0.3, 0.55])
    Vm = np.array([0.3, -1.0, 0.2])
    pair = cloud_of([x1, [x1[0], 1 - x1[1], x1[2]]], [[0.3, 1.0, 0.2], Vm], [0.2, 0.2])
    Fp = solve_forces(pair, tol=1e-14).forces
    mirror = abs(np.linalg.norm(Fp[0]) - np.linalg.norm(Fp[1])) / np.linalg.norm(Fp[0])

    cloud = sample_perturbed_lattice(Domain(1.0), 4, c0=0.5, jitter=0.3, seed=1)
    tol = 1e-10
    fd = solve_forces(cloud, method="direct").forces
    # damped sweep: same fixed point, undamped reflections do not contract at r0 = 1
    fj = solve_forces(cloud, tol=tol, relaxation=0.5)
    agree = np.linalg.norm(fj.forces - fd) / np.linalg.norm(fd)
    ok = drag <= 1e-15 and mirror <= 1e-12 and agree <= tol
    assert record(7, ok, f"N=1 drag error {drag:.1e}, mirror pair {mirror:.1e}, "
                         f"Jacobi vs direct on N=64 {agree:.1e} ({fj.iterations} sweeps)")


def test_criterion_08_metric_oracles():
    gaps = []
    dev = 0.0
    for d in (0.1, 0.5, 1.0):
        res = dual_holder_distance(DiscreteMeasure([[0, 0, 0]], [1.0]), DiscreteMeasure([[d, 0, 0]], [1.0]))
        dev = max(dev, abs(res.value - 2 * d / (2 + d)))
        gaps.append(res.gap)
    rng = np.random.default_rng(0)
    wdev = 0.0
    for _ in range(20):
        P, Q = rng.uniform(size=(2, 3)), rng.uniform(size=(2, 3))
        res = w1_distance(DiscreteMeasure(P, [0.5, 0.5]), DiscreteMeasure(Q, [0.5, 0.5]))
        best = min(0.5 * (np.linalg.norm(P[0] - Q[s[0]]) + np.linalg.norm(P[1] - Q[s[1]])) for s in ((0, 1), (1, 0)))
        wdev = max(wdev, abs(res.value - best))
        gaps.append(res.gap)
    for _ in range(20):
        mu = DiscreteMeasure(rng.uniform(size=(20, 3)), rng.uniform(0.1, 1, 20))
        nu = DiscreteMeasure(rng.uniform(size=(15, 3)), rng.uniform(0.1, 1, 15))
        gaps.append(dual_holder_distance(mu, nu).gap)
    ok = dev <= 1e-6 and wdev <= 1e-10 and max(gaps) <= 1e-8
    assert record(8, ok, f"two-Dirac deviation {dev:.1e}, W1 enumeration {wdev:.1e}, max gap {max(gaps):.1e} over {len(gaps)} LPs")


@pytest.fixture(scope="module")
def default_study():
    cfg = StudyConfig()
    t0 = time.perf_counter()
    report = run_study(cfg)
    return report, time.perf_counter() - t0


def error_columns(csv_text):
    lines = csv_text.splitlines()
    head = lines[0].split(",")
    keep = [i for i, c in enumerate(head) if c == "N" or c.startswith("err_")]
    return "\n".join(",".join(line.split(",")[i] for i in keep) for line in lines)


def test_criterion_09_homogenization_study(default_study):
    report, dt = default_study
    rows = report.rows
    all_ok = all(r.ok for r in rows) and [r.N for r in rows] == [27, 64, 125, 216, 343]
    err = np.array([r.errors["1.1"] for r in rows])
    a = bool(all_ok and np.all(np.diff(err) < 0))
    slope = fit_rate(report.good_rows(), "err_p1.1").slope if all_ok else float("nan")
    b = slope <= -0.15
    ratios = bound_ratios(report)
    c = bool(all_ok and ratios.max() / ratios.min() <= 5)
    energy = np.array([r.energy for r in rows])
    d = bool(all_ok and energy.max() / energy.min() <= 3)
    ok = a and b and c and d and dt <= 600
    assert record(9, ok, f"(a) errors {np.round(err, 5).tolist()} {'decreasing' if a else 'NOT decreasing'}; "
                         f"(b) slope {slope:.3f}; (c) bound ratio spread {ratios.max() / ratios.min():.2f}; "
                         f"(d) energy spread {energy.max() / energy.min():.2f}; {dt:.0f} s")


def test_criterion_10_reproducibility(default_study):
    report, _ = default_study
    again = run_study(StudyConfig())
    first, second = error_columns(to_csv(report)), error_columns(to_csv(again))
    assert record(10, first == second, f"error columns byte-identical: {first == second} ({len(first)} bytes)")
