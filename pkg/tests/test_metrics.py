import itertools

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial.distance import pdist, squareform

from stokeshom.brinkman import StaggeredField
from stokeshom.config import DiscreteMeasure, Domain
from stokeshom.metrics import MAX_SUPPORT, dual_holder_distance, lp_distance, w1_distance

UNIT = Domain(1.0)


def dirac(x, w=1.0):
    return DiscreteMeasure(np.atleast_2d(x), np.array([w]))


def random_measure(rng, n, mass=None):
    w = rng.uniform(0.1, 1.0, size=n)
    if mass is not None:
        w *= mass / w.sum()
    return DiscreteMeasure(rng.uniform(0, 1, size=(n, 3)), w)


def full_lp(x, w, alpha):
    """All-pairs dual LP solved directly: variables (phi, s, t)."""
    n = len(x)
    D = squareform(pdist(x)) ** alpha
    rows, rhs = [], []
    for i, j in itertools.combinations(range(n), 2):
        for sgn in (1, -1):
            r = np.zeros(n + 2)
            r[i], r[j], r[n + 1] = sgn, -sgn, -D[i, j]
            rows.append(r)
            rhs.append(0.0)
    for i in range(n):
        for sgn in (1, -1):
            r = np.zeros(n + 2)
            r[i], r[n] = sgn, -1.0
            rows.append(r)
            rhs.append(0.0)
    r = np.zeros(n + 2)
    r[n] = r[n + 1] = 1.0
    rows.append(r)
    rhs.append(1.0)
    c = -np.concatenate([w, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0, None), (0, None)]
    res = linprog(c, A_ub=np.array(rows), b_ub=rhs, bounds=bounds, method="highs")
    return -res.fun


def check_feasible(res, alpha):
    phi, s, t = res.phi, float(res.s), float(res.t)
    assert s >= -1e-12 and t >= -1e-12 and s + t <= 1 + 1e-9
    assert np.abs(phi).max() <= s + 1e-9
    if len(phi) > 1:
        D = squareform(pdist(res.points)) ** alpha
        assert np.all(np.abs(phi[:, None] - phi[None, :]) <= t * D + 1e-9)


@pytest.mark.parametrize("d", [0.1, 0.5, 1.0])
def test_two_dirac_closed_form(d):
    res = dual_holder_distance(dirac([0.0, 0.0, 0.0]), dirac([d, 0.0, 0.0]))
    assert res.value == pytest.approx(2 * d / (2 + d), abs=1e-6)
    assert res.gap <= 1e-8
    check_feasible(res, 1.0)


def test_identical_measures_give_zero():
    rng = np.random.default_rng(0)
    mu = random_measure(rng, 10)
    assert dual_holder_distance(mu, mu).value == 0.0
    assert w1_distance(mu, mu).value == pytest.approx(0.0, abs=1e-12)


def test_double_dirac_against_single():
    x = [0.2, 0.3, 0.4]
    res = dual_holder_distance(dirac(x, 2.0), dirac(x))
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert float(res.s) == pytest.approx(1.0)


def test_against_all_pairs_lp():
    rng = np.random.default_rng(1)
    for alpha in (1.0, 0.5):
        for _ in range(5):
            mu, nu = random_measure(rng, 15), random_measure(rng, 12)
            res = dual_holder_distance(mu, nu, alpha)
            x = np.concatenate([mu.points, nu.points])
            w = np.concatenate([mu.weights, -nu.weights])
            assert res.value == pytest.approx(full_lp(x, w, alpha), abs=1e-8)
            assert res.gap <= 1e-8
            check_feasible(res, alpha)


def test_simplex_matches_highs():
    rng = np.random.default_rng(2)
    for _ in range(5):
        mu, nu = random_measure(rng, 5), random_measure(rng, 4)
        a = dual_holder_distance(mu, nu, method="simplex")
        b = dual_holder_distance(mu, nu, method="highs")
        assert a.value == pytest.approx(b.value, abs=1e-9)
        assert a.gap <= 1e-8
        check_feasible(a, 1.0)
    with pytest.raises(ValueError):
        dual_holder_distance(random_measure(rng, 10), random_measure(rng, 10), method="simplex")


def test_dual_norm_below_w1():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, m = rng.integers(2, 9, size=2)
        mu = random_measure(rng, n, mass=1.0)
        nu = random_measure(rng, m, mass=1.0)
        w1 = w1_distance(mu, nu)
        assert w1.gap <= 1e-8 and w1.marginal_error <= 1e-10
        assert dual_holder_distance(mu, nu).value <= w1.value + 1e-9


def test_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a, b, c = (random_measure(rng, 5, mass=1.0) for _ in range(3))
        dab = dual_holder_distance(a, b).value
        assert dab == pytest.approx(dual_holder_distance(b, a).value, abs=1e-10)
        assert dab <= dual_holder_distance(a, c).value + dual_holder_distance(c, b).value + 1e-9
        wab = w1_distance(a, b).value
        assert wab == pytest.approx(w1_distance(b, a).value, abs=1e-10)
        assert wab <= w1_distance(a, c).value + w1_distance(c, b).value + 1e-9


def test_monotone_in_alpha():
    # with all distances below 1, d^alpha grows as alpha drops, so the Hölder
    # constraints loosen, the test class grows and the distance cannot decrease
    rng = np.random.default_rng(5)
    for _ in range(5):
        mu = DiscreteMeasure(rng.uniform(0, 0.5, size=(6, 3)), np.full(6, 1 / 6))
        nu = DiscreteMeasure(rng.uniform(0, 0.5, size=(6, 3)), np.full(6, 1 / 6))
        vals = [dual_holder_distance(mu, nu, a).value for a in (1.0, 0.75, 0.5, 0.25)]
        assert all(x <= y + 1e-9 for x, y in zip(vals, vals[1:]))
        assert vals[-1] > vals[0]


def test_vector_measures_componentwise_euclidean():
    rng = np.random.default_rng(6)
    pts = rng.uniform(0, 1, size=(6, 3))
    W1, W2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    res = dual_holder_distance(DiscreteMeasure(pts, W1), DiscreteMeasure(pts, W2))
    comps = [dual_holder_distance(DiscreteMeasure(pts, W1[:, c]), DiscreteMeasure(pts, W2[:, c])).value for c in range(3)]
    np.testing.assert_allclose(res.components, comps, atol=1e-12)
    assert res.value == pytest.approx(np.linalg.norm(comps))


def test_constraint_generation_on_large_support():
    rng = np.random.default_rng(7)
    mu = random_measure(rng, 300, mass=1.0)
    nu = random_measure(rng, 200, mass=1.0)
    res = dual_holder_distance(mu, nu)
    assert res.gap <= 1e-8 and res.max_violation <= 1e-9
    check_feasible(res, 1.0)


def test_support_cap():
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError):
        dual_holder_distance(random_measure(rng, MAX_SUPPORT), random_measure(rng, 5))
    with pytest.raises(ValueError):
        dual_holder_distance(dirac([0, 0, 0]), dirac([1, 0, 0]), alpha=1.5)


def test_w1_dirac_pair_and_enumeration():
    x, y = np.array([0.1, 0.2, 0.3]), np.array([0.9, 0.0, 0.5])
    assert w1_distance(dirac(x), dirac(y)).value == pytest.approx(np.linalg.norm(x - y), abs=1e-12)
    rng = np.random.default_rng(9)
    for _ in range(10):
        P, Q = rng.uniform(0, 1, size=(2, 3)), rng.uniform(0, 1, size=(2, 3))
        res = w1_distance(DiscreteMeasure(P, [0.5, 0.5]), DiscreteMeasure(Q, [0.5, 0.5]))
        best = min(0.5 * (np.linalg.norm(P[0] - Q[s[0]]) + np.linalg.norm(P[1] - Q[s[1]])) for s in ((0, 1), (1, 0)))
        assert res.value == pytest.approx(best, abs=1e-10)
        assert res.gap <= 1e-8
        np.testing.assert_allclose(res.value, np.sum(res.mass * np.linalg.norm(P[res.rows] - Q[res.cols], axis=1)))


def test_w1_rejects_unequal_mass():
    with pytest.raises(ValueError):
        w1_distance(dirac([0, 0, 0], 1.0), dirac([1, 0, 0], 1.5))


def random_field(rng, k):
    f = StaggeredField.zeros(UNIT, k)
    for c in range(3):
        f.vel[c] = rng.normal(size=f.vel[c].shape)
    return f


def test_lp_distance_oracles():
    rng = np.random.default_rng(10)
    a, b = random_field(rng, 8), random_field(rng, 8)
    assert lp_distance(a, a, 1.3) == 0.0
    c = np.array([0.3, -0.4, 1.2])
    const = StaggeredField.from_function(UNIT, 8, lambda X: np.broadcast_to(c, X.shape))
    for p in (1.1, 1.25, 1.4, 2.0):
        assert lp_distance(const, StaggeredField.zeros(UNIT, 8), p) == pytest.approx(np.linalg.norm(c), rel=1e-13)
    # brute force in a different summation order
    k, h = 8, 1 / 8
    tot = 0.0
    for i, j, l in itertools.product(range(k), repeat=3):
        # padded storage: transverse index 0 holds the wall value
        du = 0.5 * (a.vel[0][i, j + 1, l + 1] + a.vel[0][i + 1, j + 1, l + 1] - b.vel[0][i, j + 1, l + 1] - b.vel[0][i + 1, j + 1, l + 1])
        dv = 0.5 * (a.vel[1][i + 1, j, l + 1] + a.vel[1][i + 1, j + 1, l + 1] - b.vel[1][i + 1, j, l + 1] - b.vel[1][i + 1, j + 1, l + 1])
        dw = 0.5 * (a.vel[2][i + 1, j + 1, l] + a.vel[2][i + 1, j + 1, l + 1] - b.vel[2][i + 1, j + 1, l] - b.vel[2][i + 1, j + 1, l + 1])
        tot += (du * du + dv * dv + dw * dw) ** 0.6 * h**3
    assert lp_distance(a, b, 1.2) == pytest.approx(tot ** (1 / 1.2), rel=1e-12)
    assert lp_distance(a.scaled(-3.0), b.scaled(-3.0), 1.2) == pytest.approx(3 * lp_distance(a, b, 1.2), rel=1e-13)


def test_lp_distance_errors():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError):
        lp_distance(random_field(rng, 4), random_field(rng, 5), 1.2)
    with pytest.raises(ValueError):
        lp_distance(random_field(rng, 4), random_field(rng, 4), 1.0)
