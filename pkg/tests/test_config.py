import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from stokeshom.config import (
    DiscreteMeasure,
    Domain,
    InfeasibleError,
    ParticleCloud,
    discretize_density,
    empirical_moments,
    sample_iid,
    sample_perturbed_lattice,
    verify_assumptions,
)

UNIT = Domain(1.0)


def test_domain_basics():
    d = Domain(2.0, (1.0, -1.0, 0.0))
    np.testing.assert_array_equal(d.hi, [3.0, 1.0, 2.0])
    assert d.volume == 8.0
    assert Domain.from_dict(d.to_dict()) == d
    with pytest.raises(ValueError):
        Domain(0.0)


def test_zero_jitter_lattice():
    cloud = sample_perturbed_lattice(UNIT, 2, jitter=0.0)
    assert cloud.n == 8
    np.testing.assert_array_equal(cloud.velocities, np.tile([1.0, 0, 0], (8, 1)))
    np.testing.assert_array_equal(cloud.radii, np.ones(8))
    # cell-centred: the eight points are symmetric about the cube centre
    np.testing.assert_allclose(np.sort(cloud.positions[:, 0]), np.sort(1 - cloud.positions[:, 0]), atol=1e-15)
    assert len(np.unique(np.round(cloud.positions, 12), axis=0)) == 8
    rep = verify_assumptions(cloud)
    # with r = 1 no certifiable c0 reaches the size threshold at N = 8
    assert rep.h1_ok and rep.h2_ok and rep.h3_ok and not rep.n_threshold_ok


def test_jittered_separation_exhaustive():
    cloud = sample_perturbed_lattice(UNIT, 4, jitter=0.5, seed=11)
    n = cloud.n
    need = cloud.c0 * n ** (-1 / 3) + 2 * cloud.r0 / n
    assert pdist(cloud.positions).min() >= need * (1 - 1e-12)
    rep = verify_assumptions(cloud)
    assert rep.h1_ok and rep.h2_ok and rep.h3_ok


def test_infeasible_c0_reports_achievable():
    with pytest.raises(InfeasibleError) as exc:
        sample_perturbed_lattice(UNIT, 3, c0=5.0)
    ach = exc.value.achievable_c0
    assert 0 < ach < 5.0
    cloud = sample_perturbed_lattice(UNIT, 3, c0=ach)
    assert verify_assumptions(cloud).h1_ok


def test_study_sized_clouds_pass_everything():
    for m in (3, 4, 5, 6, 7):
        cloud = sample_perturbed_lattice(UNIT, m, jitter=0.3, seed=m, c0=0.5)
        assert verify_assumptions(cloud).ok


def test_sampling_is_deterministic():
    a = sample_perturbed_lattice(UNIT, 3, jitter=0.4, seed=5, radius_law=(0.5, 1.0))
    b = sample_perturbed_lattice(UNIT, 3, jitter=0.4, seed=5, radius_law=(0.5, 1.0))
    assert a.to_json() == b.to_json()
    c = sample_perturbed_lattice(UNIT, 3, jitter=0.4, seed=6, radius_law=(0.5, 1.0))
    assert not np.array_equal(a.positions, c.positions)


def test_nonuniform_density_keeps_n():
    bump = lambda x: np.exp(-np.sum((x - 0.5) ** 2, axis=-1) / 0.02)
    cloud = sample_perturbed_lattice(UNIT, 4, density=bump, jitter=0.3, seed=2)
    assert cloud.n == 64
    rep = verify_assumptions(cloud)
    assert rep.h1_ok and rep.h2_ok and rep.h3_ok
    # particles concentrate near the centre compared with the uniform lattice
    uni = sample_perturbed_lattice(UNIT, 4, jitter=0.3, seed=2)
    r_b = np.linalg.norm(cloud.positions - 0.5, axis=1).mean()
    r_u = np.linalg.norm(uni.positions - 0.5, axis=1).mean()
    assert r_b < r_u


def test_velocity_field_callable():
    cloud = sample_perturbed_lattice(UNIT, 3, velocity_field=lambda x: np.stack([x[..., 1], 0 * x[..., 0], 0 * x[..., 0]], -1))
    np.testing.assert_array_equal(cloud.velocities[:, 0], cloud.positions[:, 1])


def test_cloud_json_round_trip(tmp_path):
    cloud = sample_perturbed_lattice(UNIT, 3, jitter=0.2, seed=1, radius_law=(0.3, 0.9))
    path = tmp_path / "cloud.json"
    cloud.save(path)
    back = ParticleCloud.load(path)
    np.testing.assert_array_equal(back.positions, cloud.positions)
    np.testing.assert_array_equal(back.velocities, cloud.velocities)
    np.testing.assert_array_equal(back.radii, cloud.radii)
    assert (back.c0, back.r0, back.e0) == (cloud.c0, cloud.r0, cloud.e0)
    assert back.to_json() == cloud.to_json()


def test_verify_detects_coincident_centres():
    cloud = sample_perturbed_lattice(UNIT, 3)
    pos = cloud.positions.copy()
    pos[1] = pos[0]
    bad = ParticleCloud(pos, cloud.velocities, cloud.radii, cloud.c0, cloud.r0, cloud.e0, cloud.domain)
    rep = verify_assumptions(bad)
    assert not rep.h1_ok and rep.min_pair_gap < 0
    assert not rep.ok


def test_h3_flips_exactly():
    cloud = sample_perturbed_lattice(UNIT, 3, velocity_field=(0.6, 0.0, 0.0), e0=1.0)
    base = verify_assumptions(cloud).mean_square_velocity
    assert base == pytest.approx(0.36)
    for lam in (1.0, 1.6, 1.7, 2.0):
        rep = verify_assumptions(cloud.with_velocities(lam * cloud.velocities))
        assert rep.mean_square_velocity == pytest.approx(lam**2 * base, rel=1e-14)
        assert rep.h3_ok == (lam**2 * base <= cloud.e0**2)


def test_size_threshold_flag():
    cloud = sample_perturbed_lattice(UNIT, 3)
    cloud.c0 = 0.5  # threshold (4 / 0.5)^1.5 = 22.6 <= 27
    assert verify_assumptions(cloud).n_threshold_ok
    cloud.r0 = 2.0  # threshold 64 > 27
    assert not verify_assumptions(cloud).n_threshold_ok


def test_moments_masses():
    cloud = sample_perturbed_lattice(UNIT, 3, jitter=0.3, seed=3)
    rho, j = empirical_moments(cloud)
    assert rho.mass == pytest.approx(6 * math.pi, rel=1e-14)
    np.testing.assert_allclose(j.mass, [6 * math.pi, 0, 0], atol=1e-12)
    zero = empirical_moments(cloud.with_velocities(np.zeros((27, 3))))[1]
    assert np.all(zero.weights == 0)


def test_moments_hand_computation():
    d = Domain(1.0)
    cloud = ParticleCloud(
        np.array([[0.3, 0.5, 0.5], [0.7, 0.5, 0.5]]),
        np.array([[1.0, 0, 0], [-1.0, 0, 0]]),
        np.array([1.0, 2.0]),
        0.1, 2.0, 1.0, d,
    )
    rho, j = empirical_moments(cloud)
    assert rho.mass == pytest.approx(9 * math.pi)
    assert j.mass[0] == pytest.approx(-3 * math.pi)
    rho_u, _ = empirical_moments(cloud, "unweighted")
    assert rho_u.mass == pytest.approx(6 * math.pi)


def test_moment_linearity_in_velocity():
    cloud = sample_perturbed_lattice(UNIT, 3, jitter=0.3, seed=4, radius_law=(0.5, 1.0),
                                     velocity_field=lambda x: np.sin(3 * x))
    W = np.array([0.3, -1.0, 2.0])
    rho, j = empirical_moments(cloud)
    _, jw = empirical_moments(cloud.with_velocities(cloud.velocities + W))
    np.testing.assert_allclose(jw.weights, j.weights + rho.weights[:, None] * W, rtol=1e-14, atol=1e-15)


def test_discretize_density_masses():
    for k in (2, 5, 9):
        m = discretize_density(lambda x: 3.5 + 0 * x[..., 0], k)
        assert m.mass == pytest.approx(3.5, rel=1e-13)
        lin = discretize_density(lambda x: 1 + 2 * x[..., 0] - x[..., 1] + 4 * x[..., 2], k)
        assert lin.mass == pytest.approx(1 + 1 - 0.5 + 2, rel=1e-13)
    with pytest.raises(ValueError):
        discretize_density(lambda x: 1.0 + 0 * x[..., 0], 1)


def test_discretize_density_second_order():
    bump = lambda x: np.exp(-np.sum((x - 0.4) ** 2, axis=-1) / 0.05)
    ref = discretize_density(bump, 128).mass
    errs = [abs(discretize_density(bump, k).mass - ref) for k in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders > 1.8)


def test_vector_measure_components():
    m = DiscreteMeasure(np.zeros((2, 3)), np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert m.is_vector and m.n_components == 3
    np.testing.assert_array_equal(m.mass, [5.0, 7.0, 9.0])
    np.testing.assert_array_equal(m.component(1).weights, [2.0, 5.0])
    back = DiscreteMeasure.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.weights, m.weights)


def test_iid_reports_realised_c0():
    cloud = sample_iid(UNIT, 50, seed=1)
    rep = verify_assumptions(cloud)
    realised = min(rep.min_pair_gap, rep.min_boundary_gap) * 50 ** (1 / 3)
    assert cloud.c0 == pytest.approx(max(realised, 0.0))
    assert rep.h1_ok == (realised >= 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.floats(0.0, 0.9), st.integers(0, 10_000))
def test_every_sampled_cloud_passes(m, jitter, seed):
    cloud = sample_perturbed_lattice(UNIT, m, jitter=jitter, seed=seed, radius_law=(0.2, 1.0))
    rep = verify_assumptions(cloud)
    assert rep.h1_ok and rep.h2_ok and rep.h3_ok
