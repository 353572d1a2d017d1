import numpy as np
import pytest

from eblms.datamodel import (
    DataSample,
    GroundTruth,
    InvalidRange,
    NodeProfile,
    data_checksum,
    data_stream,
    db_to_power,
    generate_block,
    generate_sample,
    profiles_from_table,
    profiles_to_table,
    sample_ground_truth,
    sample_profiles,
)


def test_ground_truth_1d_is_sign():
    for seed in range(10):
        w = sample_ground_truth(1, seed).w_star
        assert w[0] in (1.0, -1.0)


def test_ground_truth_unit_norm_and_determinism():
    a = sample_ground_truth(10, 42)
    b = sample_ground_truth(10, 42)
    assert abs(np.linalg.norm(a.w_star) - 1.0) <= 1e-12
    np.testing.assert_array_equal(a.w_star, b.w_star)
    c = sample_ground_truth(10, 43)
    assert not np.array_equal(a.w_star, c.w_star)


def test_ground_truth_validation():
    with pytest.raises(ValueError):
        sample_ground_truth(0, 1)
    with pytest.raises(ValueError):
        GroundTruth(np.array([1.0, np.inf]))


def test_db_conversion():
    assert db_to_power(-10.0) == pytest.approx(0.1, abs=1e-15)
    assert db_to_power(0.0) == 1.0


def test_profiles_degenerate_range_gives_identity():
    profiles = sample_profiles(4, 3, (1.0, 1.0), (-20.0, -20.0), 0.1, 5)
    for p in profiles:
        np.testing.assert_array_equal(p.R_u, np.eye(3))
        assert p.sigma2_v == pytest.approx(0.01, abs=1e-15)
        assert p.mu == 0.1


def test_profiles_ranges_per_protocol():
    profiles = sample_profiles(60, 10, (1.0, 2.0), (-25.0, -10.0), 0.05, 3)
    assert len(profiles) == 60
    for p in profiles:
        s2u = p.isotropic_power()
        assert s2u is not None and 1.0 <= s2u <= 2.0
        assert 10 ** (-2.5) <= p.sigma2_v <= 10 ** (-1.0)


def test_profiles_invalid_ranges():
    with pytest.raises(InvalidRange):
        sample_profiles(3, 2, (2.0, 1.0), (-25.0, -10.0), 0.1, 0)
    with pytest.raises(InvalidRange):
        sample_profiles(3, 2, (1.0, 2.0), (-10.0, -25.0), 0.1, 0)


def test_profiles_ru_shape_controls_spread():
    profiles = sample_profiles(2, 2, (1.0, 1.0), (-20.0, -20.0), 0.1, 1, ru_shape=(1.0, 6.0))
    np.testing.assert_allclose(profiles[0].R_u, np.diag([1.0, 6.0]))
    assert profiles[0].isotropic_power() is None


def test_profile_validation():
    with pytest.raises(ValueError):
        NodeProfile(mu=0.1, R_u=np.array([[1.0, 0.5], [0.0, 1.0]]), sigma2_v=0.1)
    with pytest.raises(ValueError):
        NodeProfile(mu=0.1, R_u=np.diag([1.0, -0.5]), sigma2_v=0.1)
    with pytest.raises(ValueError):
        NodeProfile(mu=0.0, R_u=np.eye(2), sigma2_v=0.1)
    with pytest.raises(ValueError):
        NodeProfile(mu=0.1, R_u=np.eye(2), sigma2_v=0.0)


def test_sample_noiseless_limit():
    # the model guarantees d = u . w_star + v by construction
    profile = NodeProfile(mu=0.1, R_u=np.eye(3), sigma2_v=1e-300)
    gt = sample_ground_truth(3, 0)
    s = generate_sample(profile, gt, np.random.default_rng(1))
    assert s.d == pytest.approx(float(s.u @ gt.w_star), abs=1e-140)


def test_sample_zero_truth_gives_noise():
    profile = NodeProfile(mu=0.1, R_u=np.eye(2), sigma2_v=0.5)
    gt = GroundTruth(np.zeros(2))
    s = generate_sample(profile, gt, np.random.default_rng(2))
    assert s.d == s.v


def test_sample_exact_model_identity():
    profile = NodeProfile(mu=0.1, R_u=1.5 * np.eye(4), sigma2_v=0.2)
    gt = sample_ground_truth(4, 9)
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = generate_sample(profile, gt, rng)
        assert s.d == float(s.u @ gt.w_star + s.v)


def test_regressor_moments():
    # Monte Carlo check of the first two moments of u
    t = 10**5
    r_u = 1.5 * np.eye(2)
    profile = NodeProfile(mu=0.1, R_u=r_u, sigma2_v=0.01)
    gt = sample_ground_truth(2, 0)
    rng = data_stream(1234, 0, 1)
    us = np.array([generate_sample(profile, gt, rng).u for _ in range(t)])
    lam_max = 1.5
    assert np.linalg.norm(us.mean(axis=0)) <= 4 * np.sqrt(lam_max * 2 / t)
    emp_cov = us.T @ us / t
    assert np.abs(emp_cov - r_u).max() < 0.05
    assert np.abs(emp_cov - r_u).max() < 5 * lam_max / np.sqrt(t)


def test_streams_are_independent_and_reproducible():
    a1 = data_stream(7, 0, 1).standard_normal(8)
    a2 = data_stream(7, 0, 1).standard_normal(8)
    np.testing.assert_array_equal(a1, a2)
    other_node = data_stream(7, 0, 2).standard_normal(8)
    other_replica = data_stream(7, 1, 1).standard_normal(8)
    assert not np.array_equal(a1, other_node)
    assert not np.array_equal(a1, other_replica)
    assert not np.array_equal(other_node, other_replica)


def test_block_generation_matches_sequential_samples():
    profiles = sample_profiles(3, 2, (1.0, 2.0), (-20.0, -10.0), 0.1, 5)
    gt = sample_ground_truth(2, 6)
    u, d = generate_block(profiles, gt, horizon=7, master_seed=99, replica_ids=[0, 4])
    assert u.shape == (2, 7, 3, 2)
    for bi, replica in enumerate([0, 4]):
        for k, profile in enumerate(profiles):
            rng = data_stream(99, replica, k + 1)
            for i in range(7):
                s = generate_sample(profile, gt, rng)
                np.testing.assert_array_equal(u[bi, i, k], s.u)
                assert d[bi, i, k] == s.d


def test_checksum_distinguishes_replicas():
    profiles = sample_profiles(2, 2, (1.0, 2.0), (-20.0, -10.0), 0.1, 5)
    gt = sample_ground_truth(2, 6)
    u, d = generate_block(profiles, gt, 5, 1, [0, 1])
    assert data_checksum(u[0], d[0]) != data_checksum(u[1], d[1])
    assert data_checksum(u[0], d[0]) == data_checksum(u[0].copy(), d[0].copy())


def test_profile_table_round_trip():
    profiles = sample_profiles(5, 3, (1.0, 2.0), (-25.0, -10.0), 0.05, 8)
    text = profiles_to_table(profiles)
    again = profiles_from_table(text, 3)
    assert len(again) == 5
    for p, q in zip(profiles, again):
        np.testing.assert_array_equal(p.R_u, q.R_u)
        assert p.sigma2_v == q.sigma2_v
        assert p.mu == q.mu


def test_profile_table_rejects_anisotropic():
    profiles = sample_profiles(2, 2, (1.0, 1.0), (-20.0, -20.0), 0.1, 1, ru_shape=(1.0, 4.0))
    with pytest.raises(ValueError):
        profiles_to_table(profiles)
