"""Distributions, moment states and transport distances."""
import json

import numpy as np
import pytest

from drofw.ambiguity import (
    NORM_L2,
    NORM_LINF,
    AmbiguitySpec,
    DiscreteDistribution,
    Ellipsoid,
    MomentState,
    Unconstrained,
    dual_norm,
    exact_wasserstein,
    mix_moments,
    moments_of,
    perturbation_radius,
    point_norm,
    wasserstein_by_enumeration,
)


def test_point_norm_l2_and_linf():
    q = np.array([3.0, -4.0])
    assert point_norm(q, NORM_L2) == pytest.approx(5.0)
    assert point_norm(q, NORM_LINF) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        point_norm(q, "l7")


def test_dual_norm_pairs():
    x = np.array([1.0, -2.0, 0.5])
    assert dual_norm(x, NORM_L2) == pytest.approx(np.linalg.norm(x))
    assert dual_norm(x, NORM_LINF) == pytest.approx(3.5)  # dual of sup norm is l1


def test_distribution_validation():
    pts = np.array([[0.0, 1.0], [1.0, 0.0]])
    DiscreteDistribution(pts, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscreteDistribution(pts, np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        DiscreteDistribution(pts, np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        DiscreteDistribution(pts, np.array([1.0]))


def test_distribution_json_round_trip():
    d = DiscreteDistribution.uniform(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    back = DiscreteDistribution.from_json_dict(json.loads(json.dumps(d.to_json_dict())))
    assert np.array_equal(back.points, d.points)
    assert np.array_equal(back.weights, d.weights)


def test_moment_state_checks():
    with pytest.raises(ValueError):
        MomentState(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))
    s = MomentState(np.eye(2), np.zeros(2))
    assert s.is_valid()
    # mu mu^T exceeding sigma is not a valid moment pair
    bad = MomentState(np.eye(2) * 0.1, np.array([1.0, 0.0]))
    assert not bad.is_valid()


def test_moments_of_matches_direct_summation():
    rng = np.random.default_rng(7)
    for _ in range(20):
        k, n = rng.integers(1, 8), rng.integers(1, 5)
        pts = rng.standard_normal((k, n))
        w = rng.dirichlet(np.ones(k))
        state = moments_of(DiscreteDistribution(pts, w))
        mu = sum(w[i] * pts[i] for i in range(k))
        sigma = sum(w[i] * np.outer(pts[i], pts[i]) for i in range(k))
        assert np.allclose(state.mu, mu, atol=1e-12)
        assert np.allclose(state.sigma, sigma, atol=1e-12)
        assert state.is_valid()


def test_mix_commutes_with_moments():
    # moments of the mixture distribution equal the mixed moment states
    rng = np.random.default_rng(11)
    for _ in range(30):
        a = DiscreteDistribution.uniform(rng.standard_normal((4, 3)))
        b = DiscreteDistribution.uniform(rng.standard_normal((5, 3)))
        gamma = rng.uniform()
        mixed_pts = np.vstack([a.points, b.points])
        mixed_w = np.concatenate([(1 - gamma) * a.weights, gamma * b.weights])
        direct = moments_of(DiscreteDistribution(mixed_pts, mixed_w))
        via_states = mix_moments(moments_of(a), moments_of(b), gamma)
        assert np.max(np.abs(direct.sigma - via_states.sigma)) < 1e-12
        assert np.max(np.abs(direct.mu - via_states.mu)) < 1e-12


def test_mix_rejects_bad_gamma():
    s = moments_of(DiscreteDistribution.uniform(np.zeros((1, 2))))
    with pytest.raises(ValueError):
        mix_moments(s, s, 1.5)
    with pytest.raises(ValueError):
        mix_moments(s, s, -0.1)


def test_ambiguity_spec_validation_and_json():
    nominal = DiscreteDistribution.uniform(np.array([[0.1, 0.0], [0.0, 0.2]]))
    spec = AmbiguitySpec(2, 0.5, NORM_L2, Ellipsoid(np.eye(2)), nominal)
    back = AmbiguitySpec.from_json_dict(json.loads(spec.to_json()))
    assert back.order_m == 2 and back.radius_rho == 0.5
    assert np.array_equal(back.support.M, np.eye(2))
    with pytest.raises(ValueError):
        AmbiguitySpec(2, 0.5, NORM_LINF, Ellipsoid(np.eye(2)), nominal)
    with pytest.raises(ValueError):
        AmbiguitySpec(2, -1.0, NORM_L2, Unconstrained(), nominal)
    far = DiscreteDistribution.uniform(np.array([[5.0, 5.0]]))
    with pytest.raises(ValueError):
        AmbiguitySpec(2, 0.5, NORM_L2, Ellipsoid(np.eye(2)), far)


def test_perturbation_radius_upper_bounds_exact_distance():
    rng = np.random.default_rng(3)
    for norm_tag in (NORM_L2, NORM_LINF):
        for _ in range(15):
            pts = rng.standard_normal((4, 2))
            disp = rng.standard_normal((4, 2)) * 0.3
            p = DiscreteDistribution.uniform(pts)
            q = DiscreteDistribution.uniform(pts + disp)
            upper = perturbation_radius(disp, 2, norm_tag)
            exact = exact_wasserstein(p, q, 2, norm_tag)
            assert exact <= upper + 1e-9


def test_parallel_shift_makes_coupling_tight():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 0.0]])
    shift = np.array([0.3, 0.0])
    p = DiscreteDistribution.uniform(pts)
    q = DiscreteDistribution.uniform(pts + shift)
    for m in (1, 2):
        assert exact_wasserstein(p, q, m, NORM_L2) == pytest.approx(0.3, abs=1e-9)
        assert perturbation_radius(np.tile(shift, (3, 1)), m, NORM_L2) == pytest.approx(0.3)


def test_exact_wasserstein_matches_enumeration():
    rng = np.random.default_rng(19)
    for m in (1, 2):
        for norm_tag in (NORM_L2, NORM_LINF):
            for _ in range(8):
                p = DiscreteDistribution.uniform(rng.standard_normal((4, 2)))
                q = DiscreteDistribution.uniform(rng.standard_normal((4, 2)))
                lp = exact_wasserstein(p, q, m, norm_tag)
                brute = wasserstein_by_enumeration(p, q, m, norm_tag)
                assert lp == pytest.approx(brute, abs=1e-8)


def test_exact_wasserstein_atom_cap():
    p = DiscreteDistribution.uniform(np.zeros((40, 1)))
    q = DiscreteDistribution.uniform(np.ones((40, 1)))
    with pytest.raises(ValueError):
        exact_wasserstein(p, q, 2, NORM_L2)


def test_ellipsoid_contains():
    e = Ellipsoid(np.diag([1.0, 4.0]))
    assert e.contains(np.array([0.9, 0.0]))
    assert not e.contains(np.array([0.0, 0.9]))
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 0.0], [0.0, -1.0]]))
