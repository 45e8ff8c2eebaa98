import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from app.errors import DegenerateSamplerError, SamplerError
from app.models import SamplerParams
from app.sampler import (
    build_alias,
    build_transform,
    check_lipschitz,
    decode,
    encode,
    eval_G,
    eval_H,
    eval_tau,
    lipschitz_bound,
    normalize,
    reference_z,
    sample_batch,
    sampler_probs,
    sampler_tau,
    search_dim,
)

from conftest import random_table


def params(e, v, c=(1.0, 0.0), mode="cgf"):
    return SamplerParams(S=len(e) - 1, N=len(c), e=list(e), v=list(v), c=list(c), transform_mode=mode)


def test_search_dim_default():
    assert search_dim(4, 2) == 10


@pytest.mark.parametrize("segments,num_features", [(1, 1), (2, 2), (3, 1), (4, 2), (6, 2)])
def test_search_dim_matches_encoding(segments, num_features):
    dim = search_dim(segments, num_features)
    assert dim == (segments - 1) + (segments + 1) + num_features
    assert reference_z(segments, num_features).shape == (dim,)
    p = decode(np.full(dim, 0.5), segments, num_features)
    assert len(p.coefficients) == num_features
    assert encode(p).shape == (dim,)


def test_params_domain_is_enforced():
    with pytest.raises(ValueError):
        params((0, 0.6, 0.4, 1), (0, 0, 0, 0))
    with pytest.raises(ValueError):
        params((0, 1), (0, 1.2))
    with pytest.raises(ValueError):
        params((0, 1), (0, 1), c=(2.0, 0.0))
    with pytest.raises(ValueError):
        params((0.1, 1), (0, 1))


def test_decode_half_cube():
    p = decode(np.full(10, 0.5))
    assert p.endpoints == [0.0, 0.5, 0.5, 0.5, 1.0]
    assert p.values == [0.5] * 5
    assert p.coefficients == [0.0, 0.0]


def test_decode_sorts_interior_endpoints():
    z = np.concatenate([[0.9, 0.2, 0.4], np.full(7, 0.5)])
    assert decode(z).endpoints == [0.0, 0.2, 0.4, 0.9, 1.0]


def test_decode_rejects_out_of_cube():
    with pytest.raises(SamplerError):
        decode(np.full(10, 1.5))
    with pytest.raises(SamplerError):
        decode(np.full(9, 0.5))


def test_reference_is_uniform(table):
    probs = sampler_probs(decode(reference_z()), table)
    np.testing.assert_allclose(probs, np.full(len(table), 1 / len(table)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 10, elements=st.floats(0.0, 1.0)))
def test_encode_decode_preserves_tau(z):
    tab = random_table(60, seed=3)
    p = decode(z)
    q = decode(np.clip(encode(p), 0.0, 1.0))
    np.testing.assert_allclose(q.endpoints, p.endpoints)
    np.testing.assert_allclose(q.coefficients, p.coefficients, atol=1e-12)
    tau_p, _ = sampler_tau(p, tab)
    tau_q, _ = sampler_tau(q, tab)
    np.testing.assert_allclose(tau_q, tau_p, atol=1e-9)


def test_eval_H_examples():
    p = params((0, 1), (0.2, 0.8))
    assert eval_H(p, 0.5) == pytest.approx(0.5)
    zigzag = params((0, 0.25, 0.5, 0.75, 1), (1, 0, 1, 0, 1))
    assert eval_H(zigzag, 0.125) == pytest.approx(0.5)
    for e, v in zip(zigzag.endpoints, zigzag.values):
        assert eval_H(zigzag, e) == v


def test_eval_H_rightmost_value_on_zero_width_segment():
    p = params((0, 0.5, 0.5, 1), (1, 1, 0, 0))
    assert eval_H(p, 0.5) == 0.0
    assert eval_H(p, 0.49) == 1.0


def test_eval_H_outside_domain():
    with pytest.raises(SamplerError):
        eval_H(params((0, 1), (0, 1)), 1.5)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 10, elements=st.floats(0.0, 1.0)),
    arrays(np.float64, 25, elements=st.floats(0.0, 1.0)),
)
def test_eval_H_stays_in_unit_interval(z, u):
    out = eval_H(decode(z), u)
    assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_eval_G_examples():
    assert eval_G(params((0, 1), (0, 1), c=(1, 0)), [0.3, 0.9]) == pytest.approx(0.3)
    assert eval_G(params((0, 1), (0, 1), c=(0, 0)), [0.3, 0.9]) == 0.0
    assert eval_G(params((0, 1), (0, 1), c=(-1, 1)), [0.25, 0.75]) == pytest.approx(0.5)
    with pytest.raises(SamplerError):
        eval_G(params((0, 1), (0, 1)), [0.1, 0.2, 0.3])


def test_transform_equal_grads_matches_cdf(rng):
    g = rng.random(300)
    cgf = build_transform("cgf", g, np.full(300, 2.5))
    cdf = build_transform("cdf", g, rng.random(300))
    queries = np.linspace(-0.2, 1.2, 101)
    np.testing.assert_allclose(cgf(queries), cdf(queries))


def test_transform_single_heavy_instance():
    t = build_transform("cgf", np.array([0.1, 0.5, 0.9]), np.array([0.0, 1.0, 0.0]))
    assert t(0.1) == pytest.approx(0.0)
    assert t(0.5) == pytest.approx(1.0)
    assert t(0.9) == pytest.approx(1.0)
    assert t(0.3) == pytest.approx(0.5)


def test_transform_degenerate_cases():
    t = build_transform("cdf", np.array([0.4]), np.array([1.0]))
    assert t(0.0) == 1.0 and t(0.4) == 1.0
    with pytest.raises(SamplerError):
        build_transform("cgf", np.array([0.1, 0.2]), np.zeros(2))


def test_cgf_falls_back_to_cdf_on_zero_grads():
    tab = random_table(50, seed=1, zero_grads=True)
    tau, transform = sampler_tau(decode(np.full(10, 0.3)), tab)
    assert transform.mode == "cdf"
    assert tau.shape == (50,)


def test_cgf_equal_mass_property():
    rng = np.random.default_rng(11)
    tab = random_table(2000, seed=5)
    grads = tab.grad_norm
    total = grads.sum()
    tol = grads.max() / total + 1e-12
    for _ in range(20):
        p = decode(rng.random(10))
        g = eval_G(p, tab.feature_matrix(2))
        t = build_transform("cgf", g, grads)(g)
        for a in np.arange(0.0, 0.9 + 1e-9, 0.05):
            inside = (t >= a) & (t <= a + 0.1)
            assert abs(grads[inside].sum() / total - 0.1) <= tol


def test_eval_tau_constant_profile(table):
    p = params((0, 0.5, 1), (0.7, 0.7, 0.7))
    t = build_transform("cgf", eval_G(p, table.feature_matrix(2)), table.grad_norm)
    np.testing.assert_allclose(eval_tau(p, t, table), 0.7)
    zero = params((0, 0.5, 1), (0, 0, 0))
    assert not eval_tau(zero, t, table).any()


def test_eval_tau_drops_top_gradient_decile(table):
    p = params((0, 0.8, 0.9, 0.9, 1), (1, 1, 1, 0, 0), c=(0.6, -0.3))
    g = eval_G(p, table.feature_matrix(2))
    tau, _ = sampler_tau(p, table)
    order = np.argsort(g)
    share = np.empty_like(g)
    share[order] = np.cumsum(table.grad_norm[order]) / table.grad_norm.sum()
    np.testing.assert_array_equal(tau == 0.0, share >= 0.9)
    assert np.all(tau[share < 0.9] == 1.0)


def test_normalize_examples():
    np.testing.assert_allclose(normalize(np.array([2.0, 2.0, 4.0])), [0.25, 0.25, 0.5])
    np.testing.assert_allclose(normalize(np.full(4, 0.3)), np.full(4, 0.25))
    with pytest.raises(DegenerateSamplerError):
        normalize(np.zeros(5))


def test_alias_point_mass(rng):
    idx = sample_batch(build_alias(np.array([1.0, 0.0, 0.0])), 10_000, rng)
    assert np.all(idx == 0)


def test_alias_uniform_chi_square():
    draws = sample_batch(build_alias(np.full(100, 0.01)), 1_000_000, np.random.default_rng(2024))
    counts = np.bincount(draws, minlength=100)
    assert chisquare(counts).statistic < 134.6


def test_alias_two_point_frequency():
    draws = sample_batch(build_alias(np.array([0.25, 0.75])), 1_000_000, np.random.default_rng(7))
    assert abs(np.mean(draws == 1) - 0.75) <= 0.002


def test_alias_rejects_non_distribution():
    with pytest.raises(SamplerError):
        build_alias(np.array([0.5, 0.6]))


def test_lipschitz_constant_profile_is_zero(table):
    p = params((0, 0.5, 1), (0.4, 0.4, 0.4))
    t = build_transform("cgf", eval_G(p, table.feature_matrix(2)), table.grad_norm)
    assert lipschitz_bound(p, t) == 0.0


def test_lipschitz_identity_profile(table):
    p = params((0, 1), (0, 1), c=(1, 0), mode="cdf")
    tau, t = sampler_tau(p, table)
    bound = lipschitz_bound(p, t)
    assert bound == pytest.approx(t.max_slope())
    report = check_lipschitz(p, t, table)
    assert report.holds and report.pairs_checked == 200 * 199 // 2
    assert report.worst_ratio <= bound + 1e-9


def test_lipschitz_scales_with_values(table):
    p = params((0, 0.3, 1), (0.2, 1.0, 0.6), c=(0.5, -0.4))
    half = params((0, 0.3, 1), (0.1, 0.5, 0.3), c=(0.5, -0.4))
    t = build_transform("cgf", eval_G(p, table.feature_matrix(2)), table.grad_norm)
    assert lipschitz_bound(half, t) == pytest.approx(0.5 * lipschitz_bound(p, t))


def test_lipschitz_jump_is_infinite(table):
    p = params((0, 0.5, 0.5, 1), (1, 1, 0, 0))
    _, t = sampler_tau(p, table)
    assert lipschitz_bound(p, t) == float("inf")
    assert check_lipschitz(p, t, table).holds is None


def test_lipschitz_holds_for_random_samplers(table):
    rng = np.random.default_rng(99)
    for _ in range(20):
        p = decode(rng.random(10))
        _, t = sampler_tau(p, table)
        report = check_lipschitz(p, t, table)
        assert report.holds is True
