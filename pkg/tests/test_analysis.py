import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scfl.analysis import (
    LemmaSetup,
    global_gradient,
    global_loss,
    least_squares_optimum,
    optimality_gap,
    probe_model,
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
    verify_network,
)
from scfl.analysis.verify import UPPER_BOUND, Z_THRESHOLD, VerificationReport, sample_aggregated_gradients
from scfl.coding import PER_CLIENT_UNIT, CodingConfig
from scfl.data import FederatedDataset, compute_bounds, generate_synthetic, skewed_partition
from scfl.network import DelayProfile, sample_profile
from scfl.numerics import RngStream


def dataset(m=40, d=3, o=1, n=4, noise=0.1, seed=0):
    x, y, _ = generate_synthetic(RngStream(seed), m, d, o, noise)
    return FederatedDataset(x, y, skewed_partition(y, n))


def always_on(n):
    return DelayProfile((1e9,) * n, (1e9,) * n, (0.0,) * n, 1e9, 1e9, 1.0, 1.0, 1.0)


# --------------------------------------------------------------- oracles

def test_loss_cases():
    x = np.eye(2)
    ds = FederatedDataset(x, np.zeros((2, 2)), (np.arange(2),))
    assert global_loss(ds, np.eye(2)) == 1.0
    w = np.array([[0.5], [-0.25]])
    ds2 = FederatedDataset(x, x @ w, (np.arange(2),))
    assert global_loss(ds2, w) == 0.0


def test_loss_matches_entry_summation():
    ds = dataset(m=13, d=3, o=2)
    w = np.random.default_rng(0).standard_normal((3, 2))
    total = 0.0
    for i in range(13):
        for j in range(2):
            r = sum(ds.features[i, k] * w[k, j] for k in range(3)) - ds.labels[i, j]
            total += r * r
    assert global_loss(ds, w) == pytest.approx(0.5 * total, rel=1e-12)


def test_optimum_cases():
    assert least_squares_optimum(dataset(noise=0.0)).f_star < 1e-8
    y = np.array([[0.3, 1.0], [-2.0, 0.5]])
    opt = least_squares_optimum(FederatedDataset(np.eye(2), y, (np.arange(2),)))
    np.testing.assert_allclose(opt.w_star, y, atol=1e-15)
    ds = dataset(m=60, d=5, o=2)
    opt = least_squares_optimum(ds)
    g = global_gradient(ds, opt.w_star)
    assert np.linalg.norm(g) <= 1e-6 * np.linalg.norm(ds.features.T @ ds.labels)
    assert not opt.regularized


def test_optimum_ridge_fallback_on_singular_design():
    x = np.zeros((4, 2))
    x[:, 0] = [0.1, 0.2, 0.3, 0.4]
    ds = FederatedDataset(x, np.ones((4, 1)), (np.arange(4),))
    opt = least_squares_optimum(ds)
    assert opt.regularized and opt.ridge > 0
    assert np.all(np.isfinite(opt.w_star))


def test_gap_cases():
    ds = dataset()
    opt = least_squares_optimum(ds)
    assert optimality_gap(ds, opt.w_star, opt.f_star) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_convexity_and_minimality(seed, lam):
    ds = dataset(m=30, d=3, o=2)
    opt = least_squares_optimum(ds)
    gen = np.random.default_rng(seed)
    w1, w2 = gen.standard_normal((2, 3, 2)) * 3
    mix = lam * w1 + (1 - lam) * w2
    assert global_loss(ds, mix) <= lam * global_loss(ds, w1) + (1 - lam) * global_loss(ds, w2) + 1e-9
    delta = gen.standard_normal((3, 2)) * 10.0 ** gen.uniform(-6, 1)
    assert global_loss(ds, opt.w_star + delta) >= opt.f_star - 1e-9
    assert optimality_gap(ds, w1, opt.f_star) >= -1e-9


# ---------------------------------------------------------- report rule

@settings(max_examples=100)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
def test_pass_rule_is_five_standard_errors(emp, theo, se):
    r = VerificationReport("x", 10, emp, theo, se)
    assert r.passed == (abs(emp - theo) <= Z_THRESHOLD * se)
    u = VerificationReport("x", 10, emp, theo, se, comparison=UPPER_BOUND)
    assert u.passed == (emp <= theo + Z_THRESHOLD * se)
    assert VerificationReport("x", 10, emp, None, se).passed is None


# --------------------------------------------------------------- lemma 1

def test_lemma1_small_instance_passes():
    reports = verify_lemma1(RngStream(0), m=2, d=3, n=3, c=100, b_s=50, l_i=10, b_i=5, trials=2000)
    assert all(r.passed for r in reports)
    by = {r.name: r for r in reports}
    assert by["lemma1.G.deviation"].theoretical == pytest.approx(0.06)
    assert by["lemma1.S_client.deviation"].theoretical == pytest.approx(10.0)


def test_lemma1_full_server_batch_has_zero_deviation():
    reports = verify_lemma1(RngStream(1), m=2, d=2, n=2, c=30, b_s=30, l_i=4, b_i=4, trials=100)
    by = {r.name: r for r in reports}
    assert by["lemma1.S_server.deviation"].empirical == 0.0
    assert by["lemma1.S_client.deviation"].empirical == 0.0


def test_lemma1_per_client_convention():
    reports = verify_lemma1(RngStream(2), m=2, d=2, n=3, c=50, b_s=10, l_i=4, b_i=2, trials=2000,
                            noise_convention=PER_CLIENT_UNIT)
    by = {r.name: r for r in reports}
    assert by["lemma1.N.mean"].theoretical == pytest.approx(3.0)
    assert all(r.passed for r in reports)


# ------------------------------------------------------------ lemmas 2, 3

def setup_for(sigma, conv="composite-unit", full=False, seed=0):
    ds = dataset(seed=seed)
    if full:
        return ds, LemmaSetup(ds, CodingConfig(20, sigma, conv), always_on(ds.n), 1.0, 20, tuple(ds.sizes))
    prof = sample_profile(RngStream(seed).child("p"), ds.n, n_mac_per_sample=6, payload_bits=192,
                          model_bits=192, erasure_prob=0.4)
    return ds, LemmaSetup(ds, CodingConfig(20, sigma, conv), prof, 0.01, 10, (5,) * ds.n)


def test_lemma2_noiseless_full_information():
    ds, setup = setup_for(0.0, full=True)
    w = probe_model(RngStream(1), ds, least_squares_optimum(ds).w_star)
    assert verify_lemma2(setup, w, RngStream(2), trials=2000).passed


@pytest.mark.parametrize("sigma", [0.5, 2.0])
def test_lemma2_unbiased_with_stragglers(sigma):
    ds, setup = setup_for(sigma)
    assert setup.arrival_probs().min() > 0
    w = probe_model(RngStream(3), ds, least_squares_optimum(ds).w_star)
    assert verify_lemma2(setup, w, RngStream(4), trials=3000).passed


def test_lemma2_detects_mismatched_make_up():
    sigma, n = 2.0, 4
    ds, setup = setup_for(sigma, conv=PER_CLIENT_UNIT, full=True)
    w = probe_model(RngStream(5), ds, least_squares_optimum(ds).w_star)
    # subtracting sigma^2 W when the summed noise has variance n sigma^2 leaves 1/2 (n-1) sigma^2 W
    samples = sample_aggregated_gradients(setup, w, 3000, RngStream(6), make_up_coeff=sigma**2)
    bias = samples.mean(axis=0) - global_gradient(ds, w)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    expected = 0.5 * (n - 1) * sigma**2 * w
    assert np.all(np.abs(bias - expected) <= 5 * se)
    assert not verify_lemma2(setup, w, RngStream(6), trials=3000, make_up_coeff=sigma**2).passed


def test_lemma3_without_sampling_or_stragglers():
    ds, setup = setup_for(0.0, full=True)
    w = probe_model(RngStream(1), ds, least_squares_optimum(ds).w_star)
    b = compute_bounds(ds, 10.0)
    out = verify_lemma3(setup, w, RngStream(2), trials=500, bounds=b)
    assert out.client < 1e-20 and out.server_sampling == 0.0
    assert out.total == pytest.approx(out.coding, rel=1e-9)
    coding_term = (ds.m + ds.m**2) * b.zeta * b.kappa / 20
    assert out.rho == pytest.approx(coding_term, rel=1e-12)


def test_lemma3_components_add_up():
    ds, setup = setup_for(0.5)
    w = probe_model(RngStream(1), ds, least_squares_optimum(ds).w_star)
    out = verify_lemma3(setup, w, RngStream(2), trials=2000, bounds=compute_bounds(ds, 10.0))
    by = {r.name: r for r in out.reports}
    assert by["lemma3.additivity"].passed
    assert by["lemma3.GtN_moment"].passed
    assert "ratio to rho" in by["lemma3.variance"].note
    assert not by["lemma3.variance"].hard


# --------------------------------------------------------------- network

def test_network_verification_small():
    prof = sample_profile(RngStream(3), 5, n_mac_per_sample=20, payload_bits=640, model_bits=640)
    reports = verify_network(RngStream(4), prof, [10] * 5, [0.002, 0.003, 0.006], 20_000)
    assert len(reports) == 15
    assert all(r.passed for r in reports)
