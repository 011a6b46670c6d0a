import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scfl.analysis.verify import entrywise_report
from scfl.coding import (
    COMPOSITE_UNIT,
    PER_CLIENT_UNIT,
    CodingConfig,
    build_composite,
    calibrate_sigma,
    encode_client,
    encode_dataset,
    epsilon_from_noise,
    h_value,
    privacy_budget,
)
from scfl.data import FederatedDataset, generate_synthetic, skewed_partition
from scfl.errors import ConfigError, InfiniteLeakageError
from scfl.numerics import RngStream


def dataset(m=60, d=4, n=3, seed=0):
    x, y, _ = generate_synthetic(RngStream(seed), m, d, 1, 0.1)
    return FederatedDataset(x, y, skewed_partition(y, n))


def test_zero_data_zero_noise_encodes_to_zero():
    cx, cy = encode_client(RngStream(0), np.zeros((5, 3)), np.zeros((5, 1)), CodingConfig(7))
    assert not cx.any() and not cy.any()


def test_single_row_gives_rank_one_code():
    r = np.array([[0.3, -0.7, 0.1]])
    cx, _ = encode_client(RngStream(1), r, np.ones((1, 1)), CodingConfig(9))
    for row in cx:
        coef = row[0] / r[0, 0]
        np.testing.assert_allclose(row, coef * r[0], rtol=1e-12)


def test_coded_gram_moment():
    gen = np.random.default_rng(3)
    x = gen.uniform(-1, 1, (6, 3))
    cfg = CodingConfig(20, 0.8, PER_CLIENT_UNIT)
    root = RngStream(11)
    grams = []
    for t in range(10_000):
        cx, _ = encode_client(root.child(t), x, np.zeros((6, 1)), cfg)
        grams.append(cx.T @ cx / cfg.c)
    expected = x.T @ x + 0.8**2 * np.eye(3)
    assert entrywise_report("gram", np.array(grams), expected).passed


def test_composite_cases():
    cfg = CodingConfig(4)
    a = np.random.default_rng(0).standard_normal((4, 3))
    y = np.ones((4, 1))
    one = build_composite([(a, y)], cfg)
    assert np.array_equal(one.x_tilde, a)
    assert not build_composite([(a, y), (-a, -y)], cfg).x_tilde.any()
    parts = [(np.random.default_rng(k).standard_normal((4, 3)), y * k) for k in range(3)]
    comp = build_composite(parts, cfg)
    direct = np.zeros((4, 3))
    for p, _ in parts:
        for i, j in itertools.product(range(4), range(3)):
            direct[i, j] += p[i, j]
    np.testing.assert_allclose(comp.x_tilde, direct, rtol=0, atol=1e-15)


def test_composite_rejects_mixed_sizes():
    with pytest.raises(ConfigError):
        build_composite([(np.zeros((3, 2)), np.zeros((3, 1))), (np.zeros((4, 2)), np.zeros((4, 1)))],
                        CodingConfig(3))


def test_noise_conventions():
    composite = CodingConfig(10, 2.0, COMPOSITE_UNIT)
    per_client = CodingConfig(10, 2.0, PER_CLIENT_UNIT)
    assert composite.per_client_noise_var(4) == 1.0
    assert composite.composite_noise_var(4) == 4.0
    assert per_client.per_client_noise_var(4) == 4.0
    assert per_client.composite_noise_var(4) == 16.0
    ds = dataset(n=4)
    assert encode_dataset(RngStream(0), ds, composite).effective_sigma_sq == pytest.approx(4.0)


def test_h_value_cases():
    assert h_value(np.array([[0.7, -0.2]])) == 0.0
    assert h_value(np.array([[1.0], [1.0]])) == 1.0
    x = np.random.default_rng(5).uniform(-1, 1, (8, 3))
    best = math.inf
    for j in range(3):
        col = [x[i, j] ** 2 for i in range(8)]
        best = min(best, sum(col) - max(col))
    assert h_value(x) == pytest.approx(math.sqrt(best), rel=1e-12)


def test_epsilon_cases():
    assert epsilon_from_noise(3, 1.0, 0.0) == 1.0
    assert epsilon_from_noise(3, 0.0, 1.0) == 1.0
    assert epsilon_from_noise(3, 0.5, 1e12) < 1e-11
    with pytest.raises(InfiniteLeakageError):
        epsilon_from_noise(3, 0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 500), st.floats(0, 5), st.floats(0, 10), st.floats(0, 10))
def test_epsilon_decreasing_in_noise(c, h, v1, v2):
    if h == 0 and min(v1, v2) == 0:
        return
    lo, hi = sorted((v1, v2))
    assert epsilon_from_noise(c, h, hi) <= epsilon_from_noise(c, h, lo)


def test_calibrate_already_satisfied():
    ds = dataset()
    eps0 = privacy_budget(ds, CodingConfig(30, 0.0)).epsilon
    assert calibrate_sigma(ds, 30, eps0) == 0.0


def test_calibrate_hand_inverse():
    # one client, one column, single nonzero entry: h = 0
    x = np.array([[1.0], [0.0]])
    ds = FederatedDataset(x, np.zeros((2, 1)), (np.arange(2),))
    assert h_value(x) == 0.0
    assert calibrate_sigma(ds, 3, 1.0) == pytest.approx(1.0, rel=1e-12)


def bisect_sigma(ds, c, target, conv):
    lo, hi = 0.0, 1.0
    while privacy_budget(ds, CodingConfig(c, hi, conv)).epsilon > target:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if privacy_budget(ds, CodingConfig(c, mid, conv)).epsilon > target:
            lo = mid
        else:
            hi = mid
    return hi


@pytest.mark.parametrize("conv", [COMPOSITE_UNIT, PER_CLIENT_UNIT])
@pytest.mark.parametrize("fraction", [0.2, 0.5, 0.9])
def test_calibrate_roundtrip_matches_bisection(conv, fraction):
    ds = dataset(m=90, d=5, n=3, seed=2)
    target = fraction * privacy_budget(ds, CodingConfig(40, 0.0, conv)).epsilon
    sigma = calibrate_sigma(ds, 40, target, conv)
    assert sigma > 0
    assert privacy_budget(ds, CodingConfig(40, sigma, conv)).epsilon <= target + 1e-9
    assert privacy_budget(ds, CodingConfig(40, 0.99 * sigma, conv)).epsilon > target
    assert sigma == pytest.approx(bisect_sigma(ds, 40, target, conv), rel=1e-9)


def test_privacy_budget_uses_worst_client():
    ds = dataset(n=3)
    rep = privacy_budget(ds, CodingConfig(25, 1.0))
    assert rep.epsilon == max(rep.per_client_epsilon)
    assert rep.per_client_noise_var == pytest.approx(1.0 / 3)
