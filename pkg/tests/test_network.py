import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scfl import network
from scfl.errors import ConfigError
from scfl.network import (
    SERVER,
    DelayProfile,
    arrival_probabilities,
    arrival_probability,
    compute_time,
    deadline_candidates,
    deadline_for_min_probability,
    epoch_delay,
    sample_epoch,
    sample_profile,
    sample_total_times,
    sample_uplink_attempts,
)
from scfl.numerics import RngStream


def profile(n=1, mac=1_536_000.0, up=1e6, e=0.1, down=1e6, n_mac=1536.0, payload=1e3, model=1e3):
    return DelayProfile((mac,) * n, (up,) * n, (e,) * n, down, 15_360_000.0, n_mac, payload, model)


def reference(n=20, seed=0):
    return sample_profile(RngStream(seed), n, n_mac_per_sample=20, payload_bits=640, model_bits=640)


def test_compute_time_cases():
    p = profile()
    assert compute_time(p, 0, 0) == 0.0
    assert compute_time(p, 0, 512) == pytest.approx(0.512, rel=1e-15)
    assert compute_time(p, SERVER, 512) == pytest.approx(0.0512, rel=1e-15)


def test_attempts_cases():
    gen = np.random.default_rng(0)
    assert np.all(sample_uplink_attempts(gen, 0.0, size=1000) == 1)
    draws = sample_uplink_attempts(gen, 0.1, size=100_000)
    assert abs(draws.mean() - 1 / 0.9) < 0.02
    frac = np.mean(draws <= 2)
    se = math.sqrt(0.99 * 0.01 / draws.size)
    assert abs(frac - 0.99) <= 5 * se


def test_total_time_without_communication_cost():
    p = profile(e=0.0, up=1e15, down=1e15)
    tc, attempts, total = epoch_delay(RngStream(0), p, 0, 100)
    assert attempts == 1
    assert total == pytest.approx(tc, rel=1e-9)


def test_total_time_hand_case(monkeypatch):
    p = profile(mac=1000.0, n_mac=1.0, up=1e6, down=1e6, payload=1e6, model=1e6)
    monkeypatch.setattr(network, "sample_uplink_attempts", lambda rng, e, size=None: 2)
    tc, attempts, total = epoch_delay(RngStream(0), p, 0, 500)
    assert (tc, attempts) == (0.5, 2)
    assert total == pytest.approx(3.5, rel=1e-15)


def test_total_time_distribution_matches_closed_form():
    p = reference(n=3, seed=4)
    b = 7
    totals = sample_total_times(RngStream(8), p, 1, b, 10_000)
    base = compute_time(p, 1, b) + p.download_time
    for k in range(1, 4):
        t = base + k * p.uplink_slot(1)
        q = arrival_probability(p, 1, b, t)
        emp = np.mean(totals <= t)
        assert abs(emp - q) <= 5 * math.sqrt(q * (1 - q) / totals.size) + 1e-12


def test_arrival_probability_cases():
    p = profile()
    tc = compute_time(p, 0, 10)
    just_short = tc + p.download_time + 0.5 * p.uplink_slot(0)
    assert arrival_probability(p, 0, 10, just_short) == 0.0
    one = tc + p.download_time + p.uplink_slot(0)
    assert arrival_probability(p, 0, 10, one) == pytest.approx(0.9)
    assert arrival_probability(profile(e=0.0), 0, 10, one) == 1.0


def test_arrival_boundary_agrees_with_simulator():
    p = reference(n=5, seed=2)
    b = [3] * 5
    for t in deadline_candidates(p, b, max_attempts=3):
        arrivals = sample_epoch(RngStream(0), p, b, 1, t)
        probs = arrival_probabilities(p, b, t)
        # any client that arrived had a positive probability of doing so
        assert np.all(probs[arrivals.arrived] > 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05), st.integers(0, 40), st.integers(0, 40))
def test_arrival_probability_monotone(t1, t2, b1, b2):
    p = reference(n=2, seed=1)
    lo_t, hi_t = sorted((t1, t2))
    lo_b, hi_b = sorted((b1, b2))
    assert arrival_probability(p, 0, lo_b, lo_t) <= arrival_probability(p, 0, lo_b, hi_t)
    assert arrival_probability(p, 0, hi_b, hi_t) <= arrival_probability(p, 0, lo_b, hi_t)


def test_epoch_arrivals_definition():
    p = reference(n=20)
    ep = sample_epoch(RngStream(1), p, [10] * 20, 3, 0.004)
    assert np.array_equal(ep.arrived, ep.total_time <= 0.004)
    assert ep.n_arrived == int(ep.arrived.sum())
    assert sample_epoch(RngStream(1), p, [10] * 20, 3, None).arrived.all()


def test_sample_epoch_deterministic_and_labelled():
    p = reference(n=4)
    a = sample_epoch(RngStream(5), p, [4] * 4, 2, 0.01)
    b = sample_epoch(RngStream(5), p, [4] * 4, 2, 0.01)
    assert np.array_equal(a.total_time, b.total_time)
    c = sample_epoch(RngStream(5), p, [4] * 4, 3, 0.01)
    assert a.epoch == 2 and c.epoch == 3
    # client 2's draw depends only on (epoch, client)
    solo = epoch_delay(RngStream(5).child(2, 2), p, 2, 4)
    assert solo[2] == a.total_time[2]


def test_reference_profile_ranges():
    p = reference(n=200, seed=3)
    assert all(0.3e6 <= r <= 1e6 for r in p.uplink_rates)
    assert all(0.1 * 1_536_000 <= r <= 1_536_000 for r in p.mac_rates)
    assert set(p.erasure_probs) == {0.1}
    assert p.downlink_rate == 1e6 and p.server_mac_rate == 15_360_000


def test_profile_dict_roundtrip_and_validation():
    p = reference(n=3)
    assert DelayProfile.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        DelayProfile((1.0,), (1.0, 2.0), (0.1,), 1.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        DelayProfile((1.0,), (1.0,), (1.0,), 1.0, 1.0, 1.0, 1.0, 1.0)


def test_deadline_for_min_probability():
    p = DelayProfile((1e6,) * 3, (1e6,) * 3, (0.4, 0.4, 0.1), 1e6, 1e7, 10.0, 1e3, 1e3)
    t = deadline_for_min_probability(p, [5] * 3, 0.6)
    probs = arrival_probabilities(p, [5] * 3, t)
    assert probs.min() == pytest.approx(0.6)
