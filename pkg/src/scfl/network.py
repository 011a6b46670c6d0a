"""Per-epoch computation and communication delays.

Client i needs ``t_c(b) + k * payload / uplink_i + model / downlink`` seconds,
where ``k`` is a geometric number of uplink attempts. The broadcast is
reliable; only the uplink is random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .numerics import RngStream

SERVER = "server"

# experimental setup of the reference wireless environment
REFERENCE_DOWNLINK_BPS = 1e6
REFERENCE_UPLINK_BPS = 1e6
REFERENCE_UPLINK_SCALE = (0.3, 1.0)
REFERENCE_CLIENT_MACR = 1_536_000.0
REFERENCE_MACR_SCALE = (0.1, 1.0)
REFERENCE_SERVER_MACR = 15_360_000.0
REFERENCE_ERASURE = 0.1


@dataclass(frozen=True)
class DelayProfile:
    mac_rates: tuple
    uplink_rates: tuple
    erasure_probs: tuple
    downlink_rate: float
    server_mac_rate: float
    n_mac_per_sample: float
    payload_bits: float
    model_bits: float

    def __post_init__(self):
        n = len(self.mac_rates)
        if n < 1 or len(self.uplink_rates) != n or len(self.erasure_probs) != n:
            raise ConfigError("per-client delay parameters must all have length n", key="network")
        rates = list(self.mac_rates) + list(self.uplink_rates) + [
            self.downlink_rate, self.server_mac_rate]
        if not all(r > 0 and math.isfinite(r) for r in rates):
            raise ConfigError("all rates must be positive and finite", key="network")
        if not all(0.0 <= p < 1.0 for p in self.erasure_probs):
            raise ConfigError("erasure probabilities must lie in [0, 1)", key="network.erasure_prob")
        if self.n_mac_per_sample < 0 or self.payload_bits < 0 or self.model_bits < 0:
            raise ConfigError("sizes must be nonnegative", key="network")

    @property
    def n(self) -> int:
        return len(self.mac_rates)

    def uplink_slot(self, client: int) -> float:
        """Duration of one upload attempt, successful or not."""
        return self.payload_bits / self.uplink_rates[client]

    @property
    def download_time(self) -> float:
        return self.model_bits / self.downlink_rate

    def to_dict(self) -> dict:
        return {
            "mac_rates": list(self.mac_rates),
            "uplink_rates": list(self.uplink_rates),
            "erasure_probs": list(self.erasure_probs),
            "downlink_rate": self.downlink_rate,
            "server_mac_rate": self.server_mac_rate,
            "n_mac_per_sample": self.n_mac_per_sample,
            "payload_bits": self.payload_bits,
            "model_bits": self.model_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DelayProfile":
        return cls(
            mac_rates=tuple(float(v) for v in d["mac_rates"]),
            uplink_rates=tuple(float(v) for v in d["uplink_rates"]),
            erasure_probs=tuple(float(v) for v in d["erasure_probs"]),
            downlink_rate=float(d["downlink_rate"]),
            server_mac_rate=float(d["server_mac_rate"]),
            n_mac_per_sample=float(d["n_mac_per_sample"]),
            payload_bits=float(d["payload_bits"]),
            model_bits=float(d["model_bits"]),
        )


@dataclass
class EpochArrivals:
    epoch: int
    deadline_T: float | None
    compute_time: np.ndarray
    attempts: np.ndarray
    total_time: np.ndarray
    arrived: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.arrived is None:
            if self.deadline_T is None:
                self.arrived = np.ones(self.total_time.shape, dtype=bool)
            else:
                self.arrived = self.total_time <= self.deadline_T

    @property
    def n_arrived(self) -> int:
        return int(np.count_nonzero(self.arrived))


def compute_time(profile: DelayProfile, party, batch_size: float) -> float:
    if batch_size < 0:
        raise ValueError("batch_size must be nonnegative")
    rate = profile.server_mac_rate if party == SERVER else profile.mac_rates[party]
    return batch_size * profile.n_mac_per_sample / rate


def sample_uplink_attempts(rng: np.random.Generator, erasure_prob, size=None):
    """Attempts until the first success: P(k) = e^(k-1) (1 - e), k >= 1."""
    return rng.geometric(1.0 - np.asarray(erasure_prob, dtype=np.float64), size=size)


def epoch_delay(stream: RngStream, profile: DelayProfile, client: int, batch_size: float):
    """One draw of ``(compute_time, attempts, total_time)`` for a client."""
    tc = compute_time(profile, client, batch_size)
    attempts = int(sample_uplink_attempts(stream.generator(), profile.erasure_probs[client]))
    total = tc + attempts * profile.uplink_slot(client) + profile.download_time
    return tc, attempts, total


def sample_total_times(stream: RngStream, profile: DelayProfile, client: int,
                       batch_size: float, size: int) -> np.ndarray:
    """``size`` independent epoch delays for one client (vectorised epoch_delay)."""
    tc = compute_time(profile, client, batch_size)
    attempts = sample_uplink_attempts(stream.generator(), profile.erasure_probs[client], size=size)
    return tc + attempts * profile.uplink_slot(client) + profile.download_time


def sample_epoch(stream: RngStream, profile: DelayProfile, batch_sizes, epoch: int,
                 deadline_T: float | None) -> EpochArrivals:
    """Delays for every client in one epoch, each from its own labelled stream."""
    n = profile.n
    tc = np.empty(n)
    attempts = np.empty(n, dtype=np.int64)
    total = np.empty(n)
    for i in range(n):
        tc[i], attempts[i], total[i] = epoch_delay(stream.child(epoch, i), profile, i, batch_sizes[i])
    return EpochArrivals(epoch, deadline_T, tc, attempts, total)


def max_attempts_within(profile: DelayProfile, client: int, batch_size: float,
                        deadline_T: float) -> int:
    """Largest attempt count k whose total delay still fits in ``deadline_T``."""
    tc = compute_time(profile, client, batch_size)
    td = profile.download_time
    slot = profile.uplink_slot(client)
    if slot == 0:
        return math.inf if tc + td <= deadline_T else 0
    k = max(int(math.floor((deadline_T - tc - td) / slot)), 0)
    # settle rounding at the boundary with the same arithmetic the simulator uses
    while tc + (k + 1) * slot + td <= deadline_T:
        k += 1
    while k >= 1 and tc + k * slot + td > deadline_T:
        k -= 1
    return k


def arrival_probability(profile: DelayProfile, client: int, batch_size: float,
                        deadline_T: float) -> float:
    k = max_attempts_within(profile, client, batch_size, deadline_T)
    if k < 1:
        return 0.0
    if k == math.inf:
        return 1.0
    return 1.0 - profile.erasure_probs[client] ** k


def arrival_probabilities(profile: DelayProfile, batch_sizes, deadline_T: float) -> np.ndarray:
    return np.array([arrival_probability(profile, i, batch_sizes[i], deadline_T)
                     for i in range(profile.n)])


def sample_profile(stream: RngStream, n: int, *, n_mac_per_sample: float, payload_bits: float,
                   model_bits: float, erasure_prob: float = REFERENCE_ERASURE,
                   downlink_rate: float = REFERENCE_DOWNLINK_BPS,
                   server_mac_rate: float = REFERENCE_SERVER_MACR) -> DelayProfile:
    """Heterogeneous clients following the reference wireless-edge recipe."""
    if n < 1:
        raise ConfigError("n must be positive", key="data.n")
    gen = stream.generator()
    uplink = REFERENCE_UPLINK_BPS * gen.uniform(*REFERENCE_UPLINK_SCALE, size=n)
    macr = REFERENCE_CLIENT_MACR * gen.uniform(*REFERENCE_MACR_SCALE, size=n)
    return DelayProfile(
        mac_rates=tuple(float(v) for v in macr),
        uplink_rates=tuple(float(v) for v in uplink),
        erasure_probs=(float(erasure_prob),) * n,
        downlink_rate=float(downlink_rate),
        server_mac_rate=float(server_mac_rate),
        n_mac_per_sample=float(n_mac_per_sample),
        payload_bits=float(payload_bits),
        model_bits=float(model_bits),
    )


def deadline_candidates(profile: DelayProfile, batch_sizes, max_attempts: int = 8) -> np.ndarray:
    """Every deadline at which some client's arrival probability changes."""
    points = []
    for i in range(profile.n):
        base = compute_time(profile, i, batch_sizes[i]) + profile.download_time
        points.extend(base + k * profile.uplink_slot(i) for k in range(1, max_attempts + 1))
    return np.unique(points)


def deadline_for_min_probability(profile: DelayProfile, batch_sizes, target: float) -> float:
    """Smallest breakpoint deadline whose minimum arrival probability is closest to ``target``."""
    best_t, best_err = None, math.inf
    for t in deadline_candidates(profile, batch_sizes):
        p = arrival_probabilities(profile, batch_sizes, t)
        if p.min() <= 0:
            continue
        err = abs(p.min() - target)
        if err < best_err - 1e-12:
            best_t, best_err = float(t), err
    if best_t is None:
        raise ConfigError("no deadline gives every client a positive arrival probability")
    return best_t
