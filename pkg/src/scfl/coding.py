"""Coded dataset generation and mutual-information privacy accounting.

Each client releases ``G_i X_i + noise_i`` and ``G_i Y_i`` once, before
training. The server only ever sees the entrywise sum over clients.

Two noise conventions are supported:

``composite-unit``
    per-client noise has variance sigma^2 / n, so the summed noise has
    variance sigma^2 and the make-up coefficient is sigma^2.
``per-client-unit``
    per-client noise has variance sigma^2, the sum has variance n sigma^2 and
    the make-up coefficient is n sigma^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FederatedDataset
from .errors import ConfigError, InfiniteLeakageError
from .numerics import RngStream

COMPOSITE_UNIT = "composite-unit"
PER_CLIENT_UNIT = "per-client-unit"
NOISE_CONVENTIONS = (COMPOSITE_UNIT, PER_CLIENT_UNIT)


@dataclass(frozen=True)
class CodingConfig:
    c: int
    sigma: float = 0.0
    noise_convention: str = COMPOSITE_UNIT

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 1:
            raise ConfigError("c must be a positive integer", key="coding.c")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be nonnegative", key="coding.sigma")
        if self.noise_convention not in NOISE_CONVENTIONS:
            raise ConfigError(
                f"unknown noise convention {self.noise_convention!r}",
                key="coding.noise_convention",
            )

    def per_client_noise_var(self, n: int) -> float:
        if self.noise_convention == COMPOSITE_UNIT:
            return self.sigma**2 / n
        return self.sigma**2

    def composite_noise_var(self, n: int) -> float:
        """Variance of one entry of the summed noise; also the make-up coefficient."""
        return self.per_client_noise_var(n) * n


@dataclass(frozen=True)
class CodedDataset:
    x_tilde: np.ndarray  # c x d
    y_tilde: np.ndarray  # c x o
    config: CodingConfig
    effective_sigma_sq: float

    @property
    def c(self) -> int:
        return self.x_tilde.shape[0]

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.x_tilde.T @ (self.x_tilde @ w - self.y_tilde) / self.c


@dataclass(frozen=True)
class PrivacyReport:
    per_client_epsilon: tuple
    epsilon: float
    per_client_h: tuple
    per_client_noise_var: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "per_client_epsilon": list(self.per_client_epsilon),
            "per_client_h": list(self.per_client_h),
            "per_client_noise_var": self.per_client_noise_var,
        }


def encode_client(stream: RngStream, x_i: np.ndarray, y_i: np.ndarray,
                  config: CodingConfig, n_clients: int = 1):
    """Return ``(G_i x_i + nu N_i, G_i y_i)`` for this client.

    ``G_i`` and ``N_i`` come from disjoint child streams, so changing sigma
    rescales the same noise draw while the projection stays fixed.
    """
    l_i, d = x_i.shape
    g = stream.child("G").generator().standard_normal((config.c, l_i))
    coded_x = g @ x_i
    coded_y = g @ y_i
    nu_sq = config.per_client_noise_var(n_clients)
    if nu_sq > 0:
        noise = stream.child("N").generator().standard_normal((config.c, d))
        coded_x = coded_x + math.sqrt(nu_sq) * noise
    return coded_x, coded_y


def build_composite(per_client_coded, config: CodingConfig) -> CodedDataset:
    per_client_coded = list(per_client_coded)
    if not per_client_coded:
        raise ConfigError("no coded client data to combine")
    rows = {cx.shape[0] for cx, _ in per_client_coded} | {cy.shape[0] for _, cy in per_client_coded}
    if rows != {config.c}:
        raise ConfigError(f"clients used different coded sizes {sorted(rows)}", key="coding.c")
    x_tilde = np.zeros_like(per_client_coded[0][0])
    y_tilde = np.zeros_like(per_client_coded[0][1])
    # fixed client order keeps the reduction deterministic
    for cx, cy in per_client_coded:
        x_tilde = x_tilde + cx
        y_tilde = y_tilde + cy
    n = len(per_client_coded)
    return CodedDataset(x_tilde, y_tilde, config, config.composite_noise_var(n))


def encode_dataset(stream: RngStream, dataset: FederatedDataset, config: CodingConfig) -> CodedDataset:
    coded = [
        encode_client(stream.child("client", i), *dataset.client(i), config, dataset.n)
        for i in range(dataset.n)
    ]
    return build_composite(coded, config)


def h_value(x_i: np.ndarray) -> float:
    """min over columns of sqrt(column sum of squares - largest squared entry)."""
    sq = np.asarray(x_i, dtype=np.float64) ** 2
    rest = sq.sum(axis=0) - sq.max(axis=0)
    return float(np.sqrt(max(float(rest.min()), 0.0)))


def epsilon_from_noise(c: int, h: float, noise_var: float) -> float:
    denom = h * h + noise_var
    if denom <= 0:
        raise InfiniteLeakageError("h = 0 and no noise: privacy budget is unbounded")
    return 0.5 * math.log2(1.0 + c / denom)


def privacy_budget(dataset: FederatedDataset, config: CodingConfig) -> PrivacyReport:
    nu_sq = config.per_client_noise_var(dataset.n)
    hs = [h_value(dataset.client(i)[0]) for i in range(dataset.n)]
    eps = [epsilon_from_noise(config.c, h, nu_sq) for h in hs]
    return PrivacyReport(tuple(eps), max(eps), tuple(hs), nu_sq)


def calibrate_sigma(dataset: FederatedDataset, c: int, target_epsilon: float,
                    noise_convention: str = COMPOSITE_UNIT) -> float:
    """Smallest sigma whose budget does not exceed ``target_epsilon``.

    Inverts the budget formula per client: the noise variance must reach
    c / (2^(2 eps) - 1) - h_i^2. The most demanding client decides.
    """
    if not target_epsilon > 0:
        raise ConfigError("target_epsilon must be positive", key="coding.target_epsilon")
    try:
        if privacy_budget(dataset, CodingConfig(c, 0.0, noise_convention)).epsilon <= target_epsilon:
            return 0.0
    except InfiniteLeakageError:
        pass
    needed = c / math.expm1(2.0 * target_epsilon * math.log(2.0))
    nu_sq = 0.0
    for i in range(dataset.n):
        h = h_value(dataset.client(i)[0])
        nu_sq = max(nu_sq, needed - h * h)
    if noise_convention == COMPOSITE_UNIT:
        nu_sq *= dataset.n
    elif noise_convention != PER_CLIENT_UNIT:
        raise ConfigError(f"unknown noise convention {noise_convention!r}", key="coding.noise_convention")
    sigma = math.sqrt(nu_sq)
    cfg = CodingConfig(c, sigma, noise_convention)
    # absorb floating-point round-off so the postcondition holds exactly
    while privacy_budget(dataset, cfg).epsilon > target_epsilon:
        sigma = math.nextafter(sigma, math.inf)
        cfg = CodingConfig(c, sigma, noise_convention)
    return sigma
