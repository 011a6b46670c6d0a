"""Global regression data and its disjoint split across clients."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import RngStream, as_matrix, frobenius_norm_sq


@dataclass(frozen=True)
class FederatedDataset:
    features: np.ndarray  # m x d
    labels: np.ndarray  # m x o
    partitions: tuple  # n index arrays, disjoint, covering range(m)

    def __post_init__(self):
        m = self.features.shape[0]
        if self.labels.shape[0] != m:
            raise ShapeError("features and labels disagree on the number of rows")
        seen = np.concatenate([np.asarray(p, dtype=np.int64) for p in self.partitions])
        if seen.size != m or not np.array_equal(np.sort(seen), np.arange(m)):
            raise ConfigError("partitions must be disjoint and cover every row")
        if np.max(np.abs(self.features), initial=0.0) > 1.0:
            raise ConfigError("feature entries must have absolute value <= 1")

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def o(self) -> int:
        return self.labels.shape[1]

    @property
    def n(self) -> int:
        return len(self.partitions)

    @property
    def sizes(self) -> list[int]:
        return [len(p) for p in self.partitions]

    def client(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.partitions[i]
        return self.features[idx], self.labels[idx]

    def reassemble(self) -> tuple[np.ndarray, np.ndarray]:
        """Rebuild (X, Y) from the client blocks alone."""
        x = np.zeros_like(self.features)
        y = np.zeros_like(self.labels)
        for i, idx in enumerate(self.partitions):
            xi, yi = self.client(i)
            x[idx] = xi
            y[idx] = yi
        return x, y


@dataclass(frozen=True)
class BoundEstimates:
    """Per-client constants bounding data norm, residual norm and model norm.

    ``zeta_i``, ``alpha_i`` and ``kappa_i`` hold the (unsquared) bounds; the
    aggregate ``zeta``, ``alpha`` and ``kappa`` are sums of their squares.
    """

    zeta_i: np.ndarray
    alpha_i: np.ndarray
    kappa_i: np.ndarray
    phi: float

    @property
    def zeta(self) -> float:
        return float(np.sum(self.zeta_i**2))

    @property
    def alpha(self) -> float:
        return float(np.sum(self.alpha_i**2))

    @property
    def kappa(self) -> float:
        return float(np.sum(self.kappa_i**2))


def generate_synthetic(stream: RngStream, m: int, d: int, o: int,
                       noise_std: float = 0.0, ground_truth_scale: float = 1.0):
    """Return ``(X, Y, W_true)`` with ``Y = X W_true + noise`` and ``max|X| == 1``."""
    if min(m, d, o) < 1:
        raise ConfigError("m, d and o must be positive")
    x = stream.child("features").generator().uniform(-1.0, 1.0, size=(m, d))
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    w_true = ground_truth_scale * stream.child("ground-truth").generator().standard_normal((d, o))
    y = x @ w_true
    if noise_std > 0:
        y = y + noise_std * stream.child("label-noise").generator().standard_normal((m, o))
    return x, y, w_true


def _contiguous_shards(order: np.ndarray, n: int) -> tuple:
    m = order.size
    if n < 1 or n > m:
        raise ConfigError(f"cannot split {m} rows across {n} clients", key="data.n")
    size = m // n
    shards = [order[k * size:(k + 1) * size] for k in range(n - 1)]
    # last shard absorbs the remainder
    shards.append(order[(n - 1) * size:])
    return tuple(np.sort(s) for s in shards)


def skewed_partition(labels: np.ndarray, n: int) -> tuple:
    """Sort rows by the first label column and deal out contiguous shards.

    Client 0 receives the smallest labels. Ties keep row order.
    """
    labels = np.asarray(labels, dtype=np.float64)
    key = labels[:, 0] if labels.ndim == 2 else labels
    order = np.argsort(key, kind="stable")
    return _contiguous_shards(order, n)


def iid_partition(stream: RngStream, m: int, n: int) -> tuple:
    order = stream.generator().permutation(m)
    return _contiguous_shards(order, n)


def rffm_transform(stream: RngStream, raw_features: np.ndarray, target_dim: int,
                   bandwidth: float) -> np.ndarray:
    """Random Fourier features for the Gaussian kernel of width ``bandwidth``.

    z(x) = sqrt(2/D) cos(Omega x + b), Omega ~ N(0, 1/bandwidth^2),
    b ~ U[0, 2 pi). Rescaled only if some entry would exceed 1 in magnitude.
    """
    if target_dim < 1:
        raise ConfigError("target_dim must be positive", key="data.rffm_dim")
    if bandwidth <= 0:
        raise ConfigError("bandwidth must be positive", key="data.rffm_bandwidth")
    raw = as_matrix(raw_features)
    gen = stream.generator()
    omega = gen.standard_normal((raw.shape[1], target_dim)) / bandwidth
    phase = gen.uniform(0.0, 2.0 * np.pi, size=target_dim)
    z = np.sqrt(2.0 / target_dim) * np.cos(raw @ omega + phase)
    peak = np.max(np.abs(z))
    if peak > 1.0:
        z = z / peak
    return z


def compute_bounds(dataset: FederatedDataset, phi_cap: float,
                   w0: np.ndarray | None = None, slack: float = 2.0) -> BoundEstimates:
    """Data-derived constants: exact feature norms, slackened initial residuals."""
    if w0 is None:
        w0 = np.zeros((dataset.d, dataset.o))
    zeta_i = np.empty(dataset.n)
    kappa_i = np.empty(dataset.n)
    for i in range(dataset.n):
        xi, yi = dataset.client(i)
        zeta_i[i] = np.sqrt(frobenius_norm_sq(xi))
        kappa_i[i] = slack * np.sqrt(frobenius_norm_sq(xi @ w0 - yi))
    return BoundEstimates(zeta_i=zeta_i, alpha_i=zeta_i.copy(), kappa_i=kappa_i, phi=float(phi_cap))


def read_feature_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Read the ``m d o`` header format; returns ``(X, Y)``."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ConfigError(f"{path}: header must be 'm d o'")
        m, d, o = (int(v) for v in header)
        body = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if body.shape != (m, d + o):
        raise ShapeError(f"{path}: expected {m} rows of {d + o} values, got {body.shape}")
    return body[:, :d].copy(), body[:, d:].copy()


def write_feature_file(path, x: np.ndarray, y: np.ndarray) -> None:
    x = as_matrix(x)
    y = as_matrix(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError("x and y must have the same number of rows")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{x.shape[0]} {x.shape[1]} {y.shape[1]}\n")
        for row in np.hstack([x, y]):
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")
