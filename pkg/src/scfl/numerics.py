"""Dense float64 matrix helpers and labelled, hash-derived random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
helpers here only add the shape checks and finiteness guarantees the rest of
the package relies on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm_sq(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(root_seed, label)``.

    The label is a tuple such as ``("delay", epoch, client)``. Child streams
    extend the label, so adding clients or epochs never shifts the draws of
    any other stream. Each call to :meth:`generator` returns a fresh
    generator positioned at the start of the stream.
    """

    root_seed: int
    label: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.root_seed, self.label + tuple(parts))

    def seed_int(self) -> int:
        text = repr((int(self.root_seed),) + tuple(str(p) for p in self.label))
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_int()))


def gaussian_matrix(stream: RngStream, rows: int, cols: int, std_dev: float = 1.0) -> np.ndarray:
    """i.i.d. N(0, std_dev^2) entries, fully determined by ``stream``."""
    if rows < 1 or cols < 1:
        raise ShapeError("rows and cols must be positive")
    if std_dev < 0:
        raise ValueError("std_dev must be nonnegative")
    z = stream.generator().standard_normal((rows, cols))
    return z * float(std_dev)


def bernoulli_mask(rng: np.random.Generator, size: int, prob: float) -> np.ndarray:
    """Boolean vector with independent Bernoulli(prob) entries.

    ``prob == 1`` selects everything because ``random()`` lies in [0, 1).
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    return rng.random(size) < prob


def bernoulli_diag(stream: RngStream, size: int, prob: float) -> np.ndarray:
    """Diagonal 0/1 sampling matrix; the dense form of :func:`bernoulli_mask`."""
    if size < 1:
        raise ShapeError("size must be positive")
    mask = bernoulli_mask(stream.generator(), size, prob)
    return np.diag(mask.astype(np.float64))
