"""Dense float64 primitives and seeded randomness.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Random streams
come from numpy's PCG64 bit generator; a stream is identified by
``(seed, stream_id)`` and seeded through ``numpy.random.SeedSequence`` so that
independent consumers (source sampler, target sampler, init, ...) never share
state.
"""

from __future__ import annotations

import numpy as np

from sca.errors import ConfigError, ContractError

# Stream ids used across the package. Adding new ids is fine; renumbering
# breaks replay of old runs.
STREAM_INIT = 0
STREAM_SOURCE = 1
STREAM_TARGET = 2
STREAM_PAIRING = 3
STREAM_PK = 4
STREAM_DATA_SOURCE = 10
STREAM_DATA_TARGET = 11
STREAM_EVAL = 20


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise ConfigError("seed and stream must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains NaN or Inf")


def pairwise_sq_dists(A, B) -> np.ndarray:
    """Squared Euclidean distances between rows of ``A`` and rows of ``B``.

    Uses ``|a|^2 + |b|^2 - 2 a.b`` and clamps negative round-off to zero.
    When ``A is B`` the diagonal is forced to exactly zero.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ContractError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    a2 = np.einsum("ij,ij->i", A, A)
    b2 = np.einsum("ij,ij->i", B, B)
    D = a2[:, None] + b2[None, :] - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    if A.shape == B.shape and np.array_equal(A, B):
        np.fill_diagonal(D, 0.0)
    return D


def stable_softmax(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    """Gaussian kernel ``exp(-gamma * |a - b|^2)``."""
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    return np.exp(-gamma * pairwise_sq_dists(A, B))


def median_bandwidth(X) -> float:
    """Inverse median of the squared distances over all pairs ``i < j``.

    Falls back to 1.0 when the median is zero (e.g. duplicated points).
    """
    X = as_matrix(X, "X")
    n = X.shape[0]
    if n < 2:
        raise ContractError("median_bandwidth needs at least two rows")
    iu = np.triu_indices(n, k=1)
    med = float(np.median(pairwise_sq_dists(X, X)[iu]))
    if med <= 0.0 or not np.isfinite(med):
        return 1.0
    return 1.0 / med
