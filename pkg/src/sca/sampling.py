"""PK mini-batches for the triplet loss and pair orderings for JMMD."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from sca.data import LabeledDataset
from sca.errors import ConfigError, ContractError, SamplingUnavailable
from sca.pseudo import PseudoLabeledSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchSpec:
    C: int = 5
    K_per_class: int = 4

    def __post_init__(self):
        if self.C < 2:
            raise ConfigError("C must be >= 2 (triplets need two classes)")
        if self.K_per_class < 2:
            raise ConfigError("K_per_class must be >= 2 (anchors need positives)")


@dataclass(frozen=True)
class TripletBatch:
    """Row indices and labels of one 2CK batch.

    Embedding order is all source rows followed by all target rows, i.e.
    combined row ``r`` is ``source_idx[r]`` for ``r < CK`` and
    ``target_idx[r - CK]`` otherwise. ``target_idx`` is empty for a
    source-only fallback batch.
    """

    classes: np.ndarray
    source_idx: np.ndarray
    source_labels: np.ndarray
    target_idx: np.ndarray
    target_labels: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.source_labels, self.target_labels])

    @property
    def source_only(self) -> bool:
        return self.target_idx.size == 0


def _draw(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(pool, size=k, replace=pool.size < k)


def sample_pk_batch(source: LabeledDataset, pseudo: PseudoLabeledSet, spec: BatchSpec,
                    rng: np.random.Generator) -> TripletBatch:
    """Draw C classes shared by source and pseudo labels, K rows per class per domain.

    Raises SamplingUnavailable when fewer than C classes are eligible.
    """
    eligible = np.intersect1d(np.unique(source.labels), pseudo.classes())
    if len(pseudo) == 0 or eligible.size < spec.C:
        raise SamplingUnavailable(f"{eligible.size} eligible classes, need C={spec.C}")
    classes = np.sort(rng.choice(eligible, size=spec.C, replace=False))
    s_idx, t_idx = [], []
    for c in classes:
        s_idx.append(_draw(np.flatnonzero(source.labels == c), spec.K_per_class, rng))
        t_idx.append(_draw(pseudo.pool(c), spec.K_per_class, rng))
    lab = np.repeat(classes, spec.K_per_class).astype(np.int64)
    return TripletBatch(classes, np.concatenate(s_idx), lab, np.concatenate(t_idx), lab.copy())


def sample_source_pk_batch(source: LabeledDataset, spec: BatchSpec, rng: np.random.Generator) -> TripletBatch:
    """Source-only fallback used before pseudo labels cover C classes."""
    present = np.unique(source.labels)
    if present.size < spec.C:
        raise SamplingUnavailable(f"source has {present.size} classes, need C={spec.C}")
    classes = np.sort(rng.choice(present, size=spec.C, replace=False))
    s_idx = [_draw(np.flatnonzero(source.labels == c), spec.K_per_class, rng) for c in classes]
    lab = np.repeat(classes, spec.K_per_class).astype(np.int64)
    empty = np.zeros(0, dtype=np.int64)
    return TripletBatch(classes, np.concatenate(s_idx), lab, empty, empty.copy())


def sample_uniform(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` row indices from ``range(n)``, without replacement when possible."""
    if n <= 0:
        raise ContractError("cannot sample from an empty dataset")
    return rng.choice(n, size=size, replace=n < size)


@dataclass(frozen=True)
class JmmdPairing:
    """Row orders for each domain; pairs are consecutive entries (0,1), (2,3), ..."""

    order_s: np.ndarray
    order_t: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.order_s.size // 2


def pair_halves_for_jmmd(n_source: int, n_target: int, rng: np.random.Generator) -> JmmdPairing:
    """Random, even-sized orderings of the two half-batches.

    Each domain is permuted independently. An odd half size drops the last
    permuted row.
    """
    if n_source == 0 or n_target == 0:
        raise ContractError("jmmd halves must be non-empty")
    if n_source != n_target:
        raise ContractError(f"jmmd halves differ in size: {n_source} vs {n_target}")
    n = n_source
    perm_s = rng.permutation(n)
    perm_t = rng.permutation(n)
    if n % 2:
        log.info("odd jmmd half-batch (%d); dropping one row per domain", n)
        if n == 1:
            raise ContractError("jmmd halves need at least two rows")
        perm_s, perm_t = perm_s[:-1], perm_t[:-1]
    return JmmdPairing(perm_s, perm_t)
