"""Confidence-thresholded pseudo labels for target samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sca import numcore
from sca.data import TargetDataset
from sca.errors import ContractError
from sca.model import MlpParams, forward


@dataclass(frozen=True)
class PseudoLabeledSet:
    indices: np.ndarray
    assigned_labels: np.ndarray
    scores: np.ndarray
    threshold: float
    n_target: int
    num_classes: int

    def __len__(self) -> int:
        return int(self.indices.size)

    def classes(self) -> np.ndarray:
        return np.unique(self.assigned_labels)

    def pool(self, label: int) -> np.ndarray:
        """Target indices pseudo-labeled as ``label``."""
        return self.indices[self.assigned_labels == label]


def predict_proba(params: MlpParams, X) -> np.ndarray:
    return numcore.stable_softmax(forward(params, X).logits)


def assign_pseudo_labels(params: MlpParams, target: TargetDataset, T: float) -> PseudoLabeledSet:
    """Select target rows whose max softmax probability is strictly above ``T``.

    The label is the argmax (lowest index on ties).
    """
    if not 0.0 < T < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {T}")
    probs = predict_proba(params, target.features)
    labels = np.argmax(probs, axis=1)
    scores = probs[np.arange(probs.shape[0]), labels]
    keep = np.flatnonzero(scores > T)
    return PseudoLabeledSet(keep, labels[keep].astype(np.int64), scores[keep], float(T),
                            target.n, params.num_classes)


def selection_stats(pseudo: PseudoLabeledSet, target: TargetDataset) -> dict:
    """Per-class counts, selected fraction and, with hidden labels, accuracy.

    Diagnostics only; nothing here feeds back into training.
    """
    counts = np.bincount(pseudo.assigned_labels, minlength=pseudo.num_classes)
    stats = {
        "per_class": [int(c) for c in counts],
        "fraction": len(pseudo) / target.n if target.n else 0.0,
    }
    if target.hidden_labels is not None:
        if len(pseudo):
            stats["accuracy"] = float(np.mean(target.hidden_labels[pseudo.indices] == pseudo.assigned_labels))
        else:
            stats["accuracy"] = None
    return stats
