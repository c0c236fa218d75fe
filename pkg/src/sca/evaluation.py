"""Accuracy, proxy A-distance and embedding export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from sca import numcore
from sca.data import LabeledDataset, TargetDataset
from sca.errors import ContractError
from sca.model import MlpParams, forward
from sca.pseudo import PseudoLabeledSet


def predict(params: MlpParams, X) -> np.ndarray:
    # np.argmax returns the lowest index on ties
    return np.argmax(forward(params, X).logits, axis=1)


def accuracy(params: MlpParams, dataset) -> float:
    """Fraction of rows whose argmax logit equals the true label.

    Accepts a LabeledDataset or a TargetDataset carrying hidden labels.
    """
    if isinstance(dataset, LabeledDataset):
        labels = dataset.labels
    elif isinstance(dataset, TargetDataset) and dataset.hidden_labels is not None:
        labels = dataset.hidden_labels
    else:
        raise ContractError("accuracy needs a dataset with labels")
    if labels.size == 0:
        raise ContractError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(params, dataset.features) == labels))


@dataclass(frozen=True)
class ADistanceReport:
    d_A: float
    epsilon: float
    discriminator: str
    split_seed: int
    raw_test_error: float


def _fit_logistic(X, y, l2):
    n, d = X.shape

    def objective(wb):
        w, b = wb[:d], wb[d]
        z = X @ w + b
        # mean logistic loss with labels in {0, 1}
        loss = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z)) + 0.5 * l2 * (w @ w)
        r = (expit(z) - y) / n
        return loss, np.append(X.T @ r + l2 * w, r.sum())

    res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 1000, "gtol": 1e-8})
    return res.x[:d], res.x[d]


def a_distance(emb_source, emb_target, seed: int = 0, l2: float = 1e-3) -> ADistanceReport:
    """Proxy A-distance ``2 (1 - 2 eps)`` from a linear logistic discriminator.

    Each domain is shuffled with ``seed`` and split in half (stratified
    50/50). The discriminator is fit on standardized train halves by
    L-BFGS, and ``eps`` is its test error clamped to ``[0, 0.5]``.
    """
    Xs = numcore.as_matrix(emb_source, "emb_source")
    Xt = numcore.as_matrix(emb_target, "emb_target")
    if Xs.shape[1] != Xt.shape[1]:
        raise ContractError(f"embedding widths differ: {Xs.shape[1]} vs {Xt.shape[1]}")
    if Xs.shape[0] < 2 or Xt.shape[0] < 2:
        raise ContractError("each domain needs at least two rows for a train/test split")
    rng = numcore.make_rng(seed, numcore.STREAM_EVAL)
    ps, pt = rng.permutation(Xs.shape[0]), rng.permutation(Xt.shape[0])
    hs, ht = Xs.shape[0] // 2, Xt.shape[0] // 2
    X_train = np.vstack([Xs[ps[:hs]], Xt[pt[:ht]]])
    y_train = np.concatenate([np.zeros(hs), np.ones(ht)])
    X_test = np.vstack([Xs[ps[hs:]], Xt[pt[ht:]]])
    y_test = np.concatenate([np.zeros(Xs.shape[0] - hs), np.ones(Xt.shape[0] - ht)])

    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd[sd == 0] = 1.0
    w, b = _fit_logistic((X_train - mu) / sd, y_train, l2)
    pred = ((X_test - mu) / sd @ w + b) > 0
    err = float(np.mean(pred != y_test))
    eps = min(max(err, 0.0), 0.5)
    return ADistanceReport(2.0 * (1.0 - 2.0 * eps), eps, f"linear logistic, l2={l2:g}, L-BFGS", seed, err)


def export_embeddings(params: MlpParams, source: LabeledDataset, target: TargetDataset,
                      pseudo: PseudoLabeledSet | None, path) -> Path:
    """Write bottleneck embeddings of all source then all target rows.

    Columns: ``domain,index,label,pseudo_label,score,e0,...``. Source rows and
    unselected target rows carry ``pseudo_label=-1`` and ``score=0``.
    """
    path = Path(path)
    emb_s = forward(params, source.features).embedding
    emb_t = forward(params, target.features).embedding
    t_labels = target.hidden_labels if target.hidden_labels is not None else np.full(target.n, -1)
    t_pseudo = np.full(target.n, -1, dtype=np.int64)
    t_score = np.zeros(target.n)
    if pseudo is not None and len(pseudo):
        t_pseudo[pseudo.indices] = pseudo.assigned_labels
        t_score[pseudo.indices] = pseudo.scores
    d = emb_s.shape[1]
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(["domain", "index", "label", "pseudo_label", "score"]
                              + [f"e{i}" for i in range(d)]) + "\n")
            for i, (lab, row) in enumerate(zip(source.labels, emb_s)):
                fh.write(",".join(["s", str(i), str(int(lab)), "-1", "0.0"] + [repr(float(v)) for v in row]) + "\n")
            for i, row in enumerate(emb_t):
                fh.write(",".join(["t", str(i), str(int(t_labels[i])), str(int(t_pseudo[i])),
                                   repr(float(t_score[i]))] + [repr(float(v)) for v in row]) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    return path
