"""Loss terms: source cross-entropy, linear-time JMMD, triplet, weighted sum.

Each term returns its value together with the gradient w.r.t. its direct
inputs; chaining into parameter space is done by ``model.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sca import numcore
from sca.errors import ConfigError, ContractError

DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel family per JMMD layer.

    The embedding layer's kernel is ``sum_m exp(-mult_m * gamma * d)`` over
    ``bandwidth_multipliers``; the classifier layer uses
    ``classifier_multipliers`` (a single bandwidth by default) and is
    compared on softmax probabilities when ``classifier_on_probs`` is set.
    ``gamma`` is the median-heuristic value of that layer's pooled batch,
    except that a set ``classifier_gamma`` fixes the classifier layer's base
    bandwidth (median distances between near one-hot probability vectors
    are degenerate).
    ``average`` divides each layer's kernel by its number of bandwidths.
    """

    bandwidth_multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    classifier_on_probs: bool = True
    average: bool = False
    classifier_multipliers: tuple[float, ...] = (1.0,)
    classifier_gamma: float | None = 0.59

    def __post_init__(self):
        for name in ("bandwidth_multipliers", "classifier_multipliers"):
            mults = tuple(float(m) for m in getattr(self, name))
            if not mults or any(not m > 0 for m in mults):
                raise ConfigError(f"{name} must be a non-empty list of positive floats")
            object.__setattr__(self, name, mults)
        if self.classifier_gamma is not None and not self.classifier_gamma > 0:
            raise ConfigError("classifier_gamma must be positive or None")

    def layer_multipliers(self, n_layers: int) -> list[tuple[float, ...]]:
        """Embedding-style kernels for all but the last layer, classifier kernel last."""
        if n_layers == 1:
            return [self.bandwidth_multipliers]
        return [self.bandwidth_multipliers] * (n_layers - 1) + [self.classifier_multipliers]


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_d: float
    l_s: float
    l_total: float
    alpha: float
    beta: float


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / n``."""
    Z = numcore.as_matrix(logits, "logits")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = Z.shape
    if y.shape[0] != n:
        raise ContractError("one label per logit row required")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    logp = numcore.log_softmax(Z)
    rows = np.arange(n)
    value = float(-logp[rows, y].mean())
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad /= n
    return value, grad


def layer_gammas(acts_s, acts_t, cfg: KernelConfig) -> list[np.ndarray]:
    """Per-layer bandwidth vectors: multipliers times the pooled median gamma.

    With two layers (embedding, classifier) the second uses the classifier
    multipliers.
    The returned values are treated as constants by ``jmmd`` (no gradient
    flows through bandwidth selection).
    """
    out = []
    n_layers = len(acts_s)
    for layer, (zs, zt, mults) in enumerate(zip(acts_s, acts_t, cfg.layer_multipliers(n_layers))):
        if n_layers > 1 and layer == n_layers - 1 and cfg.classifier_gamma is not None:
            base = cfg.classifier_gamma
        else:
            base = numcore.median_bandwidth(np.vstack([zs, zt]))
        out.append(base * np.asarray(mults))
    return out


def _pair_kernel(x, y, gammas, average=False):
    """Row-wise multi-bandwidth kernel k(x_i, y_i) and dk/dx_i."""
    diff = x - y
    d = np.einsum("ij,ij->i", diff, diff)
    e = np.exp(-np.outer(d, gammas))  # (pairs, bandwidths)
    k = e.sum(axis=1)
    dk_dd = -(e * gammas).sum(axis=1)
    if average:
        k /= len(gammas)
        dk_dd /= len(gammas)
    return k, (2.0 * dk_dd)[:, None] * diff


def jmmd(acts_s, acts_t, cfg: KernelConfig | None = None, gammas=None):
    """Linear-time JMMD estimate over consecutive pairs (0,1), (2,3), ...

    ``acts_s``/``acts_t`` are lists of per-layer matrices with ``n`` rows each
    (``n`` even). For pair ``i`` with rows ``a = 2i`` and ``b = 2i + 1``::

        (2/n) * sum_i [ K(s_a, s_b) + K(t_a, t_b) - K(s_a, t_b) - K(t_a, s_b) ]

    where ``K`` is the product over layers of each layer's kernel. Returns
    ``(value, grads_s, grads_t)`` with per-layer gradient matrices.
    """
    cfg = cfg or KernelConfig()
    acts_s = [numcore.as_matrix(z, "source activations") for z in acts_s]
    acts_t = [numcore.as_matrix(z, "target activations") for z in acts_t]
    if not acts_s or len(acts_s) != len(acts_t):
        raise ContractError("source and target must provide the same non-empty layer set")
    n = acts_s[0].shape[0]
    for zs, zt in zip(acts_s, acts_t):
        if zs.shape[0] != n or zt.shape[0] != n:
            raise ContractError("every layer must have the same batch size in both domains")
        if zs.shape[1] != zt.shape[1]:
            raise ContractError("layer widths differ between domains")
    if n == 0 or n % 2:
        raise ContractError(f"jmmd needs an even, non-empty batch; got n={n}")
    if gammas is None:
        gammas = layer_gammas(acts_s, acts_t, cfg)
    gammas = [np.atleast_1d(np.asarray(g, dtype=np.float64)) for g in gammas]
    if len(gammas) != len(acts_s):
        raise ContractError("one bandwidth vector per layer required")

    a, b = slice(0, n, 2), slice(1, n, 2)
    # four pairings (x rows, y rows, sign); x/y are (domain, slice)
    terms = [(("s", a), ("s", b), 1.0), (("t", a), ("t", b), 1.0),
             (("s", a), ("t", b), -1.0), (("t", a), ("s", b), -1.0)]
    acts = {"s": acts_s, "t": acts_t}
    grads = {"s": [np.zeros_like(z) for z in acts_s], "t": [np.zeros_like(z) for z in acts_t]}
    scale = 2.0 / n
    value = 0.0
    for (dx, sx), (dy, sy), sign in terms:
        ks, dks = [], []
        for layer, g in enumerate(gammas):
            k, dk = _pair_kernel(acts[dx][layer][sx], acts[dy][layer][sy], g, cfg.average)
            ks.append(k)
            dks.append(dk)
        K = np.prod(ks, axis=0)
        value += sign * scale * K.sum()
        for layer in range(len(gammas)):
            others = np.ones_like(K)
            for j, kj in enumerate(ks):
                if j != layer:
                    others *= kj
            g_x = (sign * scale * others)[:, None] * dks[layer]
            grads[dx][layer][sx] += g_x
            grads[dy][layer][sy] -= g_x
    return float(value), grads["s"], grads["t"]


def triplet_batch_all(embeddings, labels, margin: float = 0.3, reduction: str = "mean", mining: str = "all"):
    """Triplet hinge ``[m + D(a,p) - D(a,n)]_+`` with squared distances.

    ``mining="all"`` uses every (a, p, n) with ``y_a == y_p``, ``a != p`` and
    ``y_a != y_n``; ``mining="hard"`` keeps one triplet per anchor (farthest
    positive, closest negative). ``reduction`` is ``"mean"`` over the kept
    triplets or ``"sum"``. The hinge gradient at exactly zero is zero.

    Returns ``(value, grad, has_valid)``; a batch without any valid triplet
    gives ``(0.0, zeros, False)``.
    """
    E = numcore.as_matrix(embeddings, "embeddings")
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != E.shape[0]:
        raise ContractError("one label per embedding row required")
    if margin < 0:
        raise ContractError("margin must be >= 0")
    if reduction not in ("mean", "sum") or mining not in ("all", "hard"):
        raise ConfigError(f"unknown reduction/mining: {reduction!r}/{mining!r}")
    n = E.shape[0]
    diff = E[:, None, :] - E[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same

    if mining == "all":
        valid = pos[:, :, None] & neg[:, None, :]
        count = int(valid.sum())
        if count == 0:
            return 0.0, np.zeros_like(E), False
        hinge = margin + D[:, :, None] - D[:, None, :]
        active = valid & (hinge > 0)
        total = float(np.where(active, hinge, 0.0).sum())
        w_pos = active.sum(axis=2).astype(np.float64)
        w_neg = active.sum(axis=1).astype(np.float64)
    else:
        has = pos.any(axis=1) & neg.any(axis=1)
        count = int(has.sum())
        if count == 0:
            return 0.0, np.zeros_like(E), False
        anchors = np.flatnonzero(has)
        p_idx = np.argmax(np.where(pos, D, -np.inf), axis=1)[anchors]
        n_idx = np.argmin(np.where(neg, D, np.inf), axis=1)[anchors]
        hinge = margin + D[anchors, p_idx] - D[anchors, n_idx]
        act = hinge > 0
        total = float(hinge[act].sum())
        w_pos = np.zeros((n, n))
        w_neg = np.zeros((n, n))
        np.add.at(w_pos, (anchors[act], p_idx[act]), 1.0)
        np.add.at(w_neg, (anchors[act], n_idx[act]), 1.0)

    denom = float(count) if reduction == "mean" else 1.0
    # dL/dD[a, b] for the pairwise distance matrix
    G = (w_pos - w_neg) / denom
    # d/dE of sum_ab G_ab |e_a - e_b|^2
    Gs = G + G.T
    grad = 2.0 * (Gs.sum(axis=1)[:, None] * E - Gs @ E)
    return total / denom, grad, True


def total_loss(l_c: float, l_d: float, l_s: float, alpha: float = 1.0, beta: float = 1.0) -> LossBreakdown:
    if alpha < 0 or beta < 0:
        raise ContractError("alpha and beta must be >= 0")
    return LossBreakdown(float(l_c), float(l_d), float(l_s), float(l_c + alpha * l_d + beta * l_s),
                         float(alpha), float(beta))


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (grad_probs - np.einsum("ij,ij->i", grad_probs, probs)[:, None])
