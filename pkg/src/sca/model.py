"""MLP feature extractor + linear classifier with manual backprop.

``layer_dims = [d_in, h_1, ..., h_k, d_emb, num_classes]``. Hidden layers are
affine + ReLU, the bottleneck (``d_emb``) is affine without a nonlinearity and
its output is the embedding, and the last layer produces raw logits.
Weights are stored as ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sca import numcore
from sca.errors import ConfigError, ContractError

CHECKPOINT_FORMAT = "sca-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ContractError("need >= 2 layers with one bias per weight")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ContractError(f"layer {i}: bias shape {b.shape} does not match weight {W.shape}")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ContractError(f"layer {i}: input width {W.shape[0]} does not chain")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> MlpParams:
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class Activations:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def embedding(self) -> np.ndarray:
        return self.post[-2]

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def init_mlp(layer_dims, seed: int) -> MlpParams:
    """He-normal weights (variance ``2 / fan_in``) and zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 3:
        raise ConfigError("layer_dims needs input, bottleneck and classifier widths")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"all layer widths must be positive: {dims}")
    rng = numcore.make_rng(seed, numcore.STREAM_INIT)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def forward(params: MlpParams, X) -> Activations:
    X = numcore.as_matrix(X, "X")
    if X.shape[1] != params.layer_dims[0]:
        raise ContractError(f"input width {X.shape[1]} != model input {params.layer_dims[0]}")
    n_layers = len(params.weights)
    pre, post = [], []
    h = X
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        pre.append(z)
        # ReLU on hidden layers only; bottleneck (n-2) and classifier (n-1) stay affine
        h = np.maximum(z, 0.0) if i < n_layers - 2 else z
        post.append(h)
    return Activations(X, pre, post)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> Gradients:
        return cls([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def add_(self, other: Gradients) -> Gradients:
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self


UPSTREAM_KEYS = ("embedding", "logits")


def _backward_one(params: MlpParams, acts: Activations, upstream: dict) -> Gradients:
    n_layers = len(params.weights)
    grads = Gradients.zeros_like(params)
    g = np.array(upstream["logits"], dtype=np.float64)
    for i in range(n_layers - 1, -1, -1):
        if i == n_layers - 2:
            g = g + upstream["embedding"]
        elif i < n_layers - 2:
            g = g * (acts.pre[i] > 0)
        h_in = acts.inputs if i == 0 else acts.post[i - 1]
        grads.weights[i] += h_in.T @ g
        grads.biases[i] += g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return grads


def backward(params: MlpParams, acts_source: Activations, acts_target: Activations | None,
             upstream_grads: dict) -> Gradients:
    """Reverse-mode gradient of the total loss w.r.t. every parameter.

    ``upstream_grads`` maps ``"source"`` (and ``"target"`` when
    ``acts_target`` is given) to a dict with the loss gradient w.r.t. the
    ``"embedding"`` and ``"logits"`` outputs of that pass. Both keys are
    required, even if zero. Contributions of the two passes are summed.
    """
    passes = [("source", acts_source)]
    if acts_target is not None:
        passes.append(("target", acts_target))
    extra = set(upstream_grads) - {name for name, _ in passes}
    if extra:
        raise ContractError(f"upstream gradients given for passes without activations: {sorted(extra)}")
    total = Gradients.zeros_like(params)
    for name, acts in passes:
        up = upstream_grads.get(name)
        if up is None:
            raise ContractError(f"missing upstream gradients for the {name} pass")
        for key in UPSTREAM_KEYS:
            if key not in up:
                raise ContractError(f"missing upstream gradient for {name}.{key}")
            expected = acts.embedding.shape if key == "embedding" else acts.logits.shape
            if np.shape(up[key]) != expected:
                raise ContractError(f"{name}.{key}: gradient shape {np.shape(up[key])} != {expected}")
        total.add_(_backward_one(params, acts, up))
    return total


@dataclass
class SgdState:
    """Momentum SGD with the INV schedule ``lr = base * (1 + gamma p)^-power``."""

    momentum_w: list[np.ndarray]
    momentum_b: list[np.ndarray]
    total_steps: int
    step_index: int = 0
    base_lr: float = 0.001
    momentum_coeff: float = 0.9
    weight_decay: float = 0.0004
    inv_gamma: float = 10.0
    inv_power: float = 0.75

    @classmethod
    def for_params(cls, params: MlpParams, total_steps: int, **kw) -> SgdState:
        if total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        return cls([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases],
                   total_steps, **kw)

    def progress(self) -> float:
        return min(1.0, self.step_index / self.total_steps)

    def current_lr(self) -> float:
        return inv_lr(self.base_lr, self.progress(), self.inv_gamma, self.inv_power)


def inv_lr(base_lr: float, p: float, inv_gamma: float = 10.0, inv_power: float = 0.75) -> float:
    return base_lr * (1.0 + inv_gamma * p) ** (-inv_power)


def sgd_step(params: MlpParams, grads: Gradients, state: SgdState) -> tuple[MlpParams, SgdState]:
    """One in-place momentum step; L2 decay is added to weight gradients only."""
    lr = state.current_lr()
    mu, wd = state.momentum_coeff, state.weight_decay
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        gW, gb = grads.weights[i], grads.biases[i]
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ContractError(f"layer {i}: gradient shape mismatch")
        vW, vb = state.momentum_w[i], state.momentum_b[i]
        vW *= mu
        vW += gW + wd * W
        vb *= mu
        vb += gb
        W -= lr * vW
        b -= lr * vb
    state.step_index += 1
    return params, state


def save_checkpoint(params: MlpParams, path) -> None:
    """JSON container: format tag, version, layer_dims, arrays in declaration order.

    Floats are written with ``repr`` so loading round-trips bit-exactly.
    """
    arrays = []
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        arrays.append({"name": f"W{i}", "shape": list(W.shape), "data": [float(v) for v in W.ravel()]})
        arrays.append({"name": f"b{i}", "shape": list(b.shape), "data": [float(v) for v in b.ravel()]})
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "layer_dims": params.layer_dims, "arrays": arrays}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MlpParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{path}: not an {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = [np.array(a["data"], dtype=np.float64).reshape(a["shape"]) for a in doc["arrays"]]
    params = MlpParams(arrays[0::2], arrays[1::2])
    if params.layer_dims != list(doc["layer_dims"]):
        raise ContractError(f"{path}: layer_dims do not match stored arrays")
    return params
