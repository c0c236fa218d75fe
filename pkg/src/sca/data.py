"""Synthetic domain-shift tasks and the feature CSV format.

CSV layout: header ``label,f0,...,f{d-1}``, one sample per row, integer
label (``-1`` = unlabeled) followed by ``d`` decimal floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sca import numcore
from sca.errors import ConfigError, ContractError, ParseError


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    domain_tag: str = "source"

    def __post_init__(self):
        feats = numcore.as_matrix(self.features, "features")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != feats.shape[0]:
            raise ContractError("labels length must equal feature row count")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class TargetDataset:
    """Unlabeled target rows.

    ``hidden_labels`` exist only for evaluation; training code reads
    ``features`` alone.
    """

    features: np.ndarray
    hidden_labels: np.ndarray | None = field(default=None, repr=False)
    domain_tag: str = "target"

    def __post_init__(self):
        feats = numcore.as_matrix(self.features, "features")
        object.__setattr__(self, "features", feats)
        if self.hidden_labels is not None:
            hl = np.asarray(self.hidden_labels, dtype=np.int64).reshape(-1)
            if hl.shape[0] != feats.shape[0]:
                raise ContractError("hidden_labels length must equal feature row count")
            object.__setattr__(self, "hidden_labels", hl)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def rotation_matrix(degrees: float) -> np.ndarray:
    # exact entries at multiples of 90 degrees so that 180 maps p to -p bitwise
    quarter, rem = divmod(float(degrees), 90.0)
    if rem == 0.0:
        c, s = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(quarter) % 4]
    else:
        rad = math.radians(degrees)
        c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s], [s, c]])


MOONS_CENTER = np.array([0.5, 0.25])


def _moons(n: int, noise_sd: float, rng: np.random.Generator):
    half = n // 2
    t_outer = rng.uniform(0.0, math.pi, size=half)
    t_inner = rng.uniform(0.0, math.pi, size=half)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    # centered so that rotation about the origin turns the pattern in place
    X = np.vstack([outer, inner]) - MOONS_CENTER
    if noise_sd > 0:
        X = X + rng.normal(0.0, noise_sd, size=X.shape)
    y = np.repeat([0, 1], half)
    return X, y


def gen_two_moons_shift(n_per_domain: int, noise_sd: float, target_rotation_deg: float, seed: int,
                        shared_stream: bool = False):
    """Two-moons source and a rotated two-moons target.

    The target is drawn from its own random stream (the source stream when
    ``shared_stream``), noised, then rotated about the origin.
    """
    if n_per_domain < 4 or n_per_domain % 2:
        raise ConfigError(f"n_per_domain must be even and >= 4, got {n_per_domain}")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be >= 0")
    Xs, ys = _moons(n_per_domain, noise_sd, numcore.make_rng(seed, numcore.STREAM_DATA_SOURCE))
    t_stream = numcore.STREAM_DATA_SOURCE if shared_stream else numcore.STREAM_DATA_TARGET
    Xt, yt = _moons(n_per_domain, noise_sd, numcore.make_rng(seed, t_stream))
    Xt = Xt @ rotation_matrix(target_rotation_deg).T
    source = LabeledDataset(Xs, ys, 2, "moons-source")
    target = TargetDataset(Xt, hidden_labels=yt, domain_tag=f"moons-rot{target_rotation_deg:g}")
    return source, target


def blob_means(num_classes: int, dim: int, class_sep: float) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two coordinates.

    Adjacent means sit exactly ``class_sep`` apart, so every pair is at least
    that far apart.
    """
    theta = 2.0 * math.pi * np.arange(num_classes) / num_classes
    radius = class_sep / (2.0 * math.sin(math.pi / num_classes))
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(theta)
    means[:, 1] = radius * np.sin(theta)
    return means


def _blobs(means, n_per_class, sd, rng):
    num_classes, dim = means.shape
    X = np.repeat(means, n_per_class, axis=0) + rng.normal(0.0, sd, size=(num_classes * n_per_class, dim))
    y = np.repeat(np.arange(num_classes), n_per_class)
    return X, y


def gen_gaussian_blobs_shift(num_classes: int, n_per_class: int, dim: int, class_sep: float,
                             target_offset, seed: int, sd: float = 1.0, shared_stream: bool = False):
    if num_classes < 2 or n_per_class <= 0 or dim < 2:
        raise ConfigError("need num_classes >= 2, n_per_class >= 1 and dim >= 2")
    if class_sep <= 0 or sd < 0:
        raise ConfigError("class_sep must be positive and sd non-negative")
    offset = np.asarray(target_offset, dtype=np.float64).reshape(-1)
    if offset.size == 1:
        offset = np.full(dim, offset[0])
    if offset.size != dim:
        raise ConfigError(f"target_offset must have {dim} entries, got {offset.size}")
    means = blob_means(num_classes, dim, class_sep)
    Xs, ys = _blobs(means, n_per_class, sd, numcore.make_rng(seed, numcore.STREAM_DATA_SOURCE))
    t_stream = numcore.STREAM_DATA_SOURCE if shared_stream else numcore.STREAM_DATA_TARGET
    Xt, yt = _blobs(means, n_per_class, sd, numcore.make_rng(seed, t_stream))
    Xt = Xt + offset
    source = LabeledDataset(Xs, ys, num_classes, "blobs-source")
    target = TargetDataset(Xt, hidden_labels=yt, domain_tag="blobs-target")
    return source, target


def load_features_csv(path, num_classes: int | None = None):
    """Parse a feature CSV into a LabeledDataset or TargetDataset.

    All labels ``-1`` gives a TargetDataset; all labels ``>= 0`` gives a
    LabeledDataset whose ``num_classes`` defaults to ``max(label) + 1``
    (at least 2).
    """
    path = Path(path)
    rows, labels = [], []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file")
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(d)]:
            raise ParseError(path, 1, "header must be label,f0,...,f{d-1}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(path, lineno, f"expected {d + 1} fields, got {len(row)}")
            try:
                lab = int(row[0])
            except ValueError:
                raise ParseError(path, lineno, f"label {row[0]!r} is not an integer") from None
            if lab < -1:
                raise ParseError(path, lineno, f"label {lab} is negative but not -1")
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                raise ParseError(path, lineno, "non-numeric feature cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, lineno, "non-finite feature value")
            if labels and (lab == -1) != (labels[0] == -1):
                raise ParseError(path, lineno, "mixed labeled and unlabeled rows")
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise ParseError(path, 2, "no data rows")
    X = np.array(rows, dtype=np.float64)
    y = np.array(labels, dtype=np.int64)
    if y[0] == -1:
        return TargetDataset(X, domain_tag=path.stem)
    k = num_classes if num_classes is not None else max(2, int(y.max()) + 1)
    if y.max() >= k:
        raise ParseError(path, 2 + int(np.argmax(y >= k)), f"label exceeds num_classes={k}")
    return LabeledDataset(X, y, k, path.stem)


def save_features_csv(path, features, labels=None) -> None:
    """Write rows in the feature CSV format; ``labels=None`` writes -1."""
    X = numcore.as_matrix(features)
    y = np.full(X.shape[0], -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["label"] + [f"f{i}" for i in range(X.shape[1])]) + "\n")
        for lab, row in zip(y, X):
            fh.write(",".join([str(int(lab))] + [repr(float(v)) for v in row]) + "\n")
