"""Two-stage training: source + alignment pretraining, then pseudo-labeled triplets.

Stage 1 minimizes ``L_c + alpha * L_d`` on uniformly drawn batches. Stage 2
repeats ``S`` times: re-assign pseudo labels at threshold ``T``, then run
``K_updates`` steps of ``L_c + alpha * L_d + beta * L_s``. The classification
and alignment terms keep using uniform batches (class-balanced batches bias
the kernel estimate); the triplet term gets its own PK batch drawn from source
labels and target pseudo labels. Pseudo labels only enter the triplet term.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from sca import config as config_mod
from sca import numcore
from sca.data import LabeledDataset, TargetDataset, gen_gaussian_blobs_shift, gen_two_moons_shift, load_features_csv
from sca.errors import ConfigError, ContractError, NonFiniteLoss, SamplingUnavailable
from sca.evaluation import accuracy, export_embeddings
from sca.losses import (KernelConfig, LossBreakdown, cross_entropy, jmmd, layer_gammas, softmax_backward,
                        total_loss, triplet_batch_all)
from sca.model import Gradients, MlpParams, SgdState, backward, forward, init_mlp, save_checkpoint, sgd_step
from sca.pseudo import PseudoLabeledSet, assign_pseudo_labels, selection_stats
from sca.sampling import (BatchSpec, JmmdPairing, pair_halves_for_jmmd, sample_pk_batch, sample_source_pk_batch,
                          sample_uniform)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 1.0
    beta: float = 1.0
    margin: float = 1.0
    T: float = 0.9
    S: int = 10
    K_updates: int = 200
    stage1_iters: int = 500
    C: int = 5
    K_per_class: int = 4
    batch_size: int = 128
    triplet_mining: str = "all"
    triplet_reduction: str = "mean"
    jmmd_batch: str = "uniform"
    base_lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0004
    inv_gamma: float = 10.0
    inv_power: float = 0.75
    kernel: KernelConfig = field(default_factory=KernelConfig)
    hidden_dims: tuple[int, ...] = (64,)
    bottleneck_dim: int = 32
    eval_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if not 0.0 < self.T < 1.0:
            raise ConfigError("T must lie in (0, 1)")
        if self.S < 1 or self.K_updates < 1:
            raise ConfigError("S and K_updates must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even and >= 2")
        if self.jmmd_batch not in ("uniform", "pk"):
            raise ConfigError(f"jmmd_batch must be 'uniform' or 'pk', got {self.jmmd_batch!r}")
        BatchSpec(self.C, self.K_per_class)

    @classmethod
    def full_schedule(cls, **kw) -> Hyperparams:
        """The full-budget schedule and optimizer settings of the original method."""
        base = dict(alpha=1.0, beta=1.0, T=0.9, S=15, K_updates=2000, stage1_iters=5000,
                    base_lr=0.001, momentum=0.9, weight_decay=0.0004)
        base.update(kw)
        return cls(**base)

    @property
    def batch_spec(self) -> BatchSpec:
        return BatchSpec(self.C, self.K_per_class)

    @property
    def total_steps(self) -> int:
        return self.stage1_iters + self.S * self.K_updates

    def layer_dims(self, d_in: int, num_classes: int) -> list[int]:
        return [d_in, *self.hidden_dims, self.bottleneck_dim, num_classes]

    def with_variant(self, variant: str) -> Hyperparams:
        """Ablation rows: baseline (B), align (B+D), triplet (B+S), sca (B+D+S)."""
        if variant == "baseline":
            return replace(self, alpha=0.0, beta=0.0)
        if variant == "align":
            return replace(self, beta=0.0)
        if variant == "triplet":
            return replace(self, alpha=0.0)
        if variant == "sca":
            return self
        raise ConfigError(f"unknown variant {variant!r}")


@dataclass
class StepResult:
    losses: LossBreakdown
    grads: Gradients
    triplet_valid: bool = False


def sca_objective(params: MlpParams, Xs, ys, Xt=None, *, alpha: float, beta: float, kernel: KernelConfig,
                  pairing: JmmdPairing | None = None, gammas=None, triplet_Xs=None, triplet_ys=None,
                  triplet_Xt=None, triplet_yt=None, margin: float = 0.3, mining: str = "all",
                  reduction: str = "mean") -> StepResult:
    """Loss breakdown and parameter gradients for one optimization step.

    Cross-entropy runs on the true-labeled rows ``(Xs, ys)``. The JMMD term
    (skipped when ``alpha == 0``) compares the bottleneck and classifier
    layers of ``Xs`` and ``Xt`` under ``pairing``; bandwidths come from the
    batch median unless ``gammas`` is given and are held constant either
    way. The triplet term (skipped when ``beta == 0``) runs over the
    embeddings of ``triplet_Xs`` labeled ``triplet_ys`` followed by
    ``triplet_Xt`` labeled ``triplet_yt`` (omit both for a source-only
    triplet batch). All rows of a domain share one forward pass.
    """
    Xs = numcore.as_matrix(Xs, "Xs")
    ns = Xs.shape[0]
    use_triplet = beta > 0 and triplet_Xs is not None
    use_t_triplet = use_triplet and triplet_Xt is not None and len(triplet_Xt) > 0
    src_rows = [Xs] + ([numcore.as_matrix(triplet_Xs)] if use_triplet else [])
    nt = 0 if Xt is None else len(Xt)
    tgt_rows = ([numcore.as_matrix(Xt)] if Xt is not None else []) + \
        ([numcore.as_matrix(triplet_Xt)] if use_t_triplet else [])
    acts_s = forward(params, np.vstack(src_rows))
    acts_t = forward(params, np.vstack(tgt_rows)) if tgt_rows else None

    g_emb_s = np.zeros_like(acts_s.embedding)
    g_logits_s = np.zeros_like(acts_s.logits)
    l_c, g_ce = cross_entropy(acts_s.logits[:ns], ys)
    g_logits_s[:ns] = g_ce
    if acts_t is not None:
        g_emb_t = np.zeros_like(acts_t.embedding)
        g_logits_t = np.zeros_like(acts_t.logits)

    l_d = 0.0
    if alpha > 0:
        if nt == 0:
            raise ContractError("alignment term needs target rows")
        if pairing is None:
            m = min(ns, nt) - min(ns, nt) % 2
            pairing = JmmdPairing(np.arange(m), np.arange(m))
        os_, ot = pairing.order_s, pairing.order_t
        if os_.size and (os_.max() >= ns or ot.max() >= nt):
            raise ContractError("pairing indexes rows outside the alignment batch")
        logit_s, logit_t = acts_s.logits[:ns], acts_t.logits[:nt]
        if kernel.classifier_on_probs:
            cls_s, cls_t = numcore.stable_softmax(logit_s), numcore.stable_softmax(logit_t)
        else:
            cls_s, cls_t = logit_s, logit_t
        layers_s = [acts_s.embedding[os_], cls_s[os_]]
        layers_t = [acts_t.embedding[ot], cls_t[ot]]
        if gammas is None:
            gammas = layer_gammas(layers_s, layers_t, kernel)
        l_d, gs, gt = jmmd(layers_s, layers_t, kernel, gammas)
        np.add.at(g_emb_s, os_, alpha * gs[0])
        np.add.at(g_emb_t, ot, alpha * gt[0])
        if kernel.classifier_on_probs:
            gs1, gt1 = softmax_backward(cls_s[os_], gs[1]), softmax_backward(cls_t[ot], gt[1])
        else:
            gs1, gt1 = gs[1], gt[1]
        np.add.at(g_logits_s, os_, alpha * gs1)
        np.add.at(g_logits_t, ot, alpha * gt1)

    l_s, valid = 0.0, False
    if use_triplet:
        E = acts_s.embedding[ns:]
        labels = np.asarray(triplet_ys)
        if use_t_triplet:
            E = np.vstack([E, acts_t.embedding[nt:]])
            labels = np.concatenate([labels, triplet_yt])
        l_s, g_E, valid = triplet_batch_all(E, labels, margin, reduction, mining)
        n_ts = acts_s.n - ns
        g_emb_s[ns:] += beta * g_E[:n_ts]
        if use_t_triplet:
            g_emb_t[nt:] += beta * g_E[n_ts:]

    upstream = {"source": {"embedding": g_emb_s, "logits": g_logits_s}}
    if acts_t is not None:
        upstream["target"] = {"embedding": g_emb_t, "logits": g_logits_t}
    grads = backward(params, acts_s, acts_t, upstream)
    return StepResult(total_loss(l_c, l_d, l_s, alpha, beta), grads, valid)


@dataclass
class TrainRun:
    params: MlpParams
    history: list[dict]
    config: dict
    seed: int
    stage1_params: MlpParams | None = None
    pseudo: PseudoLabeledSet | None = None
    fallback_batches: int = 0


class _Trainer:
    """Mutable loop state shared by both stages."""

    def __init__(self, params, source, target, hyper: Hyperparams, metrics_sink=None):
        self.params = params
        self.source = source
        self.target = target
        self.hyper = hyper
        self.state = SgdState.for_params(params, max(1, hyper.total_steps), base_lr=hyper.base_lr,
                                         momentum_coeff=hyper.momentum, weight_decay=hyper.weight_decay,
                                         inv_gamma=hyper.inv_gamma, inv_power=hyper.inv_power)
        # independent streams so that alpha=beta=0 never touches target-dependent randomness
        self.rng_s = numcore.make_rng(hyper.seed, numcore.STREAM_SOURCE)
        self.rng_t = numcore.make_rng(hyper.seed, numcore.STREAM_TARGET)
        self.rng_pair = numcore.make_rng(hyper.seed, numcore.STREAM_PAIRING)
        self.rng_pk = numcore.make_rng(hyper.seed, numcore.STREAM_PK)
        self.history: list[dict] = []
        self.sink = metrics_sink
        self.pseudo: PseudoLabeledSet | None = None
        self.fallback_batches = 0
        self._acc = np.zeros(4)
        self._acc_n = 0

    @property
    def step(self) -> int:
        return self.state.step_index

    def _pk_batch(self):
        """Triplet batch from the PK stream; source-only when pseudo labels are too sparse."""
        try:
            return sample_pk_batch(self.source, self.pseudo, self.hyper.batch_spec, self.rng_pk)
        except SamplingUnavailable:
            self.fallback_batches += 1
            return sample_source_pk_batch(self.source, self.hyper.batch_spec, self.rng_pk)

    def update(self, stage: int, alpha: float, beta: float):
        h = self.hyper
        src, tgt = self.source, self.target
        trip = {}
        if beta > 0 and stage == 2:
            batch = self._pk_batch()
            trip = {"triplet_Xs": src.features[batch.source_idx], "triplet_ys": batch.source_labels}
            if not batch.source_only:
                trip.update(triplet_Xt=tgt.features[batch.target_idx], triplet_yt=batch.target_labels)
        if trip and h.jmmd_batch == "pk":
            si = batch.source_idx
            ti = batch.target_idx if alpha > 0 and not batch.source_only else None
            if alpha > 0 and ti is None:
                ti = sample_uniform(tgt.n, si.size, self.rng_t)
        else:
            si = sample_uniform(src.n, h.batch_size, self.rng_s)
            ti = sample_uniform(tgt.n, h.batch_size, self.rng_t) if alpha > 0 else None
        Xt = tgt.features[ti] if ti is not None else None
        pairing = pair_halves_for_jmmd(si.size, si.size, self.rng_pair) if alpha > 0 else None
        res = sca_objective(self.params, src.features[si], src.labels[si], Xt, alpha=alpha, beta=beta,
                            kernel=h.kernel, pairing=pairing, margin=h.margin, mining=h.triplet_mining,
                            reduction=h.triplet_reduction, **trip)
        lb = res.losses
        if not np.isfinite(lb.l_total):
            raise NonFiniteLoss(f"non-finite loss at step {self.step}", {
                "step": self.step, "stage": stage, "losses": asdict(lb), "lr": self.state.current_lr(),
                "param_norms": [float(np.linalg.norm(a)) for a in self.params.arrays()]})
        self._acc += (lb.l_c, lb.l_d, lb.l_s, lb.l_total)
        self._acc_n += 1
        lr = self.state.current_lr()
        sgd_step(self.params, res.grads, self.state)
        if self.step % h.eval_interval == 0 or self.step == h.total_steps:
            self.record(stage, alpha, beta, lr)

    def record(self, stage: int, alpha: float, beta: float, lr: float):
        mean = self._acc / max(1, self._acc_n)
        rec = {"step": self.step, "stage": stage, "l_c": float(mean[0]), "l_d": float(mean[1]),
               "l_s": float(mean[2]), "l_total": float(mean[3]), "alpha": alpha, "beta": beta, "lr": lr,
               "source_acc": accuracy(self.params, self.source)}
        rec["target_acc"] = accuracy(self.params, self.target) if self.target.hidden_labels is not None else None
        if self.pseudo is not None:
            st = selection_stats(self.pseudo, self.target)
            rec["selected"] = len(self.pseudo)
            rec["selection_fraction"] = st["fraction"]
            rec["pseudo_acc"] = st.get("accuracy")
        else:
            rec["selected"] = None
            rec["selection_fraction"] = None
            rec["pseudo_acc"] = None
        if self.history and rec["step"] <= self.history[-1]["step"]:
            raise ContractError("metrics history must be strictly ordered by step")
        self.history.append(rec)
        if self.sink is not None:
            self.sink(rec)
        self._acc[:] = 0.0
        self._acc_n = 0


def _check_compatible(params: MlpParams, source: LabeledDataset, target: TargetDataset):
    if source.dim != params.layer_dims[0] or target.dim != params.layer_dims[0]:
        raise ContractError(f"data widths {source.dim}/{target.dim} do not match model input {params.layer_dims[0]}")
    if source.num_classes != params.num_classes:
        raise ContractError("classifier width does not match source num_classes")


def pretrain_stage1(source: LabeledDataset, target: TargetDataset, hyper: Hyperparams,
                    params: MlpParams | None = None, _trainer: _Trainer | None = None) -> MlpParams:
    """Run ``stage1_iters`` steps of ``L_c + alpha * L_d``; returns the trained parameters."""
    if params is None:
        params = init_mlp(hyper.layer_dims(source.dim, source.num_classes), hyper.seed)
    _check_compatible(params, source, target)
    tr = _trainer or _Trainer(params, source, target, hyper)
    for _ in range(hyper.stage1_iters):
        tr.update(1, hyper.alpha, 0.0)
    return tr.params


def train_stage2(params: MlpParams, source: LabeledDataset, target: TargetDataset, hyper: Hyperparams,
                 _trainer: _Trainer | None = None) -> TrainRun:
    """S rounds of pseudo-label assignment followed by K_updates steps of the full objective."""
    _check_compatible(params, source, target)
    tr = _trainer or _Trainer(params, source, target, hyper)
    for s in range(hyper.S):
        tr.pseudo = assign_pseudo_labels(tr.params, target, hyper.T)
        log.debug("stage 2 round %d: %d target rows selected", s + 1, len(tr.pseudo))
        for _ in range(hyper.K_updates):
            tr.update(2, hyper.alpha, hyper.beta)
    return TrainRun(tr.params, tr.history, {}, hyper.seed, pseudo=tr.pseudo, fallback_batches=tr.fallback_batches)


def train(source: LabeledDataset, target: TargetDataset, hyper: Hyperparams, metrics_sink=None,
          params: MlpParams | None = None) -> TrainRun:
    """Both stages with one optimizer and one global INV schedule."""
    if params is None:
        params = init_mlp(hyper.layer_dims(source.dim, source.num_classes), hyper.seed)
    _check_compatible(params, source, target)
    tr = _Trainer(params, source, target, hyper, metrics_sink)
    pretrain_stage1(source, target, hyper, _trainer=tr)
    stage1 = tr.params.copy()
    run = train_stage2(tr.params, source, target, hyper, _trainer=tr)
    run.stage1_params = stage1
    return run


def hyper_from_config(cfg: dict, num_classes: int) -> Hyperparams:
    C = cfg["C"] or min(5, num_classes)
    if C > num_classes:
        raise ConfigError(f"C={C} exceeds num_classes={num_classes}")
    hyper = Hyperparams(
        alpha=cfg["alpha"], beta=cfg["beta"], margin=cfg["margin"], T=cfg["threshold"], S=cfg["S"],
        K_updates=cfg["K_updates"], stage1_iters=cfg["stage1_iters"], C=C, K_per_class=cfg["K_per_class"],
        batch_size=cfg["batch_size"], triplet_mining=cfg["triplet_mining"],
        triplet_reduction=cfg["triplet_reduction"], jmmd_batch=cfg["jmmd_batch"], base_lr=cfg["base_lr"], momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"], inv_gamma=cfg["inv_gamma"], inv_power=cfg["inv_power"],
        kernel=KernelConfig(cfg["bandwidth_multipliers"], cfg["classifier_kernel_on_probs"], cfg["kernel_average"],
                            cfg["classifier_bandwidth_multipliers"], cfg["classifier_gamma"] or None),
        hidden_dims=tuple(cfg["hidden_dims"]), bottleneck_dim=cfg["bottleneck_dim"],
        eval_interval=cfg["eval_interval"], seed=cfg["seed"])
    return hyper.with_variant(cfg["variant"])


def build_datasets(cfg: dict) -> tuple[LabeledDataset, TargetDataset]:
    task = cfg["task"]
    if task == "moons":
        return gen_two_moons_shift(cfg["n_per_domain"], cfg["noise_sd"], cfg["rotation_deg"], cfg["seed"])
    if task == "blobs":
        return gen_gaussian_blobs_shift(cfg["num_classes"], cfg["n_per_class"], cfg["dim"], cfg["class_sep"],
                                        cfg["target_offset"], cfg["seed"], sd=cfg["blob_sd"])
    source = load_features_csv(cfg["source_csv"])
    target = load_features_csv(cfg["target_csv"])
    if not isinstance(source, LabeledDataset):
        raise ConfigError(f"{cfg['source_csv']}: source CSV must be labeled")
    if not isinstance(target, TargetDataset):
        raise ConfigError(f"{cfg['target_csv']}: target CSV must have label -1 on every row")
    if cfg.get("target_eval_csv"):
        ev = load_features_csv(cfg["target_eval_csv"], source.num_classes)
        if not isinstance(ev, LabeledDataset) or ev.n != target.n:
            raise ConfigError(f"{cfg['target_eval_csv']}: must be labeled with one row per target row")
        target = TargetDataset(target.features, hidden_labels=ev.labels, domain_tag=target.domain_tag)
    return source, target


def run_experiment(cfg: dict, out_dir) -> TrainRun:
    """Train from a parsed config and persist the run directory.

    Writes ``config.snapshot`` (effective config), ``metrics.log`` (one JSON
    object per line), ``checkpoint.final`` and, when requested,
    ``embeddings.csv``.
    """
    errors = config_mod.validate(cfg)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    source, target = build_datasets(cfg)
    hyper = hyper_from_config(cfg, source.num_classes)
    (out / "config.snapshot").write_text(config_mod.dump(cfg), encoding="utf-8")
    metrics_path = out / "metrics.log"
    metrics_path.write_text("", encoding="utf-8")
    with metrics_path.open("a", encoding="utf-8") as fh:
        def sink(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        run = train(source, target, hyper, metrics_sink=sink)
    run.config = dict(cfg)
    save_checkpoint(run.params, out / "checkpoint.final")
    if cfg["export_embeddings"]:
        export_embeddings(run.params, source, target, run.pseudo, out / "embeddings.csv")
    return run


def run_ablation(cfg: dict, out_dir) -> dict[str, TrainRun]:
    """One run per ablation variant, each in its own subdirectory of ``out_dir``."""
    runs = {}
    for variant in config_mod.VARIANTS:
        runs[variant] = run_experiment({**cfg, "variant": variant}, Path(out_dir) / variant)
    return runs
