"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, unknown keys are errors.
``task`` is the only key without a default; ``task = csv`` additionally
requires ``source_csv`` and ``target_csv``.
"""

from __future__ import annotations

from pathlib import Path

from sca.errors import ConfigError

VARIANTS = ("baseline", "align", "triplet", "sca")
TASKS = ("moons", "blobs", "csv")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _choice(options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


# key -> (parser, default); default None means optional / task-dependent
SCHEMA: dict[str, tuple] = {
    "task": (_choice(TASKS), None),
    "seed": (int, 0),
    "variant": (_choice(VARIANTS), "sca"),
    # two-moons
    "n_per_domain": (int, 400),
    "noise_sd": (float, 0.15),
    "rotation_deg": (float, 30.0),
    # gaussian blobs
    "num_classes": (int, 3),
    "n_per_class": (int, 150),
    "dim": (int, 2),
    "class_sep": (float, 5.0),
    "blob_sd": (float, 1.0),
    "target_offset": (_floats, (2.0,)),
    # feature csv
    "source_csv": (str, None),
    "target_csv": (str, None),
    "target_eval_csv": (str, None),
    # model
    "hidden_dims": (_ints, (64,)),
    "bottleneck_dim": (int, 32),
    # objective
    "alpha": (float, 1.0),
    "beta": (float, 1.0),
    "margin": (float, 1.0),
    "threshold": (float, 0.9),
    "S": (int, 10),
    "K_updates": (int, 200),
    "stage1_iters": (int, 500),
    "C": (int, 0),
    "K_per_class": (int, 4),
    "batch_size": (int, 128),
    "triplet_mining": (_choice(("all", "hard")), "all"),
    "triplet_reduction": (_choice(("mean", "sum")), "mean"),
    "jmmd_batch": (_choice(("uniform", "pk")), "uniform"),
    "bandwidth_multipliers": (_floats, (0.25, 0.5, 1.0, 2.0, 4.0)),
    "classifier_kernel_on_probs": (_bool, True),
    "kernel_average": (_bool, False),
    "classifier_bandwidth_multipliers": (_floats, (1.0,)),
    "classifier_gamma": (float, 0.59),
    # optimizer
    "base_lr": (float, 0.005),
    "momentum": (float, 0.9),
    "weight_decay": (float, 0.0004),
    "inv_gamma": (float, 10.0),
    "inv_power": (float, 0.75),
    # run
    "eval_interval": (int, 100),
    "export_embeddings": (_bool, False),
}

REQUIRED = ("task",)


def defaults() -> dict:
    return {k: d for k, (_, d) in SCHEMA.items()}


def parse_text(text: str, origin: str = "<config>") -> dict:
    """Parse config text into typed values merged over the defaults.

    Every problem is collected and reported in a single ConfigError.
    """
    errors, raw = [], {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{origin}:{lineno}: expected 'key = value'")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"{origin}:{lineno}: unknown key {key!r}")
        elif key in raw:
            errors.append(f"{origin}:{lineno}: duplicate key {key!r}")
        else:
            raw[key] = (lineno, value)
    cfg = defaults()
    for key, (lineno, value) in raw.items():
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            errors.append(f"{origin}:{lineno}: bad value for {key!r}: {exc}")
    errors += [f"{origin}: {e}" for e in validate(cfg, present=set(raw))]
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, str(path))


def validate(cfg: dict, present: set | None = None) -> list[str]:
    errs = []
    present = set(cfg) if present is None else present
    for key in REQUIRED:
        if key not in present or cfg.get(key) is None:
            errs.append(f"missing required key {key!r}")
    if cfg.get("task") == "csv":
        for key in ("source_csv", "target_csv"):
            if not cfg.get(key):
                errs.append(f"missing required key {key!r} (task = csv)")

    def check(cond, msg):
        if not cond:
            errs.append(msg)

    check(cfg["seed"] >= 0, "seed must be >= 0")
    check(cfg["alpha"] >= 0 and cfg["beta"] >= 0, "alpha and beta must be >= 0")
    check(0.0 < cfg["threshold"] < 1.0, "threshold must lie in (0, 1)")
    check(cfg["S"] >= 1, "S must be >= 1")
    check(cfg["K_updates"] >= 1, "K_updates must be >= 1")
    check(cfg["stage1_iters"] >= 0, "stage1_iters must be >= 0")
    check(cfg["C"] == 0 or cfg["C"] >= 2, "C must be 0 (auto) or >= 2")
    check(cfg["K_per_class"] >= 2, "K_per_class must be >= 2")
    check(cfg["batch_size"] >= 2 and cfg["batch_size"] % 2 == 0, "batch_size must be even and >= 2")
    check(cfg["margin"] >= 0, "margin must be >= 0")
    check(len(cfg["bandwidth_multipliers"]) > 0 and all(m > 0 for m in cfg["bandwidth_multipliers"]),
          "bandwidth_multipliers must be positive")
    check(len(cfg["classifier_bandwidth_multipliers"]) > 0 and all(m > 0 for m in cfg["classifier_bandwidth_multipliers"]),
          "classifier_bandwidth_multipliers must be positive")
    check(cfg["bottleneck_dim"] >= 1 and all(h >= 1 for h in cfg["hidden_dims"]), "layer widths must be >= 1")
    check(cfg["classifier_gamma"] >= 0, "classifier_gamma must be >= 0 (0 selects the median heuristic)")
    check(cfg["base_lr"] > 0, "base_lr must be > 0")
    check(0 <= cfg["momentum"] < 1, "momentum must lie in [0, 1)")
    check(cfg["weight_decay"] >= 0, "weight_decay must be >= 0")
    check(cfg["inv_gamma"] >= 0 and cfg["inv_power"] >= 0, "inv_gamma and inv_power must be >= 0")
    check(cfg["eval_interval"] >= 1, "eval_interval must be >= 1")
    check(cfg["n_per_domain"] >= 4 and cfg["n_per_domain"] % 2 == 0, "n_per_domain must be even and >= 4")
    check(cfg["noise_sd"] >= 0, "noise_sd must be >= 0")
    check(cfg["num_classes"] >= 2, "num_classes must be >= 2")
    check(cfg["n_per_class"] >= 1, "n_per_class must be >= 1")
    check(cfg["dim"] >= 2, "dim must be >= 2")
    check(cfg["class_sep"] > 0, "class_sep must be > 0")
    check(len(cfg["target_offset"]) in (1, cfg["dim"]), "target_offset needs 1 or dim entries")
    return errs


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def dump(cfg: dict) -> str:
    """Serialize a full config (defaults included) in schema order."""
    lines = ["# effective configuration"]
    for key in SCHEMA:
        if cfg.get(key) is not None:
            lines.append(f"{key} = {_fmt(cfg[key])}")
    return "\n".join(lines) + "\n"
