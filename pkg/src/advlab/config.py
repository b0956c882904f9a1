"""Run configuration.

One declarative key=value file plus command-line overrides; flags win. The
effective mapping is hashed so every output artifact can name the exact
configuration that produced it. Dataset sources are one-line specs like
``blobs:n=2000,k=2,d=20,sep=0.35,sigma=0.05,seed=1``.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping

from .data import Dataset, blob_centers, gen_gaussian_blobs, gen_linear_margin, load_csv, load_idx
from .errors import ConfigurationError
from .train import TrainConfig

# every key a config file or flag may set; unknown keys fail loudly
KNOWN_KEYS = frozenset({
    "dataset", "test_dataset", "arch", "hidden_activation",
    "trainer", "epochs", "batch_size", "lr", "momentum", "weight_decay",
    "lr_decay_epochs", "lr_decay_factor",
    "attack_steps", "eta", "eps_max", "c", "kappa", "loss_variant",
    "trades_beta", "eps_fixed", "label_smoothing",
    "seed", "out", "checkpoint", "target_checkpoint",
    "eps", "steps", "attack_loss", "grid",
    "extent", "grid_size", "sample_index", "tol", "cap", "limit",
    "fixtures", "no_plots",
})


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines. Blank lines and lines starting with ``#``
    are ignored; duplicate or unknown keys are errors."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: duplicate config key {key!r}")
        out[key] = value
    return out


def load_config_file(path: str) -> dict[str, str]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=path)


def merge_config(*layers: Mapping[str, str]) -> dict[str, str]:
    """Later layers override earlier ones (file first, flags last)."""
    merged: dict[str, str] = {}
    for layer in layers:
        for key, value in layer.items():
            if key not in KNOWN_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            if value is not None:
                merged[key] = str(value)
    return merged


def config_hash(cfg: Mapping[str, str]) -> str:
    """16-hex-char digest of the canonical JSON form of the effective config."""
    canon = json.dumps({k: str(v) for k, v in cfg.items()}, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ typed access


def get_str(cfg: Mapping[str, str], key: str, default: str | None = None) -> str | None:
    return cfg.get(key, default)


def get_int(cfg: Mapping[str, str], key: str, default: int | None = None) -> int | None:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError as e:
        raise ConfigurationError(f"config key {key!r}: expected integer, got {cfg[key]!r}") from e


def get_float(cfg: Mapping[str, str], key: str, default: float | None = None) -> float | None:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError as e:
        raise ConfigurationError(f"config key {key!r}: expected number, got {cfg[key]!r}") from e


def get_bool(cfg: Mapping[str, str], key: str, default: bool = False) -> bool:
    if key not in cfg:
        return default
    value = cfg[key].strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"config key {key!r}: expected boolean, got {cfg[key]!r}")


def parse_floats(text: str, key: str = "grid") -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as e:
        raise ConfigurationError(f"config key {key!r}: expected comma-separated numbers") from e


def parse_ints(text: str, key: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as e:
        raise ConfigurationError(f"config key {key!r}: expected comma-separated integers") from e


# ------------------------------------------------------------------ dataset specs


def parse_dataset_spec(spec: str) -> tuple[str, dict[str, str]]:
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    params: dict[str, str] = {}
    if rest.strip():
        for item in rest.split(","):
            if "=" not in item:
                raise ConfigurationError(f"dataset spec {spec!r}: expected key=value, got {item!r}")
            k, _, v = item.partition("=")
            params[k.strip()] = v.strip()
    return kind, params


def _take(params: dict[str, str], spec: str, required: dict, optional: dict) -> dict:
    values = {}
    for name, conv in required.items():
        if name not in params:
            raise ConfigurationError(f"dataset spec {spec!r}: missing {name!r}")
        values[name] = conv(params.pop(name))
    for name, (conv, default) in optional.items():
        values[name] = conv(params.pop(name)) if name in params else default
    if params:
        raise ConfigurationError(f"dataset spec {spec!r}: unknown keys {sorted(params)}")
    return values


def build_dataset(spec: str) -> Dataset:
    """Materialize a dataset from its one-line spec.

    Kinds: ``linear:n=,margin=,seed=[,box=]`` (n split evenly over 2 classes),
    ``blobs:n=,k=,d=,sep=,sigma=,seed=`` (n split evenly over k classes),
    ``idx:images=,labels=``, ``csv:path=[,k=]``.
    """
    kind, params = parse_dataset_spec(spec)
    try:
        if kind == "linear":
            v = _take(params, spec, {"n": int, "margin": float, "seed": int},
                      {"box": (float, 8.0)})
            if v["n"] % 2:
                raise ConfigurationError(f"dataset spec {spec!r}: n must be even")
            return gen_linear_margin(v["n"] // 2, v["margin"], v["seed"], box_half=v["box"])
        if kind == "blobs":
            v = _take(params, spec,
                      {"n": int, "k": int, "d": int, "sep": float,
                       "sigma": float, "seed": int}, {})
            if v["n"] % v["k"]:
                raise ConfigurationError(f"dataset spec {spec!r}: n must divide evenly by k")
            centers = blob_centers(v["k"], v["d"], v["sep"])
            return gen_gaussian_blobs(v["n"] // v["k"], v["k"], v["d"], centers,
                                      v["sigma"], v["seed"])
        if kind == "idx":
            v = _take(params, spec, {"images": str, "labels": str}, {})
            return load_idx(v["images"], v["labels"])
        if kind == "csv":
            v = _take(params, spec, {"path": str}, {"k": (int, None)})
            return load_csv(v["path"], num_classes=v["k"])
    except (ValueError, TypeError) as e:
        raise ConfigurationError(f"dataset spec {spec!r}: {e}") from e
    raise ConfigurationError(f"dataset spec {spec!r}: unknown kind {kind!r} "
                             "(expected linear, blobs, idx, or csv)")


# ------------------------------------------------------------------ train config


def train_config_from(cfg: Mapping[str, str]) -> TrainConfig:
    """Build the trainer hyperparameters from the effective config mapping,
    falling back to the package defaults for anything unset."""
    base = TrainConfig()
    decay = cfg.get("lr_decay_epochs", "")
    eps_fixed_raw = cfg.get("eps_fixed", "")
    return TrainConfig(
        epochs=get_int(cfg, "epochs", base.epochs),
        batch_size=get_int(cfg, "batch_size", base.batch_size),
        lr=get_float(cfg, "lr", base.lr),
        momentum=get_float(cfg, "momentum", base.momentum),
        weight_decay=get_float(cfg, "weight_decay", base.weight_decay),
        attack_steps=get_int(cfg, "attack_steps", base.attack_steps),
        c=get_float(cfg, "c", base.c),
        eta=get_float(cfg, "eta", base.eta),
        eps_max=get_float(cfg, "eps_max", base.eps_max),
        kappa=get_float(cfg, "kappa", base.kappa),
        loss_variant=get_str(cfg, "loss_variant", base.loss_variant),
        trainer=get_str(cfg, "trainer", base.trainer),
        seed=get_int(cfg, "seed", base.seed),
        trades_beta=get_float(cfg, "trades_beta", base.trades_beta),
        eps_fixed=None if eps_fixed_raw in ("", "none") else get_float(cfg, "eps_fixed"),
        lr_decay_epochs=tuple(parse_ints(decay, "lr_decay_epochs")) if decay else (),
        lr_decay_factor=get_float(cfg, "lr_decay_factor", base.lr_decay_factor),
    )


def parse_arch(cfg: Mapping[str, str], input_dim: int, num_classes: int) -> list[int]:
    """Hidden-layer widths from the ``arch`` key (comma ints, empty = linear
    model), bracketed by the dataset's dimensions."""
    hidden = parse_ints(cfg.get("arch", ""), "arch") if cfg.get("arch") else []
    if any(h < 1 for h in hidden):
        raise ConfigurationError("arch: hidden widths must be positive")
    return [input_dim, *hidden, num_classes]
