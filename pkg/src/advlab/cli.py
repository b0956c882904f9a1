"""Command-line surface.

One subcommand per experiment step (train, attack, eval-curve, transfer,
landscape, margin, bound, gradcheck, recipe). Configuration comes from an
optional key=value file plus flag overrides; flags win. Every artifact embeds
the format version, a hash of the effective configuration, and the seed, and
is written atomically, so a nonzero exit never leaves a partial output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .analysis import (
    CurveSpec,
    bound_terms,
    complexity_proxy,
    estimate_bilateral_margin,
    landscape_grid,
    robust_curve,
)
from .attacks import AttackSpec, attack_dataset, transfer_attack
from .checkpoint import FORMAT_VERSION, atomic_write_text, load_checkpoint, save_checkpoint
from .config import (
    build_dataset,
    config_hash,
    get_bool,
    get_float,
    get_int,
    get_str,
    load_config_file,
    merge_config,
    parse_arch,
    parse_floats,
    train_config_from,
)
from .data import Dataset
from .errors import AdvLabError, ConfigurationError
from .net import Network, forward, grad_check, init_network
from .streams import stream
from .train import train_adv, train_cat, train_natural, train_trades

GRADCHECK_THRESHOLD = 1e-4
DEFAULT_GRID = "0,0.005,0.01,0.015,0.02,0.025,0.03,0.035,0.04,0.045,0.05"


# ------------------------------------------------------------------ artifact writers


# Keys that say where artifacts go, not what gets computed; two runs that
# differ only here must hash identically so determinism is checkable.
PRESENTATION_KEYS = ("out", "no_plots")


def _provenance(cfg: dict[str, str]) -> tuple[str, int]:
    semantic = {k: v for k, v in cfg.items() if k not in PRESENTATION_KEYS}
    return config_hash(semantic), get_int(cfg, "seed", 0)


def _csv_text(cfg: dict[str, str], header: str, rows: list[str]) -> str:
    h, seed = _provenance(cfg)
    lines = [f"# format_version={FORMAT_VERSION} config_hash={h} seed={seed}", header]
    lines.extend(rows)
    return "\n".join(lines) + "\n"


def _write_json(path: str, cfg: dict[str, str], doc: dict) -> None:
    h, seed = _provenance(cfg)
    full = {"format_version": FORMAT_VERSION, "config_hash": h, "seed": seed}
    full.update(doc)
    atomic_write_text(path, json.dumps(full, sort_keys=True, indent=2) + "\n")


def _out_path(cfg: dict[str, str], name: str) -> str:
    return os.path.join(get_str(cfg, "out", "."), name)


def _render(cfg: dict[str, str]) -> bool:
    return not get_bool(cfg, "no_plots", False)


# ------------------------------------------------------------------ shared loading


def _need(cfg: dict[str, str], key: str, command: str) -> str:
    value = get_str(cfg, key)
    if not value:
        raise ConfigurationError(f"{command} requires {key!r} (flag --{key.replace('_', '-')})")
    return value


def _load_net_for(cfg: dict[str, str], dataset: Dataset, command: str,
                  key: str = "checkpoint") -> Network:
    ck = load_checkpoint(_need(cfg, key, command))
    net = ck.net
    if net.input_dim != dataset.dim or net.num_classes != dataset.num_classes:
        raise ConfigurationError(
            f"checkpoint expects input dim {net.input_dim} and {net.num_classes} classes, "
            f"dataset has dim {dataset.dim} and {dataset.num_classes} classes")
    return net


def _eval_attack_spec(cfg: dict[str, str], command: str) -> AttackSpec:
    eps = get_float(cfg, "eps")
    if eps is None:
        raise ConfigurationError(f"{command} requires 'eps' (flag --eps)")
    return AttackSpec.for_eval(
        eps,
        steps=get_int(cfg, "steps", 20),
        loss_kind=get_str(cfg, "attack_loss", "ce"),
        kappa=get_float(cfg, "kappa", 0.0),
    )


# ------------------------------------------------------------------ commands


def cmd_train(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "train"))
    test_spec = get_str(cfg, "test_dataset")
    test_dataset = build_dataset(test_spec) if test_spec else None
    tc = train_config_from(cfg)
    arch = parse_arch(cfg, dataset.dim, dataset.num_classes)
    net = init_network(arch, seed=tc.seed,
                       hidden_activation=get_str(cfg, "hidden_activation", "relu"))

    if tc.trainer == "natural":
        report = train_natural(net, dataset, tc, test_dataset=test_dataset)
    elif tc.trainer == "adv":
        report = train_adv(net, dataset, tc, test_dataset=test_dataset,
                           label_smoothing=get_float(cfg, "label_smoothing", 0.0))
    elif tc.trainer == "trades":
        report = train_trades(net, dataset, tc, test_dataset=test_dataset)
    elif tc.trainer == "cat":
        report = train_cat(net, dataset, tc, test_dataset=test_dataset)
    else:
        raise ConfigurationError(
            f"unknown trainer {tc.trainer!r} (expected natural, adv, trades, or cat)")

    h, seed = _provenance(cfg)
    ledger = report.ledger.snapshot() if report.ledger is not None else None
    save_checkpoint(_out_path(cfg, "checkpoint.json"), report.net, seed=seed,
                    epoch=tc.epochs, epsilon_ledger=ledger, config_hash=h)
    rows = [
        f"{e},{tr:.6f},{te:.6f},{me:.8f},{ml:.8f}"
        for e, tr, te, me, ml in zip(report.epochs, report.clean_train_acc,
                                     report.clean_test_acc, report.mean_eps,
                                     report.mean_loss)
    ]
    atomic_write_text(
        _out_path(cfg, "metrics.csv"),
        _csv_text(cfg, "epoch,clean_train_acc,clean_test_acc,mean_eps,mean_loss", rows))
    if _render(cfg):
        from .plots import plot_training_curves

        plot_training_curves(report, _out_path(cfg, "training-curves.png"))
    return 0


def cmd_attack(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "attack"))
    net = _load_net_for(cfg, dataset, "attack")
    spec = _eval_attack_spec(cfg, "attack")
    _, seed = _provenance(cfg)
    result = attack_dataset(net, dataset, spec, seed=seed)
    linf = np.abs(result.delta).max(axis=1) if dataset.dim else np.zeros(dataset.n)
    samples = [
        {
            "id": int(i),
            "eps": spec.eps,
            "success": bool(s),
            "loss_achieved": float(l),
            "linf_norm": float(m),
        }
        for i, s, l, m in zip(dataset.ids, result.success, result.loss_achieved, linf)
    ]
    doc = {
        "attack_loss": spec.loss_kind,
        "steps": spec.steps,
        "eps": spec.eps,
        "kappa": spec.kappa,
        "n": dataset.n,
        "success_rate": float(np.mean(result.success)),
        "robust_accuracy": float(np.mean(~result.success)),
        "samples": samples,
    }
    _write_json(_out_path(cfg, "attack.json"), cfg, doc)
    return 0


def cmd_eval_curve(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "eval-curve"))
    net = _load_net_for(cfg, dataset, "eval-curve")
    grid = parse_floats(get_str(cfg, "grid", DEFAULT_GRID))
    _, seed = _provenance(cfg)
    spec = CurveSpec(steps=get_int(cfg, "steps", 20),
                     kappa=get_float(cfg, "kappa", 0.0), seed=seed)
    curve = robust_curve(net, dataset, grid, eval_spec=spec)
    rows = [f"{e:.6g},{p:.6f},{c:.6f}"
            for e, p, c in zip(curve.eps_grid, curve.pgd_acc, curve.cw_acc)]
    atomic_write_text(_out_path(cfg, "curve.csv"),
                      _csv_text(cfg, "eps,pgd_acc,cw_acc", rows))
    if _render(cfg):
        from .plots import plot_robust_curves

        plot_robust_curves({"model": curve}, _out_path(cfg, "robust-curve.png"))
    return 0


def cmd_transfer(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "transfer"))
    source = _load_net_for(cfg, dataset, "transfer", key="checkpoint")
    target = _load_net_for(cfg, dataset, "transfer", key="target_checkpoint")
    spec = _eval_attack_spec(cfg, "transfer")
    _, seed = _provenance(cfg)
    acc = transfer_attack(source, target, dataset, spec, seed=seed)
    doc = {
        "transfer_accuracy": acc,
        "eps": spec.eps,
        "steps": spec.steps,
        "attack_loss": spec.loss_kind,
        "kappa": spec.kappa,
        "n": dataset.n,
        "source_checkpoint": get_str(cfg, "checkpoint"),
        "target_checkpoint": get_str(cfg, "target_checkpoint"),
    }
    _write_json(_out_path(cfg, "transfer.json"), cfg, doc)
    return 0


def cmd_landscape(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "landscape"))
    net = _load_net_for(cfg, dataset, "landscape")
    index = get_int(cfg, "sample_index", 0)
    if not 0 <= index < dataset.n:
        raise ConfigurationError(f"sample_index {index} out of range for n={dataset.n}")
    extent = get_float(cfg, "extent", 0.5)
    grid_size = get_int(cfg, "grid_size", 21)
    _, seed = _provenance(cfg)
    grid = landscape_grid(net, dataset.x[index], int(dataset.labels[index]),
                          extent=extent, grid_size=grid_size, seed=seed)
    rows = [
        f"{grid.u_magnitudes[i]:.8g},{grid.v_magnitudes[j]:.8g},{grid.loss[i, j]:.8f}"
        for i in range(grid_size)
        for j in range(grid_size)
    ]
    atomic_write_text(_out_path(cfg, "landscape.csv"), _csv_text(cfg, "a,b,loss", rows))
    doc = {
        "sample_index": index,
        "sample_id": int(dataset.ids[index]),
        "label": int(dataset.labels[index]),
        "extent": extent,
        "grid_size": grid_size,
        "clean_loss": grid.clean_loss,
        "u": grid.u.tolist(),
        "v": grid.v.tolist(),
    }
    _write_json(_out_path(cfg, "landscape.json"), cfg, doc)
    if _render(cfg):
        from .plots import plot_landscape

        plot_landscape(grid, _out_path(cfg, "landscape.png"))
    return 0


def _margin_doc(est) -> dict:
    return {
        "id": est.sample_id,
        "m_F": est.m_F,
        "certified_lower": est.certified_lower,
        "attack_upper": est.attack_upper,
        "capped": est.capped,
    }


def cmd_margin(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "margin"))
    net = _load_net_for(cfg, dataset, "margin")
    index = get_int(cfg, "sample_index", 0)
    if not 0 <= index < dataset.n:
        raise ConfigurationError(f"sample_index {index} out of range for n={dataset.n}")
    _, seed = _provenance(cfg)
    est = estimate_bilateral_margin(
        net, dataset.x[index], int(dataset.labels[index]),
        tol=get_float(cfg, "tol", 1e-3), sample_id=int(dataset.ids[index]),
        seed=seed, cap=get_float(cfg, "cap", 10.0))
    _write_json(_out_path(cfg, "margin.json"), cfg,
                {"sample_index": index, "estimate": _margin_doc(est)})
    return 0


def cmd_bound(cfg: dict[str, str]) -> int:
    dataset = build_dataset(_need(cfg, "dataset", "bound"))
    net = _load_net_for(cfg, dataset, "bound")
    _, seed = _provenance(cfg)
    report = bound_terms(net, dataset, tol=get_float(cfg, "tol", 1e-3), seed=seed,
                         limit=get_int(cfg, "limit"))
    if report.n == 0:
        raise ConfigurationError(
            "bound terms are defined only under the zero-training-error precondition "
            f"(every margin must be positive); all {report.excluded} evaluated samples "
            "are misclassified")
    doc = {
        "complexity": report.complexity,
        "mean_inverse_sqrt_margin": report.mean_inverse_sqrt_margin,
        "n": report.n,
        "excluded": report.excluded,
        "margins": [_margin_doc(m) for m in report.margins],
    }
    _write_json(_out_path(cfg, "bound.json"), cfg, doc)
    if _render(cfg):
        from .plots import plot_margin_histogram

        plot_margin_histogram(report.margins, _out_path(cfg, "margin-histogram.png"))
    return 0


# ------------------------------------------------------------------ gradcheck

GRADCHECK_KINDS = ("ce", "kl", "cw_margin", "mix")


def _gradcheck_fixture(rng: np.random.Generator):
    """One random differentiable fixture: net, input, targets.

    Redraws until every hidden pre-activation and the margin argmax gap are
    clear of their kinks, so central differences are trustworthy.
    """
    for _ in range(200):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(2, 5))
        hidden = [int(rng.integers(3, 7)) for _ in range(int(rng.integers(1, 3)))]
        net = init_network([d, *hidden, k], seed=int(rng.integers(1 << 31)))
        for layer in range(net.num_layers):
            net.weights[layer] += 0.3 * rng.normal(size=net.weights[layer].shape)
            net.biases[layer] += 0.1 * rng.normal(size=net.biases[layer].shape)
        x = rng.normal(size=d)
        y0 = int(rng.integers(k))
        kappa = float(rng.uniform(0.5, 3.0))
        trace = forward(net, x)
        pre_ok = all(np.abs(z).min() > 1e-2 for z in trace.pre[:-1])
        logits = trace.logits
        rival = np.delete(logits, y0)
        order = np.sort(rival)[::-1]
        gap_ok = (len(order) < 2 or order[0] - order[1] > 1e-2)
        floor_ok = abs((order[0] - logits[y0]) - (-kappa)) > 1e-2
        if pre_ok and gap_ok and floor_ok:
            target = rng.dirichlet(np.ones(k))
            return net, x, target, y0, kappa
    raise AdvLabError("could not draw a differentiable gradcheck fixture")


def cmd_gradcheck(cfg: dict[str, str]) -> int:
    fixtures = get_int(cfg, "fixtures", 50)
    _, seed = _provenance(cfg)
    rng = stream(seed, "gradcheck")
    worst = {kind: (0.0, "none", -1) for kind in GRADCHECK_KINDS}
    for i in range(fixtures):
        net, x, target, y0, kappa = _gradcheck_fixture(rng)
        for kind in GRADCHECK_KINDS:
            err, where = grad_check(net, x, target, kind, y0=y0, kappa=kappa,
                                    with_location=True)
            if err > worst[kind][0]:
                worst[kind] = (err, where, i)
    passed = all(err < GRADCHECK_THRESHOLD for err, _, _ in worst.values())
    doc = {
        "fixtures": fixtures,
        "threshold": GRADCHECK_THRESHOLD,
        "passed": passed,
        "results": {
            kind: {"max_rel_err": err, "worst_coordinate": where, "fixture": idx}
            for kind, (err, where, idx) in worst.items()
        },
    }
    _write_json(_out_path(cfg, "gradcheck.json"), cfg, doc)
    for kind in GRADCHECK_KINDS:
        err, where, idx = worst[kind]
        status = "ok" if err < GRADCHECK_THRESHOLD else "FAIL"
        print(f"gradcheck {kind}: max rel err {err:.3e} at {where} "
              f"(fixture {idx}) [{status}]")
    return 0 if passed else 1


def cmd_recipe(cfg: dict[str, str], name: str) -> int:
    from . import recipes

    if name not in recipes.RECIPES:
        raise ConfigurationError(
            f"unknown recipe {name!r} (expected one of {sorted(recipes.RECIPES)})")
    _, seed = _provenance(cfg)
    recipes.RECIPES[name](get_str(cfg, "out", "."), seed=seed, render=_render(cfg))
    return 0


# ------------------------------------------------------------------ argument wiring

_COMMON = ("config", "seed", "out")

_COMMAND_KEYS = {
    "train": ("dataset", "test_dataset", "arch", "hidden_activation", "trainer",
              "epochs", "batch_size", "lr", "momentum", "weight_decay",
              "lr_decay_epochs", "lr_decay_factor", "attack_steps", "eta",
              "eps_max", "c", "kappa", "loss_variant", "trades_beta", "eps_fixed",
              "label_smoothing", "no_plots"),
    "attack": ("dataset", "checkpoint", "eps", "steps", "attack_loss", "kappa"),
    "eval-curve": ("dataset", "checkpoint", "grid", "steps", "kappa", "no_plots"),
    "transfer": ("dataset", "checkpoint", "target_checkpoint", "eps", "steps",
                 "attack_loss", "kappa"),
    "landscape": ("dataset", "checkpoint", "sample_index", "extent", "grid_size",
                  "no_plots"),
    "margin": ("dataset", "checkpoint", "sample_index", "tol", "cap"),
    "bound": ("dataset", "checkpoint", "tol", "limit", "no_plots"),
    "gradcheck": ("fixtures",),
    "recipe": ("no_plots",),
}

_HANDLERS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval-curve": cmd_eval_curve,
    "transfer": cmd_transfer,
    "landscape": cmd_landscape,
    "margin": cmd_margin,
    "bound": cmd_bound,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advlab",
        description="Adversarial-training laboratory: train, attack, analyze.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in _COMMAND_KEYS.items():
        p = sub.add_parser(command)
        if command == "recipe":
            p.add_argument("name")
        for key in (*_COMMON, *keys):
            flag = "--" + key.replace("_", "-")
            if key == "no_plots":
                p.add_argument(flag, dest=key, action="store_const", const="true",
                               default=None)
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def effective_config(args: argparse.Namespace) -> dict[str, str]:
    keys = (*_COMMON, *_COMMAND_KEYS[args.command])
    flags = {key: getattr(args, key) for key in keys if key != "config"}
    file_cfg = load_config_file(args.config) if args.config else {}
    return merge_config(file_cfg, flags)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.command == "recipe":
            return cmd_recipe(cfg, args.name)
        return _HANDLERS[args.command](cfg)
    except AdvLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
