"""Training procedures: natural, fixed-budget adversarial, TRADES, and the
customized trainer that tunes a per-sample perturbation budget and smooths
each label in proportion to it.

All four trainers share one loop skeleton and are bitwise reproducible from
(config, seed, dataset): batch order, attack starts, and label-smoothing
draws all come from named substreams of the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .attacks import AttackSpec, run_pgd
from .data import Batch, Dataset, batch_iter
from .errors import ConfigurationError
from .net import (
    GradientBundle,
    MomentumState,
    Network,
    accuracy,
    backprop_logits,
    backward,
    forward,
    sgd_step,
)
from .streams import stream

TRAINER_KINDS = ("natural", "adv", "trades", "cat")
LOSS_VARIANTS = ("ce", "mix")

# Paper-default hyperparameters for the customized trainer.
DEFAULT_ETA = 0.005
DEFAULT_EPS_MAX = 8.0 / 255.0
DEFAULT_C = 10.0
DEFAULT_KAPPA = 10.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    attack_steps: int = 10
    c: float = DEFAULT_C
    eta: float = DEFAULT_ETA
    eps_max: float = DEFAULT_EPS_MAX
    kappa: float = DEFAULT_KAPPA
    loss_variant: str = "ce"
    trainer: str = "cat"
    seed: int = 0
    trades_beta: float = 6.0
    eps_fixed: float | None = None
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.attack_steps < 1:
            raise ConfigurationError("epochs/batch_size/attack_steps out of range")
        if self.lr < 0 or not (0 <= self.momentum < 1) or self.weight_decay < 0:
            raise ConfigurationError("lr/momentum/weight_decay out of range")
        if self.eta <= 0 or self.eps_max <= 0 or self.c < 0 or self.kappa < 0:
            raise ConfigurationError("eta/eps_max must be positive, c/kappa nonnegative")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.trainer not in TRAINER_KINDS:
            raise ConfigurationError(f"trainer must be one of {TRAINER_KINDS}")
        if self.trades_beta < 0:
            raise ConfigurationError("trades_beta must be >= 0")
        if self.eps_fixed is not None and self.eps_fixed < 0:
            raise ConfigurationError("eps_fixed must be >= 0")
        if not (0 < self.lr_decay_factor <= 1):
            raise ConfigurationError("lr_decay_factor must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-indexed epoch under the step-decay schedule."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor ** drops


class EpsilonLedger:
    """Per-sample perturbation budgets, keyed by sample id.

    Every entry starts at 0 and moves by at most one eta step per update:
    a failed attack earns the sample +eta (it was robust at the tentative
    budget), a successful one keeps the previous value. Entries never leave
    [0, eps_max].
    """

    def __init__(self, ids: np.ndarray, eta: float, eps_max: float):
        if eta <= 0 or eps_max <= 0:
            raise ConfigurationError("eta and eps_max must be positive")
        self.eta = float(eta)
        self.eps_max = float(eps_max)
        self._eps: dict[int, float] = {int(i): 0.0 for i in ids}

    def get(self, sample_id: int) -> float:
        return self._eps[int(sample_id)]

    def values(self, ids: np.ndarray) -> np.ndarray:
        return np.array([self._eps[int(i)] for i in ids])

    def tentative(self, ids: np.ndarray) -> np.ndarray:
        return self.values(ids) + self.eta

    def mean(self) -> float:
        return float(np.mean(list(self._eps.values()))) if self._eps else 0.0

    def snapshot(self) -> dict[int, float]:
        return dict(self._eps)

    def update(self, sample_id: int, attack_succeeded: bool) -> None:
        """Commit one tentative-budget probe: keep on success, +eta on failure."""
        key = int(sample_id)
        eps = self._eps[key]
        if not attack_succeeded:
            eps += self.eta
        self._eps[key] = min(eps, self.eps_max)


def ledger_update(ledger: EpsilonLedger, sample_id: int, attack_succeeded: bool) -> EpsilonLedger:
    ledger.update(sample_id, attack_succeeded)
    return ledger


@dataclass
class TrainReport:
    """Per-epoch metrics plus the final model; rows align across lists."""

    epochs: list[int] = field(default_factory=list)
    clean_train_acc: list[float] = field(default_factory=list)
    clean_test_acc: list[float] = field(default_factory=list)
    mean_eps: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    net: Network | None = None
    ledger: EpsilonLedger | None = None


def _dirichlet_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    e = rng.standard_exponential(size=(n, k))
    return e / e.sum(axis=1, keepdims=True)


def _epoch_order_seed(cfg: TrainConfig, epoch: int) -> int:
    return int(stream(cfg.seed, "order", epoch).integers(0, 2**62))


def _run(
    net: Network,
    dataset: Dataset,
    cfg: TrainConfig,
    step_fn,
    test_dataset: Dataset | None,
    mean_eps_of_epoch,
    ledger: EpsilonLedger | None,
) -> TrainReport:
    report = TrainReport(net=net, ledger=ledger)
    state = MomentumState.zeros_like(net)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        batch_losses = []
        for batch in batch_iter(dataset, cfg.batch_size, _epoch_order_seed(cfg, epoch)):
            net, state, batch_loss = step_fn(net, state, batch, lr)
            batch_losses.append(batch_loss)
        report.epochs.append(epoch)
        report.clean_train_acc.append(accuracy(net, dataset.x, dataset.labels))
        report.clean_test_acc.append(
            accuracy(net, test_dataset.x, test_dataset.labels)
            if test_dataset is not None else float("nan"))
        report.mean_eps.append(mean_eps_of_epoch())
        report.mean_loss.append(float(np.mean(batch_losses)))
        report.net = net
    return report


def _sgd_on_traced_loss(
    net: Network,
    state: MomentumState,
    x: np.ndarray,
    targets: np.ndarray,
    loss_kind: str,
    lr: float,
    cfg: TrainConfig,
    y0: np.ndarray | None = None,
) -> tuple[Network, MomentumState, float]:
    tr = forward(net, x)
    vals = losses.loss_values(tr.logits, tr.probabilities, targets, loss_kind,
                              y0=y0, kappa=cfg.kappa)
    grads = backward(net, tr, targets, loss_kind, y0=y0, kappa=cfg.kappa)
    net, state = sgd_step(net, grads, lr, cfg.momentum, cfg.weight_decay, state)
    return net, state, float(np.mean(vals))


def train_natural(
    net: Network, dataset: Dataset, cfg: TrainConfig,
    test_dataset: Dataset | None = None,
) -> TrainReport:
    """Plain SGD on cross-entropy against the one-hot labels."""
    eye = np.eye(net.num_classes)

    def step(net, state, batch: Batch, lr):
        return _sgd_on_traced_loss(net, state, batch.x, eye[batch.y], "ce", lr, cfg)

    return _run(net, dataset, cfg, step, test_dataset, lambda: 0.0, ledger=None)


def train_adv(
    net: Network, dataset: Dataset, cfg: TrainConfig,
    eps_fixed: float | None = None,
    test_dataset: Dataset | None = None,
    label_smoothing: float = 0.0,
) -> TrainReport:
    """Adversarial training at one shared budget: every batch is replaced by
    its PGD examples (started at delta=0) before the SGD step.

    ``label_smoothing`` optionally mixes the one-hot targets with the uniform
    distribution by a fixed weight (both the attack loss and the SGD loss see
    the smoothed targets); 0 keeps plain one-hot training.
    """
    eps = cfg.eps_fixed if eps_fixed is None else eps_fixed
    if eps is None or eps < 0:
        raise ConfigurationError("train_adv needs eps_fixed >= 0")
    if not 0.0 <= label_smoothing < 1.0:
        raise ConfigurationError("label_smoothing must be in [0, 1)")
    k = net.num_classes
    target_rows = np.eye(k)
    if label_smoothing:
        target_rows = (1.0 - label_smoothing) * target_rows + label_smoothing / k
    spec = AttackSpec.for_training(eps, cfg.attack_steps)

    def step(net, state, batch: Batch, lr):
        res = run_pgd(net, batch.x, batch.y, spec, targets=target_rows[batch.y],
                      lo=dataset.domain_lo, hi=dataset.domain_hi)
        return _sgd_on_traced_loss(net, state, res.x_adv, target_rows[batch.y],
                                   "ce", lr, cfg)

    return _run(net, dataset, cfg, step, test_dataset, lambda: eps, ledger=None)


def train_trades(
    net: Network, dataset: Dataset, cfg: TrainConfig,
    test_dataset: Dataset | None = None,
) -> TrainReport:
    """Clean cross-entropy plus beta times the divergence between the model's
    adversarial and clean predictions.

    The inner attack ascends KL(f(x+delta) | f(x)). Its gradient at delta=0
    is exactly zero (KL sits at its minimum), so unlike the other trainers the
    inner attack must start from a random point in the ball.
    """
    eps = cfg.eps_fixed if cfg.eps_fixed is not None else cfg.eps_max
    eye = np.eye(net.num_classes)
    beta = cfg.trades_beta
    # beta=0 or eps=0 kills the divergence term identically; run the natural
    # step so the reduction holds bitwise, not just to rounding
    reduces_to_natural = beta == 0 or eps == 0
    spec = None if reduces_to_natural else AttackSpec.for_training(
        eps, cfg.attack_steps, loss_kind="kl")
    start_rng = stream(cfg.seed, "trades-start")

    def step(net, state, batch: Batch, lr):
        if reduces_to_natural:
            return _sgd_on_traced_loss(net, state, batch.x, eye[batch.y], "ce", lr, cfg)
        b = len(batch.x)
        tr_clean = forward(net, batch.x)
        q = tr_clean.probabilities
        start = spec.eps * start_rng.uniform(-1.0, 1.0, size=batch.x.shape)
        res = run_pgd(net, batch.x, batch.y, spec, targets=q, start=start,
                      lo=dataset.domain_lo, hi=dataset.domain_hi)
        tr_adv = forward(net, res.x_adv)
        p = tr_adv.probabilities

        onehot = eye[batch.y]
        ce_vals = losses.loss_values(tr_clean.logits, q, onehot, "ce")
        kl_vals = losses.loss_values(tr_adv.logits, p, q, "kl")
        total = float(np.mean(ce_vals + beta * kl_vals))

        # clean-side logit gradient: CE plus the reference side of the
        # divergence term, d KL(p|q)/d z_clean = q - p
        dz_clean = (q - onehot) + beta * (q - p)
        g_clean = backprop_logits(net, tr_clean, dz_clean)
        dz_adv = beta * losses.logit_gradient(tr_adv.logits, p, q, "kl")
        g_adv = backprop_logits(net, tr_adv, dz_adv)
        grads = GradientBundle(
            [(wc + wa) / b for wc, wa in zip(g_clean.weight_grads, g_adv.weight_grads)],
            [(bc + ba) / b for bc, ba in zip(g_clean.bias_grads, g_adv.bias_grads)],
        )
        net, state = sgd_step(net, grads, lr, cfg.momentum, cfg.weight_decay, state)
        return net, state, total

    return _run(net, dataset, cfg, step, test_dataset,
                lambda: 0.0 if reduces_to_natural else eps, ledger=None)


def train_cat(
    net: Network, dataset: Dataset, cfg: TrainConfig,
    test_dataset: Dataset | None = None,
) -> TrainReport:
    """Customized adversarial training.

    Per batch, with every sample holding its own budget eps_i:
      1. smooth each label at the current (pre-increment) eps_i,
      2. attack at the tentative budget eps_i + eta, starting from delta=0,
         ascending the configured training loss against the smoothed label,
      3. a sample that resisted the attack earns +eta, one that fell keeps
         its old budget (then everything clamps to eps_max),
      4. re-smooth at the committed budget with a fresh draw,
      5. SGD on the training loss at x+delta against the re-smoothed label,
         using the delta the attack produced at the tentative budget.
    """
    k = net.num_classes
    ledger = EpsilonLedger(dataset.ids, cfg.eta, cfg.eps_max)
    smooth_rng = stream(cfg.seed, "smoothing")
    loss_kind = cfg.loss_variant
    base_spec = AttackSpec.for_training(cfg.eps_max, cfg.attack_steps,
                                        loss_kind=loss_kind, kappa=cfg.kappa)

    def smooth(y: np.ndarray, eps: np.ndarray) -> np.ndarray:
        alphas = np.minimum(cfg.c * eps, 1.0)
        return losses.smooth_dist(y, k, alphas, _dirichlet_rows(smooth_rng, len(y), k))

    def step(net, state, batch: Batch, lr):
        eps_old = ledger.values(batch.ids)
        targets_attack = smooth(batch.y, eps_old)
        eps_tent = eps_old + cfg.eta
        alpha = np.maximum(2.5 * eps_tent / cfg.attack_steps, 1e-4)
        res = run_pgd(net, batch.x, batch.y, base_spec, targets=targets_attack,
                      eps=eps_tent, alpha=alpha,
                      lo=dataset.domain_lo, hi=dataset.domain_hi)
        for sid, ok in zip(batch.ids, res.success):
            ledger.update(sid, bool(ok))
        targets_sgd = smooth(batch.y, ledger.values(batch.ids))
        return _sgd_on_traced_loss(net, state, res.x_adv, targets_sgd, loss_kind,
                                   lr, cfg, y0=batch.y)

    return _run(net, dataset, cfg, step, test_dataset, ledger.mean, ledger=ledger)


def train(
    net: Network, dataset: Dataset, cfg: TrainConfig,
    test_dataset: Dataset | None = None,
) -> TrainReport:
    """Dispatch on cfg.trainer."""
    if cfg.trainer == "natural":
        return train_natural(net, dataset, cfg, test_dataset)
    if cfg.trainer == "adv":
        return train_adv(net, dataset, cfg, test_dataset=test_dataset)
    if cfg.trainer == "trades":
        return train_trades(net, dataset, cfg, test_dataset)
    return train_cat(net, dataset, cfg, test_dataset)
