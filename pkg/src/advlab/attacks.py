"""Linf-bounded attacks: FGSM, multi-step PGD, and margin-loss (C&W-style) PGD.

All attacks are projected signed-gradient ascent on a chosen loss. The
batched core takes per-sample radii and step sizes, which is what lets the
customized trainer attack a whole batch at once while every sample carries
its own budget. An eps of zero always returns the input bitwise unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import losses
from .data import Dataset
from .errors import ConfigurationError, DivergenceError
from .losses import cw_margin_loss  # noqa: F401  (this module is its public home)
from .net import Network, forward, input_gradient, predict
from .streams import per_sample_uniform, stream

# ce and cw_margin are the attack kinds exposed at the CLI; kl and mix are the
# trainers' inner-maximization objectives and share the same engine.
ATTACK_LOSSES = ("ce", "cw_margin", "kl", "mix")
PUBLIC_ATTACK_LOSSES = ("ce", "cw_margin")

# Step-size floor for the training heuristic alpha = 2.5*eps/steps, which
# would otherwise vanish along with tiny budgets.
MIN_TRAIN_STEP = 1e-4

EVAL_STEPS = 20
EVAL_STEP_FRACTION = 0.2  # evaluation step size eps/5


@dataclass(frozen=True)
class AttackSpec:
    """Linf attack parameters. ``loss_kind`` "ce" maximizes cross-entropy
    against a target distribution; "cw_margin" maximizes the margin term
    (best wrong logit minus true logit, floored at -kappa)."""

    eps: float
    steps: int = EVAL_STEPS
    step_size: float | None = None
    random_start: bool = True
    loss_kind: str = "ce"
    kappa: float = 0.0
    clamp_to_domain: bool = True

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ConfigurationError("eps must be >= 0")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.loss_kind not in ATTACK_LOSSES:
            raise ConfigurationError(f"attack loss must be one of {ATTACK_LOSSES}")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")
        if self.step_size is None:
            object.__setattr__(self, "step_size", EVAL_STEP_FRACTION * self.eps)
        if self.step_size <= 0 and self.eps > 0:
            raise ConfigurationError("step_size must be positive for a nonzero budget")

    @classmethod
    def for_training(cls, eps: float, steps: int = 10, loss_kind: str = "ce",
                     kappa: float = 0.0, clamp_to_domain: bool = True) -> "AttackSpec":
        """Training-time geometry: start at delta=0, alpha = max(2.5*eps/steps, floor)."""
        return cls(
            eps=eps, steps=steps,
            step_size=max(2.5 * eps / steps, MIN_TRAIN_STEP),
            random_start=False, loss_kind=loss_kind, kappa=kappa,
            clamp_to_domain=clamp_to_domain,
        )

    @classmethod
    def for_eval(cls, eps: float, steps: int = EVAL_STEPS, loss_kind: str = "ce",
                 kappa: float = 0.0, clamp_to_domain: bool = True) -> "AttackSpec":
        """Evaluation geometry: random start, step size eps/5."""
        return cls(
            eps=eps, steps=steps, step_size=EVAL_STEP_FRACTION * eps,
            random_start=True, loss_kind=loss_kind, kappa=kappa,
            clamp_to_domain=clamp_to_domain,
        )

    def with_eps(self, eps: float) -> "AttackSpec":
        scaled = None
        if self.step_size is not None and self.eps > 0:
            scaled = self.step_size * (eps / self.eps)
        return replace(self, eps=eps, step_size=scaled)


@dataclass
class AdvExample:
    """One attacked sample. ``delta`` is recomputed as x_adv - x after any
    domain clamp, so the stored perturbation is what was actually applied."""

    x_adv: np.ndarray
    delta: np.ndarray
    success: bool
    loss_achieved: float


@dataclass
class BatchAttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    success: np.ndarray
    loss_achieved: np.ndarray

    def example(self, i: int) -> AdvExample:
        return AdvExample(self.x_adv[i], self.delta[i], bool(self.success[i]),
                          float(self.loss_achieved[i]))


def _attack_targets(targets: np.ndarray | None, y0: np.ndarray, k: int) -> np.ndarray:
    if targets is not None:
        return np.asarray(targets, dtype=float)
    return np.eye(k)[y0]


def run_pgd(
    net: Network,
    x: np.ndarray,
    y_true: np.ndarray,
    spec: AttackSpec,
    *,
    targets: np.ndarray | None = None,
    eps: np.ndarray | None = None,
    alpha: np.ndarray | None = None,
    start: np.ndarray | None = None,
    lo: np.ndarray | None = None,
    hi: np.ndarray | None = None,
    record_iterates: list | None = None,
) -> BatchAttackResult:
    """Batched projected signed-gradient ascent; the engine behind fgsm/pgd.

    ``eps``/``alpha`` may be per-sample (B,) arrays overriding the spec's
    scalars; ``targets`` defaults to one-hot of ``y_true``; ``start`` is the
    initial delta (defaults to zero). Success is always judged against
    ``y_true`` regardless of the attack target distribution. Appends a copy
    of each delta iterate to ``record_iterates`` when given.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y0 = np.atleast_1d(np.asarray(y_true, dtype=int))
    b, d = x.shape
    eps_v = np.full(b, spec.eps) if eps is None else np.asarray(eps, dtype=float)
    alpha_v = np.full(b, spec.step_size) if alpha is None else np.asarray(alpha, dtype=float)
    t = _attack_targets(targets, y0, net.num_classes)

    delta = np.zeros_like(x) if start is None else np.asarray(start, dtype=float).copy()
    delta = np.clip(delta, -eps_v[:, None], eps_v[:, None])
    clamp = spec.clamp_to_domain and lo is not None

    # The ascent direction for the margin loss ignores the -kappa floor: a
    # floored gradient is zero exactly on confidently-correct points, which
    # would stall the attack where it matters most. The floored value is
    # still what gets reported.
    grad_kappa = np.inf if spec.loss_kind == "cw_margin" else spec.kappa

    if np.any(eps_v > 0):
        for step in range(spec.steps):
            x_cur = x + delta
            if clamp:
                x_cur = np.clip(x_cur, lo, hi)
            tr = forward(net, x_cur)
            grad = input_gradient(net, tr, t, spec.loss_kind, y0=y0, kappa=grad_kappa)
            if not np.isfinite(grad).all():
                raise DivergenceError(f"non-finite attack gradient at step {step}")
            delta = delta + alpha_v[:, None] * np.sign(grad)
            delta = np.clip(delta, -eps_v[:, None], eps_v[:, None])
            if clamp:
                delta = np.clip(x + delta, lo, hi) - x
            if record_iterates is not None:
                record_iterates.append(delta.copy())

    x_adv = x + delta
    if clamp:
        x_adv = np.clip(x_adv, lo, hi)
    zero = eps_v == 0.0
    if np.any(zero):
        x_adv[zero] = x[zero]
    delta = x_adv - x

    tr = forward(net, x_adv)
    loss = losses.loss_values(tr.logits, tr.probabilities, t, spec.loss_kind,
                              y0=y0, kappa=spec.kappa)
    if not np.all(np.isfinite(loss)):
        raise DivergenceError("non-finite loss on final attack iterate")
    success = np.argmax(tr.logits, axis=-1) != y0
    return BatchAttackResult(x_adv=x_adv, delta=delta, success=success,
                             loss_achieved=np.atleast_1d(loss))


def random_start_delta(spec: AttackSpec, rng: np.random.Generator, shape: tuple,
                       eps: np.ndarray | float | None = None) -> np.ndarray:
    """Uniform start in the eps-ball as a unit draw scaled by eps, so runs
    that differ only in eps share the same underlying randomness."""
    unit = rng.uniform(-1.0, 1.0, size=shape)
    e = spec.eps if eps is None else eps
    return unit * (np.asarray(e)[..., None] if np.ndim(e) else e)


def fgsm(
    net: Network,
    x: np.ndarray,
    y_true: int,
    spec: AttackSpec,
    *,
    target: np.ndarray | None = None,
    lo: np.ndarray | None = None,
    hi: np.ndarray | None = None,
) -> AdvExample:
    """Single signed-gradient step of size eps."""
    one_step = replace(spec, steps=1, step_size=max(spec.eps, MIN_TRAIN_STEP),
                       random_start=False)
    t = None if target is None else np.atleast_2d(target)
    res = run_pgd(net, x, np.asarray([y_true]), one_step, targets=t, lo=lo, hi=hi)
    return res.example(0)


def pgd(
    net: Network,
    x: np.ndarray,
    y_true: int,
    spec: AttackSpec,
    rng: np.random.Generator | None = None,
    *,
    target: np.ndarray | None = None,
    lo: np.ndarray | None = None,
    hi: np.ndarray | None = None,
    record_iterates: list | None = None,
) -> AdvExample:
    """Multi-step PGD on one sample. ``rng`` is required iff random_start."""
    x = np.asarray(x, dtype=float)
    start = None
    if spec.random_start and spec.eps > 0:
        if rng is None:
            raise ConfigurationError("random_start attack needs an rng")
        start = random_start_delta(spec, rng, (1, x.shape[-1]))
    t = None if target is None else np.atleast_2d(target)
    res = run_pgd(net, x, np.asarray([y_true]), spec, targets=t, start=start,
                  lo=lo, hi=hi, record_iterates=record_iterates)
    return res.example(0)


def attack_success(net: Network, x_adv: np.ndarray, y_true: int) -> bool:
    """True iff the model's argmax prediction differs from the true label."""
    return int(predict(net, x_adv)) != int(y_true)


def attack_dataset(
    net: Network,
    dataset: Dataset,
    spec: AttackSpec,
    seed: int,
    purpose: str | None = None,
) -> BatchAttackResult:
    """Attack every sample with an id-keyed random start (order-independent).

    The default start stream depends only on (seed, loss kind, sample id),
    so every evaluation path sharing a seed and attack geometry sees the
    same starts: a self-transfer reproduces the white-box number exactly.
    """
    if purpose is None:
        purpose = f"eval-{spec.loss_kind}"
    start = None
    if spec.random_start and spec.eps > 0:
        unit = per_sample_uniform(seed, purpose, dataset.ids, dataset.dim)
        start = unit * spec.eps
    return run_pgd(net, dataset.x, dataset.labels, spec, start=start,
                   lo=dataset.domain_lo, hi=dataset.domain_hi)


def transfer_attack(
    source_net: Network,
    target_net: Network,
    dataset: Dataset,
    spec: AttackSpec,
    seed: int,
) -> float:
    """Craft adversarial examples against ``source_net``; report the fraction
    still classified correctly by ``target_net``."""
    if (source_net.input_dim != target_net.input_dim
            or source_net.num_classes != target_net.num_classes):
        raise ConfigurationError("source and target networks disagree on input dim or K")
    res = attack_dataset(source_net, dataset, spec, seed)
    preds = predict(target_net, res.x_adv)
    return float(np.mean(preds == dataset.labels))
