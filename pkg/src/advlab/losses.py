"""Training losses and the adaptive label-smoothing machinery.

All functions work on float64 numpy arrays. Per-sample functions accept an
optional leading batch axis and return per-sample values; nothing here is
reduced over a batch. Logarithms are floored at ``LOG_FLOOR`` so saturated
softmax outputs cannot produce -inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

LOG_FLOOR = 1e-30


def _flog(a: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(a, LOG_FLOOR))


def sample_dirichlet_uniform(num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a point uniformly from the (K-1)-simplex.

    Normalized standard-exponential draws, i.e. the Dirichlet distribution
    with all-ones concentration.
    """
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    e = rng.exponential(1.0, size=num_classes)
    return e / e.sum()


@dataclass(frozen=True)
class SmoothedLabel:
    """A probability-simplex training target for one sample.

    ``dist = (1 - c*eps_used) * onehot(source_class) + c*eps_used * u`` with
    the mixing weight clamped to 1. ``saturated`` records that the clamp fired.
    """

    dist: np.ndarray
    source_class: int
    eps_used: float
    c: float
    u: np.ndarray
    saturated: bool = False


def smooth_label(
    y: int, num_classes: int, eps_i: float, c: float, u: np.ndarray
) -> SmoothedLabel:
    """Mix the one-hot label for ``y`` with the simplex draw ``u``.

    The mixing weight is ``c * eps_i``; values above 1 are clamped to 1 (the
    result is then just ``u``) and flagged via ``saturated``.
    """
    if eps_i < 0 or c < 0:
        raise ConfigurationError("eps_i and c must be nonnegative")
    if not (0 <= y < num_classes):
        raise ConfigurationError(f"class {y} out of range for K={num_classes}")
    u = np.asarray(u, dtype=float)
    if u.shape != (num_classes,) or np.any(u < 0) or abs(u.sum() - 1.0) > 1e-9:
        raise ConfigurationError("u must be a length-K point on the simplex")
    alpha = c * eps_i
    saturated = alpha > 1.0
    if saturated:
        alpha = 1.0
    dist = smooth_dist(np.asarray([y]), num_classes, np.asarray([alpha]), np.asarray(u)[None, :])[0]
    return SmoothedLabel(
        dist=dist, source_class=int(y), eps_used=float(eps_i), c=float(c),
        u=np.asarray(u, dtype=float), saturated=bool(saturated),
    )


def smooth_dist(
    ys: np.ndarray, num_classes: int, alphas: np.ndarray, us: np.ndarray
) -> np.ndarray:
    """Vectorized form of :func:`smooth_label`: (B,) labels -> (B, K) targets.

    ``alphas`` must already be clamped to [0, 1]. With alpha exactly 0 the
    result is the exact one-hot row (bitwise), which is what makes c=0 reduce
    to plain one-hot adversarial training.
    """
    onehot = np.zeros((len(ys), num_classes))
    onehot[np.arange(len(ys)), ys] = 1.0
    a = np.asarray(alphas, dtype=float)[:, None]
    return (1.0 - a) * onehot + a * us


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> np.ndarray | float:
    """-sum(target * log probs), with probs floored at LOG_FLOOR inside the log."""
    probs = np.asarray(probs, dtype=float)
    target = np.asarray(target, dtype=float)
    val = -(target * _flog(probs)).sum(axis=-1)
    return float(val) if val.ndim == 0 else val


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray | float:
    """sum(p * log(p/q)); nonnegative, zero iff p == q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    val = (p * (_flog(p) - _flog(q))).sum(axis=-1)
    return float(val) if val.ndim == 0 else val


def cw_margin_loss(
    logits: np.ndarray, y0: int | np.ndarray, kappa: float
) -> np.ndarray | float:
    """max(max_{i != y0} z_i - z_{y0}, -kappa).

    Positive iff some other class outscores the true one; floored at -kappa
    so deeply-correct points stop contributing. Ties among the non-true
    logits resolve to the lowest index.
    """
    logits = np.asarray(logits, dtype=float)
    if logits.shape[-1] < 2:
        raise ConfigurationError("margin loss needs at least 2 classes")
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(y0, dtype=int))
    if y.shape[0] == 1 and z.shape[0] > 1:
        y = np.broadcast_to(y, (z.shape[0],))
    rows = np.arange(z.shape[0])
    masked = z.copy()
    masked[rows, y] = -np.inf
    best_other = masked.max(axis=1)
    val = np.maximum(best_other - z[rows, y], -kappa)
    return float(val[0]) if single else val


def mixed_loss(trace, smoothed: SmoothedLabel, y0: int, kappa: float) -> float:
    """Cross-entropy against the smoothed target plus the margin term for y0."""
    ce = cross_entropy(trace.probabilities, smoothed.dist)
    return float(ce + cw_margin_loss(trace.logits, y0, kappa))


VALID_LOSS_KINDS = ("ce", "kl", "cw_margin", "mix")


def loss_values(
    logits: np.ndarray,
    probs: np.ndarray,
    target: np.ndarray,
    loss_kind: str,
    y0: np.ndarray | int | None = None,
    kappa: float = 0.0,
) -> np.ndarray | float:
    """Per-sample loss values for any supported loss kind.

    ``target`` is the simplex target (for "kl" it is the reference
    distribution q). ``y0`` is the true class for the margin term; when
    omitted it defaults to argmax(target).
    """
    if loss_kind == "ce":
        return cross_entropy(probs, target)
    if loss_kind == "kl":
        return kl_divergence(probs, target)
    if y0 is None:
        y0 = np.argmax(np.asarray(target), axis=-1)
    if loss_kind == "cw_margin":
        return cw_margin_loss(logits, y0, kappa)
    if loss_kind == "mix":
        ce = cross_entropy(probs, target)
        return ce + cw_margin_loss(logits, y0, kappa)
    raise ConfigurationError(f"unknown loss kind {loss_kind!r}")


def logit_gradient(
    logits: np.ndarray,
    probs: np.ndarray,
    target: np.ndarray,
    loss_kind: str,
    y0: np.ndarray | int | None = None,
    kappa: float = 0.0,
) -> np.ndarray:
    """Exact per-sample gradient of the selected loss w.r.t. the logits.

    Shapes mirror ``logits``; batched inputs give one gradient row per
    sample. Floors and the margin max use the same branch conventions as the
    forward losses, so this is the gradient of exactly what they compute.
    """
    logits = np.asarray(logits, dtype=float)
    probs = np.asarray(probs, dtype=float)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    p = probs[None, :] if single else probs
    t = np.asarray(target, dtype=float)
    if t.ndim == 1 and not single:
        t = np.broadcast_to(t, p.shape)
    if t.ndim == 1:
        t = t[None, :]

    if loss_kind in ("ce", "mix"):
        # d/dp of -sum t*log(max(p, floor)), then the softmax chain.
        gp = np.where(p > LOG_FLOOR, -t / np.maximum(p, LOG_FLOOR), 0.0)
        grad = p * (gp - (gp * p).sum(axis=1, keepdims=True))
    elif loss_kind == "kl":
        gp = _flog(p) - _flog(t) + np.where(p > LOG_FLOOR, 1.0, 0.0)
        grad = p * (gp - (gp * p).sum(axis=1, keepdims=True))
    elif loss_kind == "cw_margin":
        grad = np.zeros_like(z)
    else:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")

    if loss_kind in ("cw_margin", "mix"):
        if y0 is None:
            y = np.argmax(t, axis=1)
        else:
            y = np.atleast_1d(np.asarray(y0, dtype=int))
            if y.shape[0] == 1 and z.shape[0] > 1:
                y = np.broadcast_to(y, (z.shape[0],))
        rows = np.arange(z.shape[0])
        masked = z.copy()
        masked[rows, y] = -np.inf
        j_star = masked.argmax(axis=1)
        active = (masked[rows, j_star] - z[rows, y]) >= -kappa
        mgrad = np.zeros_like(z)
        mgrad[rows, j_star] = np.where(active, 1.0, 0.0)
        mgrad[rows, y] -= np.where(active, 1.0, 0.0)
        grad = grad + mgrad

    return grad[0] if single else grad
