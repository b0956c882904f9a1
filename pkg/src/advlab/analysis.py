"""Evaluation and theory-facing measurements.

Robust-accuracy sweeps over a budget grid, loss-landscape grids along the
gradient-sign and a Rademacher direction, a weight-norm product as the model
complexity proxy, bilateral-margin bracketing, and the computable factors of
the norm-based generalization bound.

Everything here is read-only on the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, attack_dataset
from .data import Dataset
from .errors import ConfigurationError
from .losses import cross_entropy
from .net import Network, accuracy, backprop_logits, forward
from .streams import stream

EVAL_STEPS = 20


# ------------------------------------------------------------------ robust curve


@dataclass(frozen=True)
class CurveSpec:
    """Evaluation geometry for the sweep: both attacks run the standard
    20-step random-start PGD with step size eps/5; the margin attack reports
    accuracy under the margin objective floored at the given kappa."""

    steps: int = EVAL_STEPS
    kappa: float = 0.0
    seed: int = 0


@dataclass
class RobustCurve:
    eps_grid: list[float]
    pgd_acc: list[float]
    cw_acc: list[float]
    clean_acc: float


def robust_accuracy(net: Network, dataset: Dataset, spec: AttackSpec,
                    seed: int) -> float:
    """Fraction of samples still classified correctly after the attack."""
    if spec.eps == 0:
        return accuracy(net, dataset.x, dataset.labels)
    res = attack_dataset(net, dataset, spec, seed)
    return float(1.0 - res.success.mean())


def robust_curve(
    net: Network,
    dataset: Dataset,
    eps_grid: list[float],
    eval_spec: CurveSpec = CurveSpec(),
) -> RobustCurve:
    """Robust accuracy under the cross-entropy PGD and the margin-loss PGD at
    every budget in the grid.

    Random starts are unit draws keyed by (seed, attack kind, sample id)
    scaled by eps, so start points are nested across the grid. eps=0
    short-circuits to the clean accuracy, bitwise, in both columns.
    """
    grid = [float(e) for e in eps_grid]
    if not grid or grid[0] != 0.0:
        raise ConfigurationError("eps grid must start at 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError("eps grid must be strictly ascending")
    clean = accuracy(net, dataset.x, dataset.labels)
    pgd_acc, cw_acc = [], []
    for eps in grid:
        if eps == 0.0:
            pgd_acc.append(clean)
            cw_acc.append(clean)
            continue
        pgd_spec = AttackSpec.for_eval(eps, eval_spec.steps, "ce")
        cw_spec = AttackSpec.for_eval(eps, eval_spec.steps, "cw_margin",
                                      kappa=eval_spec.kappa)
        pgd_acc.append(robust_accuracy(net, dataset, pgd_spec, eval_spec.seed))
        cw_acc.append(robust_accuracy(net, dataset, cw_spec, eval_spec.seed))
    return RobustCurve(eps_grid=grid, pgd_acc=pgd_acc, cw_acc=cw_acc, clean_acc=clean)


# ------------------------------------------------------------------ landscape


@dataclass
class LandscapeGrid:
    u_magnitudes: np.ndarray
    v_magnitudes: np.ndarray
    loss: np.ndarray
    u: np.ndarray
    v: np.ndarray
    seed: int
    clean_loss: float


def landscape_grid(
    net: Network,
    x: np.ndarray,
    y: int,
    extent: float,
    grid_size: int,
    seed: int,
) -> LandscapeGrid:
    """Cross-entropy loss over x + a*u + b*v.

    u is the sign of the input gradient of the clean cross-entropy, v is a
    seeded Rademacher draw. grid_size must be odd so the center cell is the
    unperturbed point; the center is assigned the directly computed clean
    loss, so it matches bitwise by construction. loss[i, j] is the loss at
    a = u_magnitudes[i], b = v_magnitudes[j].
    """
    if grid_size < 1 or grid_size % 2 == 0:
        raise ConfigurationError("grid_size must be odd and positive")
    if extent <= 0:
        raise ConfigurationError("extent must be positive")
    x = np.asarray(x, dtype=float)
    onehot = np.eye(net.num_classes)[int(y)]
    tr = forward(net, x)
    clean_loss = float(cross_entropy(tr.probabilities, onehot))
    dz = tr.probabilities - onehot
    grad = backprop_logits(net, tr, dz, want_param_grads=False).input_grad
    u = np.sign(grad)
    v = stream(seed, "landscape-v").choice(np.array([-1.0, 1.0]), size=x.shape)

    half = grid_size // 2
    mags = (np.arange(grid_size) - half) * (extent / max(half, 1))
    loss = np.empty((grid_size, grid_size))
    for i, a in enumerate(mags):
        pts = x[None, :] + a * u[None, :] + mags[:, None] * v[None, :]
        probs = forward(net, pts).probabilities
        loss[i] = [cross_entropy(p, onehot) for p in probs]
    loss[half, half] = clean_loss
    if not np.isfinite(loss).all():
        raise ConfigurationError("non-finite landscape loss")
    return LandscapeGrid(u_magnitudes=mags, v_magnitudes=mags.copy(), loss=loss,
                         u=u, v=v, seed=seed, clean_loss=clean_loss)


# ------------------------------------------------------------------ complexity


def complexity_proxy(net: Network) -> float:
    """Product over layers of the Frobenius norms of the weight matrices."""
    prod = 1.0
    for w in net.weights:
        prod *= float(np.linalg.norm(w))
    return prod


# ------------------------------------------------------------------ bilateral margin


@dataclass
class MarginEstimate:
    """Bracket on the bilateral margin: the smallest joint-perturbation norm
    that flips the prediction lies in [certified_lower, attack_upper].
    ``m_F`` is reported as the upper end (a found flip is a proof; the lower
    end is certified only up to the search budget). ``capped`` marks a sample
    where no flip was found below the search cap."""

    sample_id: int
    m_F: float
    certified_lower: float
    attack_upper: float
    capped: bool = False


@dataclass(frozen=True)
class MarginSearchBudget:
    pga_restarts: int = 4
    pga_steps: int = 60
    random_points: int = 2000


def _flips(net: Network, x: np.ndarray, y: int, delta_i: np.ndarray, r: float) -> bool:
    """Does some joint perturbation with this input part and norm <= r flip
    the prediction?

    For fixed delta_i the best output perturbation puts the whole leftover
    budget on (e_j - e_y)/sqrt(2) for the runner-up class j; the predicate
    builds that perturbed output vector explicitly and tests its argmax.
    """
    x_norm = float(np.linalg.norm(x))
    x_tilde = x + delta_i * x_norm
    t_norm = float(np.linalg.norm(x_tilde))
    probs = forward(net, x_tilde).probabilities
    leftover = np.sqrt(max(r * r - float(delta_i @ delta_i), 0.0))
    masked = probs.copy()
    masked[y] = -np.inf
    j = int(np.argmax(masked))
    h = probs.copy()
    h[j] += t_norm * leftover / np.sqrt(2.0)
    h[y] -= t_norm * leftover / np.sqrt(2.0)
    return int(np.argmax(h)) != int(y)


def _margin_grad_delta_i(net: Network, x: np.ndarray, y: int, delta_i: np.ndarray,
                         r: float) -> np.ndarray:
    """Ascent direction of the reduced flip margin
    max_j (p_j - p_y)(x + delta_i ||x||) + sqrt(2) ||x_tilde|| sqrt(r^2 - ||delta_i||^2)
    as a function of delta_i alone."""
    x_norm = float(np.linalg.norm(x))
    x_tilde = x + delta_i * x_norm
    t_norm = max(float(np.linalg.norm(x_tilde)), 1e-12)
    tr = forward(net, x_tilde)
    p = tr.probabilities
    masked = p.copy()
    masked[y] = -np.inf
    j = int(np.argmax(masked))
    eye = np.eye(len(p))
    dz = p[j] * (eye[j] - p) - p[y] * (eye[y] - p)
    dp_dxt = backprop_logits(net, tr, dz, want_param_grads=False).input_grad
    s2 = float(delta_i @ delta_i)
    leftover = np.sqrt(max(r * r - s2, 0.0))
    grad = x_norm * dp_dxt
    grad += np.sqrt(2.0) * leftover * x_norm * x_tilde / t_norm
    if leftover > 1e-12:
        grad -= np.sqrt(2.0) * t_norm * delta_i / leftover
    return grad


def _feasible_at(net: Network, x: np.ndarray, y: int, r: float, d: int,
                 rng: np.random.Generator, budget: MarginSearchBudget) -> bool:
    """Can some joint perturbation of norm <= r flip the prediction?

    Tries the output-only candidate, projected gradient ascent on the
    reduced margin from several starts, and a batched random sweep over the
    input part (the output part is optimal in closed form). A True answer
    always comes with an explicit flip witness.
    """
    if r <= 0:
        return False
    if _flips(net, x, y, np.zeros(d), r):
        return True
    for restart in range(budget.pga_restarts):
        if restart == 0:
            di = np.zeros(d)
        else:
            di = rng.normal(size=d)
            di *= (r * rng.random() ** (1.0 / d)) / max(np.linalg.norm(di), 1e-12)
        for _ in range(budget.pga_steps):
            g = _margin_grad_delta_i(net, x, y, di, r)
            gn = float(np.linalg.norm(g))
            if gn < 1e-14:
                break
            di = di + (r / 10.0) * g / gn
            nrm = float(np.linalg.norm(di))
            if nrm > r:
                di *= r / nrm
        if _flips(net, x, y, di, r):
            return True
    n = budget.random_points
    dirs = rng.normal(size=(n, d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    radii = r * rng.random(n) ** (1.0 / d)
    dis = dirs * radii[:, None]
    x_norm = float(np.linalg.norm(x))
    x_tilde = x[None, :] + dis * x_norm
    t_norms = np.linalg.norm(x_tilde, axis=1)
    probs = forward(net, x_tilde).probabilities
    leftover = np.sqrt(np.maximum(r * r - radii**2, 0.0))
    masked = probs.copy()
    masked[:, y] = -np.inf
    j = np.argmax(masked, axis=1)
    rows = np.arange(n)
    h = probs.copy()
    h[rows, j] += t_norms * leftover / np.sqrt(2.0)
    h[rows, y] -= t_norms * leftover / np.sqrt(2.0)
    return bool(np.any(np.argmax(h, axis=1) != y))


def estimate_bilateral_margin(
    net: Network,
    x: np.ndarray,
    y: int,
    tol: float = 1e-3,
    sample_id: int = 0,
    seed: int = 0,
    cap: float = 10.0,
    budget: MarginSearchBudget = MarginSearchBudget(),
) -> MarginEstimate:
    """Bracket the smallest joint (input, output) perturbation norm under
    which the classifier errs on (x, y).

    The input part perturbs x relatively (scaled by ||x||, hence the x != 0
    precondition) and the output part shifts the probability vector scaled
    by the perturbed input's norm; the margin is the Euclidean norm of the
    concatenated pair. Bisection on the radius: a found flip moves the upper
    end down, a fruitless budgeted search moves the certified lower end up,
    until the bracket is narrower than ``tol``. A misclassified point has
    margin 0. The initial upper end is the closed-form output-only flip
    radius (runner-up probability gap) / (sqrt(2) ||x||) plus tol, which is
    feasible by construction.
    """
    x = np.asarray(x, dtype=float)
    x_norm = float(np.linalg.norm(x))
    if x_norm == 0.0:
        raise ConfigurationError("bilateral margin is degenerate at x = 0")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    probs = forward(net, x).probabilities
    if int(np.argmax(probs)) != int(y):
        return MarginEstimate(sample_id, 0.0, 0.0, 0.0)

    masked = probs.copy()
    masked[y] = -np.inf
    gap = float(probs[y] - masked.max())
    hi = gap / (np.sqrt(2.0) * x_norm) + tol
    d = x.shape[0]
    rng = stream(seed, "margin", sample_id)

    if hi > cap:
        if not _feasible_at(net, x, y, cap, d, rng, budget):
            return MarginEstimate(sample_id, float(cap), float(cap), float(cap),
                                  capped=True)
        hi = cap

    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _feasible_at(net, x, y, mid, d, rng, budget):
            hi = mid
        else:
            lo = mid
    return MarginEstimate(sample_id, float(hi), float(lo), float(hi), capped=False)


# ------------------------------------------------------------------ bound terms


@dataclass
class BoundReport:
    """The computable factors of the norm-based generalization bound: the
    weight-norm complexity proxy and the mean inverse bilateral margin (the
    (1/n) sum of 1/m_F that sits under the bound's square root). Zero-margin
    samples are excluded and counted, since the bound presumes zero training
    error; n is the count actually averaged."""

    complexity: float
    mean_inverse_sqrt_margin: float
    n: int
    excluded: int
    margins: list[MarginEstimate] = field(default_factory=list)


def bound_terms(
    net: Network,
    dataset: Dataset,
    tol: float = 1e-3,
    seed: int = 0,
    limit: int | None = None,
    budget: MarginSearchBudget = MarginSearchBudget(),
) -> BoundReport:
    """Estimate every sample's bilateral margin and report the bound factors.

    ``limit`` caps how many samples are measured (taken in dataset order);
    the mean is over measured samples with nonzero margin.
    """
    n_measured = dataset.n if limit is None else min(limit, dataset.n)
    estimates, inv, excluded = [], [], 0
    for i in range(n_measured):
        s = dataset.sample(i)
        est = estimate_bilateral_margin(net, s.x, s.y, tol=tol,
                                        sample_id=s.id, seed=seed, budget=budget)
        estimates.append(est)
        if est.m_F <= 0.0:
            excluded += 1
        else:
            inv.append(1.0 / est.m_F)
    mean_inv = float(np.mean(inv)) if inv else float("nan")
    return BoundReport(complexity=complexity_proxy(net),
                       mean_inverse_sqrt_margin=mean_inv,
                       n=len(inv), excluded=excluded, margins=estimates)
