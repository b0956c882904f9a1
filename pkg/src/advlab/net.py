"""Dense feedforward classifier with exact analytic gradients.

Everything is float64 and single-threaded numpy, which keeps runs bitwise
reproducible and makes finite-difference gradient checks meaningful. The
forward pass caches per-layer activations; the backward pass produces exact
gradients of the selected loss with respect to every parameter and the input.
A network is never mutated: SGD steps return a new ``Network``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ConfigurationError, DivergenceError
from .streams import stream

ACTIVATIONS = ("relu", "identity")


@dataclass
class Network:
    """Stack of dense layers; the final layer is identity and emits logits.

    ``weights[i]`` has shape (out_i, in_i) with in_0 the input dimension and
    out_{last} the number of classes.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations) >= 1):
            raise ConfigurationError("need matching, nonempty layer lists")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ConfigurationError(f"layer {i}: weight/bias shapes {w.shape}/{b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {i}: input dim {w.shape[1]} does not chain from "
                    f"previous output dim {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigurationError(f"layer {i}: non-finite parameters")
        if self.activations[-1] != "identity":
            raise ConfigurationError("final layer must be identity (logits)")
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 output classes")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def arch(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Network":
        return Network(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class ForwardTrace:
    """Cached forward pass: logits, softmax probabilities, per-layer activations.

    ``pre[i]``/``post[i]`` are the pre-/post-activation values of layer i;
    ``post[-1]`` is the logits. Shapes carry a leading batch axis iff the
    input did.
    """

    x: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    logits: np.ndarray
    probabilities: np.ndarray


@dataclass
class GradientBundle:
    """Parameter gradients mirroring a Network's shape, plus the input gradient."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray | None = None

    def all_finite(self) -> bool:
        arrays = list(self.weight_grads) + list(self.bias_grads)
        if self.input_grad is not None:
            arrays.append(self.input_grad)
        return all(np.isfinite(a).all() for a in arrays)


@dataclass
class MomentumState:
    """Velocity buffers for momentum SGD, one per parameter array."""

    weight_vel: list[np.ndarray] = field(default_factory=list)
    bias_vel: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, net: Network) -> "MomentumState":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )


def init_network(
    arch: list[int],
    seed: int,
    num_classes: int | None = None,
    hidden_activation: str = "relu",
) -> Network:
    """Build a network with Glorot-uniform weights and zero biases.

    ``arch`` lists the input dimension followed by every layer's output size;
    the last entry is the number of classes. Layer i's weights are drawn
    uniformly from +-sqrt(6/(fan_in+fan_out)) on the stream
    ``(seed, "init", i)``, so the same (arch, seed) always yields the same
    parameters.
    """
    if len(arch) < 2:
        raise ConfigurationError(f"arch {arch} has no layers (need input dim plus >= 1 layer)")
    if num_classes is not None and arch[-1] != num_classes:
        raise ConfigurationError(
            f"final layer size {arch[-1]} does not match num_classes {num_classes}"
        )
    weights, biases, acts = [], [], []
    n_layers = len(arch) - 1
    for i in range(n_layers):
        fan_in, fan_out = arch[i], arch[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = stream(seed, "init", i)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("identity" if i == n_layers - 1 else hidden_activation)
    return Network(weights, biases, acts)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    """Run the network on one sample (d,) or a batch (B, d)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ConfigurationError(
            f"input dim {x.shape[-1]} does not match network input dim {net.input_dim}"
        )
    pre, post = [], []
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
        post.append(a)
    logits = post[-1]
    return ForwardTrace(x=x, pre=pre, post=post, logits=logits, probabilities=softmax(logits))


def predict(net: Network, x: np.ndarray) -> np.ndarray | int:
    """Predicted class indices (argmax of logits, lowest index on ties)."""
    logits = forward(net, x).logits
    pred = np.argmax(logits, axis=-1)
    return int(pred) if np.ndim(pred) == 0 else pred


def accuracy(net: Network, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(net, x) == labels))


def backprop_logits(net: Network, trace: ForwardTrace, logit_grad: np.ndarray,
                    want_param_grads: bool = True) -> GradientBundle:
    """Propagate an arbitrary upstream logit gradient down to parameters and input.

    For batched traces, parameter gradients are summed over the batch while the
    input gradient stays per-sample (one row per sample's own upstream row).
    """
    single = trace.x.ndim == 1
    h = logit_grad[None, :] if single else logit_grad
    xs = trace.x[None, :] if single else trace.x
    n = net.num_layers
    weight_grads: list[np.ndarray | None] = [None] * n
    bias_grads: list[np.ndarray | None] = [None] * n
    for i in range(n - 1, -1, -1):
        if net.activations[i] == "relu":
            zpre = trace.pre[i][None, :] if single else trace.pre[i]
            h = h * (zpre > 0.0)
        if want_param_grads:
            a_prev = xs if i == 0 else (trace.post[i - 1][None, :] if single else trace.post[i - 1])
            weight_grads[i] = h.T @ a_prev
            bias_grads[i] = h.sum(axis=0)
        h = h @ net.weights[i]
    input_grad = h[0] if single else h
    if not want_param_grads:
        return GradientBundle([], [], input_grad)
    return GradientBundle(weight_grads, bias_grads, input_grad)


def backward(
    net: Network,
    trace: ForwardTrace,
    target: np.ndarray,
    loss_kind: str = "ce",
    *,
    y0: np.ndarray | int | None = None,
    kappa: float = 0.0,
) -> GradientBundle:
    """Exact gradients of the selected loss w.r.t. all parameters and the input.

    ``target`` is the simplex target (reference distribution for "kl"); ``y0``
    names the true class for the margin term ("cw_margin"/"mix"), defaulting
    to argmax(target). For a batched trace the parameter gradients are those
    of the batch-mean loss, while ``input_grad`` holds each sample's own-loss
    gradient (the scale other samples contribute to a mean is irrelevant to
    per-sample input gradients, and attacks want them unscaled).
    """
    dz = losses.logit_gradient(trace.logits, trace.probabilities, target, loss_kind,
                               y0=y0, kappa=kappa)
    bundle = backprop_logits(net, trace, dz)
    if trace.x.ndim == 2:
        batch = trace.x.shape[0]
        bundle.weight_grads = [g / batch for g in bundle.weight_grads]
        bundle.bias_grads = [g / batch for g in bundle.bias_grads]
    return bundle


def input_gradient(
    net: Network,
    trace: ForwardTrace,
    target: np.ndarray,
    loss_kind: str = "ce",
    *,
    y0: np.ndarray | int | None = None,
    kappa: float = 0.0,
) -> np.ndarray:
    """Per-sample gradient of the loss w.r.t. the input only (attack inner loop)."""
    dz = losses.logit_gradient(trace.logits, trace.probabilities, target, loss_kind,
                               y0=y0, kappa=kappa)
    return backprop_logits(net, trace, dz, want_param_grads=False).input_grad


def sgd_step(
    net: Network,
    grads: GradientBundle,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    state: MomentumState | None = None,
) -> tuple[Network, MomentumState]:
    """One momentum-SGD update: v <- momentum*v + (g + wd*theta); theta <- theta - lr*v.

    Returns a new Network and the updated velocity state. Weight decay applies
    to weights and biases alike.
    """
    if lr < 0 or not (0 <= momentum < 1) or weight_decay < 0:
        raise ConfigurationError("lr/momentum/weight_decay out of range")
    if not grads.all_finite():
        raise DivergenceError("non-finite gradient in SGD step")
    if state is None:
        state = MomentumState.zeros_like(net)
    new_w, new_b = [], []
    for w, g, v in zip(net.weights, grads.weight_grads, state.weight_vel):
        v[...] = momentum * v + (g + weight_decay * w)
        new_w.append(w - lr * v)
    for b, g, v in zip(net.biases, grads.bias_grads, state.bias_vel):
        v[...] = momentum * v + (g + weight_decay * b)
        new_b.append(b - lr * v)
    return Network(new_w, new_b, list(net.activations)), state


def grad_check(
    net: Network,
    x: np.ndarray,
    target: np.ndarray,
    loss_kind: str = "ce",
    *,
    y0: int | None = None,
    kappa: float = 0.0,
    fd_step: float = 1e-5,
    with_location: bool = False,
) -> float | tuple[float, str]:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter entry and every input coordinate:
    ``|analytic - fd| / max(|analytic|, |fd|, 1e-12)``. Callers are expected
    to pick differentiable points (away from ReLU kinks and margin ties);
    there is no tie detection here. With ``with_location`` the return is
    ``(worst, where)`` naming the offending coordinate.
    """
    x = np.asarray(x, dtype=float)

    def loss_at(candidate: Network, xv: np.ndarray) -> float:
        tr = forward(candidate, xv)
        return float(losses.loss_values(tr.logits, tr.probabilities, target, loss_kind,
                                        y0=y0, kappa=kappa))

    analytic = backward(net, forward(net, x), target, loss_kind, y0=y0, kappa=kappa)
    worst, where = 0.0, "none"

    def rel_err(a: float, fd: float) -> float:
        return abs(a - fd) / max(abs(a), abs(fd), 1e-12)

    probe = net.copy()
    for li in range(net.num_layers):
        for kind, grads in (("w", analytic.weight_grads), ("b", analytic.bias_grads)):
            arr = probe.weights[li] if kind == "w" else probe.biases[li]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + fd_step
                hi = loss_at(probe, x)
                arr[idx] = orig - fd_step
                lo = loss_at(probe, x)
                arr[idx] = orig
                err = rel_err(grads[li][idx], (hi - lo) / (2 * fd_step))
                if err > worst:
                    worst, where = err, f"layer {li} {kind}{list(idx)}"

    for j in range(x.shape[0]):
        xp = x.copy()
        xp[j] += fd_step
        hi = loss_at(net, xp)
        xp[j] = x[j] - fd_step
        lo = loss_at(net, xp)
        err = rel_err(analytic.input_grad[j], (hi - lo) / (2 * fd_step))
        if err > worst:
            worst, where = err, f"input[{j}]"

    return (worst, where) if with_location else worst
