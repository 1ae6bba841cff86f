"""
Dense feedforward networks with exact backpropagation.

Serves the forward models, the inverse models and the Q-networks. Hidden
layers use the rectifier; the output head is either linear or a
probability simplex (normalized exponentials, optionally split into several
independent groups).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .models import DimensionError

logger = logging.getLogger(__name__)

MSE = "mse"
CCE = "cce"
LOSS_KINDS = (MSE, CCE)

LINEAR = "linear"
SIMPLEX = "simplex"

LOG_CLAMP = 1e-12
FD_STEP = 1e-5
SIMPLEX_TOL = 1e-6
FORMAT_HEADER = "# gatlab densenet v1"


class DenseNet:
    """
    Fully connected network.

    Weights are stored as (fan_in, fan_out) matrices so a batch of row
    vectors X maps to X @ W + b.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        head: str = LINEAR,
        simplex_groups: int = 1,
        rng: Optional[np.random.Generator] = None,
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"layer_sizes must hold at least two positive sizes, got {sizes}")
        if head not in (LINEAR, SIMPLEX):
            raise ValueError(f"Unknown output head: {head}")
        if head == SIMPLEX and sizes[-1] % simplex_groups != 0:
            raise ValueError(
                f"Output size {sizes[-1]} is not divisible into {simplex_groups} simplex groups"
            )
        self.layer_sizes = sizes
        self.head = head
        self.simplex_groups = simplex_groups if head == SIMPLEX else 1
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []

        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        params: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy_from(self, other: 'DenseNet') -> None:
        if other.layer_sizes != self.layer_sizes:
            raise DimensionError("layer sizes", len(self.layer_sizes), len(other.layer_sizes))
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def clone(self) -> 'DenseNet':
        twin = DenseNet(self.layer_sizes, head=self.head, simplex_groups=self.simplex_groups)
        twin.copy_from(self)
        return twin

    # ------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------

    def _apply_head(self, z: np.ndarray) -> np.ndarray:
        if self.head == LINEAR:
            return z
        batch = z.shape[0]
        grouped = z.reshape(batch, self.simplex_groups, -1)
        shifted = grouped - grouped.max(axis=2, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=2, keepdims=True)
        return probs.reshape(batch, -1)

    def _check_input(self, X: np.ndarray) -> None:
        if X.shape[-1] != self.input_size:
            raise DimensionError("network input", self.input_size, X.shape[-1])

    def _forward_batch(self, X: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray], np.ndarray]:
        activations = [X]
        pre_activations = []
        a = X
        last = len(self.weights) - 1
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if index == last:
                return activations, pre_activations, self._apply_head(z)
            pre_activations.append(z)
            a = np.maximum(z, 0.0)
            activations.append(a)
        raise AssertionError("unreachable")

    def forward(self, x: np.ndarray) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        self._check_input(X)
        if X.ndim == 1:
            return self._forward_batch(X[None, :])[2][0]
        return self._forward_batch(X)[2]

    def gradients(self, X: np.ndarray, T: np.ndarray, kind: str) -> Tuple[float, List[np.ndarray]]:
        """
        Batch mean loss and its exact gradient for every parameter
        (ordered as `parameters()`).
        """
        activations, pre_activations, Y = self._forward_batch(X)
        batch = X.shape[0]
        loss_value = float(np.mean([
            loss(kind, y, t, groups=self.simplex_groups) for y, t in zip(Y, T)
        ]))

        if kind == MSE:
            delta = 2.0 * (Y - T) / (batch * Y.shape[1])
        else:
            delta = (Y - T) / (batch * self.simplex_groups)

        grads: List[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for layer in range(len(self.weights) - 1, -1, -1):
            grads[2 * layer] = activations[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pre_activations[layer - 1] > 0)
        return loss_value, grads

    def __repr__(self) -> str:
        return f"DenseNet(layers={self.layer_sizes}, head='{self.head}', groups={self.simplex_groups})"


@dataclass
class OptimizerState:
    """Adaptive-moment optimizer state for one network."""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, learning_rate: float = 1e-3) -> 'OptimizerState':
        params = net.parameters()
        return cls(
            learning_rate=learning_rate,
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
        )

    def apply(self, net: DenseNet, grads: List[np.ndarray]) -> None:
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        for param, grad, m, v in zip(net.parameters(), grads, self.first_moments, self.second_moments):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


# ============================================================
# LOSSES
# ============================================================

def _check_one_hot(target: np.ndarray, groups: int) -> None:
    grouped = target.reshape(groups, -1)
    is_binary = np.all((grouped == 0.0) | (grouped == 1.0))
    if not is_binary or not np.all(grouped.sum(axis=1) == 1.0):
        raise ValueError("CCE target must be one-hot (per simplex group)")


def _check_simplex(prediction: np.ndarray, groups: int) -> None:
    grouped = prediction.reshape(groups, -1)
    if np.any(grouped < 0.0) or not np.allclose(grouped.sum(axis=1), 1.0, rtol=0.0, atol=SIMPLEX_TOL):
        raise ValueError("CCE prediction must lie on the probability simplex (per group)")


def loss(kind: str, prediction: np.ndarray, target: np.ndarray, groups: int = 1) -> float:
    """
    MSE = mean of squared componentwise differences.
    CCE = -log(prediction at the hot index), clamped at 1e-12, averaged
    over simplex groups.
    """
    p = np.asarray(prediction, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DimensionError("loss target", p.shape[-1], t.shape[-1])
    if kind == MSE:
        return float(np.mean((p - t) ** 2))
    if kind == CCE:
        _check_one_hot(t, groups)
        _check_simplex(p, groups)
        hot = p[t == 1.0]
        return float(np.mean(-np.log(np.maximum(hot, LOG_CLAMP))))
    raise ValueError(f"Unknown loss kind: {kind}")


def _as_batch(values, width: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[0] == 0:
        raise ValueError(f"Empty batch: no {what}")
    if arr.shape[1] != width:
        raise DimensionError(what, width, arr.shape[1])
    return arr


def forward_pass(net: DenseNet, input: np.ndarray) -> np.ndarray:
    return net.forward(input)


def train_step(
    net: DenseNet,
    opt: OptimizerState,
    inputs,
    targets,
    kind: str,
) -> float:
    """
    One adaptive-gradient step on a batch.

    Returns:
        Batch mean loss computed before the update

    Raises:
        ValueError: on an empty batch or CCE with a linear head
    """
    if kind == CCE and net.head != SIMPLEX:
        raise ValueError("CCE loss requires a probability-simplex head")
    X = _as_batch(inputs, net.input_size, "network input")
    T = _as_batch(targets, net.output_size, "training target")
    if X.shape[0] != T.shape[0]:
        raise DimensionError("target batch", X.shape[0], T.shape[0])
    loss_value, grads = net.gradients(X, T, kind)
    opt.apply(net, grads)
    return loss_value


def gradient_check(
    net: DenseNet,
    input: np.ndarray,
    target: np.ndarray,
    kind: str,
    step: float = FD_STEP,
) -> float:
    """
    Max relative error between analytic and central-difference gradients:
    |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|) over all parameters.
    """
    if kind == CCE and net.head != SIMPLEX:
        raise ValueError("CCE loss requires a probability-simplex head")
    X = _as_batch(input, net.input_size, "network input")
    T = _as_batch(target, net.output_size, "training target")
    _, analytic = net.gradients(X, T, kind)

    def batch_loss() -> float:
        Y = net._forward_batch(X)[2]
        return float(np.mean([loss(kind, y, t, groups=net.simplex_groups) for y, t in zip(Y, T)]))

    worst = 0.0
    for param, grad in zip(net.parameters(), analytic):
        flat = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = batch_loss()
            flat[i] = original - step
            minus = batch_loss()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            rel = abs(flat_grad[i] - numeric) / max(1e-8, abs(flat_grad[i]) + abs(numeric))
            worst = max(worst, rel)
    return worst


# ============================================================
# TEXT FORMAT
# ============================================================

def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def dump_net(net: DenseNet) -> str:
    """
    Plain-text weights:

        # gatlab densenet v1
        head <linear|simplex> <groups>
        layers <n0> <n1> ...
        W <layer> <rows> <cols>    followed by one line per row
        b <layer> <size>           followed by one line
    """
    lines = [
        FORMAT_HEADER,
        f"head {net.head} {net.simplex_groups}",
        "layers " + " ".join(str(s) for s in net.layer_sizes),
    ]
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W {index} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
        lines.append(f"b {index} {b.shape[0]}")
        lines.append(_fmt(b))
    return "\n".join(lines) + "\n"


def load_net(text: str) -> DenseNet:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError("Not a gatlab densenet dump")
    _, head, groups = lines[1].split()
    sizes = [int(s) for s in lines[2].split()[1:]]
    net = DenseNet(sizes, head=head, simplex_groups=int(groups))
    cursor = 3
    for index in range(len(sizes) - 1):
        tag, _, rows, cols = lines[cursor].split()
        rows, cols = int(rows), int(cols)
        cursor += 1
        w = np.array([[float(v) for v in lines[cursor + r].split()] for r in range(rows)])
        if w.shape != (rows, cols):
            raise DimensionError(f"layer {index} weights", rows * cols, w.size)
        cursor += rows
        cursor += 1  # "b <layer> <size>"
        b = np.array([float(v) for v in lines[cursor].split()])
        cursor += 1
        net.weights[index] = w
        net.biases[index] = b
    return net


def save_net(net: DenseNet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_net(net))


def read_net(path) -> DenseNet:
    with open(path, "r", encoding="utf-8") as f:
        return load_net(f.read())
