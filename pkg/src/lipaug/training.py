"""Desk-scale training with the margin-Jacobian regularizer.

The objective is cross-entropy plus, per example, a penalty on the squared
Frobenius norm of the margin's gradient w.r.t. each regularized hidden layer,
gated by a hard threshold.  The gate is frozen within a step; the penalty
gradient itself is exact (closed-form second derivatives of the activation).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import ACTIVATIONS, SmoothNet, forward_trace

__all__ = [
    "DatasetSpec",
    "Dataset",
    "make_dataset",
    "TrainConfig",
    "RunMetrics",
    "TrainingDiverged",
    "margin_jacobian",
    "reg_penalty",
    "train",
    "init_weights",
]


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "two_moons"
    n: int = 512
    noise: float = 0.15
    seed: int = 0


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train_x(self):
        return self.x[self.train_idx]

    @property
    def train_y(self):
        return self.y[self.train_idx]

    @property
    def test_x(self):
        return self.x[self.test_idx]

    @property
    def test_y(self):
        return self.y[self.test_idx]

    def train_pairs(self):
        return [(self.x[i], int(self.y[i])) for i in self.train_idx]

    def test_pairs(self):
        return [(self.x[i], int(self.y[i])) for i in self.test_idx]


def make_dataset(spec) -> Dataset:
    """Deterministic synthetic 2-d dataset with an 80/20 split by seeded shuffle."""
    if isinstance(spec, dict):
        spec = DatasetSpec(**spec)
    if spec.n < 2:
        raise ValueError(f"need n >= 2, got {spec.n}")
    rng = np.random.default_rng(spec.seed)
    n0 = (spec.n + 1) // 2
    n1 = spec.n - n0

    if spec.kind == "two_moons":
        # centered at the arcs' point-symmetry center: the nets here carry no
        # bias terms, so with an odd activation they compute odd functions,
        # and the centered moons are exactly point-symmetric
        a0 = np.linspace(0.0, math.pi, n0)
        a1 = np.linspace(0.0, math.pi, n1) if n1 else np.empty(0)
        x0 = np.stack([np.cos(a0) - 0.5, np.sin(a0) - 0.25], axis=1)
        x1 = np.stack([0.5 - np.cos(a1), 0.25 - np.sin(a1)], axis=1)
    elif spec.kind == "circles":
        a0 = np.linspace(0.0, 2 * math.pi, n0, endpoint=False)
        a1 = np.linspace(0.0, 2 * math.pi, max(n1, 1), endpoint=False)[:n1]
        x0 = np.stack([np.cos(a0), np.sin(a0)], axis=1)
        x1 = 0.5 * np.stack([np.cos(a1), np.sin(a1)], axis=1)
    elif spec.kind == "gaussian_blobs":
        x0 = np.tile([-1.5, 0.0], (n0, 1))
        x1 = np.tile([1.5, 0.0], (n1, 1))
    else:
        raise ValueError(f"unknown dataset kind {spec.kind!r}")

    x = np.concatenate([x0, x1], axis=0)
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    if spec.kind == "gaussian_blobs":
        x = x + max(spec.noise, 0.0) * rng.standard_normal(x.shape)
    elif spec.noise > 0.0:
        # bounded jitter keeps the two classes separable at moderate noise
        x = x + spec.noise * rng.uniform(-1.0, 1.0, x.shape)
    perm = rng.permutation(spec.n)
    n_train = (4 * spec.n) // 5
    return Dataset(x, y, perm[:n_train], perm[n_train:])


@dataclass
class TrainConfig:
    lambda_: float = 0.0
    sigma_threshold: float = 0.1
    regularized_layers: Optional[tuple] = None  # default: all hidden layers
    epochs: int = 100
    learning_rate: float = 0.1
    lr_decay: tuple = (0.2, (60,))
    batch_size: int = 32
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    depth: int = 4
    width: int = 32
    activation: str = "tanh"
    n_classes: int = 2
    # multiplies the default uniform(+-1/sqrt(fan_in)) bound; > 1 keeps the
    # forward signal alive in very deep stacks (sqrt(3) gives unit gain)
    init_gain: float = 1.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.sigma_threshold > 0:
            raise ValueError("sigma_threshold must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def digest(self) -> str:
        doc = {
            "lambda": self.lambda_,
            "sigma_threshold": self.sigma_threshold,
            "regularized_layers": list(self.regularized_layers)
            if self.regularized_layers
            else None,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "lr_decay": [self.lr_decay[0], list(self.lr_decay[1])],
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dataset": [
                self.dataset.kind,
                self.dataset.n,
                self.dataset.noise,
                self.dataset.seed,
            ],
            "depth": self.depth,
            "width": self.width,
            "activation": self.activation,
            "n_classes": self.n_classes,
            "init_gain": self.init_gain,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunMetrics:
    """One row per epoch."""

    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    jac_frob_sq: list = field(default_factory=list)
    leading_term: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,test_acc,jac_frob_sq,leading_term"]
        for e in range(len(self.train_loss)):
            lines.append(
                f"{e + 1},{self.train_loss[e]!r},{self.train_acc[e]!r},"
                f"{self.test_acc[e]!r},{self.jac_frob_sq[e]!r},{self.leading_term[e]!r}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite-weight checkpoint."""

    def __init__(self, message, net):
        super().__init__(message)
        self.net = net


def _leading_term_batched(weights, act, zs, acts, y):
    """Dataset-aggregate leading term, vectorized over the split.

    Same quantity as ``bounds.leading_term(...).aggregate`` (cross-tested),
    computed from an existing batched forward pass so the per-epoch snapshot
    stays cheap.  NaN when the split margin is nonpositive.
    """
    r = len(weights)
    logits = zs[-1]
    n = logits.shape[0]
    rival = np.array(logits, copy=True)
    rival[np.arange(n), y] = -np.inf
    gamma = float(np.min(logits[np.arange(n), y] - np.max(rival, axis=1)))
    if gamma <= 0.0:
        return math.nan
    # G[i] = d logits / d h_i, built top-down; h_0 is the input
    total = 0.0
    g = np.broadcast_to(weights[r - 1], (n,) + weights[r - 1].shape)
    for i in range(r - 1, -1, -1):
        h_max = float(np.max(np.linalg.norm(acts[i], axis=1)))
        j_max = float(np.max(np.linalg.svd(g, compute_uv=False)[..., 0]))
        total += h_max * j_max
        if i > 0:
            g = (g * act.deriv(zs[i - 1])[:, None, :]) @ weights[i - 1]
    return total / gamma


def init_weights(dims, rng, gain: float = 1.0) -> list:
    """Per-matrix uniform in gain * [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    ws = []
    for i in range(len(dims) - 1):
        bound = gain / math.sqrt(dims[i])
        ws.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
    return ws


def _runner_up(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Best wrong class per row; ties broken toward the lowest index."""
    masked = np.array(logits, copy=True)
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def margin_jacobian(net: SmoothNet, x, y: int, layer: int) -> np.ndarray:
    """Gradient of the margin w.r.t. hidden layer ``layer`` (1..r-1), by
    reverse accumulation through a forward trace."""
    r = net.depth
    if not 1 <= layer <= r - 1:
        raise ValueError(f"hidden layer index must be in 1..{r - 1}, got {layer}")
    trace = forward_trace(net, x)
    logits = trace.logits
    yp = int(_runner_up(logits[None], np.array([y]))[0])
    e = np.zeros(net.output_dim)
    e[y], e[yp] = 1.0, -1.0
    u = net.weights[r - 1].T @ e
    for l in range(r - 2, layer - 1, -1):
        z = trace.layer_values[2 * (l + 1) - 1]
        u = net.weights[l].T @ (net.activation.deriv(z) * u)
    return u


def reg_penalty(net: SmoothNet, x, y: int, config: TrainConfig) -> float:
    """Hard-gated squared-norm penalty of the margin Jacobians at one example."""
    if config.lambda_ == 0.0:
        return 0.0
    layers = config.regularized_layers or tuple(range(1, net.depth))
    total = 0.0
    for i in layers:
        u = margin_jacobian(net, x, y, i)
        sq = float(u @ u)
        if sq >= config.sigma_threshold:
            total += sq
    return config.lambda_ * total


def _forward_batch(weights, act, x):
    """Returns (zs, activations): zs[l] is the pre-activation of matrix l+1."""
    zs = []
    acts = [x]
    cur = x
    r = len(weights)
    for l, w in enumerate(weights):
        cur = cur @ w.T
        zs.append(cur)
        if l < r - 1:
            cur = act.fn(cur)
            acts.append(cur)
    return zs, acts


def _margin_jac_chain(weights, act, zs, e_sel, layers):
    """u[l] = gradient of the margin w.r.t. hidden layer l, batched.

    Computed top-down: u_{r-1} = W_r^T e, then u_l pulls u_{l+1} back through
    the activation derivative and W_{l+1}.  Only levels >= min(layers) are
    materialized.
    """
    r = len(weights)
    lmin = min(layers)
    u = {r - 1: e_sel @ weights[r - 1]}
    for l in range(r - 2, lmin - 1, -1):
        u[l] = (act.deriv(zs[l]) * u[l + 1]) @ weights[l]
    return u


def _penalty_value_and_grads(weights, act, zs, acts, e_sel, layers, lam, sigma_thr):
    """Exact gradient of the gated penalty w.r.t. every weight matrix.

    The penalty depends on the weights both directly (through the Jacobian
    chain) and through the pre-activations entering phi'; the latter needs
    phi'' and a second backward sweep through the forward graph.
    """
    r = len(weights)
    B = zs[0].shape[0]
    u = _margin_jac_chain(weights, act, zs, e_sel, layers)
    lmin = min(layers)

    gates = {}
    sq = {}
    for l in layers:
        sq[l] = np.sum(u[l] ** 2, axis=1)
        gates[l] = (sq[l] >= sigma_thr).astype(np.float64)
    value = lam * float(sum(np.sum(gates[l] * sq[l]) for l in layers)) / B

    coef = lam / B
    grads = [np.zeros_like(w) for w in weights]
    zbar = [np.zeros_like(z) for z in zs]

    # reverse sweep over the u-chain, from the deepest pulled-back level up
    ubar = {lmin: 2.0 * coef * gates[lmin][:, None] * u[lmin]}
    for l in range(lmin, r - 1):
        # u[l] = (act.deriv(zs[l]) * u[l+1]) @ weights[l]
        c = act.deriv(zs[l]) * u[l + 1]
        grads[l] += c.T @ ubar[l]
        back = ubar[l] @ weights[l].T
        zbar[l] += act.second_deriv(zs[l]) * u[l + 1] * back
        nxt = act.deriv(zs[l]) * back
        if (l + 1) in layers:
            nxt = nxt + 2.0 * coef * gates[l + 1][:, None] * u[l + 1]
        ubar[l + 1] = nxt
    # top of the chain: u_{r-1} = e_sel @ weights[r-1]
    grads[r - 1] += e_sel.T @ ubar[r - 1]

    # propagate the phi'' contributions back through the forward graph
    prev = None
    for l in range(r - 2, -1, -1):
        zb = zbar[l]
        if prev is not None:
            zb = zb + act.deriv(zs[l]) * (prev @ weights[l + 1])
        grads[l] += zb.T @ acts[l]
        prev = zb
    return value, grads


def train(config: TrainConfig):
    """Mini-batch SGD on cross-entropy plus the gated Jacobian penalty.

    Deterministic under the config seed.  Raises :class:`TrainingDiverged`
    (carrying the last finite checkpoint) if the loss goes non-finite.
    """
    data = make_dataset(config.dataset)
    rng = np.random.default_rng(config.seed)
    dims = [data.x.shape[1]] + [config.width] * (config.depth - 1) + [config.n_classes]
    weights = init_weights(dims, rng, config.init_gain)
    act = ACTIVATIONS[config.activation]
    layers = tuple(config.regularized_layers or range(1, config.depth))
    if layers and not all(1 <= l <= config.depth - 1 for l in layers):
        raise ValueError(f"regularized layers must be hidden layers, got {layers}")

    xtr, ytr = data.train_x, data.train_y
    xte, yte = data.test_x, data.test_y
    ntr = len(ytr)
    metrics = RunMetrics()
    decay_factor, decay_epochs = config.lr_decay
    last_good = [w.copy() for w in weights]  # checkpoint for the abort path

    for epoch in range(1, config.epochs + 1):
        lr = config.learning_rate * decay_factor ** sum(
            1 for e in decay_epochs if epoch >= e
        )
        perm = rng.permutation(ntr)
        for start in range(0, ntr, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb, yb = xtr[idx], ytr[idx]
            B = len(idx)
            zs, acts = _forward_batch(weights, act, xb)
            logits = zs[-1]

            # cross-entropy gradient
            shifted = logits - logits.max(axis=1, keepdims=True)
            expz = np.exp(shifted)
            probs = expz / expz.sum(axis=1, keepdims=True)
            gl = probs.copy()
            gl[np.arange(B), yb] -= 1.0
            gl /= B

            grads = [np.zeros_like(w) for w in weights]
            gz = gl
            for l in range(config.depth - 1, -1, -1):
                grads[l] += gz.T @ acts[l]
                if l > 0:
                    gz = act.deriv(zs[l - 1]) * (gz @ weights[l])

            if config.lambda_ > 0.0 and layers:
                yp = _runner_up(logits, yb)
                e_sel = np.zeros_like(logits)
                e_sel[np.arange(B), yb] = 1.0
                e_sel[np.arange(B), yp] -= 1.0
                _, pgrads = _penalty_value_and_grads(
                    weights, act, zs, acts, e_sel, layers,
                    config.lambda_, config.sigma_threshold,
                )
                for g, pg in zip(grads, pgrads):
                    g += pg

            for w, g in zip(weights, grads):
                w -= lr * g

        # epoch metrics on the full splits
        zs, acts = _forward_batch(weights, act, xtr)
        logits = zs[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ce = float(-logp[np.arange(ntr), ytr].mean())
        yp = _runner_up(logits, ytr)
        e_sel = np.zeros_like(logits)
        e_sel[np.arange(ntr), ytr] = 1.0
        e_sel[np.arange(ntr), yp] -= 1.0
        reg_layers = layers or tuple(range(1, config.depth))
        u = _margin_jac_chain(weights, act, zs, e_sel, reg_layers)
        jac_sq = float(
            np.mean(sum(np.sum(u[l] ** 2, axis=1) for l in reg_layers))
        )
        penalty = 0.0
        if config.lambda_ > 0.0 and layers:
            penalty = config.lambda_ * float(
                np.mean(
                    sum(
                        np.where(
                            np.sum(u[l] ** 2, axis=1) >= config.sigma_threshold,
                            np.sum(u[l] ** 2, axis=1),
                            0.0,
                        )
                        for l in layers
                    )
                )
            )
        loss = ce + penalty
        if not math.isfinite(loss) or not all(
            np.isfinite(w).all() for w in weights
        ):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch}",
                SmoothNet(last_good, config.activation),
            )
        last_good = [w.copy() for w in weights]
        train_acc = float((np.argmax(logits, axis=1) == ytr).mean())
        test_logits = _forward_batch(weights, act, xte)[0][-1]
        test_acc = float((np.argmax(test_logits, axis=1) == yte).mean())

        lt = _leading_term_batched(weights, act, zs, acts, ytr)
        metrics.train_loss.append(loss)
        metrics.train_acc.append(train_acc)
        metrics.test_acc.append(test_acc)
        metrics.jac_frob_sq.append(jac_sq)
        metrics.leading_term.append(float(lt))

    return SmoothNet(weights, config.activation), metrics
