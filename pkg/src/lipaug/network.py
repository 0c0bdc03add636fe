"""Feedforward smooth-activation network engine.

A net with ``r`` weight matrices is viewed as ``2r - 1`` layers: odd layers
multiply a matrix, even layers apply the activation elementwise, and no
activation follows the final matrix.  ``forward_trace`` records every layer
value and every interlayer Jacobian, which is what the bound machinery
consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, as_vector

__all__ = [
    "Activation",
    "ACTIVATIONS",
    "SmoothNet",
    "LayerTrace",
    "forward_trace",
    "margin",
    "ramp_loss",
    "zero_one_loss",
]

MAX_WIDTH = 512  # dense Jacobians are materialized; keep widths desk-scale


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with first two derivatives and the Lipschitz
    constant of the derivative (sup |phi''|)."""

    name: str
    fn: callable
    deriv: callable
    second_deriv: callable
    deriv_lipschitz: float


def _softplus(x):
    # log(1 + e^x) computed stably for large |x|
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATIONS = {
    "tanh": Activation(
        "tanh",
        np.tanh,
        lambda x: 1.0 - np.tanh(x) ** 2,
        lambda x: -2.0 * np.tanh(x) * (1.0 - np.tanh(x) ** 2),
        4.0 / (3.0 * math.sqrt(3.0)),  # sup |tanh''|
    ),
    "softplus": Activation(
        "softplus",
        _softplus,
        _sigmoid,
        lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
        0.25,  # sup |sigmoid'|
    ),
}


class SmoothNet:
    """Stack of weight matrices with a 1-Lipschitz smooth activation.

    ``weights[i]`` has shape (d_{i+1}, d_i); consecutive shapes must compose.
    The derivative-Lipschitz constant of the activation is stored, not
    re-derived.
    """

    def __init__(self, weights, activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        ws = [as_matrix(w) for w in weights]
        if not ws:
            raise ValueError("need at least one weight matrix")
        for w in ws:
            if max(w.shape) > MAX_WIDTH:
                raise ValueError(f"layer width {max(w.shape)} exceeds cap {MAX_WIDTH}")
        for i in range(len(ws) - 1):
            if ws[i + 1].shape[1] != ws[i].shape[0]:
                raise ValueError(
                    f"weight {i + 1} expects input dim {ws[i + 1].shape[1]}, "
                    f"previous layer outputs {ws[i].shape[0]}"
                )
        self.weights = tuple(ws)
        self.activation = ACTIVATIONS[activation]

    @property
    def depth(self) -> int:
        """Number of weight matrices r."""
        return len(self.weights)

    @property
    def num_layers(self) -> int:
        """Number of computational layers, 2r - 1."""
        return 2 * len(self.weights) - 1

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def activation_deriv_lipschitz(self) -> float:
        return self.activation.deriv_lipschitz

    def layer_dim(self, j: int) -> int:
        """Output dimension of layer j (j = 0 is the input)."""
        if j == 0:
            return self.input_dim
        i = (j + 1) // 2  # weight index for layer j
        return self.weights[i - 1].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass; x has shape (n, input_dim).  Returns logits."""
        a = np.asarray(x, dtype=np.float64)
        r = self.depth
        for i, w in enumerate(self.weights):
            a = a @ w.T
            if i < r - 1:
                a = self.activation.fn(a)
        return a


@dataclass
class LayerTrace:
    """Everything the forward pass computed at one input.

    ``layer_values[j]`` is the layer-j value for j = 0..2r-1 (0 = the input,
    odd = post-matrix, even = post-activation).  ``layer_jacobians[(j, jp)]``
    is the Jacobian of layer jp w.r.t. the input of layer j, for j <= jp;
    pairs with jp < j are the identity by convention and are not stored.
    """

    layer_values: list
    layer_jacobians: dict
    preactivation_min: list = field(default_factory=list)

    def value(self, j: int) -> np.ndarray:
        return self.layer_values[j]

    def jacobian(self, jp: int, j: int) -> np.ndarray:
        """Q_{jp <- j}; identity when jp < j (the empty composition)."""
        if jp < j:
            dim = self.layer_values[j - 1].shape[0]
            return np.eye(dim)
        return self.layer_jacobians[(j, jp)]

    @property
    def logits(self) -> np.ndarray:
        return self.layer_values[-1]


def forward_trace(net: SmoothNet, x) -> LayerTrace:
    """Run the net at ``x`` recording all layer values and interlayer Jacobians.

    Per-layer Jacobians are exact: the weight matrix at odd layers and
    diag(phi'(pre-activation)) at even layers.  Composites are materialized
    right-to-left once and cached on the trace.
    """
    x = as_vector(x)
    if x.shape[0] != net.input_dim:
        raise ValueError(
            f"input dim {x.shape[0]} does not match net input dim {net.input_dim}"
        )
    r = net.depth
    act = net.activation
    q = net.num_layers

    values = [x]
    per_layer = []  # per-layer Jacobian, as ("dense", W) or ("diag", vec)
    pre_min = []
    for i in range(1, r + 1):
        w = net.weights[i - 1]
        z = w @ values[-1]
        values.append(z)  # layer 2i - 1
        per_layer.append(("dense", w))
        pre_min.append(float(np.min(np.abs(z))))
        if i < r:
            values.append(act.fn(z))  # layer 2i
            per_layer.append(("diag", act.deriv(z)))

    # composite products Q_{jp <- j} = Q_{jp<-jp} ... Q_{j<-j}, built left-growing
    jac = {}
    for j in range(1, q + 1):
        kind, payload = per_layer[j - 1]
        p = np.diag(payload) if kind == "diag" else payload.copy()
        jac[(j, j)] = p
        for jp in range(j + 1, q + 1):
            kind, payload = per_layer[jp - 1]
            p = payload[:, None] * p if kind == "diag" else payload @ p
            jac[(j, jp)] = p
    return LayerTrace(values, jac, pre_min)


def margin(logits, y: int) -> float:
    """Correct-class logit minus the best wrong-class logit."""
    t = as_vector(logits)
    if t.shape[0] < 2:
        raise ValueError("margin needs at least two classes")
    if not 0 <= y < t.shape[0]:
        raise IndexError(f"label {y} out of range for {t.shape[0]} classes")
    rival = np.max(np.delete(t, y))
    return float(t[y] - rival)


def ramp_loss(logits, y: int, gamma: float) -> float:
    """Standard ramp on the margin: 1 at m <= 0, linear down to 0 at m = gamma."""
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    m = margin(logits, y)
    if m <= 0.0:
        return 1.0
    if m >= gamma:
        return 0.0
    return 1.0 - m / gamma


def zero_one_loss(logits, y: int) -> int:
    """1 iff the margin is nonpositive (ties count as errors)."""
    return 1 if margin(logits, y) <= 0.0 else 0
