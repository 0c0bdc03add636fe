"""Dataset measurement and closed-form bound arithmetic.

``measure`` walks the training set once and records every ingredient the
generalization-gap formulas need: hidden-layer norm maxima, interlayer
Jacobian norm maxima, the margin, and pre-activation margins.  The kappa
formulas, the (2/3, 3/2) covering combination, and the entropy-integral
conversion to a Rademacher bound are pure arithmetic on those measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .graph import AugmentationParams, op_norm
from .linalg import norm_pq, spectral_norm_stack
from .network import SmoothNet, forward_trace, margin

__all__ = [
    "MarginError",
    "DataMeasurements",
    "MatrixNormTerms",
    "BoundReport",
    "BoundConfig",
    "LeadingTerms",
    "measure",
    "params_from_measurements",
    "kappa_hidden",
    "kappa_jacobian",
    "kappa_hidden_relu",
    "combine_covering",
    "allocate_cover_budget",
    "dudley",
    "generalization_bound",
    "leading_term",
    "spectral_baseline",
]


class MarginError(ValueError):
    """A formula that needs a positive (pre-activation) margin got a nonpositive one."""


@dataclass
class DataMeasurements:
    """Dataset-wide maxima/minima entering the bound formulas.

    ``t[i]`` is the xi-padded max norm of hidden layer i (``t[0]`` covers the
    inputs), for i = 0..r-1.  ``sigma[j-1, jp-1]`` is the xi-padded max
    operator norm of the layer j-to-jp Jacobian, j <= jp.  ``gamma`` is the
    minimum margin (may be <= 0; formulas that need it positive raise).
    ``gamma_pre[i-1]`` is the minimum absolute pre-activation coordinate after
    weight matrix i.
    """

    r: int
    t: np.ndarray
    sigma: np.ndarray
    gamma: float
    gamma_pre: np.ndarray
    xi: float
    n: int
    sigma_bar_phi: float

    @property
    def q(self) -> int:
        return 2 * self.r - 1

    def sigma_at(self, frm: int, to: int) -> float:
        """sigma_{to <- frm}; the empty composition (to < frm) is 1."""
        if to < frm:
            return 1.0
        return float(self.sigma[frm - 1, to - 1])


@dataclass
class MatrixNormTerms:
    """xi-padded reference-offset weight norms: a[i-1] is the (2,1)-norm of
    (W_i - A_i) transposed, b[i-1] the (1,1)-norm of W_i - B_i."""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_net(cls, net: SmoothNet, xi: float, ref_a=None, ref_b=None):
        a = np.empty(net.depth)
        b = np.empty(net.depth)
        for i, w in enumerate(net.weights):
            wa = w if ref_a is None else w - ref_a[i]
            wb = w if ref_b is None else w - ref_b[i]
            a[i] = norm_pq(wa.T, 2, 1) + xi
            b[i] = norm_pq(wb, 1, 1) + xi
        return cls(a, b)


def measure(net: SmoothNet, dataset, xi: float) -> DataMeasurements:
    """Exact maxima/minima over the dataset, one forward trace per example."""
    if not xi > 0.0:
        raise ValueError(f"xi must be positive, got {xi}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be nonempty")
    r = net.depth
    q = net.num_layers

    t_max = np.zeros(r)
    sigma_max = np.zeros((q, q))
    gamma_min = math.inf
    pre_min = np.full(r, math.inf)

    for x, y in dataset:
        trace = forward_trace(net, x)
        t_max[0] = max(t_max[0], float(np.linalg.norm(trace.layer_values[0])))
        for i in range(1, r):
            t_max[i] = max(
                t_max[i], float(np.linalg.norm(trace.layer_values[2 * i]))
            )
        gamma_min = min(gamma_min, margin(trace.logits, int(y)))
        pre_min = np.minimum(pre_min, trace.preactivation_min)

        groups = {}
        for (j, jp), mat in trace.layer_jacobians.items():
            groups.setdefault(mat.shape, []).append((j, jp, mat))
        for shape, items in groups.items():
            stack = np.stack([m for (_, _, m) in items])
            norms = spectral_norm_stack(stack)
            for (j, jp, _), nrm in zip(items, norms):
                if nrm > sigma_max[j - 1, jp - 1]:
                    sigma_max[j - 1, jp - 1] = nrm

    iu = np.triu_indices(q)
    sigma = np.zeros((q, q))
    sigma[iu] = sigma_max[iu] + xi
    return DataMeasurements(
        r=r,
        t=t_max + xi,
        sigma=sigma,
        gamma=float(gamma_min),
        gamma_pre=pre_min,
        xi=xi,
        n=len(dataset),
        sigma_bar_phi=net.activation_deriv_lipschitz,
    )


def params_from_measurements(m: DataMeasurements) -> AugmentationParams:
    """Augmentation thresholds set to the measured maxima (already xi-padded).

    Even layers get their hidden-norm threshold; odd (post-matrix) layers get
    an infinite one, mirroring the choice under which the augmented training
    loss equals the plain loss.
    """
    q = m.q
    s = np.full(q, np.inf)
    for i in range(1, m.r):
        s[2 * i - 1] = m.t[i]
    kappa = np.full((q, q), np.inf)
    iu = np.triu_indices(q)
    kappa[iu] = m.sigma[iu]
    return AugmentationParams(s, kappa)


def _require_positive_margin(m: DataMeasurements):
    if not m.gamma > 0.0:
        raise MarginError(
            f"bound formulas need a positive dataset margin, got {m.gamma}"
        )


def kappa_hidden(i: int, m: DataMeasurements) -> float:
    """Lipschitz-influence constant of hidden layer i on the augmented loss."""
    _require_positive_margin(m)
    r, q = m.r, m.q
    if not 1 <= i <= r:
        raise ValueError(f"layer index must be in 1..{r}, got {i}")
    val = m.xi + m.sigma_at(2 * i, q) / m.gamma
    for ip in range(i, r):
        val += m.sigma_at(2 * i, 2 * ip) / m.t[ip]
    sb = m.sigma_bar_phi
    if sb != 0.0:
        for j in range(1, q + 1):
            for jp in range(j, q + 1):
                den = m.sigma_at(j, jp)
                for jpp in range(max(2 * i, j), jp + 1):
                    if jpp % 2 != 0:
                        continue
                    val += (
                        sb
                        * m.sigma_at(jpp + 1, jp)
                        * m.sigma_at(2 * i, jpp - 1)
                        * m.sigma_at(j, jpp - 1)
                        / den
                    )
    return val


def kappa_jacobian(i: int, m: DataMeasurements) -> float:
    """Lipschitz-influence constant of the layer-i Jacobian node."""
    r, q = m.r, m.q
    if not 1 <= i <= r:
        raise ValueError(f"layer index must be in 1..{r}, got {i}")
    val = 0.0
    for j in range(1, 2 * i):
        for jp in range(2 * i - 1, q + 1):
            den = m.sigma_at(j, jp)
            if den == 0.0:
                raise ZeroDivisionError(f"sigma between layers {j} and {jp} is zero")
            val += 4.0 * m.sigma_at(2 * i, jp) * m.sigma_at(j, 2 * i - 2) / den
    return val


def kappa_hidden_relu(i: int, m: DataMeasurements) -> float:
    """Piecewise-linear-activation variant: pre-activation margins replace the
    curvature triple sum."""
    _require_positive_margin(m)
    r, q = m.r, m.q
    if not 1 <= i <= r:
        raise ValueError(f"layer index must be in 1..{r}, got {i}")
    val = m.xi + m.sigma_at(2 * i, q) / m.gamma
    for ip in range(i, r):
        gp = float(m.gamma_pre[ip - 1])
        if gp <= 0.0:
            raise MarginError(
                f"pre-activation margin after matrix {ip} is {gp}; must be positive"
            )
        val += m.sigma_at(2 * i, 2 * ip) / m.t[ip]
        val += m.sigma_at(2 * i, 2 * ip - 1) / gp
    return val


def allocate_cover_budget(terms, eps: float):
    """Split a total cover resolution across terms, each weighted by its
    Lipschitz constant; the split is the minimizer of the combined exponent
    subject to sum_m kappa_m * eps_m = eps.  Zero-capacity terms get 0."""
    terms = [(float(k), float(c)) for k, c in terms]
    beta23 = sum((k * c) ** (2.0 / 3.0) for k, c in terms)
    if beta23 == 0.0 or eps <= 0.0:
        return [0.0 for _ in terms]
    return [
        eps * k ** (-1.0 / 3.0) * c ** (2.0 / 3.0) / beta23 if k * c > 0.0 else 0.0
        for k, c in terms
    ]


def combine_covering(terms):
    """Combine per-node covering contributions.

    ``terms`` is a sequence of (lipschitz constant, covering scale) pairs.
    Returns ``(beta_star, exponent_fn)`` where ``beta_star`` is the
    (sum (k c)^{2/3})^{3/2} aggregate and ``exponent_fn(eps)`` the combined
    log-covering bound, which works out to exactly (beta_star / eps)^2 under
    the optimal budget split.
    """
    terms = [(float(k), float(c)) for k, c in terms]
    beta23 = sum((k * c) ** (2.0 / 3.0) for k, c in terms)
    beta_star = beta23 ** 1.5

    def exponent_fn(eps: float) -> float:
        if beta_star == 0.0:
            return 0.0
        if eps <= 0.0:
            return math.inf
        alloc = allocate_cover_budget(terms, eps)
        total = 0.0
        for (k, c), e in zip(terms, alloc):
            if c == 0.0 or k == 0.0:
                continue
            total += (c / e) ** 2
        return total

    return beta_star, exponent_fn


def dudley(beta_star: float, n: int, s: float, exponent_fn=None) -> float:
    """Entropy-integral bound: inf over alpha of alpha + integral of
    sqrt(log N(eps) / n) from alpha up to the data-norm cap ``s``.

    The infimum is taken on a 256-point log grid spanning
    [beta_star / (n * 1e6), s]; the integral uses adaptive quadrature on the
    combined covering exponent (default (beta_star / eps)^2).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if beta_star == 0.0:
        return 0.0
    if exponent_fn is None:
        def exponent_fn(eps):
            return (beta_star / eps) ** 2

    lo = beta_star / (n * 1e6)
    if lo >= s:
        return float(s)
    grid = np.geomspace(lo, s, 256)

    def integrand(eps):
        return math.sqrt(max(exponent_fn(eps), 0.0) / n)

    best = math.inf
    for alpha in grid:
        if alpha >= s:
            val = float(alpha)
        else:
            integral, _ = integrate.quad(integrand, alpha, s, limit=200)
            val = float(alpha) + integral
        best = min(best, val)
    return best


@dataclass
class LeadingTerms:
    """Per-example and dataset-aggregate sum of ||h_i|| * ||J_i|| / margin."""

    per_example: np.ndarray
    aggregate: float
    n_excluded: int


def leading_term(net: SmoothNet, dataset) -> LeadingTerms:
    """Sum over layers of hidden-norm times output-Jacobian-norm over margin.

    The per-example form uses each example's own margin (examples with
    nonpositive margin are excluded and counted); the aggregate form pairs
    dataset-wide maxima with the dataset margin, which is NaN-guarded when
    that margin is nonpositive.  Layer 0 is the input itself.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be nonempty")
    r = net.depth
    q = net.num_layers

    per_example = []
    n_excluded = 0
    h_max = np.zeros(r)
    j_max = np.zeros(r)
    gamma = math.inf
    for x, y in dataset:
        trace = forward_trace(net, x)
        m_x = margin(trace.logits, int(y))
        gamma = min(gamma, m_x)
        h_norms = np.empty(r)
        j_norms = np.empty(r)
        for i in range(r):
            h_norms[i] = np.linalg.norm(trace.layer_values[2 * i])
            j_norms[i] = op_norm(trace.jacobian(q, 2 * i + 1))
        h_max = np.maximum(h_max, h_norms)
        j_max = np.maximum(j_max, j_norms)
        if m_x <= 0.0:
            n_excluded += 1
        else:
            per_example.append(float(np.sum(h_norms * j_norms) / m_x))
    aggregate = float(np.sum(h_max * j_max) / gamma) if gamma > 0.0 else math.nan
    return LeadingTerms(np.asarray(per_example), aggregate, n_excluded)


def spectral_baseline(net: SmoothNet, gamma: float) -> float:
    """Product of weight operator norms over the margin (the depth-exponential
    comparator)."""
    if not gamma > 0.0:
        raise MarginError(f"gamma must be positive, got {gamma}")
    prod = 1.0
    for w in net.weights:
        prod *= op_norm(w)
    return prod / gamma


@dataclass
class BoundConfig:
    xi: Optional[float] = None  # default 1/r^2
    delta: float = 0.01
    ref_a: Optional[list] = None
    ref_b: Optional[list] = None
    relu_variant: bool = False


@dataclass
class BoundReport:
    """Full bound evaluation; serializes to the flat JSON contract."""

    kappa_h: list
    kappa_j: list
    beta_star: float
    rademacher: float
    generalization_gap: float
    leading_term: float
    spectral_baseline: float
    n: int
    delta: float
    xi: float
    log_factor: float = field(default=0.0, repr=False)  # printed, not serialized

    def __post_init__(self):
        entries = list(self.kappa_h) + list(self.kappa_j) + [
            self.beta_star,
            self.rademacher,
            self.generalization_gap,
            self.leading_term,
            self.spectral_baseline,
        ]
        if not all(math.isfinite(v) and v >= 0.0 for v in entries):
            raise ValueError(f"report entries must be finite and nonnegative: {entries}")

    def to_json(self) -> str:
        doc = {
            "kappa_h": list(self.kappa_h),
            "kappa_j": list(self.kappa_j),
            "beta_star": self.beta_star,
            "rademacher": self.rademacher,
            "generalization_gap": self.generalization_gap,
            "leading_term": self.leading_term,
            "spectral_baseline": self.spectral_baseline,
            "n": self.n,
            "delta": self.delta,
            "xi": self.xi,
        }
        return json.dumps(doc, indent=2) + "\n"


def generalization_bound(net: SmoothNet, dataset, config: BoundConfig) -> BoundReport:
    """measure -> matrix norms -> kappas -> beta* -> entropy integral -> gap."""
    dataset = list(dataset)
    r = net.depth
    xi = config.xi if config.xi is not None else 1.0 / r**2
    m = measure(net, dataset, xi)
    _require_positive_margin(m)

    norms = MatrixNormTerms.from_net(net, xi, config.ref_a, config.ref_b)
    kh = []
    kj = []
    for i in range(1, r + 1):
        if config.relu_variant:
            kh.append(kappa_hidden_relu(i, m))
        else:
            kh.append(kappa_hidden(i, m))
        kj.append(kappa_jacobian(i, m))

    terms = [(kh[i], norms.a[i] * m.t[i]) for i in range(r)]
    terms += [(kj[i], norms.b[i]) for i in range(r)]
    beta_star, exponent_fn = combine_covering(terms)
    rad = dudley(beta_star, m.n, float(m.t[0]), exponent_fn)
    gap = rad + r * math.sqrt(math.log(1.0 / config.delta) / m.n)

    lt = leading_term(net, dataset)
    sb = spectral_baseline(net, m.gamma)
    d_max = max(max(w.shape) for w in net.weights)
    magnitude = max(
        float(np.max(m.sigma[np.triu_indices(m.q)])),
        float(np.max(m.t)),
        float(np.max(norms.a)),
        float(np.max(norms.b)),
        2.0,
    )
    log_factor = math.log(d_max * r * magnitude)

    return BoundReport(
        kappa_h=[float(v) for v in kh],
        kappa_j=[float(v) for v in kj],
        beta_star=float(beta_star),
        rademacher=float(rad),
        generalization_gap=float(gap),
        leading_term=float(lt.aggregate),
        spectral_baseline=float(sb),
        n=m.n,
        delta=config.delta,
        xi=xi,
        log_factor=float(log_factor),
    )
