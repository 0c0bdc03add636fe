"""Pass/fail numerical checks of the augmentation machinery.

Each check draws deterministic probes, evaluates both sides of a guarantee,
and reports the worst observed slack (positive = satisfied) plus a witness
when violated.  The release-Lipschitz prober releases graph nodes in the
forest ordering and measures secant slopes of the augmented output against
the closed-form Lipschitz constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import measure, params_from_measurements
from .graph import (
    AugmentationParams,
    augmented_loss,
    evaluate,
    lipschitz_augment,
    release,
    release_lipschitz_constants,
)
from .linalg import soft_indicator_arr, spectral_norm_stack
from .network import SmoothNet, forward_trace, ramp_loss

__all__ = [
    "VerificationReport",
    "verify_upper_bound",
    "verify_release_lipschitz",
    "release_lipschitz_mutation_check",
    "verify_telescoping",
    "verify_finite_change",
    "verify_jacobian_fd",
    "write_reports",
]


@dataclass
class VerificationReport:
    """Outcome of one check: worst slack over all trials, witness on failure."""

    name: str
    trials: int
    worst_slack: float
    tolerance: float = 0.0
    witness: Optional[dict] = None
    informational: bool = False
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if (
            self.worst_slack < -self.tolerance
            and not self.informational
            and self.witness is None
        ):
            raise ValueError("violated report must carry a witness")

    @property
    def passed(self) -> bool:
        return self.informational or self.worst_slack >= -self.tolerance

    def to_json_line(self, witness_path=None) -> str:
        return json.dumps(
            {
                "name": self.name,
                "trials": self.trials,
                "worst_slack": self.worst_slack,
                "witness_path": witness_path,
            }
        )


def write_reports(reports, path, witness_dir=None) -> bool:
    """Write one JSON line per report; witnesses go to side files.  Returns
    True iff every check passed."""
    import pathlib

    path = pathlib.Path(path)
    all_passed = True
    lines = []
    for idx, rep in enumerate(reports):
        wpath = None
        if rep.witness is not None:
            wdir = pathlib.Path(witness_dir) if witness_dir else path.parent
            wdir.mkdir(parents=True, exist_ok=True)
            wpath = str(wdir / f"witness_{idx}_{rep.name}.json")
            with open(wpath, "w") as f:
                json.dump(rep.witness, f, indent=2)
                f.write("\n")
        lines.append(rep.to_json_line(wpath))
        all_passed = all_passed and rep.passed
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return all_passed


def _layer_values(net: SmoothNet, x: np.ndarray):
    """Layer values only (no Jacobians): cheap forward for FD loops."""
    act = net.activation
    vals = [x]
    cur = x
    r = net.depth
    for i, w in enumerate(net.weights):
        cur = w @ cur
        vals.append(cur)
        if i < r - 1:
            cur = act.fn(cur)
            vals.append(cur)
    return vals


def _input_jacobian(net: SmoothNet, x: np.ndarray, j: int) -> np.ndarray:
    """Jacobian of layer j w.r.t. the input, one left-growing product."""
    act = net.activation
    vals = _layer_values(net, x)
    p = None
    for layer in range(1, j + 1):
        if layer % 2 == 1:
            w = net.weights[(layer + 1) // 2 - 1]
            p = w.copy() if p is None else w @ p
        else:
            d = act.deriv(vals[layer - 1])
            p = np.diag(d) if p is None else d[:, None] * p
    return p


def verify_upper_bound(
    net: SmoothNet,
    dataset,
    params: AugmentationParams,
    trials: int,
    gamma: float,
    xi: Optional[float] = None,
    seed: int = 0,
    mutation_scale: float = 1.0,
) -> VerificationReport:
    """Augmented loss dominates the plain loss everywhere, and equals it on the
    training points when the thresholds are the measured maxima."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    dataset = list(dataset)
    rng = np.random.default_rng(seed)
    xi = xi if xi is not None else 1.0 / net.depth**2

    worst = math.inf
    witness = None
    count = 0

    def check_ineq(x, y, tag):
        nonlocal worst, witness, count
        zt, _ = augmented_loss(net, x, y, gamma, params)
        zt *= mutation_scale
        z = ramp_loss(_layer_values(net, np.asarray(x, dtype=np.float64))[-1], y, gamma)
        slack = zt - z + 1e-12
        count += 1
        if slack < worst:
            worst = slack
            if slack < 0 and witness is None:
                witness = {"kind": tag, "x": np.asarray(x).tolist(), "y": int(y)}

    for x, y in dataset:
        check_ineq(x, y, "dataset_point")
    for k in range(trials):
        x, y = dataset[k % len(dataset)]
        x = np.asarray(x, dtype=np.float64)
        xp = x + 0.1 * rng.standard_normal(x.shape) * max(np.linalg.norm(x), 1.0)
        check_ineq(xp, y, "perturbed_point")

    # equality branch: thresholds = measured maxima (already xi-padded)
    m = measure(net, dataset, xi)
    eq_params = params_from_measurements(m)
    eq_worst = math.inf
    for x, y in dataset:
        zt, _ = augmented_loss(net, x, y, gamma, eq_params)
        zt *= mutation_scale
        z = ramp_loss(_layer_values(net, np.asarray(x, dtype=np.float64))[-1], y, gamma)
        slack = 1e-12 - abs(zt - z)
        count += 1
        if slack < eq_worst:
            eq_worst = slack
            if slack < 0 and witness is None:
                witness = {
                    "kind": "equality_branch",
                    "x": np.asarray(x).tolist(),
                    "y": int(y),
                    "z": z,
                    "z_aug": zt,
                }
    worst = min(worst, eq_worst)
    return VerificationReport(
        name="upper_bound",
        trials=count,
        worst_slack=float(worst),
        witness=witness,
        details={"equality_worst_slack": float(eq_worst)},
    )


# ---------------------------------------------------------------------------
# release-Lipschitz probing
# ---------------------------------------------------------------------------


class _ReleasedProber:
    """Vectorized evaluation of the augmented output with a forest-ordering
    prefix released and fixed at one trace's values, as a function of the
    probed node's value."""

    def __init__(self, net, gamma, params, trace, y):
        self.net = net
        self.gamma = gamma
        self.params = params
        self.trace = trace
        self.y = int(y)
        self.q = net.num_layers
        self.z_fixed = ramp_loss(trace.logits, self.y, gamma)
        # trace-level norms shared by the fixed-factor products
        self.val_norms = {
            j: float(np.linalg.norm(trace.layer_values[j]))
            for j in range(1, self.q + 1)
        }
        self.pair_norms = {}
        for (a, b), mat in trace.layer_jacobians.items():
            self.pair_norms[(a, b)] = float(spectral_norm_stack(mat[None])[0])
        self._const_v = {}
        self._const_j = {}

    def _ramp_batch(self, logits):
        y = self.y
        rival = np.array(logits, copy=True)
        rival[:, y] = -np.inf
        m = logits[:, y] - np.max(rival, axis=1)
        return np.clip(1.0 - m / self.gamma, 0.0, 1.0)

    @staticmethod
    def _ind(norms, kappa):
        return soft_indicator_arr(np.asarray(norms), kappa)

    def margin_gradient(self, i):
        """Direction at node V_i along which the ramp term moves fastest."""
        t, q, y = self.trace, self.q, self.y
        logits = t.logits
        rival_logits = np.array(logits, copy=True)
        rival_logits[y] = -np.inf
        rival = int(np.argmax(rival_logits))
        e = np.zeros(logits.shape[0])
        e[y], e[rival] = 1.0, -1.0
        g = t.jacobian(q, i + 1).T @ e
        nrm = np.linalg.norm(g)
        return g / nrm if nrm > 0 else None

    # -- V-node path -------------------------------------------------------

    def const_factor_v(self, i):
        """Product of the indicators that do not move when V_i is probed."""
        if i in self._const_v:
            return self._const_v[i]
        p = self.params
        prod = 1.0
        for j in range(1, i):
            prod *= float(self._ind(self.val_norms[j], p.s_at(j)))
        for a in range(1, i + 1):
            for b in range(a, i + 1):
                prod *= float(self._ind(self.pair_norms[(a, b)], p.kappa_between(a, b)))
        self._const_v[i] = prod
        return prod

    def eval_v(self, i, vbatch):
        """Augmented output for a batch of probed values at node V_i."""
        net, p, t, q = self.net, self.params, self.trace, self.q
        act = net.activation
        vbatch = np.asarray(vbatch, dtype=np.float64)
        B = vbatch.shape[0]

        vals = {i: vbatch}
        cur = vbatch
        dvec = {}
        for j in range(i + 1, q + 1):
            if j % 2 == 1:
                cur = cur @ net.weights[(j + 1) // 2 - 1].T
            else:
                dvec[j] = act.deriv(cur)
                cur = act.fn(cur)
            vals[j] = cur
        z = self._ramp_batch(vals[q])

        prod = np.full(B, self.const_factor_v(i))
        for j in range(i, q + 1):
            prod *= self._ind(np.linalg.norm(vals[j], axis=1), p.s_at(j))

        def compose(j, left):
            """Left-multiply by the layer-j Jacobian along the probe batch."""
            if j % 2 == 1:
                w = net.weights[(j + 1) // 2 - 1]
                if left is None:
                    return np.broadcast_to(w, (B,) + w.shape)
                return np.einsum("xy,byz->bxz", w, left)
            d = dvec[j]
            if left is None:
                out = np.zeros((B, d.shape[1], d.shape[1]))
                idx = np.arange(d.shape[1])
                out[:, idx, idx] = d
                return out
            return d[:, :, None] * left

        lefts = {}
        left = None
        for b in range(i + 1, q + 1):
            left = compose(b, left)
            lefts[b] = left
        for a in range(1, i + 1):
            r_fix = t.layer_jacobians[(a, i)]
            for b in range(i + 1, q + 1):
                arg = lefts[b] @ r_fix
                prod *= self._ind(spectral_norm_stack(arg), p.kappa_between(a, b))
        for a in range(i + 1, q + 1):
            pstack = None
            for b in range(a, q + 1):
                pstack = compose(b, pstack)
                prod *= self._ind(spectral_norm_stack(pstack), p.kappa_between(a, b))
        return (z - 1.0) * prod + 1.0

    # -- J-node path -------------------------------------------------------

    def const_factor_j(self, i):
        """Everything that stays fixed when J_i is probed (all layer values and
        every pair indicator not covering layer i)."""
        if i in self._const_j:
            return self._const_j[i]
        p, q = self.params, self.q
        prod = 1.0
        for j in range(1, q + 1):
            prod *= float(self._ind(self.val_norms[j], p.s_at(j)))
        for a in range(1, q + 1):
            for b in range(a, q + 1):
                if a <= i <= b:
                    continue
                prod *= float(self._ind(self.pair_norms[(a, b)], p.kappa_between(a, b)))
        self._const_j[i] = prod
        return prod

    def eval_j(self, i, jbatch):
        """Augmented output for a batch of probed values at node J_i."""
        p, t, q = self.params, self.trace, self.q
        jbatch = np.asarray(jbatch, dtype=np.float64)
        B = jbatch.shape[0]
        prod = np.full(B, self.const_factor_j(i))
        for a in range(1, i + 1):
            mid = jbatch if a == i else jbatch @ t.layer_jacobians[(a, i - 1)]
            for b in range(i, q + 1):
                arg = (
                    mid
                    if b == i
                    else np.einsum("xz,bzw->bxw", t.layer_jacobians[(i + 1, b)], mid)
                )
                prod *= self._ind(spectral_norm_stack(arg), p.kappa_between(a, b))
        return (self.z_fixed - 1.0) * prod + 1.0


def _probe_pairs_vec(rng, v0, n_pairs, radius, direction=None):
    """Probe pairs around v0: random ball pairs plus a few directed ones."""
    d = v0.shape[0]
    d1 = rng.standard_normal((n_pairs, d))
    d2 = rng.standard_normal((n_pairs, d))
    for dd in (d1, d2):
        nrm = np.linalg.norm(dd, axis=1, keepdims=True)
        nrm[nrm == 0.0] = 1.0
        dd *= radius * rng.uniform(0.05, 1.0, (n_pairs, 1)) / nrm
    directed = []
    base = np.linalg.norm(v0)
    if base > 0:
        rel = radius / base
        directed.append((-rel * v0, rel * v0))
    if direction is not None:
        directed.append((np.zeros(d), radius * direction))
        directed.append((-radius * direction, radius * direction))
        directed.append((-0.1 * radius * direction, 0.1 * radius * direction))
    for k, (da, db) in enumerate(directed):
        if k < n_pairs:
            d1[k], d2[k] = da, db
    return v0 + d1, v0 + d2


def _probe_pairs_mat(rng, j0, n_pairs, radius):
    """Probe pairs around a matrix node; distances in operator norm."""
    shape = j0.shape
    g1 = rng.standard_normal((n_pairs,) + shape)
    g2 = rng.standard_normal((n_pairs,) + shape)
    for gg in (g1, g2):
        nrm = spectral_norm_stack(gg)
        nrm[nrm == 0.0] = 1.0
        gg *= (radius * rng.uniform(0.05, 1.0, n_pairs) / nrm)[:, None, None]
    base = spectral_norm_stack(j0[None])[0]
    if base > 0 and n_pairs >= 2:
        rel = radius / base
        g1[0], g2[0] = -rel * j0, rel * j0
        g1[1], g2[1] = -0.1 * rel * j0, 0.1 * rel * j0
    return j0 + g1, j0 + g2


def verify_release_lipschitz(
    net: SmoothNet,
    gamma: float,
    params: AugmentationParams,
    probes: int,
    seed: int = 0,
    dataset=None,
    constants_scale: float = 1.0,
    tol: float = 1e-6,
    max_shrinks: int = 3,
    cross_check: bool = True,
) -> VerificationReport:
    """Secant slopes of the released augmented output never exceed the
    closed-form constants (primed for V nodes, plain for J nodes).

    Probes are drawn in balls around realized trace values (radius 1e-2 of the
    node scale, shrunk x10 up to ``max_shrinks`` times on violation before a
    witness is declared).  The per-node extremal pair is recorded, with its
    context, so a corrupted-constants recheck can re-evaluate it.
    """
    if probes < 1:
        raise ValueError(f"probes must be >= 1, got {probes}")
    q = net.num_layers
    rng = np.random.default_rng(seed)
    if dataset is None:
        xs = rng.standard_normal((4, net.input_dim))
        ys = [k % net.output_dim for k in range(4)]
        contexts = [(xs[k], ys[k]) for k in range(4)]
    else:
        contexts = [
            (np.asarray(x, dtype=np.float64), int(y)) for x, y in list(dataset)[:6]
        ]

    consts = release_lipschitz_constants(net, gamma, params)
    traces = [forward_trace(net, x) for x, _ in contexts]
    probers = [
        _ReleasedProber(net, gamma, params, tr, y)
        for tr, (_, y) in zip(traces, contexts)
    ]
    aug = lipschitz_augment(net, gamma, params) if cross_check else None

    worst = math.inf
    witness = None
    total = 0
    node_stats = []
    per_ctx = max(1, probes // len(contexts))

    for kind in ("V", "J"):
        for i in range(1, q + 1):
            bound = (consts.v_prime(i) if kind == "V" else consts.j(i))
            bound *= constants_scale
            max_slope = 0.0
            extremal = None
            for ctx_idx, prober in enumerate(probers):
                tr = traces[ctx_idx]
                if kind == "V":
                    base0 = tr.layer_values[i]
                    radius = 1e-2 * max(np.linalg.norm(base0), 1.0)
                    va, vb = _probe_pairs_vec(
                        rng, base0, per_ctx, radius, prober.margin_gradient(i)
                    )
                    eval_fn, node = prober.eval_v, i
                    dist_fn = lambda a, b: np.linalg.norm(a - b, axis=1)
                else:
                    base0 = tr.layer_jacobians[(i, i)]
                    radius = 1e-2 * max(spectral_norm_stack(base0[None])[0], 1.0)
                    va, vb = _probe_pairs_mat(rng, base0, per_ctx, radius)
                    eval_fn, node = prober.eval_j, i
                    dist_fn = lambda a, b: spectral_norm_stack(a - b)

                za, zb = eval_fn(node, va), eval_fn(node, vb)
                dist = dist_fn(va, vb)
                ok = dist > 1e-12
                slopes = np.zeros_like(dist)
                slopes[ok] = np.abs(za - zb)[ok] / dist[ok]
                total += int(ok.sum())

                if cross_check and ctx_idx == 0:
                    _cross_check_released(
                        aug, kind, i, tr, contexts[ctx_idx], va[0], float(za[0])
                    )

                bad = slopes > bound * (1.0 + tol)
                shrink = 1.0
                for _ in range(max_shrinks):
                    if not bad.any():
                        break
                    shrink /= 10.0
                    idx = np.where(bad)[0]
                    va2 = base0 + (va[idx] - base0) * shrink
                    vb2 = base0 + (vb[idx] - base0) * shrink
                    za2, zb2 = eval_fn(node, va2), eval_fn(node, vb2)
                    d2 = dist_fn(va2, vb2)
                    ok2 = d2 > 1e-14
                    s2 = np.zeros_like(d2)
                    s2[ok2] = np.abs(za2 - zb2)[ok2] / d2[ok2]
                    slopes[idx] = s2
                    va[idx], vb[idx] = va2, vb2
                    bad = slopes > bound * (1.0 + tol)

                k = int(np.argmax(slopes))
                if slopes[k] > max_slope:
                    max_slope = float(slopes[k])
                    extremal = {
                        "context_x": contexts[ctx_idx][0].tolist(),
                        "context_y": int(contexts[ctx_idx][1]),
                        "a": va[k].tolist(),
                        "b": vb[k].tolist(),
                        "slope": float(slopes[k]),
                    }
                if bad.any() and witness is None:
                    kbad = int(np.where(bad)[0][0])
                    witness = {
                        "node": f"{kind}{i}",
                        "context_x": contexts[ctx_idx][0].tolist(),
                        "context_y": int(contexts[ctx_idx][1]),
                        "a": va[kbad].tolist(),
                        "b": vb[kbad].tolist(),
                        "slope": float(slopes[kbad]),
                        "bound": float(bound),
                    }
                slack = float(
                    np.min((bound * (1.0 + tol) - slopes) / max(bound, 1e-300))
                )
                worst = min(worst, slack)
            node_stats.append(
                {
                    "node": f"{kind}{i}",
                    "bound": float(bound),
                    "max_slope": max_slope,
                    "ratio": max_slope / bound if bound > 0 else math.inf,
                    "extremal": extremal,
                }
            )

    return VerificationReport(
        name="release_lipschitz",
        trials=total,
        worst_slack=float(worst),
        witness=witness,
        details={"nodes": node_stats},
    )


def _cross_check_released(aug, kind, i, trace, context, probe_value, fast_value):
    """One probe per node also goes through the generic graph release path;
    disagreement means the vectorized prober is wrong."""
    x, y = context
    g = aug
    order = []
    for k in range(1, i + 1):
        order.append(f"V{k}")
        order.append(f"J{k}")
    prefix = order[: 2 * (i - 1) + (1 if kind == "V" else 2)]
    for name in prefix:
        g = release(g, name)
    inputs = {"x": np.asarray(x, dtype=np.float64), "y": np.array([float(y)])}
    for name in prefix:
        k = int(name[1:])
        if name.startswith("V"):
            inputs[name] = trace.layer_values[k]
        else:
            inputs[name] = trace.layer_jacobians[(k, k)]
    inputs[f"{kind}{i}"] = np.asarray(probe_value, dtype=np.float64)
    got = float(evaluate(g, inputs)[0])
    if abs(got - fast_value) > 1e-9:
        raise AssertionError(
            f"released-graph cross-check failed at {kind}{i}: "
            f"graph={got!r} fast={fast_value!r}"
        )


def release_lipschitz_mutation_check(
    net: SmoothNet,
    gamma: float,
    params: AugmentationParams,
    report: VerificationReport,
    scale: float = 0.01,
    tol: float = 1e-6,
) -> VerificationReport:
    """Re-evaluate the recorded extremal probe pairs against corrupted
    constants (kappa-tilde scaled by ``scale``); the harness must produce a
    witness if the original constants were meaningfully tight."""
    consts = release_lipschitz_constants(net, gamma, params)
    witness = None
    worst = math.inf
    trials = 0
    probers = {}
    for stat in report.details["nodes"]:
        ext = stat["extremal"]
        if ext is None:
            continue
        node = stat["node"]
        kind, i = node[0], int(node[1:])
        bound = (consts.v_prime(i) if kind == "V" else consts.j(i)) * scale
        key = (tuple(ext["context_x"]), ext["context_y"])
        if key not in probers:
            x = np.asarray(ext["context_x"])
            probers[key] = _ReleasedProber(
                net, gamma, params, forward_trace(net, x), ext["context_y"]
            )
        prober = probers[key]
        a = np.asarray(ext["a"])
        b = np.asarray(ext["b"])
        if kind == "V":
            za, zb = prober.eval_v(i, a[None]), prober.eval_v(i, b[None])
            dist = float(np.linalg.norm(a - b))
        else:
            za, zb = prober.eval_j(i, a[None]), prober.eval_j(i, b[None])
            dist = float(spectral_norm_stack((a - b)[None])[0])
        slope = abs(float(za[0]) - float(zb[0])) / dist if dist > 0 else 0.0
        trials += 1
        slack = (bound * (1.0 + tol) - slope) / max(bound, 1e-300)
        worst = min(worst, slack)
        if slope > bound * (1.0 + tol) and witness is None:
            witness = {
                "node": node,
                "a": a.tolist(),
                "b": b.tolist(),
                "slope": slope,
                "corrupted_bound": float(bound),
            }
    return VerificationReport(
        name="release_lipschitz_mutation",
        trials=trials,
        worst_slack=float(worst),
        witness=witness,
        informational=True,
        details={"found_witness": witness is not None},
    )


def verify_telescoping(
    net: SmoothNet, x, nu, mutation_scale: float = 1.0
) -> VerificationReport:
    """Jacobian difference across a perturbation telescopes into per-layer
    differences sandwiched by downstream/upstream Jacobians."""
    x = np.asarray(x, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    t0 = forward_trace(net, x)
    t1 = forward_trace(net, x + nu)
    q = net.num_layers
    worst = math.inf
    witness = None
    pairs = 0
    for j in range(1, q + 1):
        for jp in range(j, q + 1):
            lhs = t0.jacobian(jp, j) - t1.jacobian(jp, j)
            rhs = np.zeros_like(lhs)
            for ip in range(j, jp + 1):
                rhs += (
                    t1.jacobian(jp, ip + 1)
                    @ (t0.jacobian(ip, ip) - t1.jacobian(ip, ip))
                    @ t0.jacobian(ip - 1, j)
                )
            dev = float(np.max(np.abs(lhs - rhs * mutation_scale)))
            slack = 1e-8 - dev
            pairs += 1
            if slack < worst:
                worst = slack
                if slack < 0 and witness is None:
                    witness = {
                        "pair": [j, jp],
                        "x": x.tolist(),
                        "nu": nu.tolist(),
                        "max_abs_deviation": dev,
                    }
    return VerificationReport(
        name="telescoping", trials=pairs, worst_slack=float(worst), witness=witness
    )


def verify_finite_change(
    net: SmoothNet, j: int, x, nu, mutation_scale: float = 1.0, samples: int = 32
) -> VerificationReport:
    """Displacement of a layer value is bounded by (Jacobian norm + half the
    measured Jacobian drift) times the step.  The drift constant is measured
    first along the segment, then inflated x1.1."""
    x = np.asarray(x, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    nrm = float(np.linalg.norm(nu))
    if nrm == 0.0:
        return VerificationReport(name="finite_change", trials=1, worst_slack=0.0)
    base_jac = _input_jacobian(net, x, j)
    kappa_hat = 0.0
    for t in np.linspace(1.0 / samples, 1.0, samples):
        jt = _input_jacobian(net, x + t * nu, j)
        kappa_hat = max(
            kappa_hat,
            float(spectral_norm_stack((jt - base_jac)[None])[0]) / (t * nrm),
        )
    kappa_hat *= 1.1
    lhs = float(
        np.linalg.norm(
            np.asarray(_layer_values(net, x)[j])
            - np.asarray(_layer_values(net, x + nu)[j])
        )
    )
    rhs = (
        (float(spectral_norm_stack(base_jac[None])[0]) + 0.5 * kappa_hat * nrm)
        * nrm
        * mutation_scale
    )
    slack = float(rhs - lhs)
    tol = 1e-12  # the linear case is an exact equality up to float noise
    witness = None
    if slack < -tol:
        witness = {
            "layer": j,
            "x": x.tolist(),
            "nu": nu.tolist(),
            "lhs": lhs,
            "rhs": rhs,
        }
    return VerificationReport(
        name="finite_change",
        trials=1,
        worst_slack=slack,
        tolerance=tol,
        witness=witness,
        details={"kappa_hat": float(kappa_hat)},
    )


def verify_jacobian_fd(
    net: SmoothNet,
    x,
    step: float,
    mutation_scale: float = 1.0,
    rel_tol: float = 1e-5,
    informational_step: float = 1e-3,
) -> VerificationReport:
    """Central finite differences of every layer value against the exact
    input Jacobians.  Steps larger than ``informational_step`` only report
    the observed error without failing."""
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    t0 = forward_trace(net, x)
    q = net.num_layers
    d = x.shape[0]
    fd = {j: np.zeros_like(t0.jacobian(j, 1)) for j in range(1, q + 1)}
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        vp = _layer_values(net, x + e)
        vm = _layer_values(net, x - e)
        for j in range(1, q + 1):
            fd[j][:, k] = (vp[j] - vm[j]) / (2 * step)
    worst = math.inf
    witness = None
    for j in range(1, q + 1):
        exact = t0.jacobian(j, 1) * mutation_scale
        denom = max(float(np.linalg.norm(exact)), 1e-12)
        rel = float(np.linalg.norm(fd[j] - exact)) / denom
        slack = rel_tol - rel
        if slack < worst:
            worst = slack
            if slack < 0 and witness is None:
                witness = {"layer": j, "x": x.tolist(), "rel_error": rel, "step": step}
    informational = step > informational_step
    return VerificationReport(
        name="jacobian_fd",
        trials=q * d,
        worst_slack=float(worst),
        witness=witness,
        informational=informational,
        details={"step": step},
    )
