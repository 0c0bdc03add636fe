import math

import numpy as np
import pytest

from lipaug.bounds import leading_term
from lipaug.network import ACTIVATIONS, SmoothNet, forward_trace
from lipaug.training import (
    DatasetSpec,
    TrainConfig,
    _forward_batch,
    _leading_term_batched,
    _penalty_value_and_grads,
    init_weights,
    make_dataset,
    margin_jacobian,
    reg_penalty,
    train,
)
from oracles import fd_jacobian


class TestMakeDataset:
    def test_deterministic(self):
        a = make_dataset(DatasetSpec("two_moons", 10, 0.15, 7))
        b = make_dataset(DatasetSpec("two_moons", 10, 0.15, 7))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)

    def test_balanced_labels(self):
        for n in (10, 50, 512):
            d = make_dataset(DatasetSpec("two_moons", n, 0.1, 0))
            c0 = int((d.y == 0).sum())
            c1 = int((d.y == 1).sum())
            assert abs(c0 - c1) <= 1

    def test_circles_zero_noise_exact_radii(self):
        d = make_dataset(DatasetSpec("circles", 64, 0.0, 3))
        r = np.linalg.norm(d.x, axis=1)
        np.testing.assert_allclose(r[d.y == 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(r[d.y == 1], 0.5, atol=1e-12)

    def test_split_sizes(self):
        d = make_dataset(DatasetSpec("two_moons", 512, 0.15, 0))
        assert len(d.train_idx) == (4 * 512) // 5
        assert len(d.train_idx) + len(d.test_idx) == 512

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_dataset(DatasetSpec("spiral", 10, 0.1, 0))

    def test_moons_point_symmetric_without_noise(self):
        d = make_dataset(DatasetSpec("two_moons", 40, 0.0, 0))
        x0 = d.x[d.y == 0]
        x1 = d.x[d.y == 1]
        np.testing.assert_allclose(np.sort(x0, axis=0), np.sort(-x1, axis=0), atol=1e-12)


class TestMarginJacobian:
    def test_final_hidden_layer_closed_form(self, rng):
        dims = [3, 5, 2]
        ws = init_weights(dims, rng)
        net = SmoothNet(ws, "tanh")
        x = rng.standard_normal(3)
        logits = forward_trace(net, x).logits
        y = int(np.argmax(logits))
        yp = int(np.argmin(logits))  # two classes
        u = margin_jacobian(net, x, y, 1)
        e = np.zeros(2)
        e[y], e[yp] = 1.0, -1.0
        np.testing.assert_allclose(u, ws[1].T @ e, atol=1e-12)

    def test_matches_fd_of_margin(self, rng):
        dims = [3, 6, 5, 4, 2]
        ws = init_weights(dims, rng)
        net = SmoothNet(ws, "tanh")
        x = rng.standard_normal(3)
        t = forward_trace(net, x)
        y = int(np.argmax(t.logits))
        act = ACTIVATIONS["tanh"]
        for layer in range(1, 4):
            u = margin_jacobian(net, x, y, layer)

            def margin_from_hidden(h, layer=layer):
                cur = h
                for l in range(layer, 4):
                    cur = act.fn(ws[l] @ cur) if l < 3 else None
                # recompute forward from the injected hidden value
                cur = h
                for l in range(layer, len(ws)):
                    cur = ws[l] @ cur
                    if l < len(ws) - 1:
                        cur = act.fn(cur)
                other = np.delete(cur, y)
                return np.array([cur[y] - np.max(other)])

            h0 = t.layer_values[2 * layer]
            fd = fd_jacobian(margin_from_hidden, h0, step=1e-5)[0]
            rel = np.linalg.norm(fd - u) / max(np.linalg.norm(u), 1e-12)
            assert rel <= 1e-5

    def test_tie_breaks_to_lowest_index(self, rng):
        # zero weights: every logit ties, so the runner-up against y=0 must be
        # class 1, the lowest non-target index
        w1 = rng.standard_normal((2, 4))
        w2 = rng.standard_normal((3, 2)) * 0.0
        net = SmoothNet([w1, w2])
        u = margin_jacobian(net, rng.standard_normal(4), 0, 1)
        e = np.array([1.0, -1.0, 0.0])
        np.testing.assert_allclose(u, w2.T @ e, atol=1e-15)

    def test_layer_range_validated(self, rng):
        net = SmoothNet(init_weights([3, 4, 2], rng))
        with pytest.raises(ValueError):
            margin_jacobian(net, np.zeros(3), 0, 2)


class TestRegPenalty:
    def test_zero_lambda(self, rng):
        net = SmoothNet(init_weights([3, 4, 2], rng))
        cfg = TrainConfig(lambda_=0.0)
        assert reg_penalty(net, rng.standard_normal(3), 0, cfg) == 0.0

    def test_below_threshold_gated_off(self, rng):
        ws = init_weights([3, 8, 2], rng)
        ws = [w * 1e-3 for w in ws]  # tiny weights -> tiny margin Jacobians
        net = SmoothNet(ws)
        cfg = TrainConfig(lambda_=0.5, sigma_threshold=0.1, depth=2, width=8)
        assert reg_penalty(net, rng.standard_normal(3), 0, cfg) == 0.0

    def test_above_threshold_full_value(self, rng):
        ws = [w * 4.0 for w in init_weights([3, 8, 2], rng)]
        net = SmoothNet(ws)
        x = rng.standard_normal(3)
        u = margin_jacobian(net, x, 0, 1)
        sq = float(u @ u)
        assert sq >= 2 * 0.1  # construction sanity
        cfg = TrainConfig(lambda_=0.5, sigma_threshold=0.1, depth=2, width=8)
        assert reg_penalty(net, x, 0, cfg) == pytest.approx(0.5 * sq, rel=1e-12)

    def test_penalty_gradient_matches_fd(self, rng):
        """Exact double-backward against finite differences of the batch
        penalty, away from gate thresholds and margin ties."""
        dims = [3, 6, 5, 2]
        ws = [1.5 * w for w in init_weights(dims, rng)]
        act = ACTIVATIONS["tanh"]
        X = rng.standard_normal((5, 3))
        Y = rng.integers(0, 2, 5)
        lam, thr = 0.3, 1e-8  # tiny threshold: all gates on, far from the edge
        layers = (1, 2)

        def penalty(ws_flat):
            zs, _ = _forward_batch(ws_flat, act, X)
            logits = zs[-1]
            masked = logits.copy()
            masked[np.arange(5), Y] = -np.inf
            yp = np.argmax(masked, axis=1)
            e = np.zeros_like(logits)
            e[np.arange(5), Y] = 1.0
            e[np.arange(5), yp] -= 1.0
            val, _ = _penalty_value_and_grads(
                ws_flat, act, zs, _forward_batch(ws_flat, act, X)[1],
                e, layers, lam, thr,
            )
            return val

        zs, acts = _forward_batch(ws, act, X)
        logits = zs[-1]
        masked = logits.copy()
        masked[np.arange(5), Y] = -np.inf
        yp = np.argmax(masked, axis=1)
        e = np.zeros_like(logits)
        e[np.arange(5), Y] = 1.0
        e[np.arange(5), yp] -= 1.0
        _, grads = _penalty_value_and_grads(ws, act, zs, acts, e, layers, lam, thr)

        h = 1e-6
        for l in range(len(ws)):
            flat_idx = [(0, 0), (1, 2), (ws[l].shape[0] - 1, ws[l].shape[1] - 1)]
            for idx in flat_idx:
                w0 = ws[l][idx]
                ws[l][idx] = w0 + h
                up = penalty(ws)
                ws[l][idx] = w0 - h
                dn = penalty(ws)
                ws[l][idx] = w0
                fd = (up - dn) / (2 * h)
                rel = abs(fd - grads[l][idx]) / max(abs(fd), 1e-8)
                assert rel <= 1e-4, f"layer {l} idx {idx}: fd={fd} got={grads[l][idx]}"


class TestTrain:
    def test_deterministic_byte_for_byte(self):
        cfg = TrainConfig(
            lambda_=0.1, epochs=5, dataset=DatasetSpec("two_moons", 64, 0.15, 3),
            depth=3, width=8, seed=11,
        )
        _, m1 = train(cfg)
        _, m2 = train(cfg)
        assert m1.to_csv() == m2.to_csv()

    def test_lambda_zero_equals_plain_ce(self):
        base = dict(
            epochs=5, dataset=DatasetSpec("two_moons", 64, 0.15, 3),
            depth=3, width=8, seed=11,
        )
        n1, m1 = train(TrainConfig(lambda_=0.0, **base))
        n2, m2 = train(TrainConfig(lambda_=0.0, regularized_layers=(), **base))
        assert m1.to_csv() == m2.to_csv()
        for w1, w2 in zip(n1.weights, n2.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_two_moons_pinned_schedule_fits(self):
        # depth-4 width-32, 100 epochs, lr 0.1 decayed x0.2 at 60
        cfg = TrainConfig(
            lambda_=0.0, epochs=100, learning_rate=0.1, lr_decay=(0.2, (60,)),
            batch_size=32, seed=1, dataset=DatasetSpec("two_moons", 512, 0.15, 1),
            depth=4, width=32,
        )
        _, metrics = train(cfg)
        assert metrics.train_acc[-1] == 1.0

    def test_metrics_csv_header(self):
        cfg = TrainConfig(
            epochs=2, dataset=DatasetSpec("two_moons", 32, 0.15, 0),
            depth=2, width=4,
        )
        _, metrics = train(cfg)
        lines = metrics.to_csv().strip().split("\n")
        assert lines[0] == "epoch,train_loss,train_acc,test_acc,jac_frob_sq,leading_term"
        assert len(lines) == 3

    def test_batched_leading_term_matches_bounds(self, rng):
        ws = init_weights([2, 6, 5, 2], rng)
        net = SmoothNet(ws)
        act = ACTIVATIONS["tanh"]
        d = make_dataset(DatasetSpec("two_moons", 48, 0.1, 5))
        X, Y = d.train_x, d.train_y
        zs, acts = _forward_batch(list(net.weights), act, X)
        got = _leading_term_batched(list(net.weights), act, zs, acts, Y)
        want = leading_term(net, list(zip(X, Y))).aggregate
        if math.isnan(want):
            assert math.isnan(got)
        else:
            assert got == pytest.approx(want, rel=1e-9)

    def test_invalid_regularized_layers(self):
        with pytest.raises(ValueError):
            train(
                TrainConfig(
                    lambda_=0.1, regularized_layers=(5,), epochs=1,
                    dataset=DatasetSpec("two_moons", 16, 0.1, 0), depth=3, width=4,
                )
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda_=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(sigma_threshold=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_divergence_raises_with_checkpoint(self):
        cfg = TrainConfig(
            lambda_=0.1, epochs=8, learning_rate=1e12, batch_size=16,
            dataset=DatasetSpec("two_moons", 64, 0.15, 0), depth=3, width=8,
        )
        from lipaug.training import TrainingDiverged

        with np.errstate(over="ignore"), pytest.raises(TrainingDiverged) as exc:
            train(cfg)
        assert exc.value.net.depth == 3  # last finite checkpoint is attached

    def test_softplus_penalty_gradient_fd(self, rng):
        # the double-backward uses phi'' explicitly; exercise the second
        # activation's closed form too
        dims = [3, 5, 4, 2]
        ws = [1.5 * w for w in init_weights(dims, rng)]
        act = ACTIVATIONS["softplus"]
        X = rng.standard_normal((4, 3))
        Y = rng.integers(0, 2, 4)
        layers = (1, 2)

        def e_sel_of(ws_now):
            zs, _ = _forward_batch(ws_now, act, X)
            logits = zs[-1]
            masked = logits.copy()
            masked[np.arange(4), Y] = -np.inf
            yp = np.argmax(masked, axis=1)
            e = np.zeros_like(logits)
            e[np.arange(4), Y] = 1.0
            e[np.arange(4), yp] -= 1.0
            return e

        def penalty(ws_now):
            zs, acts = _forward_batch(ws_now, act, X)
            val, _ = _penalty_value_and_grads(
                ws_now, act, zs, acts, e_sel_of(ws_now), layers, 0.2, 1e-9
            )
            return val

        zs, acts = _forward_batch(ws, act, X)
        _, grads = _penalty_value_and_grads(
            ws, act, zs, acts, e_sel_of(ws), layers, 0.2, 1e-9
        )
        h = 1e-6
        for l in range(len(ws)):
            idx = (0, 1)
            w0 = ws[l][idx]
            ws[l][idx] = w0 + h
            up = penalty(ws)
            ws[l][idx] = w0 - h
            dn = penalty(ws)
            ws[l][idx] = w0
            fd = (up - dn) / (2 * h)
            assert abs(fd - grads[l][idx]) / max(abs(fd), 1e-8) <= 1e-4

    def test_augmented_training_loss_equals_ramp_loss(self):
        """With thresholds measured on the training split, the mean augmented
        loss of a trained model equals its mean ramp loss."""
        from lipaug.bounds import measure, params_from_measurements
        from lipaug.graph import augmented_loss
        from lipaug.network import ramp_loss

        cfg = TrainConfig(
            lambda_=0.0, epochs=120, learning_rate=0.3, lr_decay=(0.2, (72,)),
            batch_size=32, seed=5, dataset=DatasetSpec("two_moons", 96, 0.15, 5),
            depth=3, width=8,
        )
        net, _ = train(cfg)
        pairs = make_dataset(cfg.dataset).train_pairs()
        m = measure(net, pairs, xi=1.0 / 9.0)
        assert m.gamma > 0
        params = params_from_measurements(m)
        gamma = m.gamma  # ramp width at the realized margin
        plain = np.mean(
            [ramp_loss(forward_trace(net, x).logits, y, gamma) for x, y in pairs]
        )
        aug = np.mean(
            [augmented_loss(net, x, y, gamma, params)[0] for x, y in pairs]
        )
        assert aug == pytest.approx(plain, abs=1e-12)
