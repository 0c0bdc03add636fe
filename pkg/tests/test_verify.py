import json

import numpy as np
import pytest

from conftest import random_net
from lipaug.bounds import measure, params_from_measurements
from lipaug.graph import AugmentationParams
from lipaug.linalg import spectral_norm
from lipaug.network import SmoothNet, forward_trace, margin
from lipaug.verify import (
    release_lipschitz_mutation_check,
    verify_finite_change,
    verify_jacobian_fd,
    verify_release_lipschitz,
    verify_telescoping,
    verify_upper_bound,
    write_reports,
)


def self_labeled_data(net, rng, n=12, min_margin=1e-3):
    """Points labeled by the net itself, so every margin is positive."""
    data, margins = [], []
    while len(data) < n:
        x = rng.standard_normal(net.input_dim)
        t = forward_trace(net, x)
        y = int(np.argmax(t.logits))
        m = margin(t.logits, y)
        if m > min_margin:
            data.append((x, y))
            margins.append(m)
    return data, margins


class TestUpperBound:
    def test_satisfying_params_equality(self, rng, small_net):
        data, margins = self_labeled_data(small_net, rng)
        gamma = 2.0 * float(np.median(margins))
        m = measure(small_net, data, 0.01)
        params = params_from_measurements(m)
        rep = verify_upper_bound(
            small_net, data, params, trials=20, gamma=gamma, xi=0.01
        )
        assert rep.passed
        # on the training points with measured thresholds the two losses agree
        assert rep.details["equality_worst_slack"] == pytest.approx(1e-12, abs=1e-13)

    def test_half_params_still_upper_bound(self, rng, small_net):
        data, margins = self_labeled_data(small_net, rng)
        gamma = 2.0 * float(np.median(margins))
        m = measure(small_net, data, 0.01)
        full = params_from_measurements(m)
        half = AugmentationParams(full.s / 2.0, full.kappa / 2.0)
        rep = verify_upper_bound(
            small_net, data, half, trials=50, gamma=gamma, xi=0.01
        )
        assert rep.passed

    @pytest.mark.parametrize("gamma", [1e-9, 1e9])
    def test_extreme_gamma_trivial_equality(self, rng, small_net, gamma):
        # tiny gamma -> z = 0 everywhere; huge gamma -> z ~ 1 everywhere;
        # either way the upper bound and the equality branch hold
        data, _ = self_labeled_data(small_net, rng, n=6)
        m = measure(small_net, data, 0.01)
        params = params_from_measurements(m)
        rep = verify_upper_bound(
            small_net, data, params, trials=5, gamma=gamma, xi=0.01
        )
        assert rep.passed

    def test_mutation_fails_equality(self, rng, small_net):
        data, margins = self_labeled_data(small_net, rng)
        gamma = 2.0 * float(np.max(margins))  # every z strictly inside (0, 1)
        m = measure(small_net, data, 0.01)
        params = params_from_measurements(m)
        rep = verify_upper_bound(
            small_net, data, params, trials=5, gamma=gamma, xi=0.01,
            mutation_scale=0.99,
        )
        assert not rep.passed
        assert rep.witness is not None

    def test_trials_validated(self, small_net):
        with pytest.raises(ValueError):
            verify_upper_bound(small_net, [(np.zeros(3), 0)], None, 0, 1.0)


class TestReleaseLipschitz:
    @pytest.fixture
    def setup(self, rng):
        net = random_net(rng, dims=[4, 6, 6, 2], scale=0.8)
        data, margins = self_labeled_data(net, rng)
        gamma = 2.0 * float(np.median(margins))
        m = measure(net, data, 1e-4)
        return net, data, gamma, params_from_measurements(m)

    def test_no_violations_on_healthy_net(self, setup):
        net, data, gamma, params = setup
        rep = verify_release_lipschitz(
            net, gamma, params, probes=400, seed=1, dataset=data[:4]
        )
        assert rep.passed
        assert rep.witness is None
        assert rep.trials > 0

    def test_linear_net_slope_below_bound(self, rng):
        net = SmoothNet([0.5 * rng.standard_normal((2, 3))])
        data = [(rng.standard_normal(3), 0) for _ in range(4)]
        m = measure(net, data, 0.01)
        params = params_from_measurements(m)
        rep = verify_release_lipschitz(
            net, 0.5, params, probes=200, seed=0, dataset=data
        )
        assert rep.passed
        # single node V1: downstream is just the ramp through the indicators
        stats = {s["node"]: s for s in rep.details["nodes"]}
        assert stats["V1"]["max_slope"] <= stats["V1"]["bound"]

    def test_corrupted_constants_flag_violation(self, setup):
        net, data, gamma, params = setup
        rep = verify_release_lipschitz(
            net, gamma, params, probes=300, seed=2, dataset=data[:3],
            constants_scale=0.01,
        )
        assert not rep.passed
        assert rep.witness is not None
        assert rep.witness["slope"] > rep.witness["bound"]

    def test_mutation_check_reuses_extremal_pairs(self, setup):
        net, data, gamma, params = setup
        rep = verify_release_lipschitz(
            net, gamma, params, probes=400, seed=3, dataset=data[:4]
        )
        mut = release_lipschitz_mutation_check(net, gamma, params, rep, scale=0.01)
        assert mut.details["found_witness"]
        # the recorded witness genuinely violates the corrupted bound
        assert mut.witness["slope"] > mut.witness["corrupted_bound"]

    def test_deterministic_under_seed(self, setup):
        net, data, gamma, params = setup
        r1 = verify_release_lipschitz(
            net, gamma, params, probes=150, seed=9, dataset=data[:3]
        )
        r2 = verify_release_lipschitz(
            net, gamma, params, probes=150, seed=9, dataset=data[:3]
        )
        assert r1.worst_slack == r2.worst_slack
        assert json.dumps(r1.details["nodes"]) == json.dumps(r2.details["nodes"])

    def test_probes_validated(self, setup):
        net, data, gamma, params = setup
        with pytest.raises(ValueError):
            verify_release_lipschitz(net, gamma, params, probes=0)


class TestTelescoping:
    def test_linear_net_both_sides_zero(self, rng):
        net = SmoothNet([rng.standard_normal((3, 4))])
        rep = verify_telescoping(net, rng.standard_normal(4), rng.standard_normal(4))
        assert rep.passed
        assert rep.worst_slack == pytest.approx(1e-8, abs=0)

    def test_depth2_tanh_tight(self, rng):
        net = random_net(rng, dims=[3, 5, 2])
        x = rng.standard_normal(3)
        nu = rng.standard_normal(3)
        nu *= 0.1 / np.linalg.norm(nu)
        rep = verify_telescoping(net, x, nu)
        assert rep.passed
        assert rep.worst_slack >= 1e-8 - 1e-10

    def test_many_random_depth4(self, rng):
        net = random_net(rng, dims=[3, 4, 4, 4, 2])
        for _ in range(100):
            x = rng.standard_normal(3)
            nu = 0.1 * rng.standard_normal(3)
            assert verify_telescoping(net, x, nu).passed

    def test_mutation_detected(self, rng):
        net = random_net(rng, dims=[3, 4, 4, 2], scale=1.0)
        x = rng.standard_normal(3)
        nu = 0.3 * rng.standard_normal(3)
        rep = verify_telescoping(net, x, nu, mutation_scale=1.01)
        assert not rep.passed
        assert rep.witness is not None


class TestFiniteChange:
    def test_linear_equality_along_top_direction(self, rng):
        w = rng.standard_normal((3, 4))
        net = SmoothNet([w])
        _, _, vt = np.linalg.svd(w)
        nu = 0.5 * vt[0]
        rep = verify_finite_change(net, 1, rng.standard_normal(4), nu)
        assert rep.passed
        assert abs(rep.worst_slack) <= 1e-10  # equality case

    def test_tanh_with_slack(self, rng):
        net = random_net(rng, dims=[3, 5, 2])
        x = rng.standard_normal(3)
        nu = 0.05 * rng.standard_normal(3)
        rep = verify_finite_change(net, net.num_layers, x, nu)
        assert rep.passed

    def test_zero_step(self, rng, small_net):
        rep = verify_finite_change(
            small_net, 2, rng.standard_normal(3), np.zeros(3)
        )
        assert rep.passed
        assert rep.worst_slack == 0.0

    def test_mutation_detected_on_tight_case(self, rng):
        w = rng.standard_normal((3, 4))
        net = SmoothNet([w])
        _, _, vt = np.linalg.svd(w)
        nu = 0.5 * vt[0]
        rep = verify_finite_change(
            net, 1, rng.standard_normal(4), nu, mutation_scale=0.99
        )
        assert not rep.passed


class TestJacobianFd:
    def test_identity_net_at_zero(self):
        net = SmoothNet([np.eye(3), np.eye(3)], "tanh")
        rep = verify_jacobian_fd(net, np.zeros(3), step=1e-4)
        assert rep.passed

    def test_random_net(self, rng):
        net = random_net(rng, dims=[4, 6, 5, 3])
        rep = verify_jacobian_fd(net, rng.standard_normal(4), step=1e-4)
        assert rep.passed
        assert rep.worst_slack > 0

    def test_large_step_informational(self, rng):
        net = random_net(rng, dims=[3, 5, 2], scale=1.2)
        rep = verify_jacobian_fd(net, rng.standard_normal(3), step=1e-1)
        assert rep.informational
        assert rep.passed  # informational mode never fails the suite
        # but the degradation is visible in the recorded slack
        tight = verify_jacobian_fd(net, rng.standard_normal(3), step=1e-4)
        assert tight.worst_slack > rep.worst_slack

    def test_mutation_detected(self, rng):
        net = random_net(rng, dims=[3, 4, 2])
        rep = verify_jacobian_fd(
            net, rng.standard_normal(3), step=1e-4, mutation_scale=1.01
        )
        assert not rep.passed

    def test_step_validated(self, small_net):
        with pytest.raises(ValueError):
            verify_jacobian_fd(small_net, np.zeros(3), step=0.0)


class TestReports:
    def test_jsonl_roundtrip(self, tmp_path, rng):
        net = random_net(rng, dims=[3, 4, 2])
        x = rng.standard_normal(3)
        reps = [
            verify_telescoping(net, x, 0.1 * rng.standard_normal(3)),
            verify_jacobian_fd(net, x, step=1e-4),
        ]
        out = tmp_path / "report.jsonl"
        ok = write_reports(reps, out)
        assert ok
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 2
        for ln in lines:
            doc = json.loads(ln)
            assert set(doc) == {"name", "trials", "worst_slack", "witness_path"}
            assert doc["witness_path"] is None

    def test_witness_file_written(self, tmp_path, rng):
        net = random_net(rng, dims=[3, 4, 2], scale=1.0)
        x = rng.standard_normal(3)
        rep = verify_telescoping(net, x, 0.3 * rng.standard_normal(3), mutation_scale=1.05)
        assert not rep.passed
        out = tmp_path / "report.jsonl"
        ok = write_reports([rep], out, witness_dir=tmp_path / "wit")
        assert not ok
        doc = json.loads(out.read_text().strip())
        assert doc["witness_path"] is not None
        witness = json.loads(open(doc["witness_path"]).read())
        assert "pair" in witness

    def test_report_requires_witness_on_failure(self):
        from lipaug.verify import VerificationReport

        with pytest.raises(ValueError):
            VerificationReport(name="x", trials=1, worst_slack=-1.0)

    def test_checks_deterministic_given_seed(self, rng, small_net):
        data, margins = self_labeled_data(small_net, rng, n=6)
        gamma = 2.0 * float(np.median(margins))
        m = measure(small_net, data, 0.01)
        params = params_from_measurements(m)
        lines = []
        for _ in range(2):
            rep = verify_upper_bound(
                small_net, data, params, trials=10, gamma=gamma, xi=0.01, seed=4
            )
            lines.append(rep.to_json_line())
        assert lines[0] == lines[1]

    def test_finite_change_random_small_steps(self, rng):
        # displacement bound holds across random draws with ||nu|| <= 0.1
        net = random_net(rng, dims=[3, 5, 4, 2], scale=0.9)
        for _ in range(20):
            x = rng.standard_normal(3)
            nu = rng.standard_normal(3)
            nu *= rng.uniform(0.0, 0.1) / np.linalg.norm(nu)
            for j in (2, net.num_layers):
                assert verify_finite_change(net, j, x, nu).passed
