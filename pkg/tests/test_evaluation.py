"""Displacement metric, baseline, and report-aggregation tests."""

import math

import numpy as np
import pytest

from riskcast.evaluation import (ade, constant_velocity_baseline, evaluate,
                                 fde)
from riskcast.geometry import AgentState, rotation
from riskcast.intention import JointPrediction
from riskcast.scene import AgentHistory, generate_scenario


class TestAde:
    def test_perfect(self):
        t = np.arange(10, dtype=float).reshape(5, 2)
        assert ade(t, t, 5) == 0.0

    def test_constant_offset(self):
        truth = np.zeros((8, 2))
        pred = truth + np.array([1.0, 0.0])
        for h in (1, 4, 8):
            assert ade(pred, truth, h) == pytest.approx(1.0, abs=1e-12)

    def test_growing_offset_series(self):
        truth = np.zeros((10, 2))
        pred = np.zeros((10, 2))
        pred[:, 0] = 0.1 * np.arange(1, 11)
        assert ade(pred, truth, 10) == pytest.approx(0.55, abs=1e-12)

    def test_zero_horizon_rejected(self):
        with pytest.raises(ValueError):
            ade(np.zeros((5, 2)), np.zeros((5, 2)), 0)

    def test_horizon_beyond_length_rejected(self):
        with pytest.raises(ValueError):
            ade(np.zeros((5, 2)), np.zeros((5, 2)), 6)


class TestFde:
    def test_perfect(self):
        t = np.arange(10, dtype=float).reshape(5, 2)
        assert fde(t, t, 5) == 0.0

    def test_constant_offset(self):
        truth = np.zeros((8, 2))
        pred = truth + np.array([0.0, 2.0])
        assert fde(pred, truth, 8) == pytest.approx(2.0, abs=1e-12)

    def test_growing_offset(self):
        truth = np.zeros((10, 2))
        pred = np.zeros((10, 2))
        pred[:, 0] = 0.1 * np.arange(1, 11)
        assert fde(pred, truth, 10) == pytest.approx(1.0, abs=1e-12)

    def test_equals_single_step_ade(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(10, 2))
        truth = rng.normal(size=(10, 2))
        for h in (1, 5, 10):
            assert fde(pred, truth, h) == pytest.approx(
                ade(pred[h - 1:h], truth[h - 1:h], 1), abs=1e-12)


class TestRigidInvariance:
    def test_metrics_invariant_under_rigid_transform(self):
        rng = np.random.default_rng(1)
        pred = rng.normal(size=(12, 2)) * 10
        truth = rng.normal(size=(12, 2)) * 10
        R = rotation(0.83)
        shift = np.array([42.0, -7.0])
        pred2 = pred @ R.T + shift
        truth2 = truth @ R.T + shift
        for h in (1, 6, 12):
            assert ade(pred2, truth2, h) == pytest.approx(
                ade(pred, truth, h), abs=1e-9)
            assert fde(pred2, truth2, h) == pytest.approx(
                fde(pred, truth, h), abs=1e-9)


class TestBaseline:
    def history(self, v, n=5, dt=0.1):
        states = [AgentState(v * dt * t, 0.0, 0.0, v, 0.0)
                  for t in range(n)]
        return AgentHistory("a", states)

    def test_constant_velocity_truth_gives_zero(self):
        h = self.history(v=4.0)
        pred = constant_velocity_baseline(h, horizon=10, dt=0.1)
        truth = np.array([[h.states[-1].x + 4.0 * 0.1 * t, 0.0]
                          for t in range(1, 11)])
        assert ade(pred, truth, 10) == pytest.approx(0.0, abs=1e-12)

    def test_turning_truth_gives_error(self):
        scn = generate_scenario("left_turn", 1, seed=2)
        truth = np.array([[s.x, s.y] for s in scn.ego.future_truth])
        pred = constant_velocity_baseline(scn.ego, len(truth), scn.dt)
        assert ade(pred, truth, len(truth)) > 0.5

    def test_single_state_holds_position(self):
        st = AgentState(3.0, 4.0, 0.0, 9.0, 0.0)
        pred = constant_velocity_baseline(AgentHistory("a", [st]), 5, 0.1)
        assert np.allclose(pred, [[3.0, 4.0]] * 5)

    def test_deterministic(self):
        h = self.history(v=7.0)
        a = constant_velocity_baseline(h, 10, 0.1)
        b = constant_velocity_baseline(h, 10, 0.1)
        assert np.array_equal(a, b)


def oracle_predict(scn):
    """A predictor that returns the ground truth as its single mode."""
    trajs = np.stack([
        np.array([[s.x, s.y] for s in a.future_truth])
        for a in scn.agents
    ])[None]
    return JointPrediction(trajs, np.array([1.0]),
                           [a.agent_id for a in scn.agents],
                           scn.scenario_id)


class TestEvaluate:
    def test_oracle_model_scores_zero(self):
        scns = [generate_scenario("straight", 2, s) for s in range(3)]
        report = evaluate(oracle_predict, scns)
        for scope in ("ego", "all"):
            vals = report.mean("all", "model_selected", scope, "ade")
            assert np.allclose(vals, 0.0, atol=1e-12)

    def test_subset_assignment(self):
        scns = [generate_scenario("left_turn", 2, 1),
                generate_scenario("crossing_conflict", 3, 2)]
        report = evaluate(oracle_predict, scns)
        assert report.count("LT") == 1
        assert report.count("conflict") == 1
        assert report.count("normal") == 1
        assert report.count("all") == 2

    def test_aggregation_is_mean_of_per_scenario(self):
        scns = [generate_scenario("straight", 1, s) for s in range(4)]
        report = evaluate(lambda s: oracle_predict(s), scns)
        entry = report.entries[("all", "cv", "ego")]
        stacked = np.stack(entry["ade"])
        assert np.allclose(report.mean("all", "cv", "ego", "ade"),
                           stacked.mean(axis=0), atol=1e-12)

    def test_missing_future_rejected(self):
        scn = generate_scenario("straight", 1, 0)
        scn.agents[0].future_truth = None
        with pytest.raises(ValueError, match="futures"):
            evaluate(oracle_predict, [scn])

    def test_report_rows_and_csv(self, tmp_path):
        scns = [generate_scenario("straight", 2, s) for s in range(2)]
        report = evaluate(oracle_predict, scns)
        rows = report.rows()
        assert all({"subset", "estimator", "scope", "metric"} <= set(r)
                   for r in rows)
        path = tmp_path / "metrics.csv"
        report.write_csv(str(path))
        header = path.read_text().splitlines()[0]
        assert header.startswith("subset,estimator,scope,metric,count,h1s")
        report.write_json(str(tmp_path / "metrics.json"))

    def test_cv_baseline_reported(self):
        scns = [generate_scenario("left_turn", 1, s) for s in range(2)]
        report = evaluate(oracle_predict, scns)
        cv = report.mean("LT", "cv", "ego", "ade")
        assert cv[-1] > 0.5  # turning scenes defeat constant velocity
