"""Displacement metrics, the constant-velocity baseline, and per-subset
evaluation reports (normal vs conflict scenes, and by ego lateral intention).

ADE at horizon h is the mean Euclidean error over the first h steps; FDE is
the error at step h. Reports carry the mode-selected metric (primary), the
best-over-modes metric, and the constant-velocity baseline, for the ego
alone and averaged over all predicted agents.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .intention import JointPrediction, label_intentions, select_mode
from .scene import AgentHistory, Scenario

SUBSETS = ("all", "normal", "conflict", "LT", "ST", "RT")
ESTIMATORS = ("model_selected", "model_best", "cv")


def ade(pred: np.ndarray, truth: np.ndarray, horizon_steps: int) -> float:
    """Mean L2 distance over the first horizon_steps steps."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if horizon_steps < 1:
        raise ValueError("horizon must be at least one step")
    if horizon_steps > min(len(pred), len(truth)):
        raise ValueError(f"horizon {horizon_steps} exceeds trajectory "
                         f"length {min(len(pred), len(truth))}")
    err = np.linalg.norm(pred[:horizon_steps] - truth[:horizon_steps],
                         axis=-1)
    return float(err.mean())


def fde(pred: np.ndarray, truth: np.ndarray, horizon_steps: int) -> float:
    """L2 distance at exactly step horizon_steps."""
    if horizon_steps < 1:
        raise ValueError("horizon must be at least one step")
    if horizon_steps > min(len(pred), len(truth)):
        raise ValueError(f"horizon {horizon_steps} exceeds trajectory "
                         f"length {min(len(pred), len(truth))}")
    d = np.asarray(pred)[horizon_steps - 1] - np.asarray(truth)[
        horizon_steps - 1]
    return float(np.linalg.norm(d))


def constant_velocity_baseline(history: AgentHistory, horizon: int,
                               dt: float) -> np.ndarray:
    """Extrapolate the last observed velocity; a single-state history holds
    position."""
    last = history.states[-1]
    if len(history.states) < 2:
        v = np.zeros(2)
    else:
        v = last.velocity
    steps = np.arange(1, horizon + 1)[:, None]
    return last.position[None, :] + v[None, :] * dt * steps


@dataclass
class MetricsReport:
    horizons_s: list[int]
    # (subset, estimator, scope) -> {"ade": [per horizon], "fde": [...],
    #                                "count": scenarios}
    entries: dict = field(default_factory=dict)

    def key(self, subset: str, estimator: str, scope: str):
        return (subset, estimator, scope)

    def add(self, subset: str, estimator: str, scope: str,
            ade_vals: np.ndarray, fde_vals: np.ndarray) -> None:
        e = self.entries.setdefault(
            self.key(subset, estimator, scope),
            {"ade": [], "fde": []})
        e["ade"].append(ade_vals)
        e["fde"].append(fde_vals)

    def mean(self, subset: str, estimator: str, scope: str,
             metric: str) -> np.ndarray:
        e = self.entries.get(self.key(subset, estimator, scope))
        if e is None or not e[metric]:
            return np.full(len(self.horizons_s), math.nan)
        return np.mean(np.stack(e[metric]), axis=0)

    def count(self, subset: str) -> int:
        e = self.entries.get(self.key(subset, "model_selected", "ego"))
        return len(e["ade"]) if e else 0

    def rows(self) -> list[dict]:
        out = []
        for subset in SUBSETS:
            for estimator in ESTIMATORS:
                for scope in ("ego", "all"):
                    for metric in ("ade", "fde"):
                        vals = self.mean(subset, estimator, scope, metric)
                        out.append({
                            "subset": subset,
                            "estimator": estimator,
                            "scope": scope,
                            "metric": metric,
                            "count": self.count(subset),
                            **{f"h{h}s": float(v)
                               for h, v in zip(self.horizons_s, vals)},
                        })
        return out

    def write_csv(self, path: str) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)

    def write_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump({"horizons_s": self.horizons_s, "rows": self.rows()},
                      f, indent=1, sort_keys=True)


def _agent_metrics(pred: np.ndarray, truth: np.ndarray,
                   horizons: list[int]) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([ade(pred, truth, h) for h in horizons])
    f = np.array([fde(pred, truth, h) for h in horizons])
    return a, f


def evaluate(predict_fn: Callable[[Scenario], JointPrediction],
             scenarios: list[Scenario]) -> MetricsReport:
    """Score a predictor over scenarios with ground-truth futures.

    predict_fn returns a joint prediction in global coordinates covering a
    subset of the scenario's agents (at least the ego).
    """
    if not scenarios:
        raise ValueError("no scenarios to evaluate")
    dt = scenarios[0].dt
    steps_per_s = max(int(round(1.0 / dt)), 1)
    t_total = scenarios[0].horizon_future
    horizons_s = [s for s in (1, 2, 3, 4, 5) if s * steps_per_s <= t_total]
    horizon_steps = [s * steps_per_s for s in horizons_s]
    if not horizon_steps:  # sub-second horizon: report the full span
        horizons_s = [1]
        horizon_steps = [t_total]
    report = MetricsReport(horizons_s)

    for scn in scenarios:
        if any(not a.future_truth for a in scn.agents):
            raise ValueError(
                f"scenario {scn.scenario_id!r} lacks ground-truth futures")
        jp = predict_fn(scn)
        k_sel = select_mode(jp)
        ego_id = scn.ego.agent_id
        try:
            lateral, _ = label_intentions(scn.ego.future_truth)
        except ValueError:
            lateral = "ST"
        subsets = ["all",
                   "conflict" if scn.template == "crossing_conflict"
                   else "normal",
                   lateral]

        per_est: dict[str, dict[str, list]] = {
            est: {"ego": [], "others": []} for est in ESTIMATORS}
        for i, aid in enumerate(jp.agent_ids):
            agent = scn.agent_by_id(aid)
            truth = np.array([[s.x, s.y] for s in agent.future_truth])
            sel_a, sel_f = _agent_metrics(jp.trajectories[k_sel, i], truth,
                                          horizon_steps)
            best = None
            for k in range(jp.trajectories.shape[0]):
                a_k, f_k = _agent_metrics(jp.trajectories[k, i], truth,
                                          horizon_steps)
                if best is None or a_k[-1] < best[0][-1]:
                    best = (a_k, f_k)
            cv = constant_velocity_baseline(agent, truth.shape[0], scn.dt)
            cv_a, cv_f = _agent_metrics(cv, truth, horizon_steps)
            for est, (a_vals, f_vals) in zip(
                    ESTIMATORS, [(sel_a, sel_f), best, (cv_a, cv_f)]):
                bucket = "ego" if aid == ego_id else "others"
                per_est[est][bucket].append((a_vals, f_vals))

        for est in ESTIMATORS:
            ego_vals = per_est[est]["ego"]
            all_vals = ego_vals + per_est[est]["others"]
            if not ego_vals:
                continue
            ego_a = np.mean([v[0] for v in ego_vals], axis=0)
            ego_f = np.mean([v[1] for v in ego_vals], axis=0)
            all_a = np.mean([v[0] for v in all_vals], axis=0)
            all_f = np.mean([v[1] for v in all_vals], axis=0)
            for subset in subsets:
                report.add(subset, est, "ego", ego_a, ego_f)
                report.add(subset, est, "all", all_a, all_f)
    return report
