"""Loss assembly, the staged training schedule, and the training loop.

Stage 1 (the first stage1_epochs epochs) optimizes the trajectory loss plus
the weighted intention loss; stage 2 adds the risk cost with weight (1 - tau).
A winner-take-all cross-entropy on the mode probabilities (toward the mode
closest to the ground truth) is optimized alongside so that the mode
probabilities are informative; it is reported separately from the staged
total.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .evaluation import ade, fde
from .intention import label_indices, select_mode
from .model import ForwardResult, JointPredictor, ModelConfig
from .risk import RiskConfig, risk_loss_and_grad
from .scene import Scenario


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 2e-4
    lr_decay: float = 1.0   # multiplicative decay applied per epoch
    clip_norm: float = 5.0  # global gradient-norm clip; 0 disables
    weight_decay: float = 3e-4
    epochs: int = 20
    stage1_epochs: int = 5
    tau: float = 0.5
    seed: int = 0
    mode_loss_weight: float = 0.5
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    val_every: int = 1
    risk: RiskConfig = field(default_factory=RiskConfig)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly between 0 and 1")
        if self.stage1_epochs > self.epochs:
            raise ValueError("stage1_epochs cannot exceed epochs")


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    l_pre: list[float] = field(default_factory=list)
    l_man: list[float] = field(default_factory=list)
    l_risk: list[float] = field(default_factory=list)
    l_total: list[float] = field(default_factory=list)
    val_ade: list[float] = field(default_factory=list)
    val_fde: list[float] = field(default_factory=list)
    final_val_ade: float = math.nan
    final_val_fde: float = math.nan

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "L_pre", "L_man", "L_risk", "L",
                        "val_ADE", "val_FDE"])
            for i, ep in enumerate(self.epochs):
                w.writerow([ep, repr(self.l_pre[i]), repr(self.l_man[i]),
                            repr(self.l_risk[i]), repr(self.l_total[i]),
                            repr(self.val_ade[i]), repr(self.val_fde[i])])


def intention_loss(lat_probs: np.ndarray, lon_probs: np.ndarray,
                   labels: list[tuple[int, int]]
                   ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over agents of the lateral plus longitudinal cross-entropies."""
    n = len(labels)
    loss = 0.0
    dlat = np.zeros_like(lat_probs)
    dlon = np.zeros_like(lon_probs)
    for i, (la, lo) in enumerate(labels):
        loss += nn.cross_entropy(lat_probs[i], la)
        loss += nn.cross_entropy(lon_probs[i], lo)
        dlat[i] = nn.cross_entropy_grad(lat_probs[i], la) / n
        dlon[i] = nn.cross_entropy_grad(lon_probs[i], lo) / n
    return loss / n, dlat, dlon


def prediction_loss(trajs: np.ndarray, truth: np.ndarray
                    ) -> tuple[float, int, np.ndarray]:
    """Scene-level winner-take-all: the best mode's summed per-agent
    smooth-L1 against the ground truth, with the gradient flowing into the
    winning mode only. Returns (loss, winner index, d loss / d trajs)."""
    if trajs.shape[1:] != truth.shape:
        raise nn.DimensionError(
            f"prediction_loss: trajectories {trajs.shape} vs truth "
            f"{truth.shape}")
    k_count, n = trajs.shape[0], trajs.shape[1]
    losses = np.array([
        sum(nn.smooth_l1(trajs[k, i], truth[i]) for i in range(n))
        for k in range(k_count)
    ])
    k_star = int(np.argmin(losses))
    grad = np.zeros_like(trajs)
    for i in range(n):
        grad[k_star, i] = nn.smooth_l1_grad(trajs[k_star, i], truth[i])
    return float(losses[k_star]), k_star, grad


def total_loss(l_pre: float, l_man: float, l_risk: float, epoch: int,
               cfg: TrainConfig) -> float:
    """Staged total: the risk term only enters after stage1_epochs."""
    if epoch < 1:
        raise ValueError("epochs are 1-indexed")
    l = l_pre + cfg.tau * l_man
    if epoch > cfg.stage1_epochs:
        l += (1.0 - cfg.tau) * l_risk
    return l


def split_dataset(scenarios: list[Scenario], cfg: TrainConfig
                  ) -> tuple[list[int], list[int], list[int]]:
    rng = nn.seeded_rng(cfg.seed)
    idx = rng.permutation(len(scenarios))
    n_train = int(round(cfg.split[0] * len(idx)))
    n_val = int(round(cfg.split[1] * len(idx)))
    train = idx[:n_train].tolist()
    val = idx[n_train:n_train + n_val].tolist()
    test = idx[n_train + n_val:].tolist()
    return train, val, test


def _truth_matrix(local: Scenario) -> np.ndarray:
    rows = []
    for a in local.agents:
        if not a.future_truth:
            raise ValueError(
                f"agent {a.agent_id!r} has no ground-truth future")
        rows.append([[s.x, s.y] for s in a.future_truth])
    return np.array(rows)


def _scenario_losses(model: JointPredictor, local: Scenario, epoch: int,
                     cfg: TrainConfig) -> tuple[float, float, float]:
    """Forward, losses and backward for one scenario; gradients accumulate
    into the model parameters."""
    res: ForwardResult = model.forward(local)
    truth = _truth_matrix(local)

    l_pre, k_star, dtrajs = prediction_loss(res.trajectories, truth)
    labels = [label_indices(a.future_truth) for a in local.agents]
    l_man, dlat, dlon = intention_loss(res.lat_probs, res.lon_probs, labels)
    dprobs = cfg.mode_loss_weight * nn.cross_entropy_grad(
        res.mode_probs, k_star)

    l_risk = 0.0
    if epoch > cfg.stage1_epochs:
        k_sel = int(np.argmax(res.mode_probs))
        l_risk, drisk = risk_loss_and_grad(
            res.trajectories[k_sel], local, local.ego_index, cfg.risk)
        dtrajs[k_sel] += (1.0 - cfg.tau) * drisk

    model.backward(res, dtrajs, dprobs, cfg.tau * dlat, cfg.tau * dlon)
    return l_pre, l_man, l_risk


def _validate(model: JointPredictor, scenarios: list[Scenario]
              ) -> tuple[float, float]:
    """Mode-selected, full-horizon ego ADE/FDE over the given scenarios."""
    if not scenarios:
        return math.nan, math.nan
    ades, fdes = [], []
    for scn in scenarios:
        jp, _ = model.predict(scn)
        k = select_mode(jp)
        local_ids = jp.agent_ids
        ego_pos = local_ids.index(scn.ego.agent_id)
        truth = np.array([[s.x, s.y]
                          for s in scn.ego.future_truth])
        horizon = truth.shape[0]
        ades.append(ade(jp.trajectories[k, ego_pos], truth, horizon))
        fdes.append(fde(jp.trajectories[k, ego_pos], truth, horizon))
    return float(np.mean(ades)), float(np.mean(fdes))


def train(scenarios: list[Scenario], model_cfg: ModelConfig,
          cfg: TrainConfig, out_dir: str | None = None
          ) -> tuple[JointPredictor, TrainReport]:
    """Train a fresh model; deterministic given the configs and data."""
    if not scenarios:
        raise ValueError("training dataset is empty")
    model_cfg.init_seed = cfg.seed
    model = JointPredictor(model_cfg)
    opt = nn.Adam(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    train_idx, val_idx, _ = split_dataset(scenarios, cfg)
    if not train_idx:
        raise ValueError("training split is empty")
    locals_train = {i: model.prepare(scenarios[i]) for i in train_idx}
    val_scns = [scenarios[i] for i in val_idx] or \
        [scenarios[i] for i in train_idx[:20]]

    rng = nn.seeded_rng(cfg.seed + 1)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
        order = rng.permutation(train_idx)
        sums = np.zeros(3)
        count = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            for i in batch:
                l_pre, l_man, l_risk = _scenario_losses(
                    model, locals_train[int(i)], epoch, cfg)
                l_tot = total_loss(l_pre, l_man, l_risk, epoch, cfg)
                if not math.isfinite(l_tot):
                    raise RuntimeError(
                        f"training diverged at epoch {epoch}, "
                        f"batch {lo // cfg.batch_size}: loss {l_tot}")
                sums += (l_pre, l_man, l_risk)
                count += 1
            for p in model.params():
                p.grad /= len(batch)
            if cfg.clip_norm > 0:
                total = math.sqrt(sum(float((p.grad * p.grad).sum())
                                      for p in model.params()))
                if total > cfg.clip_norm:
                    scale = cfg.clip_norm / total
                    for p in model.params():
                        p.grad *= scale
            opt.step()
        mean_pre, mean_man, mean_risk = sums / count
        mean_total = total_loss(mean_pre, mean_man, mean_risk, epoch, cfg)

        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            val_ade, val_fde = _validate(model, val_scns)
        else:
            val_ade, val_fde = math.nan, math.nan
        report.epochs.append(epoch)
        report.l_pre.append(float(mean_pre))
        report.l_man.append(float(mean_man))
        report.l_risk.append(float(mean_risk))
        report.l_total.append(float(mean_total))
        report.val_ade.append(val_ade)
        report.val_fde.append(val_fde)
        if out_dir is not None:
            model.save(os.path.join(out_dir, "checkpoint.json"))

    report.final_val_ade = report.val_ade[-1]
    report.final_val_fde = report.val_fde[-1]
    if out_dir is not None:
        model.save(os.path.join(out_dir, "model_final.json"))
        report.write_csv(os.path.join(out_dir, "train_log.csv"))
    return model, report
