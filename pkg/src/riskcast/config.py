"""Flat dotted-key run configuration with layered precedence:
built-in defaults < RISKCAST_SEED env var < config file < command-line
overrides. The fully resolved mapping is written next to every output for
provenance.
"""

from __future__ import annotations

import json
import os

from .model import ModelConfig
from .risk import HarmCoefficients, RiskConfig, UncertaintyModel
from .training import TrainConfig
from .geometry import CollisionRegion

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "gen.template": "straight",
    "gen.count": 10,
    "gen.n_agents": 3,
    "gen.H": 10,
    "gen.T": 50,
    "gen.dt": 0.1,
    "gen.jitter": 0.05,
    "model.embed_dim": 64,
    "model.attention_heads": 4,
    "model.transformer_layers": 2,
    "model.ff_mult": 2,
    "model.context_radius_m": 50.0,
    "model.map_pad": 20,
    "model.n_modes": 6,
    "model.future_steps": 50,
    "train.batch_size": 32,
    "train.lr": 2e-4,
    "train.weight_decay": 3e-4,
    "train.epochs": 20,
    "train.stage1_epochs": 5,
    "train.tau": 0.5,
    "train.mode_loss_weight": 0.5,
    "train.val_every": 1,
    "train.split_train": 0.7,
    "train.split_val": 0.15,
    "train.split_test": 0.15,
    "risk.sigma0": 0.5,
    "risk.growth": 0.05,
    "risk.mu0": -6.0,
    "risk.mu1": 0.4,
    "risk.mu_front": 0.2,
    "risk.mu_side": 0.8,
    "risk.mu_rear": 0.0,
    "risk.weight_s": 33.3,
    "risk.weight_c": 33.3,
    "risk.weight_r": 33.3,
    "risk.responsiveness_scale": 1.0,
    "risk.prob_tradeoff": 1.0,
    "risk.protected_harm_scale": 1.0,
    "risk.unprotected_harm_scale": 2.0,
}


def _coerce(key: str, value: object) -> object:
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        return bool(value)
    if isinstance(ref, int) and not isinstance(value, bool):
        return int(value)
    if isinstance(ref, float):
        return float(value)
    return type(ref)(value)


def resolve_config(config_file: str | None = None,
                   overrides: dict[str, object] | None = None
                   ) -> dict[str, object]:
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("RISKCAST_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    if config_file is not None:
        with open(config_file) as f:
            file_cfg = json.load(f)
        for key, value in file_cfg.items():
            if key not in DEFAULTS:
                raise KeyError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def write_resolved(cfg: dict[str, object], out_dir: str) -> None:
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


def model_config(cfg: dict[str, object]) -> ModelConfig:
    return ModelConfig(
        embed_dim=cfg["model.embed_dim"],
        attention_heads=cfg["model.attention_heads"],
        transformer_layers=cfg["model.transformer_layers"],
        ff_mult=cfg["model.ff_mult"],
        context_radius_m=cfg["model.context_radius_m"],
        map_pad=cfg["model.map_pad"],
        n_modes=cfg["model.n_modes"],
        future_steps=cfg["model.future_steps"],
        init_seed=cfg["seed"],
    )


def risk_config(cfg: dict[str, object]) -> RiskConfig:
    return RiskConfig(
        uncertainty=UncertaintyModel(cfg["risk.sigma0"], cfg["risk.growth"]),
        harm=HarmCoefficients(cfg["risk.mu0"], cfg["risk.mu1"], {
            CollisionRegion.FRONT: cfg["risk.mu_front"],
            CollisionRegion.SIDE: cfg["risk.mu_side"],
            CollisionRegion.REAR: cfg["risk.mu_rear"],
        }),
        weights=(cfg["risk.weight_s"], cfg["risk.weight_c"],
                 cfg["risk.weight_r"]),
        responsiveness_scale=cfg["risk.responsiveness_scale"],
        prob_tradeoff=cfg["risk.prob_tradeoff"],
        protected_harm_scale=cfg["risk.protected_harm_scale"],
        unprotected_harm_scale=cfg["risk.unprotected_harm_scale"],
    )


def train_config(cfg: dict[str, object]) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        epochs=cfg["train.epochs"],
        stage1_epochs=cfg["train.stage1_epochs"],
        tau=cfg["train.tau"],
        seed=cfg["seed"],
        mode_loss_weight=cfg["train.mode_loss_weight"],
        split=(cfg["train.split_train"], cfg["train.split_val"],
               cfg["train.split_test"]),
        val_every=cfg["train.val_every"],
        risk=risk_config(cfg),
    )
