"""Interaction encoding: per-agent history LSTM, map polyline MLP, stacked
agent-agent self-attention, and agent-map cross attention.

Locality is taken literally: each agent's interaction features are computed
on the subgraph of agents within its context radius, so agents outside the
radius cannot influence a row even through intermediate hops. The agent-map
attention replaces a row by its attended map context (no internal residual);
rows with no visible polyline, or an entirely empty map, pass through
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import AGENT_CLASSES, relative_encoding
from .scene import MapPolyline, Scenario

POS_SCALE = 50.0
VEL_SCALE = 15.0
YAW_SCALE = np.pi

HISTORY_FEATURES = 10 + len(AGENT_CLASSES)  # kinematics + rel encoding + class


@dataclass
class InteractionConfig:
    embed_dim: int = 64
    attention_heads: int = 4
    context_radius_m: float = 50.0
    transformer_layers: int = 2
    ff_mult: int = 2
    map_pad: int = 20

    def __post_init__(self):
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError("embed_dim must be divisible by attention_heads")


def history_feature_matrix(scn: Scenario) -> np.ndarray:
    """Per-step inputs [N, H+1, F]: normalized kinematics, relative encoding
    to the ego at the same step, and the class one-hot."""
    ego = scn.ego
    rows = []
    for agent in scn.agents:
        onehot = np.zeros(len(AGENT_CLASSES))
        onehot[AGENT_CLASSES.index(agent.current.agent_class)] = 1.0
        steps = []
        for st, ego_st in zip(agent.states, ego.states):
            rel = relative_encoding(ego_st, st)
            steps.append(np.concatenate([
                [st.x / POS_SCALE, st.y / POS_SCALE, st.yaw / YAW_SCALE,
                 st.vx / VEL_SCALE, st.vy / VEL_SCALE],
                [rel.sin_heading_diff, rel.cos_heading_diff,
                 rel.sin_bearing, rel.cos_bearing, rel.distance / POS_SCALE],
                onehot,
            ]))
        rows.append(np.stack(steps))
    return np.stack(rows)


def map_feature_matrix(polylines: list[MapPolyline],
                       pad: int = 20) -> np.ndarray:
    """Flattened, padded waypoints plus a validity flag per slot and the
    polyline-kind one-hot: [M, pad*3 + 3]."""
    from .scene import POLYLINE_KINDS

    feats = []
    for p in polylines:
        slots = np.zeros((pad, 3))
        n = min(len(p.waypoints), pad)
        slots[:n, :2] = p.waypoints[:n] / POS_SCALE
        slots[:n, 2] = 1.0
        kind = np.zeros(len(POLYLINE_KINDS))
        kind[POLYLINE_KINDS.index(p.kind)] = 1.0
        feats.append(np.concatenate([slots.reshape(-1), kind]))
    if not feats:
        return np.zeros((0, pad * 3 + 3))
    return np.stack(feats)


def neighbor_mask(scn: Scenario, radius: float) -> np.ndarray:
    """mask[i, j] is True when agent j's current position lies within
    agent i's context radius (diagonal always True)."""
    pos = np.array([a.current.position for a in scn.agents])
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    mask = d <= radius
    np.fill_diagonal(mask, True)
    return mask


def map_visibility(scn: Scenario, radius: float) -> np.ndarray:
    """vis[i, m] is True when polyline m has a waypoint within agent i's
    context radius."""
    pos = np.array([a.current.position for a in scn.agents])
    vis = np.zeros((len(scn.agents), len(scn.map)), dtype=bool)
    for m, p in enumerate(scn.map):
        d = np.linalg.norm(pos[:, None, :] - p.waypoints[None, :, :], axis=-1)
        vis[:, m] = d.min(axis=1) <= radius
    return vis


class HistoryEncoder(nn.Module):
    """LSTM over each agent's past states; the final hidden state is the
    agent's trajectory embedding."""

    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator,
                 name: str = "hist"):
        self.lstm = nn.LSTM(HISTORY_FEATURES, cfg.embed_dim, rng, name=name)

    def params(self):
        return self.lstm.params()

    def forward(self, seq: np.ndarray) -> np.ndarray:
        return self.lstm.forward(seq)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.lstm.backward(g)


def encode_history(encoder: HistoryEncoder, scn: Scenario) -> np.ndarray:
    out = encoder.forward(history_feature_matrix(scn))
    return nn.ensure_finite(out, "history embeddings")


class MapEncoder(nn.Module):
    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator,
                 name: str = "map"):
        in_dim = cfg.map_pad * 3 + 3
        self.pad = cfg.map_pad
        self.mlp = nn.MLP([in_dim, cfg.embed_dim, cfg.embed_dim], rng,
                          name=name)

    def params(self):
        return self.mlp.params()

    def forward(self, feats: np.ndarray) -> np.ndarray:
        return self.mlp.forward(feats)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.mlp.backward(g)


def encode_map(encoder: MapEncoder,
               polylines: list[MapPolyline]) -> np.ndarray:
    feats = map_feature_matrix(polylines, encoder.pad)
    if feats.shape[0] == 0:
        return np.zeros((0, encoder.mlp.out_dim))
    return encoder.forward(feats)


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual block: x + MHA(LN(x)) followed by x + FF(LN(x))."""

    def __init__(self, dim: int, heads: int, ff_mult: int,
                 rng: np.random.Generator, name: str):
        self.ln1 = nn.LayerNorm(dim, name=f"{name}.ln1")
        self.mha = nn.MultiHeadAttention(dim, heads, rng, name=f"{name}.mha")
        self.ln2 = nn.LayerNorm(dim, name=f"{name}.ln2")
        self.ff = nn.MLP([dim, ff_mult * dim, dim], rng, name=f"{name}.ff")

    def params(self):
        return (self.ln1.params() + self.mha.params() + self.ln2.params()
                + self.ff.params())

    def forward(self, x: np.ndarray,
                mask: np.ndarray | None = None) -> np.ndarray:
        h = self.ln1.forward(x)
        y = x + self.mha.forward(h, h, h, mask)
        z = y + self.ff.forward(self.ln2.forward(y))
        return z

    def backward(self, g: np.ndarray) -> np.ndarray:
        dy = g + self.ln2.backward(self.ff.backward(g))
        dq, dk, dv = self.mha.backward(dy)
        return dy + self.ln1.backward(dq + dk + dv)


class AgentAgentEncoder(nn.Module):
    """Stacked self-attention applied per agent on its local subgraph.

    Row i of the output is computed by running the blocks over the agents
    inside agent i's context set only, so out-of-radius agents cannot leak
    in through multi-hop attention.
    """

    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator,
                 name: str = "aa"):
        self.blocks = [
            SelfAttentionBlock(cfg.embed_dim, cfg.attention_heads,
                               cfg.ff_mult, rng, name=f"{name}.{i}")
            for i in range(cfg.transformer_layers)
        ]
        self._cache: list[list[tuple[np.ndarray, int]]] = []

    def params(self):
        return [p for b in self.blocks for p in b.params()]

    def forward(self, embeds: np.ndarray, mask: np.ndarray) -> np.ndarray:
        n = embeds.shape[0]
        mask = np.asarray(mask, dtype=bool)
        out = np.empty_like(embeds)
        runs = []
        for i in range(n):
            idx = np.flatnonzero(mask[i])
            if idx.size == 0:
                raise ValueError(f"agent {i} has an empty context set")
            x = embeds[idx]
            for block in self.blocks:
                x = block.forward(x)
            pos = int(np.where(idx == i)[0][0]) if i in idx else 0
            out[i] = x[pos]
            runs.append((idx, pos))
        self._cache.append(runs)
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        runs = self._cache.pop()
        dembeds = np.zeros_like(g)
        for i in reversed(range(len(runs))):
            idx, pos = runs[i]
            gx = np.zeros((idx.size, g.shape[1]))
            gx[pos] = g[i]
            for block in reversed(self.blocks):
                gx = block.backward(gx)
            dembeds[idx] += gx
        return dembeds


def agent_agent_attention(encoder: AgentAgentEncoder, embeds: np.ndarray,
                          mask: np.ndarray) -> np.ndarray:
    return nn.ensure_finite(encoder.forward(embeds, mask),
                            "interaction features")


class AgentMapAttention(nn.Module):
    """Cross attention from agent features (queries) to polyline embeddings
    (keys and values). Output rows are the attended map context; rows with
    nothing visible, or an empty map, pass through unchanged."""

    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator,
                 name: str = "amap"):
        self.mha = nn.MultiHeadAttention(cfg.embed_dim, cfg.attention_heads,
                                         rng, name=name)
        self._cache: list[tuple | None] = []

    def params(self):
        return self.mha.params()

    def forward(self, features: np.ndarray, map_embeds: np.ndarray,
                vis: np.ndarray | None = None) -> np.ndarray:
        n, m = features.shape[0], map_embeds.shape[0]
        if m == 0:
            self._cache.append(None)
            return features
        if vis is None:
            vis = np.ones((n, m), dtype=bool)
        rows = np.flatnonzero(vis.any(axis=1))
        out = features.copy()
        if rows.size:
            out[rows] = self.mha.forward(features[rows], map_embeds,
                                         map_embeds, vis[rows])
        self._cache.append((rows, n, m))
        return out

    def backward(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ctx = self._cache.pop()
        if ctx is None:
            return g, np.zeros((0, g.shape[1]))
        rows, n, m = ctx
        dfeat = g.copy()
        dmap = np.zeros((m, g.shape[1]))
        if rows.size:
            dq, dk, dv = self.mha.backward(g[rows])
            dfeat[rows] = dq
            dmap = dk + dv
        return dfeat, dmap


def agent_map_attention(att: AgentMapAttention, features: np.ndarray,
                        map_embeds: np.ndarray,
                        vis: np.ndarray | None = None) -> np.ndarray:
    return att.forward(features, map_embeds, vis)
