"""Collision-probability, harm, and risk-ethics cost computation, plus
risk-based ranking of candidate joint trajectories.

Collision probability between two agents at a future step integrates an
isotropic Gaussian (position uncertainty of both agents combined) over a
disc of radius (width_i + width_j)/2 around each of the first agent's three
body points (front, center, rear), sums the three and clamps to [0, 1].
The disc integral is exact, expressed through the noncentral chi-square CDF,
with a closed-form derivative in the center distance for training.

Harm maps the struck agent's post-collision speed change through a logistic
in delta-v and the struck region. The region coefficients and the logistic
intercept/slope are config placeholders (the formulas, not these values, are
what the tests pin down). A per-trajectory risk is the maximum over future
steps of harm times collision probability; the safety, care and
responsiveness costs then aggregate the per-agent risks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import i1e
from scipy.stats import ncx2

from .geometry import AgentState, CollisionRegion, collision_region
from .intention import JointPrediction
from .scene import AgentHistory, MapPolyline, Scenario


@dataclass
class UncertaintyModel:
    """Isotropic position uncertainty growing linearly with the step."""
    sigma0: float = 0.5   # meters at the first future step's horizon start
    growth: float = 0.05  # meters per future step

    def sigma(self, step: int) -> float:
        s = self.sigma0 + self.growth * step
        if s <= 0:
            raise ValueError("uncertainty sigma must stay positive")
        return s

    def sigma_array(self, horizon: int) -> np.ndarray:
        return self.sigma0 + self.growth * np.arange(1, horizon + 1)


@dataclass
class HarmCoefficients:
    mu0: float = -6.0
    mu1: float = 0.4   # per m/s of delta-v; must be positive
    mu_area: dict = field(default_factory=lambda: {
        CollisionRegion.FRONT: 0.2,
        CollisionRegion.SIDE: 0.8,
        CollisionRegion.REAR: 0.0,
    })

    def __post_init__(self):
        if self.mu1 <= 0:
            raise ValueError("mu1 must be positive (harm grows with delta-v)")


@dataclass
class RiskConfig:
    uncertainty: UncertaintyModel = field(default_factory=UncertaintyModel)
    harm: HarmCoefficients = field(default_factory=HarmCoefficients)
    weights: tuple[float, float, float] = (33.3, 33.3, 33.3)
    responsiveness_scale: float = 1.0
    prob_tradeoff: float = 1.0        # lambda on -log p_k in the mode score
    protected_harm_scale: float = 1.0
    unprotected_harm_scale: float = 2.0

    def harm_scale(self, protected_flag: bool) -> float:
        return (self.protected_harm_scale if protected_flag
                else self.unprotected_harm_scale)


# --------------------------------------------------------------------------
# Geometry-level probability pieces
# --------------------------------------------------------------------------

def disc_probability(dist: float | np.ndarray, radius: float,
                     sigma: float | np.ndarray) -> np.ndarray:
    """P(|X - b| < radius) for X ~ N(c, sigma^2 I) in the plane, with
    dist = |c - b|. Exact via the noncentral chi-square CDF."""
    dist = np.asarray(dist, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    p = ncx2.cdf((radius / sigma) ** 2, 2, (dist / sigma) ** 2)
    return np.clip(p, 0.0, 1.0)


def disc_probability_ddist(dist: float | np.ndarray, radius: float,
                           sigma: float | np.ndarray) -> np.ndarray:
    """d disc_probability / d dist (closed form via the Marcum Q identity:
    dQ1(a,b)/da = b * exp(-(a^2+b^2)/2) * I1(ab))."""
    dist = np.asarray(dist, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    a = dist / sigma
    b = radius / sigma
    return -(b / sigma) * np.exp(-0.5 * (a - b) ** 2) * i1e(a * b)


class AgentTrack:
    """A future trajectory with the metadata needed for risk evaluation.

    Velocities/yaws are taken from the states when built from ground truth,
    or derived by finite differences when built from a decoded trajectory.
    """

    def __init__(self, agent_id: str, agent_class: str, length: float,
                 width: float, mass: float, protected_flag: bool,
                 positions: np.ndarray, velocities: np.ndarray,
                 yaws: np.ndarray, dt: float):
        self.agent_id = agent_id
        self.agent_class = agent_class
        self.length = length
        self.width = width
        self.mass = mass
        self.protected_flag = protected_flag
        self.positions = np.asarray(positions, dtype=np.float64)
        self.velocities = np.asarray(velocities, dtype=np.float64)
        self.speeds = np.linalg.norm(self.velocities, axis=1)
        self.yaws = np.asarray(yaws, dtype=np.float64)
        self.dt = dt

    @property
    def horizon(self) -> int:
        return self.positions.shape[0]

    def state_at(self, t: int) -> AgentState:
        return AgentState(self.positions[t, 0], self.positions[t, 1],
                          self.yaws[t], self.velocities[t, 0],
                          self.velocities[t, 1], self.length, self.width,
                          self.mass, self.agent_class)

    def body_points_at(self, t: int) -> np.ndarray:
        """[3, 2] front/center/rear points at step t."""
        u = np.array([math.cos(self.yaws[t]), math.sin(self.yaws[t])])
        c = self.positions[t]
        half = 0.5 * self.length
        return np.stack([c + half * u, c, c - half * u])


def track_from_truth(agent: AgentHistory, dt: float) -> AgentTrack:
    fut = agent.future_truth
    if not fut:
        raise ValueError(f"agent {agent.agent_id!r} has no future truth")
    cur = agent.current
    return AgentTrack(agent.agent_id, cur.agent_class, cur.length, cur.width,
                      cur.mass, cur.protected_flag,
                      np.array([[s.x, s.y] for s in fut]),
                      np.array([[s.vx, s.vy] for s in fut]),
                      np.array([s.yaw for s in fut]), dt)


def track_from_prediction(agent: AgentHistory, positions: np.ndarray,
                          dt: float) -> AgentTrack:
    cur = agent.current
    positions = np.asarray(positions, dtype=np.float64)
    anchored = np.vstack([cur.position[None, :], positions])
    vel = (anchored[1:] - anchored[:-1]) / dt
    speeds = np.linalg.norm(vel, axis=1)
    yaws = np.where(speeds > 1e-6,
                    np.arctan2(vel[:, 1], vel[:, 0]), cur.yaw)
    return AgentTrack(agent.agent_id, cur.agent_class, cur.length, cur.width,
                      cur.mass, cur.protected_flag, positions, vel, yaws, dt)


# --------------------------------------------------------------------------
# Core formulas
# --------------------------------------------------------------------------

def collision_probability(track_i: AgentTrack, track_j: AgentTrack, t: int,
                          u: UncertaintyModel) -> float:
    """Overall collision probability of the pair at future step index t
    (0-based): the disc integrals around i's three body points against j's
    center, summed and clamped to [0, 1]."""
    sigma = math.sqrt(2.0) * u.sigma(t + 1)  # both positions uncertain
    radius = 0.5 * (track_i.width + track_j.width)
    dists = np.linalg.norm(track_i.body_points_at(t) - track_j.positions[t],
                           axis=1)
    return float(min(disc_probability(dists, radius, sigma).sum(), 1.0))


def delta_v(m_a: float, m_b: float, v_a: float, v_b: float,
            theta: float) -> float:
    """Post-collision speed change of party A against party B with the
    given masses, speeds, and collision angle."""
    if m_a <= 0 or m_b <= 0:
        raise ValueError("masses must be positive")
    rel = math.sqrt(max(v_a * v_a + v_b * v_b
                        - 2.0 * v_a * v_b * math.cos(theta), 0.0))
    return m_b / (m_a + m_b) * rel


def harm(dv: float, region: CollisionRegion,
         coeffs: HarmCoefficients) -> float:
    """Logistic injury severity for the given delta-v and struck region."""
    z = coeffs.mu0 + coeffs.mu1 * dv + coeffs.mu_area[region]
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _pair_angle(track_i: AgentTrack, track_j: AgentTrack, t: int) -> float:
    ui = track_i.state_at(t).direction()
    uj = track_j.state_at(t).direction()
    return math.acos(float(np.clip(ui @ uj, -1.0, 1.0)))


def pair_harm(victim: AgentTrack, other: AgentTrack, t: int,
              coeffs: HarmCoefficients, harm_scale: float = 1.0) -> float:
    """Harm borne by the victim at step t in a collision with the other."""
    theta = _pair_angle(victim, other, t)
    dv = delta_v(victim.mass, other.mass, victim.speeds[t], other.speeds[t],
                 theta)
    region = collision_region(victim.state_at(t), other.state_at(t))
    return harm(dv, region, coeffs) * harm_scale


def trajectory_risk(victim: AgentTrack, other: AgentTrack,
                    u: UncertaintyModel, coeffs: HarmCoefficients,
                    harm_scale: float = 1.0) -> float:
    """max over future steps of harm(t) * collision_probability(t)."""
    if victim.horizon < 1:
        raise ValueError("risk needs at least one future step")
    best = 0.0
    for t in range(victim.horizon):
        p = collision_probability(victim, other, t, u)
        if p == 0.0:
            continue
        best = max(best, pair_harm(victim, other, t, coeffs, harm_scale) * p)
    return best


def collision_probability_series(victim: AgentTrack, other: AgentTrack,
                                 u: UncertaintyModel) -> np.ndarray:
    return np.array([collision_probability(victim, other, t, u)
                     for t in range(victim.horizon)])


# --------------------------------------------------------------------------
# Cost terms
# --------------------------------------------------------------------------

def safety_cost(risks: np.ndarray, boundary_risk_value: float) -> float:
    """(sum of per-agent risks + boundary risk) / (2n)."""
    risks = np.asarray(risks, dtype=np.float64)
    n = risks.size
    if n == 0:
        return 0.5 * boundary_risk_value
    return float((risks.sum() + boundary_risk_value) / (2.0 * n))


def care_cost(risks: np.ndarray,
              protected_flags: list[bool] | None = None) -> float:
    """Mean absolute risk difference over all ordered agent pairs. The
    protected/unprotected distinction enters upstream through the harm
    scale, not through this double sum."""
    risks = np.asarray(risks, dtype=np.float64)
    n = risks.size
    if protected_flags is not None and len(protected_flags) != n:
        raise ValueError("protected_flags length must match risks")
    if n == 0:
        return 0.0
    diff = np.abs(risks[:, None] - risks[None, :]).sum()
    return float(diff / n)


def responsiveness_cost(risks: np.ndarray, scale: float = 1.0) -> float:
    """Summed scaled per-agent risk; the worst case over candidates is
    realized by the ranking step, which sees one value per candidate."""
    risks = np.asarray(risks, dtype=np.float64)
    return float(scale * risks.sum())


def total_risk_cost(c_s: float, c_c: float, c_r: float,
                    weights: tuple[float, float, float] = (33.3, 33.3, 33.3)
                    ) -> float:
    w_s, w_c, w_r = weights
    if min(weights) < 0:
        raise ValueError("cost weights must be nonnegative")
    return w_s * c_s + w_c * c_c + w_r * c_r


# --------------------------------------------------------------------------
# Boundary risk
# --------------------------------------------------------------------------

def _point_segment_distance(p: np.ndarray, a: np.ndarray,
                            b: np.ndarray) -> tuple[float, np.ndarray]:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    closest = a + s * ab
    return float(np.linalg.norm(p - closest)), closest


def polyline_clearance(p: np.ndarray,
                       polylines: list[MapPolyline]) -> tuple[float, np.ndarray]:
    """Distance from p to the nearest segment of the given polylines."""
    best, best_pt = math.inf, p
    for poly in polylines:
        w = poly.waypoints
        for k in range(len(w) - 1):
            d, pt = _point_segment_distance(p, w[k], w[k + 1])
            if d < best:
                best, best_pt = d, pt
    return best, best_pt


def boundary_risk(ego: AgentTrack, boundaries: list[MapPolyline],
                  u: UncertaintyModel, coeffs: HarmCoefficients) -> float:
    """Risk of the ego leaving the road: clearance to the nearest boundary
    mapped through the collision-probability and harm machinery with an
    immovable partner (delta-v equals the ego speed, side impact)."""
    if not boundaries:
        return 0.0
    best = 0.0
    for t in range(ego.horizon):
        d, _ = polyline_clearance(ego.positions[t], boundaries)
        p = float(disc_probability(d, 0.5 * ego.width, u.sigma(t + 1)))
        if p == 0.0:
            continue
        h = harm(ego.speeds[t], CollisionRegion.SIDE, coeffs)
        best = max(best, h * p)
    return best


# --------------------------------------------------------------------------
# Reports and ranking
# --------------------------------------------------------------------------

@dataclass
class RiskReport:
    mode: int
    mode_prob: float
    agent_ids: list[str]
    risks: np.ndarray
    boundary: float
    c_s: float
    c_c: float
    c_r: float
    l_risk: float
    score: float
    rank: int = -1
    collision_probs: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "k": self.mode,
            "p": self.mode_prob,
            "R": self.risks.tolist(),
            "R_b": self.boundary,
            "c_s": self.c_s,
            "c_c": self.c_c,
            "c_r": self.c_r,
            "L_risk": self.l_risk,
            "rank": self.rank,
        }


def mode_risk_report(mode: int, mode_prob: float, tracks: list[AgentTrack],
                     ego_index: int, boundaries: list[MapPolyline],
                     cfg: RiskConfig) -> RiskReport:
    """Risks of the ego's potential collisions with every other agent, the
    boundary risk, and the three cost terms, for one candidate mode."""
    ego = tracks[ego_index]
    others = [tr for i, tr in enumerate(tracks) if i != ego_index]
    risks = np.array([
        trajectory_risk(other, ego, cfg.uncertainty, cfg.harm,
                        cfg.harm_scale(other.protected_flag))
        for other in others
    ])
    probs = {other.agent_id:
             collision_probability_series(other, ego, cfg.uncertainty)
             for other in others}
    r_b = boundary_risk(ego, boundaries, cfg.uncertainty, cfg.harm)
    c_s = safety_cost(risks, r_b)
    c_c = care_cost(risks, [o.protected_flag for o in others])
    c_r = responsiveness_cost(risks, cfg.responsiveness_scale)
    l_risk = total_risk_cost(c_s, c_c, c_r, cfg.weights)
    score = l_risk - cfg.prob_tradeoff * math.log(max(mode_prob, 1e-12))
    return RiskReport(mode, mode_prob, [o.agent_id for o in others], risks,
                      r_b, c_s, c_c, c_r, l_risk, score,
                      collision_probs=probs)


def rank_trajectories(jp: JointPrediction, scn: Scenario,
                      cfg: RiskConfig | None = None
                      ) -> tuple[list[int], list[RiskReport]]:
    """Score every candidate mode and return (order, reports), where order
    lists mode indices from best (lowest risk-adjusted score) to worst."""
    cfg = cfg or RiskConfig()
    boundaries = [p for p in scn.map if p.kind == "road_boundary"]
    reports = []
    for k in range(jp.trajectories.shape[0]):
        tracks = [
            track_from_prediction(agent, jp.trajectories[k, i], scn.dt)
            for i, agent in enumerate(scn.agents)
        ]
        reports.append(mode_risk_report(
            k, float(jp.mode_probs[k]), tracks, scn.ego_index, boundaries,
            cfg))
    order = sorted(range(len(reports)), key=lambda k: reports[k].score)
    for rank, k in enumerate(order):
        reports[k].rank = rank
    return order, reports


# --------------------------------------------------------------------------
# Differentiable risk for training
# --------------------------------------------------------------------------

def risk_loss_and_grad(trajs: np.ndarray, scn: Scenario, ego_index: int,
                       cfg: RiskConfig
                       ) -> tuple[float, np.ndarray]:
    """Total risk cost of one decoded joint mode [N, T, 2] and its gradient
    with respect to the decoded positions.

    Harm factors, struck regions and the argmax step are treated as
    constants; the gradient flows through the collision probabilities (and
    the boundary clearance) only.
    """
    n = trajs.shape[0]
    grad = np.zeros_like(trajs)
    tracks = [track_from_prediction(agent, trajs[i], scn.dt)
              for i, agent in enumerate(scn.agents)]
    ego = tracks[ego_index]
    boundaries = [p for p in scn.map if p.kind == "road_boundary"]
    other_idx = [i for i in range(n) if i != ego_index]

    risks = np.zeros(len(other_idx))
    # per other agent: (t*, harm, per-body-point dists/derivs) at the argmax
    details = []
    for oi, i in enumerate(other_idx):
        victim = tracks[i]
        scale = cfg.harm_scale(victim.protected_flag)
        best, best_detail = 0.0, None
        radius = 0.5 * (victim.width + ego.width)
        for t in range(victim.horizon):
            sigma = math.sqrt(2.0) * cfg.uncertainty.sigma(t + 1)
            bps = victim.body_points_at(t)
            diffs = ego.positions[t] - bps
            dists = np.linalg.norm(diffs, axis=1)
            probs = disc_probability(dists, radius, sigma)
            psum = float(probs.sum())
            p = min(psum, 1.0)
            if p == 0.0:
                continue
            h = pair_harm(victim, ego, t, cfg.harm, scale)
            if h * p > best:
                best = h * p
                best_detail = (t, h, sigma, radius, diffs, dists,
                               psum < 1.0)
        risks[oi] = best
        details.append((i, best_detail))

    r_b = boundary_risk(ego, boundaries, cfg.uncertainty, cfg.harm)
    c_s = safety_cost(risks, r_b)
    c_c = care_cost(risks)
    c_r = responsiveness_cost(risks, cfg.responsiveness_scale)
    l_risk = total_risk_cost(c_s, c_c, c_r, cfg.weights)

    w_s, w_c, w_r = cfg.weights
    m = risks.size
    if m > 0:
        sign_sum = np.sign(risks[:, None] - risks[None, :]).sum(axis=1)
        dl_drisk = (w_s / (2.0 * m) + w_c * 2.0 * sign_sum / m
                    + w_r * cfg.responsiveness_scale)
        for (i, detail), dR in zip(details, dl_drisk):
            if detail is None:
                continue
            t, h, sigma, radius, diffs, dists, unclamped = detail
            if not unclamped:
                continue
            dp = disc_probability_ddist(dists, radius, sigma)
            for bp in range(3):
                if dists[bp] < 1e-9:
                    continue
                direction = diffs[bp] / dists[bp]
                g = dR * h * dp[bp] * direction
                grad[ego_index, t] += g
                grad[i, t] -= g

    # boundary term: d c_s / d R_b = w_s / (2 max(m,1) or 1/2 when m == 0)
    if boundaries:
        dl_drb = w_s * (0.5 if m == 0 else 1.0 / (2.0 * m))
        best, best_detail = 0.0, None
        for t in range(ego.horizon):
            d, pt = polyline_clearance(ego.positions[t], boundaries)
            sigma = cfg.uncertainty.sigma(t + 1)
            p = float(disc_probability(d, 0.5 * ego.width, sigma))
            if p == 0.0:
                continue
            h = harm(ego.speeds[t], CollisionRegion.SIDE, cfg.harm)
            if h * p > best:
                best = h * p
                best_detail = (t, h, d, pt, sigma)
        if best_detail is not None:
            t, h, d, pt, sigma = best_detail
            if d > 1e-9:
                direction = (ego.positions[t] - pt) / d
                dp = float(disc_probability_ddist(d, 0.5 * ego.width, sigma))
                grad[ego_index, t] += dl_drb * h * dp * direction

    return l_risk, grad
