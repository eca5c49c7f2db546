"""Scenario data model, JSON (de)serialization with validation, a seeded
synthetic scenario generator, and local-frame extraction.

A scenario holds, per agent, H+1 past states (the last one is "now") and
optionally T ground-truth future states, plus map polylines. The generator
produces kinematically consistent trajectories: velocities are recomputed
from the jittered positions, so position(t+1) = position(t) + v(t)*dt holds
exactly; yaw is taken from the noiseless path heading.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from jsonschema import Draft202012Validator

from .geometry import AgentState, rotation, transform_state

POLYLINE_KINDS = ("lane_center", "road_boundary", "crosswalk")
TEMPLATES = ("straight", "left_turn", "right_turn", "merge",
             "crossing_conflict")

DEFAULT_H = 10          # past steps (history has H+1 states)
DEFAULT_T = 50          # future steps
DEFAULT_DT = 0.1        # seconds, 10 Hz
JITTER_STD = 0.05       # meters of position noise after integration
LANE_WIDTH = 3.5
ROAD_HALF_WIDTH = 5.25  # boundary offset from the ego centerline
MAX_POLYLINE_POINTS = 20

AGENT_DIMS = {
    # class: (length, width, mass)
    "car": (4.5, 1.8, 1500.0),
    "truck": (8.0, 2.5, 8000.0),
    "pedestrian": (0.5, 0.5, 75.0),
    "cyclist": (1.8, 0.6, 90.0),
}


class ScenarioError(ValueError):
    """Raised when a scenario document violates the schema or invariants."""


@dataclass
class MapPolyline:
    waypoints: np.ndarray  # [n, 2]
    kind: str = "lane_center"

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 2:
            raise ScenarioError("polyline waypoints must be an [n, 2] array")
        if self.waypoints.shape[0] < 2:
            raise ScenarioError("polyline needs at least 2 waypoints")
        if self.kind not in POLYLINE_KINDS:
            raise ScenarioError(f"unknown polyline kind {self.kind!r}")

    def __eq__(self, other):
        return (isinstance(other, MapPolyline) and self.kind == other.kind
                and np.array_equal(self.waypoints, other.waypoints))


@dataclass
class AgentHistory:
    agent_id: str
    states: list[AgentState]                 # H+1 past states, time ordered
    future_truth: list[AgentState] | None = None

    @property
    def current(self) -> AgentState:
        return self.states[-1]


@dataclass
class Scenario:
    agents: list[AgentHistory]
    map: list[MapPolyline]
    horizon_past: int
    horizon_future: int
    dt: float
    ego_index: int = 0
    scenario_id: str = ""
    template: str = ""

    @property
    def ego(self) -> AgentHistory:
        return self.agents[self.ego_index]

    def agent_by_id(self, agent_id: str) -> AgentHistory:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(f"unknown agent_id {agent_id!r}")


# --------------------------------------------------------------------------
# JSON schema and (de)serialization
# --------------------------------------------------------------------------

_STATE_SCHEMA = {
    "type": "object",
    "required": ["x", "y", "yaw", "vx", "vy"],
    "properties": {k: {"type": "number"} for k in
                   ("x", "y", "yaw", "vx", "vy")},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["dt", "H", "T", "ego_index", "agents", "map"],
    "properties": {
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "H": {"type": "integer", "minimum": 1},
        "T": {"type": "integer", "minimum": 1},
        "ego_index": {"type": "integer", "minimum": 0},
        "scenario_id": {"type": "string"},
        "template": {"type": "string"},
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "class", "length", "width", "mass",
                             "states"],
                "properties": {
                    "id": {"type": "string"},
                    "class": {"enum": list(AGENT_DIMS)},
                    "length": {"type": "number", "exclusiveMinimum": 0},
                    "width": {"type": "number", "exclusiveMinimum": 0},
                    "mass": {"type": "number", "exclusiveMinimum": 0},
                    "states": {"type": "array", "items": _STATE_SCHEMA},
                    "future": {"type": "array", "items": _STATE_SCHEMA},
                },
            },
        },
        "map": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "waypoints"],
                "properties": {
                    "kind": {"enum": list(POLYLINE_KINDS)},
                    "waypoints": {
                        "type": "array",
                        "minItems": 2,
                        "items": {
                            "type": "array",
                            "items": {"type": "number"},
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                },
            },
        },
    },
}

_VALIDATOR = Draft202012Validator(SCENARIO_SCHEMA)


def _json_path(error) -> str:
    parts = ["$"]
    for p in error.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def _check_finite(value: float, path: str) -> None:
    if not math.isfinite(value):
        raise ScenarioError(f"non-finite value at {path}")


def _state_from_json(obj: dict, length: float, width: float, mass: float,
                     agent_class: str, path: str) -> AgentState:
    for k in ("x", "y", "yaw", "vx", "vy"):
        _check_finite(obj[k], f"{path}.{k}")
    return AgentState(obj["x"], obj["y"], obj["yaw"], obj["vx"], obj["vy"],
                      length, width, mass, agent_class)


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario JSON document.

    Schema violations report the JSON path of the offending element; history
    or future length mismatches report the agent id.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e}") from e
    error = next(_VALIDATOR.iter_errors(doc), None)
    if error is not None:
        raise ScenarioError(f"schema violation at {_json_path(error)}: "
                            f"{error.message}")

    H, T = doc["H"], doc["T"]
    agents = []
    for ai, a in enumerate(doc["agents"]):
        if len(a["states"]) != H + 1:
            raise ScenarioError(
                f"agent {a['id']!r}: expected H+1 = {H + 1} past states, "
                f"got {len(a['states'])}")
        future_doc = a.get("future", [])
        if future_doc and len(future_doc) != T:
            raise ScenarioError(
                f"agent {a['id']!r}: expected T = {T} future states, "
                f"got {len(future_doc)}")
        dims = (a["length"], a["width"], a["mass"])
        states = [
            _state_from_json(s, *dims, a["class"],
                             f"$.agents[{ai}].states[{si}]")
            for si, s in enumerate(a["states"])
        ]
        future = [
            _state_from_json(s, *dims, a["class"],
                             f"$.agents[{ai}].future[{si}]")
            for si, s in enumerate(future_doc)
        ] or None
        agents.append(AgentHistory(a["id"], states, future))

    polylines = []
    for mi, m in enumerate(doc["map"]):
        for wi, w in enumerate(m["waypoints"]):
            _check_finite(w[0], f"$.map[{mi}].waypoints[{wi}][0]")
            _check_finite(w[1], f"$.map[{mi}].waypoints[{wi}][1]")
        polylines.append(MapPolyline(np.array(m["waypoints"]), m["kind"]))

    if not 0 <= doc["ego_index"] < len(agents):
        raise ScenarioError(f"ego_index {doc['ego_index']} out of range")
    return Scenario(agents, polylines, H, T, doc["dt"], doc["ego_index"],
                    doc.get("scenario_id", ""), doc.get("template", ""))


def _state_to_json(s: AgentState) -> dict:
    return {"x": s.x, "y": s.y, "yaw": s.yaw, "vx": s.vx, "vy": s.vy}


def dump_scenario(scn: Scenario) -> str:
    """Serialize to deterministic JSON (sorted keys, fixed separators)."""
    doc = {
        "dt": scn.dt,
        "H": scn.horizon_past,
        "T": scn.horizon_future,
        "ego_index": scn.ego_index,
        "scenario_id": scn.scenario_id,
        "template": scn.template,
        "agents": [
            {
                "id": a.agent_id,
                "class": a.current.agent_class,
                "length": a.current.length,
                "width": a.current.width,
                "mass": a.current.mass,
                "states": [_state_to_json(s) for s in a.states],
                "future": [_state_to_json(s) for s in a.future_truth or []],
            }
            for a in scn.agents
        ],
        "map": [
            {"kind": p.kind, "waypoints": p.waypoints.tolist()}
            for p in scn.map
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------

class _Path:
    """Arc-length parameterized centerline."""

    def pos(self, s: float) -> np.ndarray:
        raise NotImplementedError

    def heading(self, s: float) -> float:
        raise NotImplementedError

    def normal(self, s: float) -> np.ndarray:
        h = self.heading(s)
        return np.array([-math.sin(h), math.cos(h)])


class _Line(_Path):
    def __init__(self, start, theta):
        self.start = np.asarray(start, dtype=float)
        self.theta = theta
        self.u = np.array([math.cos(theta), math.sin(theta)])

    def pos(self, s):
        return self.start + s * self.u

    def heading(self, s):
        return self.theta


class _TurnPath(_Path):
    """Straight until s_turn, then a constant-curvature arc."""

    def __init__(self, start, theta, s_turn, curvature):
        self.line = _Line(start, theta)
        self.s_turn = s_turn
        self.kappa = curvature
        self.anchor = self.line.pos(s_turn)

    def pos(self, s):
        if s <= self.s_turn or self.kappa == 0.0:
            return self.line.pos(s)
        ds = s - self.s_turn
        th0, k = self.line.theta, self.kappa
        th = th0 + k * ds
        dx = (math.sin(th) - math.sin(th0)) / k
        dy = -(math.cos(th) - math.cos(th0)) / k
        return self.anchor + np.array([dx, dy])

    def heading(self, s):
        if s <= self.s_turn:
            return self.line.theta
        return self.line.theta + self.kappa * (s - self.s_turn)


class _LaneChangePath(_Path):
    """Straight path with a smooth lateral shift of `delta` meters starting
    at arc length s0 over `length` meters."""

    def __init__(self, start, theta, s0, length, delta):
        self.line = _Line(start, theta)
        self.s0 = s0
        self.length = length
        self.delta = delta

    def _offset(self, s):
        u = np.clip((s - self.s0) / self.length, 0.0, 1.0)
        return self.delta * (3 * u * u - 2 * u ** 3)

    def pos(self, s):
        n = np.array([-math.sin(self.line.theta), math.cos(self.line.theta)])
        return self.line.pos(s) + self._offset(s) * n

    def heading(self, s):
        u = np.clip((s - self.s0) / self.length, 0.0, 1.0)
        slope = self.delta * 6 * (u - u * u) / self.length
        return self.line.theta + math.atan(slope)


def _roll_accel(rng: np.random.Generator, v0: float,
                total_time: float) -> float:
    """0 half the time, otherwise a mild acceleration or deceleration that
    keeps the speed above 1 m/s."""
    roll = rng.uniform()
    if roll < 0.5:
        return 0.0
    mag = rng.uniform(0.3, 0.8)
    if roll < 0.75:
        return mag
    return -min(mag, max(v0 - 1.0, 0.0) / total_time)


@dataclass
class _AgentSpec:
    agent_id: str
    agent_class: str
    path: _Path
    v0: float
    accel: float = 0.0


def _roll_agent(spec: _AgentSpec, H: int, T: int, dt: float,
                rng: np.random.Generator, jitter: float) -> AgentHistory:
    steps = H + 1 + T
    speeds = np.maximum(spec.v0 + spec.accel * dt * np.arange(steps), 0.3)
    s = np.concatenate([[0.0], np.cumsum(speeds[:-1] * dt)])
    pts = np.array([spec.path.pos(si) for si in s])
    yaws = np.array([spec.path.heading(si) for si in s])
    pts = pts + rng.normal(0.0, jitter, size=pts.shape)

    vel = np.empty_like(pts)
    vel[:-1] = (pts[1:] - pts[:-1]) / dt
    vel[-1] = vel[-2]

    length, width, mass = AGENT_DIMS[spec.agent_class]
    states = [
        AgentState(pts[t, 0], pts[t, 1], yaws[t], vel[t, 0], vel[t, 1],
                   length, width, mass, spec.agent_class)
        for t in range(steps)
    ]
    return AgentHistory(spec.agent_id, states[:H + 1], states[H + 1:])


def _sample_polyline(path: _Path, s_lo: float, s_hi: float, kind: str,
                     offset: float = 0.0, spacing: float = 3.0
                     ) -> list[MapPolyline]:
    n = max(int(math.ceil((s_hi - s_lo) / spacing)) + 1, 2)
    ss = np.linspace(s_lo, s_hi, n)
    pts = np.array([path.pos(s) + offset * path.normal(s) for s in ss])
    out = []
    for lo in range(0, len(pts) - 1, MAX_POLYLINE_POINTS - 1):
        chunk = pts[lo:lo + MAX_POLYLINE_POINTS]
        if len(chunk) >= 2:
            out.append(MapPolyline(chunk, kind))
    return out


def _apply_rigid(scn: Scenario, origin: np.ndarray, angle: float) -> Scenario:
    """Rotate by angle then translate by origin (scene augmentation)."""
    R = rotation(angle)

    def move(st: AgentState) -> AgentState:
        p = R @ st.position + origin
        v = R @ st.velocity
        return replace(st, x=p[0], y=p[1], vx=v[0], vy=v[1],
                       yaw=math.atan2(math.sin(st.yaw + angle),
                                      math.cos(st.yaw + angle)))

    agents = [
        AgentHistory(a.agent_id, [move(s) for s in a.states],
                     [move(s) for s in a.future_truth] if a.future_truth
                     else None)
        for a in scn.agents
    ]
    polys = [MapPolyline((p.waypoints @ R.T) + origin, p.kind)
             for p in scn.map]
    return replace(scn, agents=agents, map=polys)


def generate_scenario(template: str, n_agents: int, seed: int,
                      H: int = DEFAULT_H, T: int = DEFAULT_T,
                      dt: float = DEFAULT_DT,
                      jitter: float = JITTER_STD) -> Scenario:
    """Build one seeded scenario of the given template.

    The scene is constructed with the ego heading +x through the origin and
    then rotated/translated by a random rigid transform. crossing_conflict
    always contains at least three agents (ego, a crossing vehicle timed to
    a sub-2 m encounter, and a pedestrian near the ego path).
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; "
                         f"expected one of {TEMPLATES}")
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    rng = np.random.default_rng(seed)
    total_time = (H + T) * dt
    specs: list[_AgentSpec] = []
    polys: list[MapPolyline] = []

    def lane_neighbor(idx: int, theta: float = 0.0) -> _AgentSpec:
        lat = rng.choice([-LANE_WIDTH, LANE_WIDTH, 2 * LANE_WIDTH])
        lon = rng.uniform(8.0, 25.0) * rng.choice([-1.0, 1.0])
        v0 = rng.uniform(4.0, 12.0)
        cls = "truck" if rng.uniform() < 0.15 else "car"
        u = np.array([math.cos(theta), math.sin(theta)])
        n = np.array([-math.sin(theta), math.cos(theta)])
        start = lon * u + lat * n - v0 * H * dt * u
        return _AgentSpec(f"a{idx}", cls, _Line(start, theta), v0,
                          _roll_accel(rng, v0, total_time))

    if template in ("straight", "left_turn", "right_turn", "merge"):
        v0 = rng.uniform(5.0, 13.0)
        ego_start = np.array([-v0 * H * dt, 0.0])
        s_now = v0 * H * dt  # ego arc length at t = 0 (pre-acceleration)
        if template == "straight":
            ego_path: _Path = _Line(ego_start, 0.0)
            accel = _roll_accel(rng, v0, total_time)
        elif template == "merge":
            delta = LANE_WIDTH * rng.choice([-1.0, 1.0])
            ego_path = _LaneChangePath(ego_start, 0.0,
                                       s_now + rng.uniform(0.0, 5.0),
                                       rng.uniform(25.0, 40.0), delta)
            accel = _roll_accel(rng, v0, total_time)
        else:
            sign = 1.0 if template == "left_turn" else -1.0
            dpsi = sign * rng.uniform(0.6, 1.1)
            arc_len = v0 * T * dt
            ego_path = _TurnPath(ego_start, 0.0,
                                 s_now + rng.uniform(0.0, 0.2) * arc_len,
                                 dpsi / arc_len)
            accel = 0.0
        specs.append(_AgentSpec("ego", "car", ego_path, v0, accel))
        for k in range(1, n_agents):
            specs.append(lane_neighbor(k))
        s_end = v0 * (H + T) * dt + 0.5 * abs(accel) * total_time ** 2
        polys += _sample_polyline(ego_path, -5.0, s_end + 8.0, "lane_center")
        for side in (-1.0, 1.0):
            polys += _sample_polyline(ego_path, -5.0, s_end + 8.0,
                                      "road_boundary",
                                      offset=side * ROAD_HALF_WIDTH)
        for spec in specs[1:]:
            if spec.agent_class in ("car", "truck"):
                polys += _sample_polyline(
                    spec.path, -5.0, spec.v0 * (H + T) * dt + 8.0,
                    "lane_center")
    else:  # crossing_conflict
        n_agents = max(n_agents, 3)
        v_e = rng.uniform(6.0, 11.0)
        t_star = rng.uniform(2.0, 4.0)   # seconds after t=0
        ego_path = _Line(np.array([-v_e * (t_star + H * dt), 0.0]), 0.0)
        specs.append(_AgentSpec("ego", "car", ego_path, v_e, 0.0))

        v_c = rng.uniform(6.0, 11.0)
        miss = rng.uniform(-1.0, 1.0)
        c_dir = rng.choice([1.0, -1.0])
        cross_path = _Line(
            np.array([miss, -c_dir * v_c * (t_star + H * dt)]),
            c_dir * math.pi / 2)
        specs.append(_AgentSpec("crosser", "car", cross_path, v_c, 0.0))

        v_p = rng.uniform(0.9, 1.6)
        t_ped = rng.uniform(1.0, 4.5)
        p_dir = rng.choice([1.0, -1.0])
        ped_gap = rng.uniform(-0.5, 0.5)
        x_ped = v_e * t_ped
        ped_path = _Line(
            np.array([x_ped, -p_dir * v_p * (t_ped + H * dt) + ped_gap]),
            p_dir * math.pi / 2)
        specs.append(_AgentSpec("ped", "pedestrian", ped_path, v_p, 0.0))
        for k in range(3, n_agents):
            specs.append(lane_neighbor(k))

        s_end = v_e * (t_star + 2.0 + H * dt)
        polys += _sample_polyline(ego_path, -5.0, s_end + 8.0, "lane_center")
        for side in (-1.0, 1.0):
            polys += _sample_polyline(ego_path, -5.0, s_end + 8.0,
                                      "road_boundary",
                                      offset=side * ROAD_HALF_WIDTH)
        polys += _sample_polyline(cross_path, -5.0,
                                  v_c * (t_star + 2.0 + H * dt) + 8.0,
                                  "lane_center")
        polys.append(MapPolyline(
            np.array([[x_ped, -4.5], [x_ped, 0.0], [x_ped, 4.5]]),
            "crosswalk"))

    agents = [_roll_agent(spec, H, T, dt, rng, jitter) for spec in specs]
    scn = Scenario(agents, polys, H, T, dt, ego_index=0,
                   scenario_id=f"{template}-{seed}", template=template)
    angle = rng.uniform(0.0, 2 * math.pi)
    origin = rng.uniform(-30.0, 30.0, size=2)
    return _apply_rigid(scn, origin, angle)


def min_future_separation(scn: Scenario) -> float:
    """Smallest center distance between any agent pair over the future."""
    tracks = [np.array([[s.x, s.y] for s in a.future_truth])
              for a in scn.agents if a.future_truth]
    best = math.inf
    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            d = np.linalg.norm(tracks[i] - tracks[j], axis=1).min()
            best = min(best, float(d))
    return best


# --------------------------------------------------------------------------
# Local frames
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    """Pose (origin, heading) defining a local coordinate frame."""
    origin: np.ndarray
    angle: float

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.origin) @ rotation(-self.angle).T

    def to_global(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ rotation(self.angle).T + self.origin


def pose_frame(scn: Scenario, agent_id: str) -> Frame:
    cur = scn.agent_by_id(agent_id).current
    return Frame(cur.position, cur.yaw)


def local_frame(scn: Scenario, agent_id: str,
                radius: float = 50.0) -> Scenario:
    """Re-express the scenario in the given agent's current pose, keeping
    only agents (by current position) and polylines (by any waypoint)
    within `radius` of that agent."""
    frame = pose_frame(scn, agent_id)

    kept = []
    for a in scn.agents:
        if np.linalg.norm(a.current.position - frame.origin) <= radius:
            kept.append(a)
    ego_index = next(i for i, a in enumerate(kept)
                     if a.agent_id == agent_id)

    def move(st: AgentState) -> AgentState:
        return transform_state(st, frame.origin, frame.angle)

    agents = [
        AgentHistory(a.agent_id, [move(s) for s in a.states],
                     [move(s) for s in a.future_truth] if a.future_truth
                     else None)
        for a in kept
    ]
    polys = []
    for p in scn.map:
        dists = np.linalg.norm(p.waypoints - frame.origin, axis=1)
        if dists.min() <= radius:
            polys.append(MapPolyline(frame.to_local(p.waypoints), p.kind))
    return replace(scn, agents=agents, map=polys, ego_index=ego_index)
