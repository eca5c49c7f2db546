"""Relative-encoding, body-point, and collision-angle geometry tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskcast.geometry import (AgentState, CollisionRegion, body_points,
                               collision_angle, collision_region,
                               relative_encoding, transform_state)


def agent(x=0.0, y=0.0, yaw=0.0, vx=0.0, vy=0.0, cls="car"):
    return AgentState(x, y, yaw, vx, vy, agent_class=cls)


class TestRelativeEncoding:
    def test_parallel_headings(self):
        r = relative_encoding(agent(vx=1.0), agent(x=3.0, vx=1.0))
        assert r.sin_heading_diff == pytest.approx(0.0, abs=1e-12)
        assert r.cos_heading_diff == pytest.approx(1.0, abs=1e-12)

    def test_perpendicular_headings(self):
        r = relative_encoding(agent(vx=1.0), agent(x=3.0, vy=1.0))
        assert r.sin_heading_diff == pytest.approx(1.0, abs=1e-12)
        assert r.cos_heading_diff == pytest.approx(0.0, abs=1e-12)

    def test_three_four_five_distance(self):
        r = relative_encoding(agent(vx=1.0), agent(x=3.0, y=4.0, vx=1.0))
        assert r.distance == pytest.approx(5.0, abs=1e-12)

    def test_unit_circle_identities(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = agent(*rng.normal(size=2), rng.uniform(-3, 3),
                      *rng.normal(size=2))
            b = agent(*rng.normal(size=2), rng.uniform(-3, 3),
                      *rng.normal(size=2))
            r = relative_encoding(a, b)
            assert r.sin_heading_diff ** 2 + r.cos_heading_diff ** 2 == \
                pytest.approx(1.0, abs=1e-9)
            assert r.sin_bearing ** 2 + r.cos_bearing ** 2 == \
                pytest.approx(1.0, abs=1e-9)
            assert r.distance >= 0.0

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = agent(*rng.uniform(-20, 20, 2), rng.uniform(-3, 3),
                      *rng.uniform(-10, 10, 2))
            b = agent(*rng.uniform(-20, 20, 2), rng.uniform(-3, 3),
                      *rng.uniform(-10, 10, 2))
            origin = rng.uniform(-100, 100, 2)
            angle = rng.uniform(-np.pi, np.pi)
            r0 = relative_encoding(a, b).as_array()
            r1 = relative_encoding(transform_state(a, origin, angle),
                                   transform_state(b, origin, angle)
                                   ).as_array()
            assert np.allclose(r0, r1, atol=1e-9)

    def test_distance_symmetry_and_angle_antisymmetry(self):
        a = agent(1.0, 2.0, 0.3, 4.0, 1.0)
        b = agent(-3.0, 5.0, 1.1, -2.0, 2.0)
        rab = relative_encoding(a, b)
        rba = relative_encoding(b, a)
        assert rab.distance == pytest.approx(rba.distance, abs=1e-12)
        assert rab.sin_heading_diff == pytest.approx(-rba.sin_heading_diff,
                                                     abs=1e-12)
        assert rab.cos_heading_diff == pytest.approx(rba.cos_heading_diff,
                                                     abs=1e-12)

    def test_degenerate_inputs_no_nan(self):
        stopped = agent(yaw=0.7)  # zero velocity
        r = relative_encoding(stopped, stopped)  # also coincident
        assert np.all(np.isfinite(r.as_array()))
        assert r.sin_bearing == 0.0 and r.cos_bearing == 1.0
        assert r.distance == 0.0


class TestBodyPoints:
    def test_yaw_zero(self):
        f, c, r = body_points(AgentState(0, 0, 0.0, 0, 0, length=4.0))
        assert np.allclose(f, [2.0, 0.0])
        assert np.allclose(r, [-2.0, 0.0])

    def test_yaw_quarter_turn(self):
        f, _, _ = body_points(AgentState(0, 0, math.pi / 2, 0, 0, length=4.0))
        assert np.allclose(f, [0.0, 2.0], atol=1e-12)

    def test_yaw_half_turn(self):
        f, _, _ = body_points(AgentState(0, 0, math.pi, 0, 0, length=4.0))
        assert np.allclose(f, [-2.0, 0.0], atol=1e-12)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-4, 4),
           st.floats(0.5, 12))
    @settings(max_examples=100, deadline=None)
    def test_span_and_midpoint(self, x, y, yaw, length):
        a = AgentState(x, y, yaw, 0, 0, length=length)
        f, c, r = body_points(a)
        assert np.linalg.norm(f - r) == pytest.approx(length, abs=1e-12)
        assert np.allclose((f + r) / 2, c, atol=1e-12)


class TestCollisionAngle:
    def test_same_direction(self):
        assert collision_angle(agent(vx=3.0), agent(vx=5.0)) == 0.0

    def test_head_on(self):
        assert collision_angle(agent(vx=3.0), agent(vx=-5.0)) == math.pi

    def test_perpendicular(self):
        assert collision_angle(agent(vx=3.0), agent(vy=2.0)) == math.pi / 2

    def test_stopped_agent_uses_yaw(self):
        stopped = agent(yaw=math.pi)
        assert collision_angle(agent(vx=1.0), stopped) == math.pi

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = agent(vx=rng.normal(), vy=rng.normal())
            b = agent(vx=rng.normal(), vy=rng.normal())
            th = collision_angle(a, b)
            assert 0.0 <= th <= math.pi


class TestCollisionRegion:
    def test_ahead_is_front(self):
        v = agent(yaw=0.0)
        assert collision_region(v, agent(x=5.0)) == CollisionRegion.FRONT

    def test_behind_is_rear(self):
        v = agent(yaw=0.0)
        assert collision_region(v, agent(x=-5.0)) == CollisionRegion.REAR

    def test_beside_is_side(self):
        v = agent(yaw=0.0)
        assert collision_region(v, agent(y=5.0)) == CollisionRegion.SIDE
        assert collision_region(v, agent(y=-5.0)) == CollisionRegion.SIDE

    def test_symmetric_folding(self):
        v = agent(yaw=0.3)
        left = collision_region(v, agent(x=math.cos(0.3 + 1.0) * 4,
                                         y=math.sin(0.3 + 1.0) * 4))
        right = collision_region(v, agent(x=math.cos(0.3 - 1.0) * 4,
                                          y=math.sin(0.3 - 1.0) * 4))
        assert left == right == CollisionRegion.SIDE


class TestAgentState:
    def test_protected_flags(self):
        assert agent(cls="car").protected_flag
        assert agent(cls="truck").protected_flag
        assert not agent(cls="pedestrian").protected_flag
        assert not agent(cls="cyclist").protected_flag

    def test_positive_dims_required(self):
        with pytest.raises(ValueError):
            AgentState(0, 0, 0, 0, 0, length=-1.0)

    def test_unknown_class(self):
        with pytest.raises(ValueError):
            AgentState(0, 0, 0, 0, 0, agent_class="tank")
