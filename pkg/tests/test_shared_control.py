"""Unit and property tests for the shared-control pipeline."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from papfsim.shared_control import (
    ConfigError,
    NormalizedCommand,
    ObstacleScan,
    PapfConfig,
    RepulsiveForce,
    alarm_level,
    blend,
    firas_magnitude,
    low_pass,
    repulsive_force,
    select_points,
    shared_control_step,
    track_compensate,
)

CFG = PapfConfig()


def brute_force_repulsion(points, vx, vy, cfg):
    """Independent oracle: plain-Python loop applying the set predicates."""

    def firas(d, eta):
        if d > cfg.delta_thre:
            return 0.0
        return eta * (1.0 / d - 1.0 / cfg.delta_thre) ** 2

    sel_x, sel_y = [], []
    if not (vx == 0.0 and vy == 0.0):
        for d, a in points:
            if math.cos(a) * vx + math.sin(a) * vy >= 0.0:
                sel_y.append((d, a))
                if abs(d * math.sin(a)) <= cfg.corridor_half_width:
                    sel_x.append((d, a))
    fx = (
        -sum(math.cos(a) * firas(d, cfg.eta_x) for d, a in sel_x) / len(sel_x)
        if sel_x
        else 0.0
    )
    fy = (
        -sum(math.sin(a) * firas(d, cfg.eta_y) for d, a in sel_y) / len(sel_y)
        if sel_y
        else 0.0
    )
    return max(-1.0, min(1.0, fx)), max(-1.0, min(1.0, fy))


def random_scan(rng, max_points=40):
    n = rng.integers(0, max_points + 1)
    deltas = rng.uniform(0.05, 8.0, size=n)
    alphas = rng.uniform(-math.pi, math.pi, size=n)
    alphas[alphas <= -math.pi] = math.pi
    return ObstacleScan(deltas, alphas)


class TestFirasMagnitude:
    def test_beyond_threshold_is_zero(self):
        assert firas_magnitude(3.0, 2.0, 1.0) == 0.0

    def test_boundary_is_zero(self):
        assert firas_magnitude(2.0, 2.0, 1.0) == 0.0

    def test_hand_value(self):
        # (1/1 - 1/2)^2 = 0.25
        assert firas_magnitude(1.0, 2.0, 1.0) == pytest.approx(0.25, abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            firas_magnitude(0.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            firas_magnitude(-1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            firas_magnitude(1.0, 0.0, 1.0)

    def test_monotone_nonincreasing(self):
        deltas = np.linspace(0.01, 2.0, 500)
        mags = [firas_magnitude(d, 2.0, 1.3) for d in deltas]
        assert all(a >= b - 1e-15 for a, b in zip(mags, mags[1:]))

    def test_continuous_at_threshold(self):
        eps = 1e-9
        assert firas_magnitude(2.0 - eps, 2.0, 1.0) < 1e-15


class TestSelectPoints:
    def test_rear_point_excluded(self):
        scan = ObstacleScan.from_points([(1.0, math.pi)])
        idx_x, idx_y = select_points(scan, NormalizedCommand(1, 0), CFG)
        assert idx_x.size == 0 and idx_y.size == 0

    def test_dead_ahead_in_both(self):
        scan = ObstacleScan.from_points([(1.0, 0.0)])
        idx_x, idx_y = select_points(scan, NormalizedCommand(1, 0), CFG)
        assert list(idx_x) == [0] and list(idx_y) == [0]

    def test_wide_lateral_offset_y_only(self):
        # offset 2*sin(pi/4) = 1.414 m > 0.35 m half-width
        scan = ObstacleScan.from_points([(2.0, math.pi / 4)])
        idx_x, idx_y = select_points(scan, NormalizedCommand(1, 0), CFG)
        assert idx_x.size == 0 and list(idx_y) == [0]

    def test_zero_command_selects_nothing(self):
        scan = ObstacleScan.from_points([(0.5, 0.0), (0.5, 1.0)])
        idx_x, idx_y = select_points(scan, NormalizedCommand(0, 0), CFG)
        assert idx_x.size == 0 and idx_y.size == 0

    def test_perpendicular_tie_included(self):
        scan = ObstacleScan.from_points([(1.0, math.pi / 2)])
        _, idx_y = select_points(scan, NormalizedCommand(1, 0), CFG)
        assert list(idx_y) == [0]


class TestRepulsiveForce:
    def test_empty_scan(self):
        scan = ObstacleScan.from_points([])
        f = repulsive_force(scan, NormalizedCommand(1, 0), CFG)
        assert f.fx == 0.0 and f.fy == 0.0

    def test_single_point_hand_value(self):
        cfg = PapfConfig(eta_x=1.0, eta_y=1.0, delta_thre=2.0)
        scan = ObstacleScan.from_points([(1.0, 0.0)])
        f = repulsive_force(scan, NormalizedCommand(1, 0), cfg)
        assert f.fx == pytest.approx(-0.25, abs=1e-12)
        assert f.fy == 0.0

    def test_saturation_near_contact(self):
        cfg = PapfConfig(eta_x=1.0, eta_y=1.0, delta_thre=2.0)
        scan = ObstacleScan.from_points([(0.01, 0.0)])
        f = repulsive_force(scan, NormalizedCommand(1, 0), cfg)
        assert f.fx == -1.0

    def test_threshold_cutoff(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = rng.integers(1, 30)
            deltas = rng.uniform(CFG.delta_thre * 1.0001, 9.0, size=n)
            alphas = rng.uniform(-math.pi / 2, math.pi / 2, size=n)
            scan = ObstacleScan(deltas, alphas)
            f = repulsive_force(scan, NormalizedCommand(1, 0.2), CFG)
            assert f.fx == 0.0 and f.fy == 0.0

    def test_oracle_equivalence_random_scans(self):
        rng = np.random.default_rng(12345)
        cfg = PapfConfig(eta_x=0.8, eta_y=0.6)
        worst = 0.0
        for _ in range(1000):
            scan = random_scan(rng)
            v = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            f = repulsive_force(scan, v, cfg)
            ox, oy = brute_force_repulsion(scan.points, v.x, v.y, cfg)
            worst = max(worst, abs(f.fx - ox), abs(f.fy - oy))
        assert worst <= 1e-9

    def test_single_point_monotone_in_distance(self):
        cfg = PapfConfig(eta_x=1.0, eta_y=1.0)
        mags = []
        for d in np.linspace(0.02, cfg.delta_thre, 300):
            scan = ObstacleScan.from_points([(float(d), 0.3)])
            f = repulsive_force(scan, NormalizedCommand(1, 0), cfg)
            mags.append(math.hypot(f.fx, f.fy))
        assert all(a >= b - 1e-12 for a, b in zip(mags, mags[1:]))

    def test_saturation_bounds_random(self):
        rng = np.random.default_rng(99)
        cfg = PapfConfig(eta_x=50.0, eta_y=50.0)
        for _ in range(300):
            scan = random_scan(rng)
            v = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            f = repulsive_force(scan, v, cfg)
            assert -1.0 <= f.fx <= 1.0 and -1.0 <= f.fy <= 1.0

    def test_axis_aligned_passivity(self):
        # With an axis-aligned command the repulsion never has a positive
        # component along it (every selected point has g(alpha)*v >= 0).
        rng = np.random.default_rng(31)
        for _ in range(1000):
            scan = random_scan(rng)
            if rng.uniform() < 0.5:
                v = NormalizedCommand(rng.choice([-1, 1]) * rng.uniform(0.05, 1), 0)
            else:
                v = NormalizedCommand(0, rng.choice([-1, 1]) * rng.uniform(0.05, 1))
            f = repulsive_force(scan, v, CFG)
            assert f.fx * v.x + f.fy * v.y <= 1e-12

    def test_selected_points_face_the_command(self):
        rng = np.random.default_rng(77)
        for _ in range(500):
            scan = random_scan(rng)
            v = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            idx_x, idx_y = select_points(scan, v, CFG)
            for i in idx_y:
                dot = math.cos(scan.alphas[i]) * v.x + math.sin(scan.alphas[i]) * v.y
                assert dot >= -1e-12
            assert set(idx_x) <= set(idx_y)


class TestBlend:
    def test_stationary_neutrality(self):
        out = blend(NormalizedCommand(0, 0), RepulsiveForce(-1, -1))
        assert out.x == 0.0 and out.y == 0.0

    def test_identity_without_force(self):
        out = blend(NormalizedCommand(1, 0), RepulsiveForce(0, 0))
        assert out.x == 1.0 and out.y == 0.0

    def test_hand_value(self):
        out = blend(NormalizedCommand(1, 0), RepulsiveForce(-0.25, 0))
        assert out.x == pytest.approx(0.75, abs=1e-15)

    def test_stationary_neutral_for_any_force(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            f = RepulsiveForce(rng.uniform(-1, 1), rng.uniform(-1, 1))
            out = blend(NormalizedCommand(0, 0), f)
            assert out.x == 0.0 and out.y == 0.0

    @given(
        vx=st.floats(-1, 1),
        vy=st.floats(-1, 1),
        fx=st.floats(-1, 1),
        fy=st.floats(-1, 1),
    )
    def test_output_always_in_band(self, vx, vy, fx, fy):
        out = blend(NormalizedCommand(vx, vy), RepulsiveForce(fx, fy))
        assert -1.0 <= out.x <= 1.0 and -1.0 <= out.y <= 1.0


class TestTrackCompensate:
    def test_counter_lean_value(self):
        out = track_compensate(
            NormalizedCommand(0.2, 0), NormalizedCommand(0.6, 0), 1.0
        )
        assert out.x == pytest.approx(-0.2, abs=1e-15)

    def test_gate_closes_when_correction_accelerates(self):
        out = track_compensate(
            NormalizedCommand(0.8, 0), NormalizedCommand(0.2, 0), 1.0
        )
        assert out.x == 0.8

    def test_zero_error_passthrough(self):
        out = track_compensate(
            NormalizedCommand(0.5, 0), NormalizedCommand(0.5, 0), 3.0
        )
        assert out.x == 0.5

    def test_zero_feedback_closes_gate(self):
        out = track_compensate(NormalizedCommand(0.4, 0), NormalizedCommand(0, 0), 2.0)
        assert out.x == 0.4

    def test_negative_zeta_rejected(self):
        with pytest.raises(ConfigError):
            track_compensate(NormalizedCommand(0, 0), NormalizedCommand(0, 0), -0.1)

    def test_literal_gate_mode(self):
        # literal: zeta zeroed when feedback exceeds the target per axis
        out = track_compensate(
            NormalizedCommand(0.2, 0), NormalizedCommand(0.6, 0), 1.0, "literal"
        )
        assert out.x == 0.2
        out = track_compensate(
            NormalizedCommand(0.8, 0), NormalizedCommand(0.2, 0), 1.0, "literal"
        )
        assert out.x == pytest.approx(1.0)  # accelerates, clamped to band

    @given(
        ideal=st.floats(-1, 1),
        fb=st.floats(-1, 1),
        zeta=st.floats(0, 5),
    )
    @settings(max_examples=500)
    def test_deceleration_only_properties(self, ideal, fb, zeta):
        out = track_compensate(
            NormalizedCommand(ideal, 0), NormalizedCommand(fb, 0), zeta
        )
        vi = max(-1.0, min(1.0, ideal))
        vf = max(-1.0, min(1.0, fb))
        assert abs(out.x) <= max(abs(vi), abs(vf)) + 1e-12
        assert math.copysign(1, out.x - vi) * math.copysign(1, vf) <= 0 or (
            abs(out.x - vi) < 1e-15
        )


class TestLowPass:
    def test_filter_off(self):
        out = low_pass(NormalizedCommand(0.7, -0.3), NormalizedCommand(0, 0), 0.0)
        assert out.x == 0.7 and out.y == -0.3

    def test_fixed_point(self):
        v = NormalizedCommand(0.4, 0.1)
        out = low_pass(v, v, 0.63)
        assert out.x == v.x and out.y == v.y

    def test_hand_value(self):
        out = low_pass(NormalizedCommand(1, 0), NormalizedCommand(0, 0), 0.8)
        assert out.x == pytest.approx(0.2, abs=1e-15)

    def test_bad_epsilon(self):
        with pytest.raises(ConfigError):
            low_pass(NormalizedCommand(0, 0), NormalizedCommand(0, 0), 1.0)
        with pytest.raises(ConfigError):
            low_pass(NormalizedCommand(0, 0), NormalizedCommand(0, 0), -0.1)

    def test_geometric_convergence(self):
        eps = 0.8
        target = NormalizedCommand(0.9, -0.4)
        v = NormalizedCommand(-0.5, 0.3)
        d0x = abs(v.x - target.x)
        d0y = abs(v.y - target.y)
        for k in range(1, 51):
            v = low_pass(target, v, eps)
            assert abs(abs(v.x - target.x) - eps**k * d0x) <= 1e-12
            assert abs(abs(v.y - target.y) - eps**k * d0y) <= 1e-12


class TestAlarmLevel:
    def test_empty_scan(self):
        assert alarm_level(ObstacleScan.from_points([]), NormalizedCommand(1, 0), CFG) == 0.0

    def test_full_volume_at_floor(self):
        cfg = PapfConfig(alarm_on_dist=1.0, alarm_full_dist=0.2)
        scan = ObstacleScan.from_points([(0.2, 0.0)])
        assert alarm_level(scan, NormalizedCommand(1, 0), cfg) == 1.0

    def test_linear_interpolation(self):
        cfg = PapfConfig(alarm_on_dist=1.0, alarm_full_dist=0.2)
        scan = ObstacleScan.from_points([(0.6, 0.0)])
        assert alarm_level(scan, NormalizedCommand(1, 0), cfg) == pytest.approx(0.5)

    def test_not_closing_is_silent(self):
        scan = ObstacleScan.from_points([(0.4, 0.0)])
        assert alarm_level(scan, NormalizedCommand(-1, 0), CFG) == 0.0
        assert alarm_level(scan, NormalizedCommand(0, 0), CFG) == 0.0

    def test_outside_range_is_silent(self):
        scan = ObstacleScan.from_points([(1.5, 0.0)])
        assert alarm_level(scan, NormalizedCommand(1, 0), CFG) == 0.0

    def test_monotone_as_distance_shrinks(self):
        levels = [
            alarm_level(
                ObstacleScan.from_points([(d, 0.0)]), NormalizedCommand(1, 0), CFG
            )
            for d in np.linspace(1.2, 0.05, 100)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(levels, levels[1:]))


class TestSharedControlStep:
    def test_identity_when_unobstructed_and_settled(self):
        v = NormalizedCommand(0.6, -0.2)
        out, diag = shared_control_step(v, ObstacleScan.from_points([]), v, v, CFG)
        assert out.x == v.x and out.y == v.y
        assert diag.min_distance is None

    def test_stationary_no_push(self):
        scan = ObstacleScan.from_points([(0.3, 0.0), (0.2, 1.0)])
        zero = NormalizedCommand(0, 0)
        out, _ = shared_control_step(zero, scan, zero, zero, CFG)
        assert out.x == 0.0 and out.y == 0.0

    def test_equals_stage_by_stage_composition(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            scan = random_scan(rng)
            v_usr = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            v_fb = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            v_old = NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1))
            out, diag = shared_control_step(v_usr, scan, v_fb, v_old, CFG)
            f = repulsive_force(scan, v_usr, CFG)
            expected = low_pass(
                track_compensate(blend(v_usr, f), v_fb, CFG.zeta, CFG.gate_mode),
                v_old,
                CFG.epsilon,
            )
            assert out.x == expected.x and out.y == expected.y
            if len(scan):
                assert diag.min_distance == pytest.approx(float(np.min(scan.deltas)))

    def test_deterministic(self):
        scan = ObstacleScan.from_points([(0.8, 0.2), (1.2, -0.4)])
        args = (
            NormalizedCommand(0.7, 0.1),
            scan,
            NormalizedCommand(0.5, 0.0),
            NormalizedCommand(0.6, 0.05),
            CFG,
        )
        a, _ = shared_control_step(*args)
        b, _ = shared_control_step(*args)
        assert a == b

    def test_output_band_random(self):
        rng = np.random.default_rng(404)
        for _ in range(500):
            scan = random_scan(rng)
            out, _ = shared_control_step(
                NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                scan,
                NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                NormalizedCommand(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                CFG,
            )
            assert -1.0 <= out.x <= 1.0 and -1.0 <= out.y <= 1.0


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            PapfConfig(delta_thre=0.0)
        with pytest.raises(ConfigError):
            PapfConfig(epsilon=1.0)
        with pytest.raises(ConfigError):
            PapfConfig(alarm_on_dist=0.5, alarm_full_dist=0.5)
        with pytest.raises(ConfigError):
            PapfConfig(corridor_half_width=0.0)
        with pytest.raises(ConfigError):
            PapfConfig(zeta=-1.0)
        with pytest.raises(ConfigError):
            PapfConfig(gate_mode="banana")

    def test_scan_validation(self):
        with pytest.raises(ValueError):
            ObstacleScan.from_points([(0.0, 0.0)])
        with pytest.raises(ValueError):
            ObstacleScan.from_points([(1.0, -math.pi)])

    def test_command_clamps_on_construction(self):
        c = NormalizedCommand(2.5, -3.0)
        assert c.x == 1.0 and c.y == -1.0
