"""Passive potential-field shared control.

Velocity-space assistance pipeline for an omnidirectional self-balancing
robot: inverse-distance repulsion from range returns, command blending,
deceleration-only speed tracking, and an output low-pass filter. All
functions are pure; per-axis commands live in the normalized band [-1, 1]
and convert to physical velocity as component * v_max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigError",
    "ObstacleScan",
    "NormalizedCommand",
    "RepulsiveForce",
    "PapfConfig",
    "SharedControlDiagnostics",
    "firas_magnitude",
    "select_points",
    "repulsive_force",
    "blend",
    "track_compensate",
    "low_pass",
    "alarm_level",
    "shared_control_step",
]


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariants."""


def _clamp(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class ObstacleScan:
    """Polar range returns in the robot frame.

    deltas[i] is the range (m, > 0) and alphas[i] the bearing (rad,
    in (-pi, pi], measured from the robot's front axis, counterclockwise
    positive toward the left). A scan may be empty (open space).
    """

    deltas: np.ndarray
    alphas: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float).reshape(-1)
        alphas = np.asarray(self.alphas, dtype=float).reshape(-1)
        if deltas.shape != alphas.shape:
            raise ValueError("deltas and alphas must have equal length")
        if deltas.size and not np.all(deltas > 0.0):
            raise ValueError("every scan range must be > 0")
        if alphas.size and not np.all((alphas > -math.pi) & (alphas <= math.pi)):
            raise ValueError("every bearing must lie in (-pi, pi]")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "alphas", alphas)

    @classmethod
    def from_points(cls, points, timestamp: float = 0.0) -> "ObstacleScan":
        """Build from an iterable of (range, bearing) pairs."""
        pts = list(points)
        if not pts:
            return cls(np.empty(0), np.empty(0), timestamp)
        d, a = zip(*pts)
        return cls(np.array(d, dtype=float), np.array(a, dtype=float), timestamp)

    def __len__(self) -> int:
        return self.deltas.size

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.deltas.tolist(), self.alphas.tolist()))


@dataclass(frozen=True)
class NormalizedCommand:
    """Per-axis command in [-1, 1]; x is front-positive, y left-positive.

    Components are clamped on construction so the band invariant holds
    everywhere downstream.
    """

    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _clamp(float(self.x)))
        object.__setattr__(self, "y", _clamp(float(self.y)))

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def to_velocity(self, v_max: float) -> tuple[float, float]:
        return (self.x * v_max, self.y * v_max)


@dataclass(frozen=True)
class RepulsiveForce:
    """Dimensionless per-axis repulsion. Saturated outputs lie in [-1, 1];
    the pre-saturation value is carried in diagnostics and may exceed it."""

    fx: float = 0.0
    fy: float = 0.0

    def saturated(self) -> "RepulsiveForce":
        return RepulsiveForce(_clamp(self.fx), _clamp(self.fy))


@dataclass(frozen=True)
class PapfConfig:
    """Tuning for the shared-control pipeline.

    eta_x/eta_y scale the repulsion per axis, delta_thre is the influence
    radius (m), zeta the speed-tracking aggressiveness, epsilon the output
    low-pass weight, corridor_half_width the frontal-overlap half-width (m)
    used for the longitudinal-force point filter. gate_mode selects the
    tracking gate: "decel" only ever opposes current motion; "literal"
    instead zeroes zeta whenever feedback exceeds the target per axis.
    """

    eta_x: float = 1.0
    eta_y: float = 1.0
    delta_thre: float = 1.5
    zeta: float = 1.0
    epsilon: float = 0.8
    corridor_half_width: float = 0.28
    v_max: float = 2.4
    alarm_on_dist: float = 1.0
    alarm_full_dist: float = 0.25
    gate_mode: str = "decel"

    def __post_init__(self):
        if self.delta_thre <= 0:
            raise ConfigError("delta_thre must be > 0")
        if self.zeta < 0:
            raise ConfigError("zeta must be >= 0")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in [0, 1)")
        if self.corridor_half_width <= 0:
            raise ConfigError("corridor_half_width must be > 0")
        if self.alarm_full_dist >= self.alarm_on_dist:
            raise ConfigError("alarm_full_dist must be < alarm_on_dist")
        if self.eta_x < 0 or self.eta_y < 0:
            raise ConfigError("eta_x and eta_y must be >= 0")
        if self.v_max <= 0:
            raise ConfigError("v_max must be > 0")
        if self.gate_mode not in ("decel", "literal"):
            raise ConfigError("gate_mode must be 'decel' or 'literal'")


@dataclass(frozen=True)
class SharedControlDiagnostics:
    """Telemetry from one shared-control step (cockpit display and tests)."""

    raw_force: RepulsiveForce = field(default_factory=RepulsiveForce)
    selected_point_count_x: int = 0
    selected_point_count_y: int = 0
    min_distance: float | None = None
    alarm_level: float = 0.0
    compensation: tuple[float, float] = (0.0, 0.0)


def firas_magnitude(delta: float, delta_thre: float, eta: float) -> float:
    """Inverse-distance quadratic repulsion magnitude.

    eta * (1/delta - 1/delta_thre)^2 inside the influence radius, zero
    beyond it; continuous at the threshold and nonincreasing in delta.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if delta_thre <= 0:
        raise ValueError("delta_thre must be > 0")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if delta > delta_thre:
        return 0.0
    diff = 1.0 / delta - 1.0 / delta_thre
    return eta * diff * diff


def select_points(
    scan: ObstacleScan, v_usr: NormalizedCommand, cfg: PapfConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Pick the scan indices that may repel each axis.

    A point is a candidate iff the command is nonzero and the point lies in
    the half-plane of the commanded velocity (ties included). The y-axis
    uses all candidates; the x-axis additionally requires the point's
    lateral offset |delta*sin(alpha)| to overlap the robot's frontal
    corridor, so purely lateral obstacles never brake forward motion.
    """
    empty = np.empty(0, dtype=np.intp)
    if len(scan) == 0 or (v_usr.x == 0.0 and v_usr.y == 0.0):
        return empty, empty
    cos_a = np.cos(scan.alphas)
    sin_a = np.sin(scan.alphas)
    ahead = cos_a * v_usr.x + sin_a * v_usr.y >= 0.0
    idx_y = np.flatnonzero(ahead)
    lateral = np.abs(scan.deltas * sin_a) <= cfg.corridor_half_width
    idx_x = np.flatnonzero(ahead & lateral)
    return idx_x, idx_y


def _repulsion_raw(
    scan: ObstacleScan, v_usr: NormalizedCommand, cfg: PapfConfig
) -> tuple[float, float, int, int]:
    """Unsaturated per-axis repulsion plus selected point counts."""
    idx_x, idx_y = select_points(scan, v_usr, cfg)
    inv_thre = 1.0 / cfg.delta_thre

    def axis_sum(idx: np.ndarray, trig: np.ndarray, eta: float) -> float:
        if idx.size == 0:
            return 0.0
        d = scan.deltas[idx]
        diff = np.where(d <= cfg.delta_thre, 1.0 / d - inv_thre, 0.0)
        return float(-np.mean(trig[idx] * eta * diff * diff))

    fx = axis_sum(idx_x, np.cos(scan.alphas), cfg.eta_x)
    fy = axis_sum(idx_y, np.sin(scan.alphas), cfg.eta_y)
    return fx, fy, idx_x.size, idx_y.size


def repulsive_force(
    scan: ObstacleScan, v_usr: NormalizedCommand, cfg: PapfConfig
) -> RepulsiveForce:
    """Averaged repulsion over the selected point sets, saturated to [-1, 1].

    Per axis: -(1/N) * sum(g(alpha) * firas), g = cos for x and sin for y;
    the leading minus makes the force point away from obstacles. Empty
    selections contribute zero.
    """
    fx, fy, _, _ = _repulsion_raw(scan, v_usr, cfg)
    return RepulsiveForce(fx, fy).saturated()


def blend(v_usr: NormalizedCommand, f: RepulsiveForce) -> NormalizedCommand:
    """Add the repulsion to the user command, scaled by the command norm.

    The scale min(1, ||v_usr||) applies to both axes, so a stationary rider
    is never pushed; output is clamped per axis.
    """
    scale = min(1.0, v_usr.norm())
    return NormalizedCommand(v_usr.x + f.fx * scale, v_usr.y + f.fy * scale)


def _compensate_axis(ideal: float, fb: float, zeta: float, gate_mode: str) -> float:
    corr = ideal - fb
    if gate_mode == "literal":
        zeff = 0.0 if fb > ideal else zeta
        return ideal + zeff * corr
    # Deceleration-only gate: active only when the correction opposes the
    # current motion; envelope clamp keeps |out| <= max(|ideal|, |fb|).
    zeff = zeta if corr * fb < 0.0 else 0.0
    out = ideal + zeff * corr
    env = max(abs(ideal), abs(fb))
    return _clamp(out, -env, env)


def track_compensate(
    v_ideal: NormalizedCommand,
    v_fb: NormalizedCommand,
    zeta: float,
    gate_mode: str = "decel",
) -> NormalizedCommand:
    """Counter-lean speed tracking: penalize unwanted velocity per axis.

    v_comp = v_ideal + zeta_eff * (v_ideal - v_fb). With the default gate,
    zeta_eff is zeta only when the correction opposes the current motion
    (it can brake, never push), and the result never leaves the envelope
    of the two inputs.
    """
    if zeta < 0:
        raise ConfigError("zeta must be >= 0")
    if gate_mode not in ("decel", "literal"):
        raise ConfigError("gate_mode must be 'decel' or 'literal'")
    return NormalizedCommand(
        _compensate_axis(v_ideal.x, v_fb.x, zeta, gate_mode),
        _compensate_axis(v_ideal.y, v_fb.y, zeta, gate_mode),
    )


def low_pass(
    v_comp: NormalizedCommand, v_old: NormalizedCommand, epsilon: float
) -> NormalizedCommand:
    """First-order smoothing toward the previous command.

    v_cmd = v_comp + epsilon * (v_old - v_comp) per axis.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError("epsilon must lie in [0, 1)")
    return NormalizedCommand(
        v_comp.x + epsilon * (v_old.x - v_comp.x),
        v_comp.y + epsilon * (v_old.y - v_comp.y),
    )


def alarm_level(
    scan: ObstacleScan, v_fb: NormalizedCommand, cfg: PapfConfig
) -> float:
    """Proximity alarm in [0, 1]; louder as the nearest obstacle closes in.

    Zero when the scan is empty, the nearest return is outside the alarm
    range, or the robot is not moving toward it.
    """
    if len(scan) == 0:
        return 0.0
    i = int(np.argmin(scan.deltas))
    d_min = float(scan.deltas[i])
    if d_min >= cfg.alarm_on_dist:
        return 0.0
    a = float(scan.alphas[i])
    closing = v_fb.x * math.cos(a) + v_fb.y * math.sin(a)
    if closing <= 0.0:
        return 0.0
    span = cfg.alarm_on_dist - cfg.alarm_full_dist
    return _clamp((cfg.alarm_on_dist - d_min) / span, 0.0, 1.0)


def shared_control_step(
    v_usr: NormalizedCommand,
    scan: ObstacleScan,
    v_fb: NormalizedCommand,
    v_old: NormalizedCommand,
    cfg: PapfConfig,
) -> tuple[NormalizedCommand, SharedControlDiagnostics]:
    """Run the full pipeline: repulsion -> blend -> tracking -> low-pass.

    Deterministic; identical inputs produce identical outputs.
    """
    raw_fx, raw_fy, n_x, n_y = _repulsion_raw(scan, v_usr, cfg)
    f = RepulsiveForce(raw_fx, raw_fy).saturated()
    v_ideal = blend(v_usr, f)
    v_comp = track_compensate(v_ideal, v_fb, cfg.zeta, cfg.gate_mode)
    v_cmd = low_pass(v_comp, v_old, cfg.epsilon)
    diag = SharedControlDiagnostics(
        raw_force=RepulsiveForce(raw_fx, raw_fy),
        selected_point_count_x=n_x,
        selected_point_count_y=n_y,
        min_distance=float(np.min(scan.deltas)) if len(scan) else None,
        alarm_level=alarm_level(scan, v_fb, cfg),
        compensation=(v_comp.x - v_ideal.x, v_comp.y - v_ideal.y),
    )
    return v_cmd, diag
