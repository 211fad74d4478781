"""2D worlds: line-segment courses, raycast range sensing, disk collision.

Worlds are immutable; raycasting is pure given a seeded generator, so
episodes can run concurrently. Geometry is all in meters, world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from papfsim.shared_control import ObstacleScan

__all__ = [
    "CourseError",
    "World",
    "CourseSpec",
    "SensorConfig",
    "ContactReport",
    "build_course",
    "course_waypoints",
    "raycast_scan",
    "check_collision",
    "min_clearance",
    "segments_text",
    "world_to_dict",
    "DEFAULT_ROBOT_RADIUS",
]

DEFAULT_ROBOT_RADIUS = 0.35

WIDE_WIDTH = 1.5
NARROW_WIDTH = 1.0


class CourseError(ValueError):
    """Invalid course specification."""


@dataclass(frozen=True)
class World:
    """Static line-segment obstacles plus start pose and finish region.

    finish_region is an axis-aligned (xmin, ymin, xmax, ymax) rectangle.
    """

    segments: tuple[tuple[float, float, float, float], ...]
    start_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    finish_region: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    name: str = "world"

    def __post_init__(self):
        fx0, fy0, fx1, fy1 = self.finish_region
        if fx1 <= fx0 or fy1 <= fy0:
            raise CourseError("finish region must be non-degenerate")
        object.__setattr__(
            self,
            "segments",
            tuple(tuple(float(v) for v in seg) for seg in self.segments),
        )

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(P1, D, |D|^2) per segment, for vectorized queries."""
        if not self.segments:
            z = np.zeros((0, 2))
            return z, z, np.zeros(0)
        arr = np.asarray(self.segments, dtype=float)
        p1 = arr[:, 0:2]
        d = arr[:, 2:4] - p1
        return p1, d, np.maximum(np.einsum("ij,ij->i", d, d), 1e-12)

    def in_finish(self, x: float, y: float) -> bool:
        fx0, fy0, fx1, fy1 = self.finish_region
        return fx0 <= x <= fx1 and fy0 <= y <= fy1

    def distances(self, x: float, y: float) -> np.ndarray:
        """Distance from (x, y) to every segment."""
        p1, d, l2 = self._arrays
        if p1.shape[0] == 0:
            return np.zeros(0)
        q = np.array([x, y])
        t = np.clip(np.einsum("ij,ij->i", q - p1, d) / l2, 0.0, 1.0)
        closest = p1 + t[:, None] * d
        return np.hypot(closest[:, 0] - x, closest[:, 1] - y)


@dataclass(frozen=True)
class CourseSpec:
    """Parametric test-course description.

    kind: training | sturn | zigzag. When corridor_width is omitted the
    variant picks it (wide 1.5 m, narrow 1.0 m). wall_length scales the
    course legs; clutter adds that many seeded wall-hugging blocks.
    """

    kind: str = "training"
    variant: str = "wide"
    corridor_width: float | None = None
    wall_length: float = 4.0
    seed: int = 0
    clutter: int = 0

    def __post_init__(self):
        if self.kind not in ("training", "sturn", "zigzag"):
            raise CourseError(f"unknown course kind {self.kind!r}")
        if self.variant not in ("wide", "narrow"):
            raise CourseError(f"unknown course variant {self.variant!r}")
        if self.wall_length <= 0:
            raise CourseError("wall_length must be > 0")
        if self.clutter < 0:
            raise CourseError("clutter must be >= 0")

    @property
    def width(self) -> float:
        if self.corridor_width is not None:
            return self.corridor_width
        return WIDE_WIDTH if self.variant == "wide" else NARROW_WIDTH

    @property
    def name(self) -> str:
        code = {"training": "TR", "sturn": "ST", "zigzag": "ZZ"}[self.kind]
        return f"{code}{'W' if self.variant == 'wide' else 'N'}"


@dataclass(frozen=True)
class SensorConfig:
    """Planar range-sensor model: bearing fan, range cap, optional noise."""

    max_range: float = 7.0
    angular_resolution: float = math.radians(1.0)
    fov: float = 2.0 * math.pi
    range_noise_std: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_range <= 0:
            raise CourseError("max_range must be > 0")
        if self.angular_resolution <= 0:
            raise CourseError("angular_resolution must be > 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise CourseError("dropout_prob must lie in [0, 1]")
        if self.range_noise_std < 0:
            raise CourseError("range_noise_std must be >= 0")

    @cached_property
    def bearings(self) -> np.ndarray:
        full = self.fov >= 2.0 * math.pi - 1e-12
        if full:
            n = max(1, int(round(2.0 * math.pi / self.angular_resolution)))
            raw = np.arange(n) * (2.0 * math.pi / n)
        else:
            n = max(1, int(round(self.fov / self.angular_resolution)))
            raw = -self.fov / 2.0 + np.arange(n + 1) * (self.fov / n)
        wrapped = np.mod(raw + math.pi, 2.0 * math.pi) - math.pi
        wrapped[wrapped <= -math.pi + 1e-15] = math.pi
        return wrapped


@dataclass(frozen=True)
class ContactReport:
    """Disk-vs-world contact result."""

    in_contact: bool = False
    penetration: float = 0.0
    contact_speed: float = 0.0
    contact_point: tuple[float, float] | None = None
    normal: tuple[float, float] | None = None


# ---------------------------------------------------------------------------
# Course construction
# ---------------------------------------------------------------------------


def _unit(v: np.ndarray) -> np.ndarray:
    return v / math.hypot(v[0], v[1])


def _left_normal(d: np.ndarray) -> np.ndarray:
    return np.array([-d[1], d[0]])


def _offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline by a signed lateral distance with miter joins."""
    n = len(points)
    out = np.empty_like(points)
    for i in range(n):
        if i == 0:
            nrm = _left_normal(_unit(points[1] - points[0]))
            out[i] = points[i] + offset * nrm
        elif i == n - 1:
            nrm = _left_normal(_unit(points[-1] - points[-2]))
            out[i] = points[i] + offset * nrm
        else:
            n1 = _left_normal(_unit(points[i] - points[i - 1]))
            n2 = _left_normal(_unit(points[i + 1] - points[i]))
            bis = n1 + n2
            norm = math.hypot(bis[0], bis[1])
            if norm < 1e-9:  # 180 degree kink; fall back to first normal
                out[i] = points[i] + offset * n1
                continue
            bis /= norm
            miter = offset / max(float(bis @ n1), 0.2)
            out[i] = points[i] + miter * bis
    return out


def _polyline_segments(points: np.ndarray) -> list[tuple[float, float, float, float]]:
    return [
        (float(a[0]), float(a[1]), float(b[0]), float(b[1]))
        for a, b in zip(points[:-1], points[1:])
    ]


def _box_segments(cx: float, cy: float, half: float) -> list[tuple[float, float, float, float]]:
    x0, y0, x1, y1 = cx - half, cy - half, cx + half, cy + half
    return [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]


def _centerline(spec: CourseSpec) -> np.ndarray:
    leg = spec.wall_length
    if spec.kind == "training":
        return np.array([(0.0, 0.0), (3.0 * leg, 0.0)])
    if spec.kind == "sturn":
        # switchback: out, riser, back, riser, out again; riser long enough
        # that the gap between passes exceeds the corridor width
        riser = max(2.2 * spec.width, 2.0)
        return np.array(
            [
                (0.0, 0.0),
                (leg, 0.0),
                (leg, riser),
                (0.0, riser),
                (0.0, 2.0 * riser),
                (leg, 2.0 * riser),
            ]
        )
    # zigzag: diagonal legs alternating +/-45 degrees off the course axis
    pts = [np.array([0.0, 0.0])]
    heading = math.radians(45.0)
    for _ in range(4):
        step = leg * np.array([math.cos(heading), math.sin(heading)])
        pts.append(pts[-1] + step)
        heading = -heading
    return np.array(pts)


def _clutter_blocks(
    spec: CourseSpec, center: np.ndarray, width: float, robot_radius: float
) -> list[tuple[float, float, float, float]]:
    """Small wall-hugging blocks; never narrow the passage below 2r + margin."""
    rng = np.random.default_rng(spec.seed)
    segs: list[tuple[float, float, float, float]] = []
    lengths = np.hypot(*(np.diff(center, axis=0).T))
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]
    max_protrusion = max(0.0, width - 2.0 * robot_radius - 0.15)
    if max_protrusion <= 0.02:
        return segs
    # one block per arclength slot, alternating sides, so blocks can never
    # gang up on the same passage section
    lo, hi = 0.15 * total, 0.9 * total
    slot = (hi - lo) / max(spec.clutter, 1)
    for k in range(spec.clutter):
        s = lo + (k + 0.5) * slot + rng.uniform(-0.2, 0.2) * slot
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(center) - 2)
        t = (s - cum[i]) / max(lengths[i], 1e-9)
        # keep blocks off the mitered corners
        t_margin = min(0.45, 0.8 * width / lengths[i])
        t = min(max(t, t_margin), 1.0 - t_margin)
        base = center[i] + t * (center[i + 1] - center[i])
        d = _unit(center[i + 1] - center[i])
        nrm = _left_normal(d)
        side = 1.0 if k % 2 == 0 else -1.0
        protrusion = rng.uniform(0.5 * max_protrusion, max_protrusion)
        half = min(protrusion / 2.0, 0.3)
        c = base + side * (width / 2.0 - half) * nrm
        segs.extend(_box_segments(float(c[0]), float(c[1]), half))
    return segs


def build_course(spec: CourseSpec, robot_radius: float = DEFAULT_ROBOT_RADIUS) -> World:
    """Build the deterministic course geometry for a spec.

    Raises CourseError when the corridor cannot admit the robot disk.
    """
    width = spec.width
    if width <= 2.0 * robot_radius:
        raise CourseError(
            f"corridor width {width} m too narrow for robot radius {robot_radius} m"
        )
    center = _centerline(spec)
    left = _offset_polyline(center, width / 2.0)
    right = _offset_polyline(center, -width / 2.0)
    segs = _polyline_segments(left) + _polyline_segments(right)
    # cap behind the start so the corridor has one way out
    segs.append((float(left[0][0]), float(left[0][1]), float(right[0][0]), float(right[0][1])))

    if spec.kind == "training":
        # one offset block to dodge, against the left wall at mid-course
        protrusion = min(0.45 * width, max(0.0, width - 2.0 * robot_radius - 0.1))
        if protrusion > 0.05:
            half = protrusion / 2.0
            mid = 0.5 * (center[0] + center[-1])
            segs.extend(
                _box_segments(float(mid[0]), float(mid[1] + width / 2.0 - half), half)
            )
    if spec.clutter:
        segs.extend(_clutter_blocks(spec, center, width, robot_radius))

    start_dir = _unit(center[1] - center[0])
    start = center[0] + start_dir * max(0.6, 1.8 * robot_radius)
    end_dir = _unit(center[-1] - center[-2])
    fin_center = center[-1] - end_dir * 0.6
    fr = 0.55
    finish = (
        float(fin_center[0] - fr),
        float(fin_center[1] - fr),
        float(fin_center[0] + fr),
        float(fin_center[1] + fr),
    )
    yaw = math.atan2(start_dir[1], start_dir[0])
    world = World(
        segments=tuple(segs),
        start_pose=(float(start[0]), float(start[1]), float(yaw)),
        finish_region=finish,
        name=spec.name,
    )
    d0 = float(np.min(world.distances(world.start_pose[0], world.start_pose[1])))
    if d0 <= robot_radius:
        raise CourseError("start pose in collision; check spec dimensions")
    return world


# ---------------------------------------------------------------------------
# Sensing and contact
# ---------------------------------------------------------------------------


def course_waypoints(spec: CourseSpec) -> tuple[tuple[float, float], ...]:
    """A rider route through the course: entry/exit points at each corner.

    Corners get a waypoint shortly before and shortly after the turn,
    both pulled toward the inside, which is how a rider actually lines up
    a corner; aiming at the corner pocket itself parks the robot in the
    frontal repulsion zone of the outer wall.
    """
    center = _centerline(spec)
    cut = min(0.3, 0.25 * spec.width)
    lead = max(0.8 * spec.width, 0.8)
    pts: list[tuple[float, float]] = []
    for i in range(1, len(center) - 1):
        d1 = _unit(center[i] - center[i - 1])
        d2 = _unit(center[i + 1] - center[i])
        bis = d2 - d1
        norm = math.hypot(bis[0], bis[1])
        inward = (bis / norm) if norm > 1e-9 else np.zeros(2)
        entry = center[i] - lead * d1 + cut * inward
        exit_ = center[i] + lead * d2 + cut * inward
        pts.append((float(entry[0]), float(entry[1])))
        pts.append((float(exit_[0]), float(exit_[1])))
    end = center[-1]
    pts.append((float(end[0]), float(end[1])))
    return tuple(pts)


def raycast_scan(
    world: World,
    pose: tuple[float, float, float],
    cfg: SensorConfig,
    rng: np.random.Generator | None = None,
    timestamp: float = 0.0,
) -> ObstacleScan:
    """Cast the bearing fan from pose; nearest hit per ray within range.

    Bearings are reported in the robot frame. Noise and dropout draws come
    from rng (or a generator seeded from cfg.seed), in fixed bearing order.
    """
    p1, d, _ = world._arrays
    bearings = cfg.bearings
    if p1.shape[0] == 0:
        return ObstacleScan(np.empty(0), np.empty(0), timestamp)
    x, y, yaw = pose
    ang = bearings + yaw
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])  # (R,2)
    rel = p1 - np.array([x, y])  # (S,2)
    # cross products for ray/segment solve, broadcast rays x segments
    denom = dirs[:, 0:1] * d[None, :, 1] - dirs[:, 1:2] * d[None, :, 0]  # (R,S)
    rel_cross_d = rel[:, 0] * d[:, 1] - rel[:, 1] * d[:, 0]  # (S,)
    rel_cross_dir = rel[None, :, 0] * dirs[:, 1:2] - rel[None, :, 1] * dirs[:, 0:1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = rel_cross_d[None, :] / denom
        u = rel_cross_dir / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    dist = t.min(axis=1)

    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.range_noise_std > 0.0:
        dist = dist + rng.normal(0.0, cfg.range_noise_std, size=dist.shape)
        dist = np.maximum(dist, 1e-3)
    keep = dist <= cfg.max_range
    if cfg.dropout_prob > 0.0:
        keep &= rng.uniform(size=dist.shape) >= cfg.dropout_prob
    return ObstacleScan(dist[keep], bearings[keep], timestamp)


def check_collision(
    world: World,
    position: tuple[float, float],
    velocity: tuple[float, float],
    robot_radius: float = DEFAULT_ROBOT_RADIUS,
) -> ContactReport:
    """Disk-vs-segments test; contact iff the nearest distance < radius."""
    if robot_radius <= 0:
        raise ValueError("robot_radius must be > 0")
    dists = world.distances(position[0], position[1])
    if dists.size == 0 or float(dists.min()) >= robot_radius:
        return ContactReport(contact_speed=math.hypot(*velocity))
    i = int(np.argmin(dists))
    p1, d, l2 = world._arrays
    q = np.array(position, dtype=float)
    t = float(np.clip((q - p1[i]) @ d[i] / l2[i], 0.0, 1.0))
    closest = p1[i] + t * d[i]
    away = q - closest
    norm = math.hypot(away[0], away[1])
    normal = (away / norm) if norm > 1e-12 else np.array([0.0, 1.0])
    return ContactReport(
        in_contact=True,
        penetration=float(robot_radius - dists[i]),
        contact_speed=math.hypot(*velocity),
        contact_point=(float(closest[0]), float(closest[1])),
        normal=(float(normal[0]), float(normal[1])),
    )


def min_clearance(
    world: World,
    position: tuple[float, float],
    robot_radius: float = DEFAULT_ROBOT_RADIUS,
) -> float:
    """Nearest surface distance minus radius; +inf in an empty world."""
    dists = world.distances(position[0], position[1])
    if dists.size == 0:
        return math.inf
    return float(dists.min()) - robot_radius


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def segments_text(world: World) -> str:
    """One `x1 y1 x2 y2` line per segment."""
    return "\n".join(
        f"{s[0]!r} {s[1]!r} {s[2]!r} {s[3]!r}" for s in world.segments
    ) + "\n"


def world_to_dict(world: World) -> dict:
    return {
        "name": world.name,
        "segments": [list(s) for s in world.segments],
        "start_pose": list(world.start_pose),
        "finish_region": list(world.finish_region),
    }
