"""Scripted rider-intent generators.

Stand-ins for the human driver: each emits a normalized steering intent
plus the body torque of the lean that produces it (passive compliance —
a leaning rider physically pushes the plant). One generator instance per
episode; they hold only their own progression state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from papfsim.shared_control import NormalizedCommand

__all__ = [
    "RiderCommand",
    "Route",
    "WaypointRider",
    "NoisyWaypointRider",
    "AggressiveRider",
    "ReplayRider",
    "DEFAULT_K_LEAN",
    "YAW_RATE_MAX",
    "RecordingError",
]

# torque per unit intent, calibrated so a full lean can force the plant
# past 0.5 m/s before the tracking loop re-centers it
DEFAULT_K_LEAN = 60.0
YAW_RATE_MAX = 1.5  # rad/s at |yaw command| = 1


class RecordingError(ValueError):
    """Malformed or incompatible command recording."""


@dataclass(frozen=True)
class RiderCommand:
    """Steering intent plus the rider's physical center-of-mass torque."""

    intent: NormalizedCommand = field(default_factory=NormalizedCommand)
    yaw_rate_cmd: float = 0.0
    disturbance_torque: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Route:
    """Ordered waypoints with an arrival radius."""

    waypoints: tuple[tuple[float, float], ...]
    arrival_radius: float = 0.5

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("route needs at least one waypoint")
        if self.arrival_radius <= 0:
            raise ValueError("arrival_radius must be > 0")


def _to_robot_frame(dx: float, dy: float, yaw: float) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return (dx * c + dy * s, -dx * s + dy * c)


def _command(ix: float, iy: float, k_lean: float, yaw_rate: float = 0.0) -> RiderCommand:
    intent = NormalizedCommand(ix, iy)
    return RiderCommand(
        intent=intent,
        yaw_rate_cmd=yaw_rate,
        disturbance_torque=(k_lean * intent.x, k_lean * intent.y),
    )


def _facing_yaw_rate(ix: float, iy: float) -> float:
    """Turn the nose toward where the rider is steering.

    The intent is already in the robot frame, so its bearing is exactly
    the heading error; riders hold course when barely steering.
    """
    if math.hypot(ix, iy) < 0.1:
        return 0.0
    err = math.atan2(iy, ix)
    return max(-YAW_RATE_MAX, min(YAW_RATE_MAX, 2.0 * err))


class WaypointRider:
    """Steers toward the current waypoint, advancing on arrival.

    Speed tapers linearly from full at twice the arrival radius down to
    0.2 at the radius itself, which keeps arrivals from oscillating. After
    the last waypoint the intent is zero.
    """

    def __init__(self, route: Route, aggressiveness: float = 0.8,
                 k_lean: float = DEFAULT_K_LEAN):
        if not 0.0 < aggressiveness <= 1.0:
            raise ValueError("aggressiveness must lie in (0, 1]")
        self.route = route
        self.aggressiveness = aggressiveness
        self.k_lean = k_lean
        self._index = 0

    @property
    def done(self) -> bool:
        return self._index >= len(self.route.waypoints)

    def _advance(self, x: float, y: float) -> None:
        r = self.route.arrival_radius
        while not self.done:
            wx, wy = self.route.waypoints[self._index]
            if math.hypot(wx - x, wy - y) > r:
                break
            self._index += 1

    def _steer(self, pose: tuple[float, float, float]) -> tuple[float, float]:
        x, y, yaw = pose
        self._advance(x, y)
        if self.done:
            return (0.0, 0.0)
        wx, wy = self.route.waypoints[self._index]
        dx, dy = wx - x, wy - y
        dist = math.hypot(dx, dy)
        fx, fy = _to_robot_frame(dx / dist, dy / dist, yaw)
        r = self.route.arrival_radius
        taper = 1.0 if dist >= 2 * r else 0.2 + 0.8 * (dist - r) / r
        mag = self.aggressiveness * max(0.2, min(1.0, taper))
        return (fx * mag, fy * mag)

    def command(self, pose, v_fb, t: float = 0.0) -> RiderCommand:
        ix, iy = self._steer(pose)
        return _command(ix, iy, self.k_lean, _facing_yaw_rate(ix, iy))


class NoisyWaypointRider(WaypointRider):
    """Waypoint rider with a seeded wandering heading error.

    The error is an Ornstein-Uhlenbeck angle bias updated once per call,
    which imitates imprecise torso steering. Deterministic per seed.
    """

    def __init__(self, route: Route, aggressiveness: float = 0.8,
                 heading_noise_std: float = 0.35, noise_tau: float = 1.2,
                 dt: float = 0.02, seed: int = 0,
                 k_lean: float = DEFAULT_K_LEAN):
        super().__init__(route, aggressiveness, k_lean)
        self.heading_noise_std = heading_noise_std
        self._decay = math.exp(-dt / noise_tau)
        self._sigma = heading_noise_std * math.sqrt(1.0 - self._decay**2)
        self._rng = np.random.default_rng(seed)
        self._bias = 0.0

    def command(self, pose, v_fb, t: float = 0.0) -> RiderCommand:
        ix, iy = self._steer(pose)
        self._bias = self._decay * self._bias + self._sigma * float(
            self._rng.standard_normal()
        )
        c, s = math.cos(self._bias), math.sin(self._bias)
        nx, ny = ix * c - iy * s, ix * s + iy * c
        return _command(nx, ny, self.k_lean, _facing_yaw_rate(nx, ny))


class AggressiveRider:
    """Leans at constant full magnitude toward a target and never yields.

    Exercises the counter-lean and alarm paths: the intent (and the body
    torque that comes with it) persists regardless of what the shared
    controller does.
    """

    def __init__(self, target: tuple[float, float], aggressiveness: float = 1.0,
                 k_lean: float = DEFAULT_K_LEAN):
        if not 0.0 < aggressiveness <= 1.0:
            raise ValueError("aggressiveness must lie in (0, 1]")
        self.target = target
        self.aggressiveness = aggressiveness
        self.k_lean = k_lean
        self._last_dir = (1.0, 0.0)

    def command(self, pose, v_fb, t: float = 0.0) -> RiderCommand:
        x, y, yaw = pose
        dx, dy = self.target[0] - x, self.target[1] - y
        dist = math.hypot(dx, dy)
        if dist > 1e-9:
            self._last_dir = _to_robot_frame(dx / dist, dy / dist, yaw)
        fx, fy = self._last_dir
        ix, iy = fx * self.aggressiveness, fy * self.aggressiveness
        return _command(ix, iy, self.k_lean, _facing_yaw_rate(ix, iy))


class ReplayRider:
    """Zero-order-hold playback of a recorded command log.

    The log is JSON lines. Steer samples are objects with t, ix, iy, yaw;
    a header object carries schema_version (anything but 1 is refused);
    an object with type "end" zeroes the intent from its time onward.
    Samples hold until the next one; the last sample holds indefinitely.
    """

    SCHEMA_VERSION = 1

    def __init__(self, records: str | list[dict], k_lean: float = DEFAULT_K_LEAN):
        if isinstance(records, str):
            rows = []
            for line_no, line in enumerate(records.splitlines(), 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise RecordingError(f"line {line_no}: invalid JSON") from exc
        else:
            rows = list(records)
        self.k_lean = k_lean
        self._samples: list[tuple[float, float, float, float]] = []
        self._end_time: float | None = None
        for row in rows:
            if not isinstance(row, dict):
                raise RecordingError("every record must be a JSON object")
            kind = row.get("type")
            if kind == "header":
                version = row.get("schema_version")
                if version != self.SCHEMA_VERSION:
                    raise RecordingError(
                        f"unsupported recording schema_version {version!r}"
                    )
                continue
            if kind == "end":
                self._end_time = float(row["t"])
                continue
            if kind not in (None, "steer"):
                continue  # other applied messages are not steering
            try:
                self._samples.append(
                    (float(row["t"]), float(row["ix"]), float(row["iy"]),
                     float(row.get("yaw", 0.0)))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordingError(f"malformed steer record: {row!r}") from exc
        self._samples.sort(key=lambda s: s[0])

    def command(self, pose=None, v_fb=None, t: float = 0.0) -> RiderCommand:
        if self._end_time is not None and t >= self._end_time:
            return _command(0.0, 0.0, self.k_lean)
        current = None
        for sample in self._samples:
            if sample[0] <= t + 1e-12:
                current = sample
            else:
                break
        if current is None:
            return _command(0.0, 0.0, self.k_lean)
        _, ix, iy, yaw = current
        yaw = max(-1.0, min(1.0, yaw))
        return _command(ix, iy, self.k_lean, yaw * YAW_RATE_MAX)
