"""Deterministic episode engine: rider -> shared control -> plant -> sensors.

One episode is a fixed-timestep loop over control ticks; the sensor scan,
shared-control update, and frame log run at integer subdivisions of it.
Walls block (inelastic, sliding) and contacts are debounced and classified
by speed into touch and move collisions, combining into the collision
index c_i = c_t + w * c_m. Batches aggregate per-cell means and standard
errors across seeds and may run episodes in parallel.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from papfsim.plant import (
    ControllerGains,
    ControllerState,
    PlantParams,
    PlantState,
    default_gains,
    feedback_velocity,
    low_level_step,
)
from papfsim.riders import (
    DEFAULT_K_LEAN,
    AggressiveRider,
    NoisyWaypointRider,
    ReplayRider,
    Route,
    WaypointRider,
)
from papfsim.shared_control import (
    ConfigError,
    NormalizedCommand,
    ObstacleScan,
    PapfConfig,
    RepulsiveForce,
    shared_control_step,
)
from papfsim.worlds import (
    CourseSpec,
    SensorConfig,
    World,
    build_course,
    check_collision,
    course_waypoints,
    min_clearance,
    raycast_scan,
)

__all__ = [
    "ControlMode",
    "Rates",
    "RiderSpec",
    "EpisodeConfig",
    "RunMetrics",
    "SimFrame",
    "NumericAbort",
    "run_episode",
    "run_batch",
    "compare_modes",
    "BatchResult",
    "CellStats",
    "trajectory_csv",
    "metrics_dict",
]


class ControlMode(str, Enum):
    """Assistance variants: from raw pass-through to the full pipeline."""

    NO_SHARED_CONTROL = "no-sc"
    PAPF_ONLY = "papf"
    PAPF_TRACKING = "papf-tracking"
    PAPF_TRACKING_ALARM = "papf-tracking-alarm"

    @classmethod
    def parse(cls, value: "str | ControlMode") -> "ControlMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value == mode.value or value == mode.name:
                return mode
        raise ConfigError(f"unknown control mode {value!r}")


class NumericAbort(RuntimeError):
    """Non-finite state encountered; carries the last few frames."""

    def __init__(self, message: str, frames: "list[SimFrame]"):
        super().__init__(message)
        self.frames = frames


@dataclass(frozen=True)
class Rates:
    """Loop rates in Hz; each must nest into the one above it."""

    physics_hz: int = 400
    control_hz: int = 200
    shared_hz: int = 50
    sensor_hz: int = 20

    def __post_init__(self):
        for name in ("physics_hz", "control_hz", "shared_hz", "sensor_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.physics_hz % self.control_hz:
            raise ConfigError("control_hz must divide physics_hz")
        if self.control_hz % self.shared_hz:
            raise ConfigError("shared_hz must divide control_hz")
        if self.control_hz % self.sensor_hz:
            raise ConfigError("sensor_hz must divide control_hz")


@dataclass(frozen=True)
class RiderSpec:
    """Which scripted rider drives the episode, and how."""

    kind: str = "waypoint"  # waypoint | noisy-waypoint | aggressive | replay
    aggressiveness: float = 0.8
    route: tuple[tuple[float, float], ...] | None = None  # None: course line
    arrival_radius: float = 0.6
    target: tuple[float, float] | None = None
    heading_noise_std: float = 0.35
    noise_tau: float = 1.2
    k_lean: float = DEFAULT_K_LEAN
    recording: str | None = None

    def __post_init__(self):
        if self.kind not in ("waypoint", "noisy-waypoint", "aggressive", "replay"):
            raise ConfigError(f"unknown rider kind {self.kind!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one episode needs; seeded and therefore reproducible."""

    course: CourseSpec = field(default_factory=CourseSpec)
    world: World | None = None  # overrides course geometry when given
    mode: ControlMode = ControlMode.PAPF_TRACKING
    rider: RiderSpec = field(default_factory=RiderSpec)
    papf: PapfConfig = field(default_factory=PapfConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    gains: ControllerGains | None = None  # None: synthesized at control rate
    rates: Rates = field(default_factory=Rates)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    timeout: float = 120.0
    seed: int = 0
    v_touch: float = 0.1
    collision_weight: float = 3.0
    robot_radius: float = 0.35

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.v_touch < 0:
            raise ConfigError("v_touch must be >= 0")
        if self.collision_weight < 0:
            raise ConfigError("collision_weight must be >= 0")
        if self.robot_radius <= 0:
            raise ConfigError("robot_radius must be > 0")
        object.__setattr__(self, "mode", ControlMode.parse(self.mode))


@dataclass(frozen=True)
class RunMetrics:
    """One Table-style row: completion time, collision counts, extremes."""

    t_c: float
    c_t: int
    c_m: int
    c_i: float
    failed: bool
    min_clearance: float
    path_length: float
    mean_speed: float

    def as_dict(self) -> dict:
        return {
            "t_c": self.t_c,
            "c_t": self.c_t,
            "c_m": self.c_m,
            "c_i": self.c_i,
            "failed": self.failed,
            "min_clearance": self.min_clearance,
            "path_length": self.path_length,
            "mean_speed": self.mean_speed,
        }


@dataclass(frozen=True)
class SimFrame:
    """Shared-control-rate trajectory sample."""

    time: float
    state: PlantState
    v_usr: NormalizedCommand
    v_cmd: NormalizedCommand
    force: RepulsiveForce
    alarm_level: float
    contact: bool
    min_clearance: float


def _build_rider(cfg: EpisodeConfig, world: World, rider_seed: int, shared_dt: float):
    spec = cfg.rider
    if spec.kind == "aggressive":
        if spec.target is None:
            raise ConfigError("aggressive rider needs a target")
        return AggressiveRider(spec.target, spec.aggressiveness, spec.k_lean)
    if spec.kind == "replay":
        if spec.recording is None:
            raise ConfigError("replay rider needs a recording")
        return ReplayRider(spec.recording, spec.k_lean)
    waypoints = spec.route
    if waypoints is None:
        if cfg.world is not None:
            raise ConfigError("rider route is required with a custom world")
        waypoints = course_waypoints(cfg.course)
    route = Route(tuple(tuple(p) for p in waypoints), spec.arrival_radius)
    if spec.kind == "waypoint":
        return WaypointRider(route, spec.aggressiveness, spec.k_lean)
    return NoisyWaypointRider(
        route,
        spec.aggressiveness,
        heading_noise_std=spec.heading_noise_std,
        noise_tau=spec.noise_tau,
        dt=shared_dt,
        seed=rider_seed,
        k_lean=spec.k_lean,
    )


CONTACT_DV_CAP = 0.1  # m/s of normal speed absorbed per tick (compliance)


def _resolve_contact(
    state: PlantState, world: World, radius: float
) -> tuple[PlantState, bool, float]:
    """Block the disk at walls: project out and shed inward normal speed.

    The shed per tick is capped, approximating contact compliance rather
    than an infinitely stiff wall, so impacts decelerate over a few
    milliseconds instead of tipping the pendulum in one step. Returns
    (state, contact_flag, contact_speed). Lean states are left alone; the
    collision jolt shows up through the velocity loop.
    """
    report = check_collision(world, state.position, state.velocity_world(), radius)
    if not report.in_contact:
        return state, False, 0.0
    speed = report.contact_speed
    st = state
    for _ in range(3):
        rep = check_collision(world, st.position, st.velocity_world(), radius)
        if not rep.in_contact:
            break
        nx, ny = rep.normal
        wx = st.world_x + nx * (rep.penetration + 1e-6)
        wy = st.world_y + ny * (rep.penetration + 1e-6)
        vwx, vwy = st.velocity_world()
        vn = vwx * nx + vwy * ny
        if vn < 0.0:
            shed = min(-vn, CONTACT_DV_CAP)
            vwx += shed * nx
            vwy += shed * ny
        c, s = math.cos(st.yaw), math.sin(st.yaw)
        vx_r = vwx * c + vwy * s
        vy_r = -vwx * s + vwy * c
        st = replace(
            st,
            world_x=wx,
            world_y=wy,
            x_axis=replace(st.x_axis, v=vx_r),
            y_axis=replace(st.y_axis, v=vy_r),
        )
    return st, True, speed


def run_episode(cfg: EpisodeConfig) -> tuple[RunMetrics, list[SimFrame]]:
    """Run one seeded episode to finish, fall, or timeout."""
    world = cfg.world if cfg.world is not None else build_course(cfg.course, cfg.robot_radius)
    gains = cfg.gains if cfg.gains is not None else default_gains(
        cfg.plant, 1.0 / cfg.rates.control_hz
    )
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    sensor_rng = np.random.default_rng(seeds[0])
    rider_seed = int(seeds[1].generate_state(1)[0])

    dt_c = 1.0 / cfg.rates.control_hz
    n_sub = cfg.rates.physics_hz // cfg.rates.control_hz
    shared_div = cfg.rates.control_hz // cfg.rates.shared_hz
    sensor_div = cfg.rates.control_hz // cfg.rates.sensor_hz
    shared_dt = dt_c * shared_div

    rider = _build_rider(cfg, world, rider_seed, shared_dt)
    zeta_for_mode = {
        ControlMode.PAPF_ONLY: 0.0,
        ControlMode.PAPF_TRACKING: cfg.papf.zeta,
        ControlMode.PAPF_TRACKING_ALARM: cfg.papf.zeta,
    }
    papf_cfg = cfg.papf
    if cfg.mode in zeta_for_mode and zeta_for_mode[cfg.mode] != cfg.papf.zeta:
        papf_cfg = replace(cfg.papf, zeta=zeta_for_mode[cfg.mode])

    x0, y0, yaw0 = world.start_pose
    state = PlantState.at_rest(x0, y0, yaw0)
    ctrl = ControllerState()
    scan = ObstacleScan(np.empty(0), np.empty(0))
    v_cmd = NormalizedCommand(0, 0)
    v_old = NormalizedCommand(0, 0)
    v_usr = NormalizedCommand(0, 0)
    force = RepulsiveForce(0, 0)
    alarm = 0.0
    torque = (0.0, 0.0)
    yaw_rate_cmd = 0.0

    frames: list[SimFrame] = []
    c_t = c_m = 0
    in_contact = False
    last_contact_time = -math.inf
    contact_now = False
    clearance_min = min_clearance(world, (x0, y0), cfg.robot_radius)
    path_length = 0.0
    finished = False
    fallen = False
    t_end = cfg.timeout

    n_ticks = int(round(cfg.timeout * cfg.rates.control_hz))
    for i in range(n_ticks):
        t = i * dt_c
        pose = (state.world_x, state.world_y, state.yaw)
        if i % sensor_div == 0:
            scan = raycast_scan(world, pose, cfg.sensor, sensor_rng, t)
        if i % shared_div == 0:
            v_fb = feedback_velocity(state, cfg.plant)
            rc = rider.command(pose, v_fb, t)
            v_usr = rc.intent
            torque = rc.disturbance_torque
            yaw_rate_cmd = rc.yaw_rate_cmd
            if cfg.mode is ControlMode.NO_SHARED_CONTROL:
                v_cmd = v_usr
                force = RepulsiveForce(0, 0)
                alarm = 0.0
            else:
                v_cmd, diag = shared_control_step(v_usr, scan, v_fb, v_old, papf_cfg)
                force = diag.raw_force.saturated()
                alarm = (
                    diag.alarm_level
                    if cfg.mode is ControlMode.PAPF_TRACKING_ALARM
                    else 0.0
                )
            v_old = v_cmd
            if not (
                math.isfinite(state.world_x)
                and math.isfinite(state.world_y)
                and math.isfinite(state.x_axis.theta)
                and math.isfinite(state.y_axis.theta)
            ):
                raise NumericAbort(
                    f"non-finite state at t={t:.3f}", frames[-5:]
                )
            frames.append(
                SimFrame(t, state, v_usr, v_cmd, force, alarm, contact_now,
                         min_clearance(world, state.position, cfg.robot_radius))
            )

        prev_x, prev_y = state.world_x, state.world_y
        state, ctrl = low_level_step(
            state, ctrl, v_cmd, gains, cfg.plant, torque, dt_c, n_sub, yaw_rate_cmd
        )
        path_length += math.hypot(state.world_x - prev_x, state.world_y - prev_y)

        state, contact_now, contact_speed = _resolve_contact(
            state, world, cfg.robot_radius
        )
        t_now = (i + 1) * dt_c
        if contact_now:
            if not in_contact and (t_now - last_contact_time) >= 0.5:
                if contact_speed < cfg.v_touch:
                    c_t += 1
                else:
                    c_m += 1
            in_contact = True
            last_contact_time = t_now
        else:
            in_contact = False
        clearance_min = min(
            clearance_min, min_clearance(world, state.position, cfg.robot_radius)
        )
        if state.fallen:
            fallen = True
            t_end = t_now
            break
        if world.in_finish(state.world_x, state.world_y):
            finished = True
            t_end = t_now
            break

    metrics = RunMetrics(
        t_c=t_end,
        c_t=c_t,
        c_m=c_m,
        c_i=c_t + cfg.collision_weight * c_m,
        failed=not finished,
        min_clearance=clearance_min,
        path_length=path_length,
        mean_speed=path_length / t_end if t_end > 0 else 0.0,
    )
    return metrics, frames


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    """Aggregate for one (mode, course) cell across seeds."""

    mode: str
    course: str
    n: int
    means: dict
    std_errors: dict
    failures: int


@dataclass(frozen=True)
class BatchResult:
    cells: tuple[CellStats, ...]
    episodes: tuple[tuple[str, str, int, RunMetrics], ...]  # mode, course, seed
    aborts: tuple[tuple[str, str, int, str], ...]

    def cell(self, mode: str, course: str) -> CellStats:
        for c in self.cells:
            if c.mode == mode and c.course == course:
                return c
        raise KeyError(f"no cell ({mode}, {course})")


METRIC_KEYS = ("t_c", "c_t", "c_m", "c_i", "min_clearance", "path_length", "mean_speed")


def _episode_task(args):
    cfg, seed = args
    cfg = replace(cfg, seed=seed)
    label = (cfg.mode.value, cfg.world.name if cfg.world else cfg.course.name, seed)
    try:
        metrics, _ = run_episode(cfg)
        return label, metrics, None
    except NumericAbort as exc:
        return label, None, str(exc)


def run_batch(
    configs: "list[EpisodeConfig]",
    seeds: "list[int] | None" = None,
    repetitions: int | None = None,
    n_jobs: int = 1,
) -> BatchResult:
    """Run every config across the seed list and aggregate per cell.

    Results are aggregated after a deterministic sort, so job count and
    seed order cannot change the output. Aborted episodes are reported,
    never silently dropped.
    """
    if not configs:
        raise ConfigError("run_batch needs at least one config")
    if seeds is None:
        if repetitions is None:
            raise ConfigError("provide seeds or repetitions")
        seeds = list(range(repetitions))
    if not seeds:
        raise ConfigError("seed list must be non-empty")
    tasks = [(cfg, seed) for cfg in configs for seed in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            raw = list(pool.map(_episode_task, tasks, chunksize=1))
    else:
        raw = [_episode_task(t) for t in tasks]

    raw.sort(key=lambda r: (r[0][0], r[0][1], r[0][2]))
    episodes = []
    aborts = []
    by_cell: dict[tuple[str, str], list[RunMetrics]] = {}
    fail_count: dict[tuple[str, str], int] = {}
    for label, metrics, err in raw:
        mode, course, seed = label
        if err is not None:
            aborts.append((mode, course, seed, err))
            continue
        episodes.append((mode, course, seed, metrics))
        by_cell.setdefault((mode, course), []).append(metrics)
        if metrics.failed:
            fail_count[(mode, course)] = fail_count.get((mode, course), 0) + 1

    cells = []
    for (mode, course), ms in sorted(by_cell.items()):
        means = {}
        ses = {}
        for key in METRIC_KEYS:
            vals = np.array([getattr(m, key) for m in ms], dtype=float)
            means[key] = float(vals.mean())
            ses[key] = (
                float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            )
        cells.append(
            CellStats(mode, course, len(ms), means, ses, fail_count.get((mode, course), 0))
        )
    return BatchResult(tuple(cells), tuple(episodes), tuple(aborts))


def compare_modes(
    base: EpisodeConfig,
    seeds: "list[int]",
    mode_a: ControlMode = ControlMode.NO_SHARED_CONTROL,
    mode_b: ControlMode = ControlMode.PAPF_TRACKING,
    n_jobs: int = 1,
) -> dict:
    """Paired comparison of two modes on identical seeds.

    Reports per-metric mean ratios (b / a); a zero baseline is flagged
    instead of dividing.
    """
    cfg_a = replace(base, mode=mode_a)
    cfg_b = replace(base, mode=mode_b)
    result = run_batch([cfg_a, cfg_b], seeds, n_jobs=n_jobs)
    course = base.world.name if base.world else base.course.name
    cell_a = result.cell(mode_a.value, course)
    cell_b = result.cell(mode_b.value, course)
    ratios = {}
    for key in METRIC_KEYS:
        a, b = cell_a.means[key], cell_b.means[key]
        if a == 0.0:
            ratios[key] = None if b != 0.0 else 1.0
        else:
            ratios[key] = b / a
    medians = {}
    for key in METRIC_KEYS:
        va = np.median([getattr(m, key) for md, cs, _, m in result.episodes
                        if md == mode_a.value and cs == course])
        vb = np.median([getattr(m, key) for md, cs, _, m in result.episodes
                        if md == mode_b.value and cs == course])
        medians[key] = (float(va), float(vb))
    return {
        "course": course,
        "mode_a": mode_a.value,
        "mode_b": mode_b.value,
        "means_a": cell_a.means,
        "means_b": cell_b.means,
        "ratios": ratios,
        "medians": medians,
        "aborts": result.aborts,
    }


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

TRAJECTORY_HEADER = [
    "time", "x", "y", "yaw", "vx", "vy", "theta_x", "theta_y",
    "vusr_x", "vusr_y", "vcmd_x", "vcmd_y", "force_x", "force_y",
    "alarm", "contact", "min_clearance",
]


def trajectory_csv(frames: "list[SimFrame]", version_note: str = "papfsim trajectory v1") -> str:
    """Render frames as CSV with a version header line; byte-stable."""
    buf = io.StringIO()
    buf.write(f"# {version_note}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for f in frames:
        s = f.state
        writer.writerow(
            [
                repr(f.time), repr(s.world_x), repr(s.world_y), repr(s.yaw),
                repr(s.x_axis.v), repr(s.y_axis.v),
                repr(s.x_axis.theta), repr(s.y_axis.theta),
                repr(f.v_usr.x), repr(f.v_usr.y),
                repr(f.v_cmd.x), repr(f.v_cmd.y),
                repr(f.force.fx), repr(f.force.fy),
                repr(f.alarm_level), int(f.contact), repr(f.min_clearance),
            ]
        )
    return buf.getvalue()


def metrics_dict(cfg: EpisodeConfig, metrics: RunMetrics) -> dict:
    return {
        "mode": cfg.mode.value,
        "course": cfg.world.name if cfg.world else cfg.course.name,
        "seed": cfg.seed,
        "metrics": metrics.as_dict(),
    }
