"""Planar ballbot plant and low-level controller.

Each horizontal axis is an independent ball-and-body inverted pendulum
(ball rolling without slip, rigid body pivoting above it, drive torque
between the two, viscous rolling friction); yaw is a first-order lag
channel. The low-level controller is a velocity PI loop cascaded with a
state-feedback balance loop whose gains come from iterating the discrete
Riccati equation. Stepping is fixed-step RK4 and fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from papfsim.shared_control import NormalizedCommand

__all__ = [
    "ParameterError",
    "SynthesisError",
    "PlantParams",
    "AxisState",
    "PlantState",
    "ControllerGains",
    "ControllerState",
    "linearize",
    "discretize",
    "solve_dare",
    "solve_lqr",
    "default_gains",
    "low_level_step",
    "feedback_velocity",
    "axis_derivatives",
    "axis_rk4_step",
    "mechanical_energy",
]

FALL_ANGLE = math.pi / 2


class ParameterError(ValueError):
    """Invalid physical parameters."""


class SynthesisError(RuntimeError):
    """Gain synthesis failed; carries iteration diagnostics."""


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the ball-and-body model.

    body_mass includes the rider. body_inertia is the body's moment about
    its own COM; when omitted it defaults to the uniform-rod value
    body_mass * com_height^2 / 3, so taller bodies fall proportionally
    slower. Defaults are plausible for a ~37 kg chassis carrying a ~60 kg
    rider; they are artifact defaults, not measured hardware values.
    """

    ball_radius: float = 0.1
    ball_mass: float = 3.0
    body_mass: float = 94.0
    com_height: float = 0.6
    body_inertia: float | None = None
    gravity: float = 9.81
    viscous_friction: float = 0.05
    v_max: float = 2.4
    max_torque: float = 80.0
    yaw_time_constant: float = 0.2

    def __post_init__(self):
        for name in ("ball_radius", "ball_mass", "body_mass", "com_height",
                     "v_max", "max_torque"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if self.body_inertia is not None and self.body_inertia <= 0:
            raise ParameterError("body_inertia must be > 0")
        if self.viscous_friction < 0:
            raise ParameterError("viscous_friction must be >= 0")
        if self.gravity < 0:
            raise ParameterError("gravity must be >= 0")

    @property
    def body_inertia_resolved(self) -> float:
        if self.body_inertia is not None:
            return self.body_inertia
        return self.body_mass * self.com_height**2 / 3.0


@lru_cache(maxsize=32)
def _constants(p: PlantParams) -> tuple[float, float, float, float, float, float]:
    """(M_t, J_t, m_B*l, m_B*g*l, r, b) with ball inertia folded into M_t."""
    i_ball = 0.4 * p.ball_mass * p.ball_radius**2  # solid sphere
    m_t = p.ball_mass + i_ball / p.ball_radius**2 + p.body_mass
    j_t = p.body_mass * p.com_height**2 + p.body_inertia_resolved
    mbl = p.body_mass * p.com_height
    if m_t * j_t - mbl * mbl <= 0:
        raise ParameterError("singular mass matrix; check masses and lengths")
    return m_t, j_t, mbl, mbl * p.gravity, p.ball_radius, p.viscous_friction


def accel_per_lean(p: PlantParams) -> float:
    """Quasi-static forward acceleration per radian of body lean."""
    m_t, _, mbl, mblg, r, _ = _constants(p)
    return mblg / (mbl + r * m_t)


@dataclass(frozen=True)
class AxisState:
    """One pendulum channel: ball position/velocity, body lean/lean rate."""

    p: float = 0.0
    v: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0


@dataclass(frozen=True)
class PlantState:
    """Full plant state: two axis channels plus yaw and world pose.

    Axis channels live in the robot frame (x front, y left); world_x and
    world_y track the ball in the world frame so courses and collision
    checks stay valid if yaw is commanded away from zero.
    """

    x_axis: AxisState = field(default_factory=AxisState)
    y_axis: AxisState = field(default_factory=AxisState)
    yaw: float = 0.0
    yaw_rate: float = 0.0
    time: float = 0.0
    world_x: float = 0.0
    world_y: float = 0.0
    fallen: bool = False

    @classmethod
    def at_rest(cls, x: float = 0.0, y: float = 0.0, yaw: float = 0.0) -> "PlantState":
        return cls(world_x=x, world_y=y, yaw=yaw)

    @property
    def position(self) -> tuple[float, float]:
        return (self.world_x, self.world_y)

    def velocity_world(self) -> tuple[float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        vx, vy = self.x_axis.v, self.y_axis.v
        return (vx * c - vy * s, vx * s + vy * c)


@dataclass(frozen=True)
class ControllerGains:
    """Balance-loop state feedback plus velocity-loop PI gains.

    lqr_k acts on the per-axis error vector [v - v_ref, theta - theta_ref,
    theta_dot, integral(v - v_ref)]; both axes share it (the two channels
    are identical plants). windup_limit clamps the integral term expressed
    as lean reference (rad). The velocity reference is slew-limited:
    accel_limit caps speed-up away from zero, decel_limit caps braking
    toward zero or reverse (kept higher so collision braking stays sharp).
    """

    lqr_k: tuple[float, float, float, float]
    pi_kp: float = 0.09
    pi_ki: float = 0.05
    windup_limit: float = 0.3
    theta_ref_limit: float = 0.3
    accel_limit: float = 1.0
    decel_limit: float = 3.0
    ff_gain: float = 0.0
    ff_time_constant: float = 0.25


@dataclass(frozen=True)
class ControllerState:
    """Per-axis integrators, slewed references, and smoothed feedforward."""

    integ_x: float = 0.0
    integ_y: float = 0.0
    vref_x: float = 0.0
    vref_y: float = 0.0
    ff_x: float = 0.0
    ff_y: float = 0.0


# ---------------------------------------------------------------------------
# Linear model and gain synthesis
# ---------------------------------------------------------------------------


def linearize(params: PlantParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time (A, B) about upright, states [v, theta, theta_dot, q].

    q integrates v so the synthesized feedback carries integral action.
    A has exactly one strictly unstable eigenvalue (the falling mode).
    """
    m_t, j_t, mbl, mblg, r, b = _constants(params)
    det = m_t * j_t - mbl * mbl
    a = np.zeros((4, 4))
    a[0, 0] = -j_t * b / (r * r * det)
    a[0, 1] = -mbl * mblg / det
    a[1, 2] = 1.0
    a[2, 0] = mbl * b / (r * r * det)
    a[2, 1] = m_t * mblg / det
    a[3, 0] = 1.0
    bmat = np.zeros((4, 1))
    bmat[0, 0] = (j_t / r + mbl) / det
    bmat[2, 0] = -(m_t + mbl / r) / det
    return a, bmat


def discretize(
    a: np.ndarray, b: np.ndarray, dt: float, method: str = "zoh"
) -> tuple[np.ndarray, np.ndarray]:
    """Sample continuous (A, B) at dt, zero-order hold or forward Euler."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    if method == "euler":
        return np.eye(a.shape[0]) + a * dt, b * dt
    if method != "zoh":
        raise ParameterError("method must be 'zoh' or 'euler'")
    n, m = a.shape[0], b.shape[1]
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a
    block[:n, n:] = b
    phi = expm(block * dt)
    return phi[:n, :n], phi[:n, n:]


def solve_dare(
    a_d: np.ndarray,
    b_d: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> np.ndarray:
    """Fixed-point iteration for the discrete algebraic Riccati equation.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q until the
    elementwise sup change drops below tol. Raises SynthesisError with the
    iteration count and last delta on non-convergence.
    """
    a_d = np.atleast_2d(np.asarray(a_d, dtype=float))
    b_d = np.asarray(b_d, dtype=float).reshape(a_d.shape[0], -1)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if not np.allclose(q, q.T, atol=1e-12):
        raise ParameterError("Q must be symmetric")
    if np.any(np.linalg.eigvalsh(q) < -1e-12):
        raise ParameterError("Q must be positive semidefinite")
    if np.any(np.linalg.eigvalsh(r) <= 0):
        raise ParameterError("R must be positive definite")
    p = q.copy()
    for i in range(max_iter):
        btp = b_d.T @ p
        gain = np.linalg.solve(r + btp @ b_d, btp @ a_d)
        p_next = q + a_d.T @ p @ (a_d - b_d @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        delta = float(np.max(np.abs(p_next - p)))
        p = p_next
        if delta < tol:
            return p
    raise SynthesisError(
        f"Riccati iteration did not converge: {max_iter} iterations, "
        f"last delta {delta:.3e}"
    )


def solve_lqr(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: float | np.ndarray,
    dt: float,
    method: str = "zoh",
) -> np.ndarray:
    """Discrete LQR gain for continuous (A, B) sampled at dt.

    Returns K (flattened to a vector for single-input plants) such that
    u = -K x; the closed loop A_d - B_d K is verified stable.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    a_d, b_d = discretize(a, b, dt, method)
    p = solve_dare(a_d, b_d, np.atleast_2d(np.asarray(q, dtype=float)), r)
    btp = b_d.T @ p
    k = np.linalg.solve(r + btp @ b_d, btp @ a_d)
    radius = float(np.max(np.abs(np.linalg.eigvals(a_d - b_d @ k))))
    if not radius < 1.0:
        raise SynthesisError(
            f"closed loop unstable after synthesis: spectral radius {radius:.6f}"
        )
    return k.ravel() if k.shape[0] == 1 else k


DEFAULT_Q = (8.0, 600.0, 6.0, 2.0)
DEFAULT_R = 0.005
DEFAULT_CONTROL_DT = 1.0 / 200.0


def default_gains(
    params: PlantParams,
    dt: float = DEFAULT_CONTROL_DT,
    q_diag: tuple[float, float, float, float] = DEFAULT_Q,
    r: float = DEFAULT_R,
    pi_kp: float = 0.09,
    pi_ki: float = 0.05,
) -> ControllerGains:
    """Synthesize the balance gains for the given plant at the control rate."""
    a, b = linearize(params)
    k = solve_lqr(a, b, np.diag(q_diag), r, dt)
    return ControllerGains(lqr_k=tuple(float(v) for v in k), pi_kp=pi_kp, pi_ki=pi_ki)


# ---------------------------------------------------------------------------
# Nonlinear dynamics
# ---------------------------------------------------------------------------


def axis_derivatives(
    v: float,
    theta: float,
    theta_dot: float,
    tau: float,
    tau_rider: float,
    consts: tuple[float, float, float, float, float, float],
) -> tuple[float, float]:
    """(dv/dt, dtheta_dot/dt) of one nonlinear pendulum channel."""
    m_t, j_t, mbl, mblg, r, b = consts
    s = math.sin(theta)
    c = math.cos(theta)
    rhs_p = tau / r - b * v / (r * r) + mbl * theta_dot * theta_dot * s
    rhs_t = -tau + tau_rider + mblg * s
    det = m_t * j_t - (mbl * c) ** 2
    acc_p = (j_t * rhs_p - mbl * c * rhs_t) / det
    acc_t = (m_t * rhs_t - mbl * c * rhs_p) / det
    return acc_p, acc_t


def axis_rk4_step(
    state: AxisState,
    tau: float,
    tau_rider: float,
    dt: float,
    params: PlantParams,
) -> AxisState:
    """One RK4 step of a single channel with held torques."""
    consts = _constants(params)
    p0, v0, t0, w0 = state.p, state.v, state.theta, state.theta_dot

    a1, b1 = axis_derivatives(v0, t0, w0, tau, tau_rider, consts)
    a2, b2 = axis_derivatives(
        v0 + 0.5 * dt * a1, t0 + 0.5 * dt * w0, w0 + 0.5 * dt * b1, tau, tau_rider, consts
    )
    a3, b3 = axis_derivatives(
        v0 + 0.5 * dt * a2,
        t0 + 0.5 * dt * (w0 + 0.5 * dt * b1),
        w0 + 0.5 * dt * b2,
        tau,
        tau_rider,
        consts,
    )
    a4, b4 = axis_derivatives(
        v0 + dt * a3, t0 + dt * (w0 + 0.5 * dt * b2), w0 + dt * b3, tau, tau_rider, consts
    )
    # position/angle use the same RK4 tableau with their rate states
    p1 = p0 + dt / 6.0 * (v0 + 2 * (v0 + 0.5 * dt * a1) + 2 * (v0 + 0.5 * dt * a2) + (v0 + dt * a3))
    t1 = t0 + dt / 6.0 * (w0 + 2 * (w0 + 0.5 * dt * b1) + 2 * (w0 + 0.5 * dt * b2) + (w0 + dt * b3))
    v1 = v0 + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    w1 = w0 + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
    return AxisState(p1, v1, t1, w1)


def mechanical_energy(state: AxisState, params: PlantParams) -> float:
    """Kinetic plus potential energy of one channel (integrator check)."""
    m_t, j_t, mbl, mblg, _, _ = _constants(params)
    v, th, w = state.v, state.theta, state.theta_dot
    kinetic = 0.5 * m_t * v * v + mbl * math.cos(th) * v * w + 0.5 * j_t * w * w
    potential = mblg * math.cos(th)
    return kinetic + potential


# ---------------------------------------------------------------------------
# Cascaded low-level controller
# ---------------------------------------------------------------------------


def _wrap_pi(angle: float) -> float:
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _slew(prev: float, target: float, dt: float, gains: ControllerGains) -> float:
    """Rate-limit the velocity reference; braking gets the higher limit."""
    delta = target - prev
    if delta == 0.0:
        return prev
    speeding_up = abs(target) > abs(prev) and target * prev >= 0.0
    limit = (gains.accel_limit if speeding_up else gains.decel_limit) * dt
    if delta > limit:
        return prev + limit
    if delta < -limit:
        return prev - limit
    return target


def _axis_torque(
    axis: AxisState,
    v_ref: float,
    v_ref_rate: float,
    integ: float,
    ff: float,
    gains: ControllerGains,
    params: PlantParams,
    dt: float,
) -> tuple[float, float, float]:
    """PI velocity loop into state-feedback balance loop.

    The reference slew rate feeds forward (smoothed) as the lean that
    produces that acceleration, so ramps track without winding the
    integrator. Returns (tau, integ, ff).
    """
    err = v_ref - axis.v
    integ += err * dt
    if gains.pi_ki > 0:
        cap = gains.windup_limit / gains.pi_ki
        integ = max(-cap, min(cap, integ))
    if gains.ff_gain != 0.0:
        ff_target = gains.ff_gain * v_ref_rate / accel_per_lean(params)
        ff += (ff_target - ff) * dt / max(gains.ff_time_constant, dt)
    theta_ref = ff + gains.pi_kp * err + gains.pi_ki * integ
    theta_ref = max(-gains.theta_ref_limit, min(gains.theta_ref_limit, theta_ref))
    k1, k2, k3, k4 = gains.lqr_k
    tau = -(
        k1 * (axis.v - v_ref)
        + k2 * (axis.theta - theta_ref)
        + k3 * axis.theta_dot
        + k4 * (-integ)
    )
    tau = max(-params.max_torque, min(params.max_torque, tau))
    return tau, integ, ff


def low_level_step(
    state: PlantState,
    ctrl: ControllerState,
    v_cmd: NormalizedCommand,
    gains: ControllerGains,
    params: PlantParams,
    rider_torque: tuple[float, float] = (0.0, 0.0),
    dt: float = DEFAULT_CONTROL_DT,
    n_substeps: int = 2,
    yaw_rate_cmd: float = 0.0,
) -> tuple[PlantState, ControllerState]:
    """One control tick: compute torques, integrate the plant over dt.

    dt is the control period; the plant advances in n_substeps RK4 steps
    with the torques held. rider_torque is an external body torque per
    axis (the rider's center-of-mass shift). A lean beyond 90 degrees
    marks the state fallen and freezes the kinematics.
    """
    if dt <= 0 or n_substeps < 1:
        raise ParameterError("dt must be > 0 and n_substeps >= 1")
    if state.fallen:
        return replace(state, time=state.time + dt), ctrl

    vref_x = _slew(ctrl.vref_x, v_cmd.x * params.v_max, dt, gains)
    vref_y = _slew(ctrl.vref_y, v_cmd.y * params.v_max, dt, gains)
    tau_x, integ_x, ff_x = _axis_torque(
        state.x_axis, vref_x, (vref_x - ctrl.vref_x) / dt, ctrl.integ_x,
        ctrl.ff_x, gains, params, dt
    )
    tau_y, integ_y, ff_y = _axis_torque(
        state.y_axis, vref_y, (vref_y - ctrl.vref_y) / dt, ctrl.integ_y,
        ctrl.ff_y, gains, params, dt
    )

    h = dt / n_substeps
    x_axis, y_axis = state.x_axis, state.y_axis
    yaw, yaw_rate = state.yaw, state.yaw_rate
    wx, wy = state.world_x, state.world_y
    decay = math.exp(-h / params.yaw_time_constant)
    for _ in range(n_substeps):
        x_next = axis_rk4_step(x_axis, tau_x, rider_torque[0], h, params)
        y_next = axis_rk4_step(y_axis, tau_y, rider_torque[1], h, params)
        # world pose from the robot-frame displacement at the mid-step yaw
        dpx = x_next.p - x_axis.p
        dpy = y_next.p - y_axis.p
        yaw_mid = yaw + 0.5 * yaw_rate * h
        c, s = math.cos(yaw_mid), math.sin(yaw_mid)
        wx += dpx * c - dpy * s
        wy += dpx * s + dpy * c
        yaw = _wrap_pi(yaw + yaw_rate * h)
        yaw_rate = yaw_rate_cmd + (yaw_rate - yaw_rate_cmd) * decay
        x_axis, y_axis = x_next, y_next

    fallen = abs(x_axis.theta) >= FALL_ANGLE or abs(y_axis.theta) >= FALL_ANGLE
    next_state = PlantState(
        x_axis=x_axis,
        y_axis=y_axis,
        yaw=yaw,
        yaw_rate=yaw_rate,
        time=state.time + dt,
        world_x=wx,
        world_y=wy,
        fallen=fallen,
    )
    return next_state, ControllerState(integ_x, integ_y, vref_x, vref_y, ff_x, ff_y)


def feedback_velocity(state: PlantState, params: PlantParams) -> NormalizedCommand:
    """Measured ball velocity normalized by v_max, clamped to [-1, 1]."""
    return NormalizedCommand(
        state.x_axis.v / params.v_max, state.y_axis.v / params.v_max
    )
