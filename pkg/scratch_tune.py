"""Scratch: tune LQR/PI defaults against the step/stability scenarios."""
import math

import numpy as np

from papfsim.plant import (
    ControllerState,
    PlantParams,
    PlantState,
    default_gains,
    discretize,
    feedback_velocity,
    linearize,
    low_level_step,
    solve_lqr,
)
from papfsim.shared_control import NormalizedCommand

params = PlantParams()
A, B = linearize(params)
eigs = np.linalg.eigvals(A)
print("A eigs:", np.sort_complex(eigs))

# scalar DARE sanity
k = solve_lqr(np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]), 1.0, 1.0)
golden = (math.sqrt(5) - 1) / 2
print("scalar K:", k, "expected:", golden, "err:", abs(k[0] - golden))

gains = default_gains(params)
print("lqr_k:", gains.lqr_k)
Ad, Bd = discretize(A, B, 1.0 / 200.0)
K = np.array(gains.lqr_k).reshape(1, 4)
print("closed-loop radius:", max(abs(np.linalg.eigvals(Ad - Bd @ K))))


def simulate(v_cmd_fn, t_end, tau_rider=(0.0, 0.0), state=None, dt=1.0 / 200.0):
    state = state or PlantState.at_rest()
    ctrl = ControllerState()
    hist = []
    n = int(round(t_end / dt))
    for i in range(n):
        cmd = v_cmd_fn(state.time)
        state, ctrl = low_level_step(state, ctrl, cmd, gains, params, tau_rider, dt, 2)
        hist.append((state.time, state.x_axis.v, state.x_axis.theta))
    return state, hist


# 1) equilibrium hold
state, hist = simulate(lambda t: NormalizedCommand(0, 0), 2.0)
print("hold |v| max:", max(abs(v) for _, v, _ in hist))

# 2) step to 0.5 v_max
state, hist = simulate(lambda t: NormalizedCommand(0.5, 0), 8.0)
target = 0.5 * params.v_max
vs = [v for _, v, _ in hist]
settle = None
for i, (t, v, _) in enumerate(hist):
    if all(abs(x - target) <= 0.02 * target for x in vs[i:]):
        settle = t
        break
print(f"step: final v={vs[-1]:.6f} target={target} settle={settle}")

# 3) lean recovery from 0.15 rad
from papfsim.plant import AxisState

s0 = PlantState(x_axis=AxisState(theta=0.15))
state, hist = simulate(lambda t: NormalizedCommand(0, 0), 5.0, state=s0)
print("recovery: |theta|=%.5f |v|=%.5f" % (abs(state.x_axis.theta), abs(state.x_axis.v)))

# 4) counter-lean: 0.5 -> -0.2 step at t=4
state, hist = simulate(
    lambda t: NormalizedCommand(0.5 if t < 4 else -0.2, 0), 8.0
)
pre = [th for t, _, th in hist if 3.5 < t < 4.0]
post = [th for t, _, th in hist if 4.0 <= t < 6.0]
print("cruise theta:", np.mean(pre), "post-step min theta:", min(post))

# 5) rider torque drift, v_cmd = 0
state, hist = simulate(lambda t: NormalizedCommand(0, 0), 10.0, tau_rider=(20.0, 0.0))
vs = [v for _, v, _ in hist]
print("drift: peak v=%.4f final v=%.4f pos=%.3f" % (max(vs), vs[-1], state.x_axis.p))
