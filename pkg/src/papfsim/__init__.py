"""Shared-control ballbot simulator.

A deterministic simulation stack for passive potential-field shared
control on a self-balancing, omnidirectional robot: pure control math,
a planar wheeled-inverted-pendulum plant, 2D test courses with raycast
sensing, scripted riders, an episode/batch engine with collision
metrics, a CLI, and a live websocket bridge for human steering.
"""

from papfsim.shared_control import (
    ConfigError,
    NormalizedCommand,
    ObstacleScan,
    PapfConfig,
    RepulsiveForce,
    SharedControlDiagnostics,
    alarm_level,
    blend,
    firas_magnitude,
    low_pass,
    repulsive_force,
    select_points,
    shared_control_step,
    track_compensate,
)

__version__ = "0.1.0"
