"""Kinematic bicycle model, forward-Euler stepping, and box bounds.

State z = (x, y, phi, v), input u = (delta, a). The continuous model is

    x'   = v cos(phi)
    y'   = v sin(phi)
    phi' = v tan(delta) / L_wb
    v'   = a

with the rear axle as the reference point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    phi: float
    v: float

    def __post_init__(self):
        vals = (self.x, self.y, self.phi, self.v)
        if not np.isfinite(vals).all():
            raise ValueError("state components must be finite")
        object.__setattr__(self, "phi", float(wrap_angle(self.phi)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v])

    @staticmethod
    def from_array(z) -> "VehicleState":
        z = np.asarray(z, dtype=float)
        return VehicleState(float(z[0]), float(z[1]), float(z[2]), float(z[3]))


@dataclass(frozen=True)
class ControlInput:
    delta: float
    a: float

    def __post_init__(self):
        if not np.isfinite((self.delta, self.a)).all():
            raise ValueError("input components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.a])


@dataclass(frozen=True)
class VehicleParams:
    """Geometry plus the state/input box bounds.

    The body length (4.7 m) and the wheelbase are distinct: the body sets
    the footprint rectangle, the wheelbase sets turning kinematics.
    phi_max bounds the yaw angle itself. ddelta_max is a per-step steering
    rate used only through the input-rate cost unless configured as hard.
    """

    wheelbase: float = 2.7
    body_length: float = 4.7
    body_width: float = 2.0
    phi_max: float = 0.7
    v_min: float = -1.0
    v_max: float = 2.0
    delta_max: float = 0.6
    a_min: float = -1.0
    a_max: float = 1.0
    ddelta_max: float = 0.06
    rear_axle_offset: float = 0.0

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if not (self.v_min < 0.0 < self.v_max):
            raise ValueError("velocity bounds must straddle zero")
        if self.delta_max <= 0:
            raise ValueError("steering bound must be positive")

    def widened(self, factor: float = 1.1) -> "VehicleParams":
        """Low-level variant with delta and a bounds widened by `factor`."""
        return VehicleParams(
            wheelbase=self.wheelbase, body_length=self.body_length,
            body_width=self.body_width, phi_max=self.phi_max,
            v_min=self.v_min, v_max=self.v_max,
            delta_max=self.delta_max * factor,
            a_min=self.a_min * factor, a_max=self.a_max * factor,
            ddelta_max=self.ddelta_max, rear_axle_offset=self.rear_axle_offset)


def derivative(z: VehicleState, u: ControlInput, p: VehicleParams) -> np.ndarray:
    """Continuous-time state derivative (v cos, v sin, v tan(delta)/L, a)."""
    if abs(u.delta) >= np.pi / 2.0:
        raise ValueError("steering angle at or beyond pi/2 is singular")
    return np.array([
        z.v * np.cos(z.phi),
        z.v * np.sin(z.phi),
        z.v * np.tan(u.delta) / p.wheelbase,
        u.a,
    ])


def euler_step(z: VehicleState, u: ControlInput, dt: float, p: VehicleParams) -> VehicleState:
    """One forward-Euler step; phi is re-normalized afterwards."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    zn = z.as_array() + dt * derivative(z, u, p)
    return VehicleState(zn[0], zn[1], zn[2], zn[3])


def check_bounds(z: VehicleState, u: ControlInput, p: VehicleParams,
                 tol: float = 1e-9) -> list[str]:
    """Names of violated box bounds among {phi, v, delta, a}; empty when ok."""
    bad = []
    if abs(z.phi) > p.phi_max + tol:
        bad.append("phi")
    if not (p.v_min - tol <= z.v <= p.v_max + tol):
        bad.append("v")
    if abs(u.delta) > p.delta_max + tol:
        bad.append("delta")
    if not (p.a_min - tol <= u.a <= p.a_max + tol):
        bad.append("a")
    return bad


def dynamics_jacobians(z: np.ndarray, u: np.ndarray, p: VehicleParams):
    """d f / d z and d f / d u for the bicycle model at raw arrays z, u.

    Used by the transcription layers to assemble analytic constraint
    Jacobians. z = (x, y, phi, v), u = (delta, a).
    """
    phi, v = z[2], z[3]
    delta = u[0]
    s, c = np.sin(phi), np.cos(phi)
    t = np.tan(delta)
    Jz = np.array([
        [0.0, 0.0, -v * s, c],
        [0.0, 0.0, v * c, s],
        [0.0, 0.0, 0.0, t / p.wheelbase],
        [0.0, 0.0, 0.0, 0.0],
    ])
    Ju = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [v * (1.0 + t * t) / p.wheelbase, 0.0],
        [0.0, 1.0],
    ])
    return Jz, Ju
