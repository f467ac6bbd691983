"""Physical models shared by every planning and control layer.

Longitudinal resistance, battery internal-energy dynamics, the kinematic
bicycle and the position-indexed route description all live here.  All
functions are pure; parameter containers are frozen dataclasses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DiscriminantNegative

__all__ = [
    "VehicleParams",
    "Environment",
    "BatteryParams",
    "LongitudinalState",
    "BicycleState",
    "RouteProfile",
    "resistance_force",
    "battery_step",
    "battery_step_array",
    "battery_max_power",
    "bicycle_step",
    "bicycle_jacobian",
    "slip_angle",
]


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal and geometric vehicle constants (SI units)."""

    mass: float = 1600.0
    length: float = 4.6
    frontal_area: float = 2.2
    drag_coeff: float = 0.30
    rolling_coeff: float = 0.010
    viscous_coeff: float = 2.0e-4
    lf: float = 1.3
    lr: float = 1.5
    width: float = 1.8

    def __post_init__(self):
        for name in ("mass", "length", "frontal_area", "drag_coeff",
                     "rolling_coeff", "viscous_coeff", "lf", "lr", "width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be > 0")
        if self.lf + self.lr > self.length:
            raise ValueError("wheelbase lf + lr exceeds vehicle length")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass(frozen=True)
class Environment:
    gravity: float = 9.81
    air_density: float = 1.225

    def __post_init__(self):
        if not (self.gravity > 0 and self.air_density > 0):
            raise ValueError("gravity and air density must be positive")


@dataclass(frozen=True)
class BatteryParams:
    """Battery constants for the internal-energy model.

    ``ocv_fit`` is the open-circuit-voltage fit coefficient (V) such that the
    open-circuit voltage squared equals ``2 * ocv_fit * E / capacity``.
    """

    ocv_fit: float = 200.0
    resistance: float = 0.10
    capacity: float = 90000.0
    e_min: float = 7.2e6
    e_max: float = 32.4e6

    def __post_init__(self):
        if not (self.ocv_fit > 0 and self.resistance > 0 and self.capacity > 0):
            raise ValueError("battery ocv_fit, resistance and capacity must be > 0")
        if not (0 <= self.e_min < self.e_max):
            raise ValueError("battery energy window must satisfy 0 <= e_min < e_max")

    @property
    def window(self) -> float:
        return self.e_max - self.e_min


@dataclass(frozen=True)
class LongitudinalState:
    gap: float
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


@dataclass(frozen=True)
class BicycleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "BicycleState":
        x, y, psi, v = (float(a) for a in arr)
        return cls(x, y, psi, v)


@dataclass(frozen=True)
class RouteProfile:
    """Position-indexed road description.

    Grade is linear between breakpoints; speed limit and auxiliary power are
    constant on ``[s[i], s[i+1])`` and take the value of the left breakpoint.
    """

    breakpoints: tuple
    grade: tuple
    speed_limit: tuple
    aux_power: tuple = None
    _s: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.breakpoints, dtype=float)
        n = s.size
        if n < 2 or np.any(np.diff(s) <= 0):
            raise ValueError("route breakpoints must be strictly increasing (>= 2 points)")
        aux = self.aux_power if self.aux_power is not None else (0.0,) * n
        for name, arr in (("grade", self.grade), ("speed_limit", self.speed_limit), ("aux_power", aux)):
            if len(arr) != n:
                raise ValueError(f"route {name} must have one entry per breakpoint")
        if np.any(np.asarray(self.speed_limit, dtype=float) <= 0):
            raise ValueError("speed limits must be positive")
        object.__setattr__(self, "breakpoints", tuple(float(v) for v in s))
        object.__setattr__(self, "grade", tuple(float(v) for v in self.grade))
        object.__setattr__(self, "speed_limit", tuple(float(v) for v in self.speed_limit))
        object.__setattr__(self, "aux_power", tuple(float(v) for v in aux))
        object.__setattr__(self, "_s", s)

    @classmethod
    def flat(cls, length: float, speed_limit: float, aux_power: float = 0.0) -> "RouteProfile":
        return cls((0.0, float(length)), (0.0, 0.0), (speed_limit, speed_limit), (aux_power, aux_power))

    @property
    def length(self) -> float:
        return self.breakpoints[-1] - self.breakpoints[0]

    def _left_index(self, s):
        idx = np.searchsorted(self._s, s, side="right") - 1
        return np.clip(idx, 0, self._s.size - 1)

    def grade_at(self, s):
        return np.interp(s, self._s, np.asarray(self.grade))

    def speed_limit_at(self, s):
        return np.asarray(self.speed_limit)[self._left_index(s)]

    def aux_power_at(self, s):
        return np.asarray(self.aux_power)[self._left_index(s)]


def resistance_force(v, theta, params: VehicleParams, env: Environment = Environment(), c_x=None):
    """Total force opposing forward motion (N).

    Grade term is signed by ``theta``; rolling, viscous and aerodynamic terms
    are magnitudes that oppose motion.  ``c_x`` overrides the standalone drag
    coefficient (used for platoon drag coupling).  Broadcasts over arrays.
    """
    cx = params.drag_coeff if c_x is None else c_x
    m, g = params.mass, env.gravity
    return (m * g * np.sin(theta)
            + m * g * (params.rolling_coeff + params.viscous_coeff * v)
            + 0.5 * env.air_density * params.frontal_area * cx * v * v)


def battery_max_power(energy, battery: BatteryParams):
    """Largest terminal power the battery can deliver at internal energy ``energy``."""
    return battery.ocv_fit * energy / (2.0 * battery.resistance * battery.capacity)


def battery_step(energy: float, p_batt: float, battery: BatteryParams, dt: float) -> float:
    """Advance the battery internal energy by one Euler step of length ``dt``.

    Positive ``p_batt`` discharges.  Raises :class:`DiscriminantNegative`
    when the requested terminal power exceeds the battery capability.
    """
    if p_batt == 0.0:
        return float(energy)
    k = 2.0 * battery.resistance * battery.capacity / battery.ocv_fit
    disc = energy * energy - k * p_batt * energy
    if disc < 0.0:
        raise DiscriminantNegative(
            f"battery cannot deliver {p_batt:.1f} W at internal energy {energy:.1f} J")
    rate = dt * battery.ocv_fit / (battery.resistance * battery.capacity)
    return float(energy - rate * (energy - math.sqrt(disc)))


def battery_step_array(energy, p_batt, battery: BatteryParams, dt: float):
    """Vectorised :func:`battery_step`; infeasible entries come back as NaN."""
    energy = np.asarray(energy, dtype=float)
    p_batt = np.asarray(p_batt, dtype=float)
    k = 2.0 * battery.resistance * battery.capacity / battery.ocv_fit
    rate = dt * battery.ocv_fit / (battery.resistance * battery.capacity)
    disc = energy * energy - k * p_batt * energy
    with np.errstate(invalid="ignore"):
        out = energy - rate * (energy - np.sqrt(disc))
    out = np.where(disc < 0.0, np.nan, out)
    return np.where(p_batt == 0.0, energy + 0.0 * p_batt, out)


def slip_angle(steer, params: VehicleParams):
    return np.arctan(params.lr / (params.lr + params.lf) * np.tan(steer))


def bicycle_step(x: BicycleState, accel: float, steer: float, params: VehicleParams, dt: float) -> BicycleState:
    """Forward-Euler step of the kinematic bicycle; speed is clamped at zero."""
    if abs(steer) >= math.pi / 2:
        raise ValueError("steering angle must satisfy |steer| < pi/2")
    beta = math.atan(params.lr / (params.lr + params.lf) * math.tan(steer))
    ang = x.heading + beta
    return BicycleState(
        x.x + dt * x.speed * math.cos(ang),
        x.y + dt * x.speed * math.sin(ang),
        x.heading + dt * x.speed / params.lr * math.sin(beta),
        max(0.0, x.speed + dt * accel),
    )


def bicycle_jacobian(x: BicycleState, accel: float, steer: float, params: VehicleParams, dt: float):
    """Analytic Jacobians ``(A, B)`` of :func:`bicycle_step`.

    ``A`` is d(next state)/d(X, Y, psi, v); ``B`` is d(next state)/d(a, delta).
    At the zero-speed clamp the speed row is taken from the saturated branch.
    """
    kappa = params.lr / (params.lr + params.lf)
    t = math.tan(steer)
    beta = math.atan(kappa * t)
    dbeta = kappa * (1.0 + t * t) / (1.0 + (kappa * t) ** 2)
    ang = x.heading + beta
    c, s = math.cos(ang), math.sin(ang)
    v = x.speed
    A = np.eye(4)
    A[0, 2] = -dt * v * s
    A[0, 3] = dt * c
    A[1, 2] = dt * v * c
    A[1, 3] = dt * s
    A[2, 3] = dt / params.lr * math.sin(beta)
    B = np.zeros((4, 2))
    B[0, 1] = -dt * v * s * dbeta
    B[1, 1] = dt * v * c * dbeta
    B[2, 1] = dt * v / params.lr * math.cos(beta) * dbeta
    if v + dt * accel > 0.0:
        B[3, 0] = dt
    else:
        A[3, 3] = 0.0
    return A, B
