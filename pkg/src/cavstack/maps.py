"""Tabulated powertrain characteristics.

Every map is piecewise linear with clamped extrapolation.  The default map
set describes a synthetic mid-size parallel plug-in hybrid; none of its
numbers come from measured hardware.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Environment, VehicleParams, resistance_force

__all__ = [
    "Table1D",
    "Table2D",
    "PowertrainMaps",
    "default_maps",
    "power_balance_residual",
    "save_table_csv",
    "load_table_csv",
]


@dataclass(frozen=True, eq=False)
class Table1D:
    x: np.ndarray
    values: np.ndarray
    x_name: str = "x"
    value_name: str = "value"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("table axis must be strictly increasing with >= 2 points")
        if vals.shape != x.shape:
            raise ValueError("table values must match the axis length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", vals)

    def __call__(self, q):
        return np.interp(q, self.x, self.values)


@dataclass(frozen=True, eq=False)
class Table2D:
    """Bilinear table ``values[i, j] = f(x[i], y[j])``."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    x_name: str = "x"
    y_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        for axis in (x, y):
            if axis.ndim != 1 or axis.size < 2 or np.any(np.diff(axis) <= 0):
                raise ValueError("table axes must be strictly increasing with >= 2 points")
        if vals.shape != (x.size, y.size):
            raise ValueError("table values must have shape (len(x), len(y))")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "values", vals)

    def __call__(self, qx, qy):
        qx, qy = np.broadcast_arrays(np.asarray(qx, dtype=float), np.asarray(qy, dtype=float))
        qx = np.clip(qx, self.x[0], self.x[-1])
        qy = np.clip(qy, self.y[0], self.y[-1])
        i = np.clip(np.searchsorted(self.x, qx, side="right") - 1, 0, self.x.size - 2)
        j = np.clip(np.searchsorted(self.y, qy, side="right") - 1, 0, self.y.size - 2)
        tx = (qx - self.x[i]) / (self.x[i + 1] - self.x[i])
        ty = (qy - self.y[j]) / (self.y[j + 1] - self.y[j])
        v = self.values
        out = ((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j]
               + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1])
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class PowertrainMaps:
    """Parallel-hybrid powertrain characteristics indexed by vehicle speed.

    ``gear_ratios`` are overall wheel-to-input-shaft ratios.  ``road_load``
    is the steady wheel force used when no explicit wheel-force forecast is
    supplied, which makes the transmission torque a function of speed and
    gear only.
    """

    gear_ratios: tuple
    wheel_radius: float
    motor_power: Table2D            # (v, T_m) -> electrical power, W
    fuel_power: tuple               # per gear: (v, T_e) -> fuel power, W
    motor_torque_min: Table1D
    motor_torque_max: Table1D
    engine_torque_min: Table1D
    engine_torque_max: Table1D
    road_load: Table1D

    def __post_init__(self):
        if len(self.gear_ratios) < 1:
            raise ValueError("at least one gear is required")
        if len(self.fuel_power) != len(self.gear_ratios):
            raise ValueError("one fuel map per gear is required")
        for lo, hi in ((self.motor_torque_min, self.motor_torque_max),
                       (self.engine_torque_min, self.engine_torque_max)):
            grid = np.union1d(lo.x, hi.x)
            if np.any(lo(grid) > hi(grid) + 1e-12):
                raise ValueError("torque bounds must satisfy lower <= upper")
        for table in self.fuel_power:
            if np.any(table.values < 0):
                raise ValueError("fuel power must be non-negative")

    @property
    def gear_count(self) -> int:
        return len(self.gear_ratios)

    def trans_torque(self, v, gear, wheel_force=None):
        """Torque demanded at the transmission input shaft (N*m); gears are 1-based."""
        if wheel_force is None:
            # a stationary vehicle needs no tractive force
            force = np.where(np.asarray(v) > 0, self.road_load(v), 0.0)
        else:
            force = wheel_force
        return force * self.wheel_radius / self.gear_ratios[gear - 1]

    def motor_bounds(self, v):
        return self.motor_torque_min(v), self.motor_torque_max(v)

    def engine_bounds(self, v):
        return self.engine_torque_min(v), self.engine_torque_max(v)

    def fuel(self, gear, engine_on, torque, v):
        if not engine_on:
            return 0.0 * np.asarray(torque, dtype=float)
        return self.fuel_power[gear - 1](v, torque)

    def motor(self, v, torque):
        return self.motor_power(v, torque)


def power_balance_residual(gear: int, engine_on: int, motor_torque, engine_torque,
                           v, p_aux, p_batt, maps: PowertrainMaps, trans_torque=None):
    """Residual of the torque and power balance at the input shaft and battery.

    Returns ``(T_t - T_m - s_e*T_e, P_b - P_m(v, T_m) - P_a)``.
    """
    tt = maps.trans_torque(v, gear) if trans_torque is None else trans_torque
    r_torque = tt - motor_torque - engine_on * engine_torque
    r_power = p_batt - maps.motor(v, motor_torque) - p_aux
    return r_torque, r_power


def default_maps(vehicle: VehicleParams = VehicleParams(), env: Environment = Environment(),
                 resolution: int = 41, gear_ratios=(13.0, 8.5, 5.8, 4.2),
                 wheel_radius: float = 0.31) -> PowertrainMaps:
    """Synthetic parallel PHEV maps tabulated at ``resolution`` points per axis."""
    v = np.linspace(0.0, 45.0, resolution)
    # motor on a fixed reduction; 60 kW / 260 N*m
    motor_ratio, t_peak, p_peak, eta_m = 8.0, 260.0, 60e3, 0.90
    w_m = v * motor_ratio / wheel_radius
    with np.errstate(divide="ignore"):
        t_max = np.minimum(t_peak, np.where(w_m > 0, p_peak / w_m, np.inf))
    tm = np.linspace(-t_peak, t_peak, resolution)
    mech = w_m[:, None] * tm[None, :]
    p_motor = np.where(mech >= 0, mech / eta_m, mech * eta_m)
    # 2.0 L engine, 190 N*m, efficiency rising with load
    t_e_max, eta_peak, w_opt = 190.0, 0.36, 220.0
    te = np.linspace(0.0, t_e_max, resolution)
    fuel = []
    for ratio in gear_ratios:
        w_e = v * ratio / wheel_radius
        speed_fac = np.clip(1.0 - 0.25 * ((w_e - w_opt) / w_opt) ** 2, 0.55, 1.0)
        load_fac = 0.30 + 0.70 * np.sqrt(te / t_e_max)
        eta = eta_peak * speed_fac[:, None] * load_fac[None, :]
        fuel.append(Table2D(v, te, (w_e[:, None] * te[None, :]) / eta, "v", "T_e"))
    return PowertrainMaps(
        gear_ratios=tuple(float(r) for r in gear_ratios),
        wheel_radius=float(wheel_radius),
        motor_power=Table2D(v, tm, p_motor, "v", "T_m"),
        fuel_power=tuple(fuel),
        motor_torque_min=Table1D(v, -t_max, "v", "T_m_min"),
        motor_torque_max=Table1D(v, t_max, "v", "T_m_max"),
        engine_torque_min=Table1D(v, np.zeros_like(v), "v", "T_e_min"),
        engine_torque_max=Table1D(v, np.full_like(v, t_e_max), "v", "T_e_max"),
        road_load=Table1D(v, resistance_force(v, 0.0, vehicle, env), "v", "F_road"),
    )


def save_table_csv(table, path) -> None:
    """Write a table as CSV: header names the axes, values are row-major."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(table, Table2D):
            w.writerow([f"{table.x_name}\\{table.y_name}"] + [repr(float(y)) for y in table.y])
            for xi, row in zip(table.x, table.values):
                w.writerow([repr(float(xi))] + [repr(float(val)) for val in row])
        else:
            w.writerow([table.x_name, table.value_name])
            for xi, val in zip(table.x, table.values):
                w.writerow([repr(float(xi)), repr(float(val))])


def load_table_csv(path):
    """Inverse of :func:`save_table_csv`; returns a Table1D or Table2D."""
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header, body = rows[0], rows[1:]
    if "\\" in header[0]:
        x_name, y_name = header[0].split("\\", 1)
        y = np.array([float(c) for c in header[1:]])
        x = np.array([float(r[0]) for r in body])
        vals = np.array([[float(c) for c in r[1:]] for r in body])
        return Table2D(x, y, vals, x_name, y_name)
    x = np.array([float(r[0]) for r in body])
    vals = np.array([float(r[1]) for r in body])
    return Table1D(x, vals, header[0], header[1])
