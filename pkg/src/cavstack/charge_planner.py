"""Trip-long battery reference planning for a plug-in hybrid.

:func:`plan_charge` blends engine and motor over the whole trip by dynamic
programming on a battery-energy grid.  Gear follows a fixed map-driven
schedule and the engine is always available, so the only decision per step
is the torque split.  :func:`cdcs_baseline` is the usual deplete-then-hold
rule run through the same model, which makes the two costs comparable
one-to-one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import Infeasible
from .maps import PowertrainMaps
from .models import BatteryParams, battery_step_array
from .powertrain_mpc import EnergyWeights, PowertrainForecast, torque_options

__all__ = [
    "ChargePlan",
    "gear_schedule",
    "plan_charge",
    "cdcs_baseline",
    "replay_plan",
    "synthetic_commute",
]


@dataclass
class ChargePlan:
    """Battery reference along a trip.

    ``energies`` has ``N + 1`` entries (step boundaries); the torque and power
    schedules have ``N``.  ``positions`` are distances travelled at each
    boundary.
    """

    steps: np.ndarray
    positions: np.ndarray
    energies: np.ndarray
    floor: float
    gears: np.ndarray
    motor_torques: np.ndarray
    engine_torques: np.ndarray
    battery_powers: np.ndarray
    fuel_powers: np.ndarray
    cost: float
    dt: float
    switch_index: int | None = None  # CDCS only: first charge-sustaining step

    @property
    def fuel_energy(self) -> float:
        return float(np.sum(self.fuel_powers) * self.dt)

    def reference_at(self, position):
        """Reference energy interpolated linearly in travelled distance."""
        pos = self.positions
        if pos[-1] <= pos[0]:
            return np.interp(position, [pos[0], pos[0] + 1.0], [self.energies[-1]] * 2)
        # collapse standstill steps so the interpolation axis is increasing
        keep = np.concatenate([[True], np.diff(pos) > 0])
        return np.interp(position, pos[keep], self.energies[keep])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "position", "energy"])
            for k, p, e in zip(self.steps, self.positions, self.energies):
                w.writerow([int(k), repr(float(p)), repr(float(e))])


def gear_schedule(forecast: PowertrainForecast, maps: PowertrainMaps) -> np.ndarray:
    """Highest gear whose transmission torque both machines can jointly deliver."""
    gears = np.ones(forecast.horizon, dtype=int)
    for k, v in enumerate(forecast.speeds):
        # braking beyond the machines' minimum goes to friction brakes, so only
        # the upper bound restricts the gear
        hi = float(maps.motor_torque_max(v)) + float(maps.engine_torque_max(v))
        for g in range(maps.gear_count, 0, -1):
            if float(maps.trans_torque(v, g, forecast.wheel_force(k))) <= hi:
                gears[k] = g
                break
    return gears


def _step_options(forecast, maps, gears, levels):
    opts = []
    for k, v in enumerate(forecast.speeds):
        g = int(gears[k])
        tt = float(maps.trans_torque(v, g, forecast.wheel_force(k)))
        tm, te = torque_options(v, tt, 1, maps, levels)
        te_order = np.argsort(te, kind="stable")
        tm, te = tm[te_order], te[te_order]
        pb = np.asarray(maps.motor(v, tm), dtype=float) + forecast.aux_powers[k]
        pf = np.asarray(maps.fuel(g, 1, te, v), dtype=float)
        opts.append((tm, te, pb, pf))
    return opts


def _positions(forecast):
    return np.concatenate([[0.0], np.cumsum(np.asarray(forecast.speeds) * forecast.dt)])


def _floor_index(grid, values):
    idx = np.searchsorted(grid, values, side="right") - 1
    return np.where(np.isfinite(values), idx, -1)


def _charge_grid(e0, battery, n_points):
    return np.union1d(np.linspace(battery.e_min, battery.e_max, n_points), [e0])


def _build_plan(e0, forecast, gears, opts, picks, grid, floor, weights, battery, switch_index=None):
    N, dt = forecast.horizon, forecast.dt
    energies = np.empty(N + 1)
    energies[0] = e0
    tm = np.empty(N)
    te = np.empty(N)
    pb = np.empty(N)
    pf = np.empty(N)
    for k, i in enumerate(picks):
        tm[k], te[k], pb[k], pf[k] = (opts[k][c][i] for c in range(4))
        e_next = float(battery_step_array(energies[k], pb[k], battery, dt))
        energies[k + 1] = grid[int(_floor_index(grid, np.array([e_next]))[0])]
    cost = float(dt * weights.fuel * pf.sum() + weights.battery * (energies[-1] - energies[0]))
    return ChargePlan(np.arange(N + 1), _positions(forecast), energies, float(floor), gears.copy(),
                      tm, te, pb, pf, cost, dt, switch_index)


def plan_charge(e0: float, forecast: PowertrainForecast, weights: EnergyWeights, floor: float,
                maps: PowertrainMaps, battery: BatteryParams, grid_points: int = 201,
                torque_levels: int = 21) -> ChargePlan:
    """Optimal battery reference over the trip (DP on a projected energy grid).

    Raises :class:`Infeasible` when the terminal floor cannot be met.
    """
    if not battery.e_min <= e0 <= battery.e_max:
        raise ValueError("initial energy outside the battery window")
    N, dt = forecast.horizon, forecast.dt
    gears = gear_schedule(forecast, maps)
    opts = _step_options(forecast, maps, gears, torque_levels)
    grid = _charge_grid(e0, battery, grid_points)
    V = np.where(grid >= floor - 1e-9 * max(1.0, abs(floor)), 0.0, np.inf)
    policy = []
    for k in range(N - 1, -1, -1):
        tm, te, pb, pf = opts[k]
        if tm.size == 0:
            raise Infeasible(f"transmission torque unattainable at step {k}")
        e_next = battery_step_array(grid[:, None], pb[None, :], battery, dt)
        valid = np.isfinite(e_next) & (e_next >= battery.e_min) & (e_next <= battery.e_max)
        jn = _floor_index(grid, np.where(valid, e_next, np.nan))
        valid &= jn >= 0
        jn = np.where(valid, jn, 0)
        tot = dt * weights.fuel * pf[None, :] + weights.battery * (grid[jn] - grid[:, None]) + V[jn]
        tot = np.where(valid, tot, np.inf)
        best = tot.min(axis=1)
        tol = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(best), best, 0.0)))
        policy.append(np.argmax(tot <= (best + tol)[:, None], axis=1))
        V = best
    policy.reverse()
    j = int(np.searchsorted(grid, e0))
    if not np.isfinite(V[j]):
        raise Infeasible("terminal charge floor unreachable over the trip")
    picks = []
    e = e0
    for k in range(N):
        i = int(policy[k][j])
        picks.append(i)
        e_next = float(battery_step_array(e, opts[k][2][i], battery, dt))
        j = int(_floor_index(grid, np.array([e_next]))[0])
        e = float(grid[j])
    return _build_plan(e0, forecast, gears, opts, picks, grid, floor, weights, battery)


def cdcs_baseline(e0: float, forecast: PowertrainForecast, weights: EnergyWeights, floor: float,
                  maps: PowertrainMaps, battery: BatteryParams, grid_points: int = 201,
                  torque_levels: int = 21, band: float | None = None) -> ChargePlan:
    """Charge-depleting then charge-sustaining rule on the planner's model.

    Depletes with the least engine torque until the next state would fall
    below ``floor + band``; from then on uses the least engine torque that
    keeps the charge at or above that level.  ``band`` defaults to 1 % of the
    battery window.
    """
    N, dt = forecast.horizon, forecast.dt
    band = 0.01 * battery.window if band is None else band
    hold = floor + band
    gears = gear_schedule(forecast, maps)
    opts = _step_options(forecast, maps, gears, torque_levels)
    grid = _charge_grid(e0, battery, grid_points)
    picks = []
    e = e0
    switch = None
    for k in range(N):
        tm, te, pb, pf = opts[k]
        if tm.size == 0:
            raise Infeasible(f"transmission torque unattainable at step {k}")
        nxt = battery_step_array(np.full(pb.shape, e), pb, battery, dt)
        idx = _floor_index(grid, np.where(np.isfinite(nxt) & (nxt <= battery.e_max), nxt, np.nan))
        proj = np.where(idx >= 0, grid[np.maximum(idx, 0)], -np.inf)
        if switch is None and proj[0] >= hold:
            i = 0
        else:
            if switch is None:
                switch = k
            ok = np.nonzero(proj >= hold)[0]
            i = int(ok[0]) if ok.size else int(np.argmax(proj))
        if not np.isfinite(proj[i]):
            raise Infeasible(f"battery exhausted at step {k}")
        picks.append(i)
        e = float(proj[i])
    if e < floor - 1e-9 * max(1.0, abs(floor)):
        raise Infeasible("terminal charge floor not met by the baseline")
    return _build_plan(e0, forecast, gears, opts, picks, grid, floor, weights, battery, switch)


def replay_plan(plan: ChargePlan, battery: BatteryParams, dt: float) -> np.ndarray:
    """One-step replays ``battery_step(E*_k, P_b,k)`` for every step."""
    return battery_step_array(plan.energies[:-1], plan.battery_powers, battery, dt)


def synthetic_commute(seed: int, n_steps: int, vehicle=None, dt: float = 10.0,
                      max_grade: float = 0.04, aux_power: float = 600.0,
                      flat: bool = False) -> PowertrainForecast:
    """Random commute forecast: random-walk speed over a random-walk grade.

    Wheel forces include grade, resistance and the inertial term of the
    step-to-step speed change.
    """
    from .models import VehicleParams, resistance_force

    vehicle = VehicleParams() if vehicle is None else vehicle
    rng = np.random.default_rng(seed)
    v = np.empty(n_steps)
    v[0] = rng.uniform(8.0, 28.0)
    for k in range(1, n_steps):
        v[k] = np.clip(v[k - 1] + rng.normal(0.0, 1.5), 3.0, 33.0)
    if flat:
        theta = np.zeros(n_steps)
    else:
        theta = np.clip(np.cumsum(rng.normal(0.0, 0.01, n_steps)), -max_grade, max_grade)
    accel = np.diff(np.concatenate([[v[0]], v])) / dt
    force = resistance_force(v, theta, vehicle) + vehicle.mass * accel
    return PowertrainForecast(dt, tuple(v), (aux_power,) * n_steps, tuple(force))
