"""Receding-horizon powertrain control for a parallel plug-in hybrid.

Gear, engine on/off and torque split are optimised jointly by dynamic
programming.  The discrete dimensions (gear, engine state, switch dwell
counter) are enumerated exactly; battery energy lives on a grid and each
exact battery step is projected *down* onto that grid.  Rounding down keeps
the planner conservative: the plant's true charge is never below the
planned one, so a planned terminal charge is always met in closed loop.

Battery cost follows the internal-energy increment convention
``P_q * T_s = E_{k+1} - E_k`` (taken between grid states, so the battery
term telescopes) and the terminal cost is ``a + (E_N - E_ref) * b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible
from .maps import PowertrainMaps
from .models import BatteryParams, battery_step, battery_step_array

__all__ = [
    "PowertrainState",
    "PowertrainInput",
    "PowertrainForecast",
    "EnergyWeights",
    "TerminalCharge",
    "PowertrainMPCConfig",
    "PowertrainSolution",
    "MPCStepResult",
    "battery_grid",
    "torque_options",
    "solve_powertrain_ocp",
    "mpc_step",
    "rollout",
    "charge_sustaining_input",
]

_COMMANDS = sorted(
    [(ug, ue) for ug in (-1, 0, 1) for ue in (-1, 0, 1)],
    key=lambda c: (abs(c[0]), abs(c[1]), c[0], c[1]),
)


@dataclass(frozen=True)
class PowertrainState:
    energy: float
    gear: int = 1
    engine_on: int = 0
    dwell: int | None = None  # steps since last switch; None means unrestricted


@dataclass(frozen=True)
class PowertrainInput:
    motor_torque: float
    engine_torque: float
    gear_cmd: int = 0
    engine_cmd: int = 0


@dataclass(frozen=True)
class PowertrainForecast:
    dt: float
    speeds: tuple
    aux_powers: tuple
    wheel_forces: tuple | None = None

    def __post_init__(self):
        if len(self.speeds) < 1 or len(self.speeds) != len(self.aux_powers):
            raise ValueError("forecast speeds and aux powers must have equal, nonzero length")
        if self.wheel_forces is not None and len(self.wheel_forces) != len(self.speeds):
            raise ValueError("wheel force forecast length mismatch")
        if min(self.speeds) < 0:
            raise ValueError("forecast speeds must be non-negative")
        if self.dt <= 0:
            raise ValueError("step must be positive")

    @property
    def horizon(self) -> int:
        return len(self.speeds)

    def wheel_force(self, k):
        return None if self.wheel_forces is None else self.wheel_forces[k]

    def window(self, start: int, length: int) -> "PowertrainForecast":
        stop = min(start + length, self.horizon)
        wf = None if self.wheel_forces is None else tuple(self.wheel_forces[start:stop])
        return PowertrainForecast(self.dt, tuple(self.speeds[start:stop]),
                                  tuple(self.aux_powers[start:stop]), wf)


@dataclass(frozen=True)
class EnergyWeights:
    fuel: float = 1.0
    battery: float = 1.0

    def __post_init__(self):
        if self.fuel < 0 or self.battery < 0 or (self.fuel == 0 and self.battery == 0):
            raise ValueError("energy weights must be non-negative and not both zero")


@dataclass(frozen=True)
class TerminalCharge:
    reference: float
    offset: float = 0.0
    slope: float | None = None  # None -> battery weight

    def cost(self, energy, weights: EnergyWeights):
        b = weights.battery if self.slope is None else self.slope
        return self.offset + (np.asarray(energy) - self.reference) * b


@dataclass(frozen=True)
class PowertrainMPCConfig:
    grid_points: int = 51
    torque_levels: int = 21
    min_dwell: int = 2
    grid: tuple | None = None


@dataclass
class PowertrainSolution:
    inputs: list
    states: list
    cost: float
    stage_costs: np.ndarray
    grid: np.ndarray
    fuel_energy: float = 0.0
    trans_torques: list = field(default_factory=list)


@dataclass
class MPCStepResult:
    input: PowertrainInput
    fallback: bool
    solution: PowertrainSolution | None


def battery_grid(e0: float, forecast: PowertrainForecast, battery: BatteryParams,
                 maps: PowertrainMaps, n_points: int) -> np.ndarray:
    """Energy grid anchored at ``e0`` spanning what the horizon can reach."""
    dt = forecast.dt
    down = up = 0.0
    for k, v in enumerate(forecast.speeds):
        lo, hi = maps.motor_bounds(v)
        pa = forecast.aux_powers[k]
        down += dt * max(float(maps.motor(v, hi)) + pa, 0.0)
        up += dt * max(-(float(maps.motor(v, lo)) + pa), 0.0)
    down = min(1.1 * down, e0 - battery.e_min)
    up = min(1.1 * up, battery.e_max - e0)
    if n_points < 2 or down + up <= 0.0:
        return np.array([float(e0)])
    step = (down + up) / (n_points - 1)
    j = np.arange(-int(np.floor(down / step + 1e-9)), int(np.floor(up / step + 1e-9)) + 1)
    grid = e0 + step * j
    grid = grid[(grid >= battery.e_min) & (grid <= battery.e_max)]
    return np.union1d(grid, [e0])


def torque_options(v: float, trans_torque: float, engine_on: int,
                   maps: PowertrainMaps, levels: int):
    """Admissible (motor, engine) torque pairs ordered by increasing engine torque.

    Demand below what the powertrain can absorb is taken by friction brakes.
    """
    tm_lo, tm_hi = (float(b) for b in maps.motor_bounds(v))
    te_lo, te_hi = (float(b) for b in maps.engine_bounds(v))
    floor = tm_lo + (te_lo if engine_on else 0.0)
    tt = max(trans_torque, floor)
    if not engine_on:
        if tt > tm_hi + 1e-9:
            return np.empty(0), np.empty(0)
        return np.array([tt]), np.array([0.0])
    lo = max(te_lo, tt - tm_hi)
    hi = min(te_hi, tt - tm_lo)
    if lo > hi + 1e-9:
        return np.empty(0), np.empty(0)
    hi = max(hi, lo)
    te = np.array([lo]) if levels <= 1 or hi == lo else np.linspace(lo, hi, levels)
    te = te[np.argsort(np.abs(te), kind="stable")]
    return tt - te, te


def _floor_index(grid, values):
    idx = np.searchsorted(grid, values, side="right") - 1
    return np.where(np.isfinite(values), idx, -1)


def _stage_tables(forecast, maps, levels, k):
    """Per (gear, engine) option arrays for stage ``k``."""
    v = forecast.speeds[k]
    pa = forecast.aux_powers[k]
    out = {}
    for g in range(1, maps.gear_count + 1):
        tt = float(maps.trans_torque(v, g, forecast.wheel_force(k)))
        for s in (0, 1):
            tm, te = torque_options(v, tt, s, maps, levels)
            pb = np.asarray(maps.motor(v, tm), dtype=float) + pa
            pf = np.asarray(maps.fuel(g, s, te, v), dtype=float)
            out[g, s] = (tm, te, pb, pf, tt)
    return out


def solve_powertrain_ocp(x0: PowertrainState, forecast: PowertrainForecast, weights: EnergyWeights,
                         terminal: TerminalCharge, maps: PowertrainMaps, battery: BatteryParams,
                         config: PowertrainMPCConfig = PowertrainMPCConfig()) -> PowertrainSolution:
    """Solve the finite-horizon powertrain problem by dynamic programming.

    Raises :class:`Infeasible` when no admissible input sequence meets the
    state, actuator and terminal-charge constraints.
    """
    N, dt = forecast.horizon, forecast.dt
    G = maps.gear_count
    D = max(1, int(config.min_dwell))
    if not (1 <= x0.gear <= G) or x0.engine_on not in (0, 1):
        raise ValueError("initial gear or engine state out of range")
    if config.grid is not None:
        grid = np.union1d(np.asarray(config.grid, dtype=float), [x0.energy])
    else:
        grid = battery_grid(x0.energy, forecast, battery, maps, config.grid_points)
    nE = grid.size
    i0 = int(np.searchsorted(grid, x0.energy))
    c0 = D - 1 if x0.dwell is None else min(int(x0.dwell), D - 1)

    V = np.full((nE, G, 2, D), np.inf)
    ok = grid >= terminal.reference - 1e-9 * max(1.0, abs(terminal.reference))
    V[ok] = np.asarray(terminal.cost(grid[ok], weights))[:, None, None, None]
    policy = []  # per stage: array (nE, G, 2, D, 2) of (command idx, option idx)
    tables = []
    for k in range(N - 1, -1, -1):
        tab = _stage_tables(forecast, maps, config.torque_levels, k)
        tables.append(tab)
        Vk = np.full_like(V, np.inf)
        pol = np.full((nE, G, 2, D, 2), -1, dtype=np.int64)
        for (g, s), (tm, te, pb, pf, _) in tab.items():
            if tm.size == 0:
                continue
            e_next = battery_step_array(grid[:, None], pb[None, :], battery, dt)
            valid = np.isfinite(e_next) & (e_next >= battery.e_min) & (e_next <= battery.e_max)
            e_next = np.where(valid, e_next, np.nan)
            jn = _floor_index(grid, e_next)
            valid &= jn >= 0
            jn = np.where(valid, jn, 0)
            stage = dt * weights.fuel * pf[None, :] + weights.battery * (grid[jn] - grid[:, None])
            stage = np.where(valid, stage, np.inf)
            for c in range(D):
                cands, keys = [], []
                for ci, (ug, ue) in enumerate(_COMMANDS):
                    g2, s2 = g + ug, s + ue
                    if not (1 <= g2 <= G and 0 <= s2 <= 1):
                        continue
                    switching = ug != 0 or ue != 0
                    if switching and c < D - 1:
                        continue
                    c2 = 0 if switching else min(c + 1, D - 1)
                    cands.append(stage + V[jn, g2 - 1, s2, c2])
                    keys.append(ci)
                if not cands:
                    continue
                tot = np.concatenate(cands, axis=1)  # (nE, n_cmd * n_opt) in preference order
                best = tot.min(axis=1)
                tol = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(best), best, 0.0)))
                pick = np.argmax(tot <= (best + tol)[:, None], axis=1)
                fin = np.isfinite(best)
                Vk[fin, g - 1, s, c] = best[fin]
                n_opt = tm.size
                pol[fin, g - 1, s, c, 0] = np.asarray(keys)[pick[fin] // n_opt]
                pol[fin, g - 1, s, c, 1] = pick[fin] % n_opt
        V = Vk
        policy.append(pol)
    policy.reverse()
    tables.reverse()

    total = V[i0, x0.gear - 1, x0.engine_on, c0]
    if not np.isfinite(total):
        raise Infeasible("no admissible powertrain input sequence over the horizon")

    # forward pass
    inputs, states, stages, tts = [], [x0], [], []
    j, g, s, c = i0, x0.gear, x0.engine_on, c0
    e = float(grid[i0])
    fuel_energy = 0.0
    for k in range(N):
        ci, oi = policy[k][j, g - 1, s, c]
        ug, ue = _COMMANDS[ci]
        tm, te, pb, pf, tt = tables[k][g, s]
        e_exact = battery_step(e, float(pb[oi]), battery, dt)
        j = int(_floor_index(grid, np.array([e_exact]))[0])
        stages.append(dt * weights.fuel * float(pf[oi]) + weights.battery * (float(grid[j]) - e))
        fuel_energy += dt * float(pf[oi])
        inputs.append(PowertrainInput(float(tm[oi]), float(te[oi]), ug, ue))
        tts.append(tt)
        switching = ug != 0 or ue != 0
        g, s = g + ug, s + ue
        c = 0 if switching else min(c + 1, D - 1)
        e = float(grid[j])
        states.append(PowertrainState(e, g, s, c))
    return PowertrainSolution(inputs, states, float(total), np.array(stages), grid,
                              fuel_energy, tts)


def rollout(x0: PowertrainState, inputs, forecast: PowertrainForecast, weights: EnergyWeights,
            terminal: TerminalCharge, maps: PowertrainMaps, battery: BatteryParams, grid=None):
    """Replay an input sequence through :func:`battery_step`.

    With ``grid`` the same downward projection as the planner is applied.
    Returns ``(cost, energies)``; constraint violations give ``inf`` cost.
    """
    e, g, s = float(x0.energy), x0.gear, x0.engine_on
    cost, energies = 0.0, [e]
    for k, u in enumerate(inputs):
        v = forecast.speeds[k]
        pb = float(maps.motor(v, u.motor_torque)) + forecast.aux_powers[k]
        pf = float(maps.fuel(g, s, u.engine_torque, v))
        e_next = battery_step(e, pb, battery, forecast.dt)
        if not (battery.e_min <= e_next <= battery.e_max):
            return np.inf, energies
        if grid is not None:
            j = int(_floor_index(np.asarray(grid), np.array([e_next]))[0])
            if j < 0:
                return np.inf, energies
            e_next = float(grid[j])
        cost += forecast.dt * weights.fuel * pf + weights.battery * (e_next - e)
        e = e_next
        g, s = g + u.gear_cmd, s + u.engine_cmd
        energies.append(e)
    if e < terminal.reference - 1e-9 * max(1.0, abs(terminal.reference)):
        return np.inf, energies
    return cost + float(terminal.cost(e, weights)), energies


def charge_sustaining_input(x: PowertrainState, forecast: PowertrainForecast,
                            maps: PowertrainMaps) -> PowertrainInput:
    """Rule-based fallback: run the engine and hold battery power near zero."""
    v = forecast.speeds[0]
    tt = float(maps.trans_torque(v, x.gear, forecast.wheel_force(0)))
    if not x.engine_on:
        tm, te = torque_options(v, tt, 0, maps, 1)
        tm_val = float(tm[0]) if tm.size else float(maps.motor_bounds(v)[1])
        return PowertrainInput(tm_val, 0.0, 0, 1)
    tm, te = torque_options(v, tt, 1, maps, 21)
    if tm.size == 0:
        lo, hi = maps.engine_bounds(v)
        return PowertrainInput(float(maps.motor_bounds(v)[1]), float(hi), 0, 0)
    pb = np.abs(np.asarray(maps.motor(v, tm)) + forecast.aux_powers[0])
    i = int(np.argmin(pb))
    return PowertrainInput(float(tm[i]), float(te[i]), 0, 0)


def mpc_step(x: PowertrainState, forecast: PowertrainForecast, weights: EnergyWeights,
             terminal: TerminalCharge, maps: PowertrainMaps, battery: BatteryParams,
             config: PowertrainMPCConfig = PowertrainMPCConfig()) -> MPCStepResult:
    """Apply the first optimal input; fall back to charge sustaining if infeasible."""
    try:
        sol = solve_powertrain_ocp(x, forecast, weights, terminal, maps, battery, config)
    except Infeasible:
        return MPCStepResult(charge_sustaining_input(x, forecast, maps), True, None)
    return MPCStepResult(sol.inputs[0], False, sol)
