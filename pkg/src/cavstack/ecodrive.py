"""Minimum-fuel speed planning through signalised corridors.

The longitudinal dynamics are written in the position domain, so the state
is (travel time, speed) and each step covers a fixed distance.  Signals are
points along the route with a fixed cycle; the crossing time at each one
must fall in the green part of its cycle, optionally shifted by a margin
taken from historical red-extension samples (chance form).

The problem is solved by forward dynamic programming on exact speed levels
with travel times merged in fixed buckets.  When a state has no way to
cross a signal on green it may stop at the bar and wait (stop-hold), which
the pure position-domain model cannot represent by itself.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._lattice import forward_dp
from .errors import EmptySamples, Infeasible
from .models import Environment, RouteProfile, VehicleParams, resistance_force

__all__ = [
    "SignalTiming",
    "EcoDriveState",
    "ChanceSpec",
    "FuelRateModel",
    "EcoDriveParams",
    "EcoDriveSolution",
    "crossing_phase",
    "alpha_from_samples",
    "chance_spec",
    "solve_ecodrive",
    "steady_cruise_speed",
    "monte_carlo_green",
    "load_samples_csv",
]


@dataclass(frozen=True)
class SignalTiming:
    """Fixed-cycle signal; cycle time 0 starts the red phase."""

    cycle: float
    red: float
    phase0: float
    position: float
    adapt_bound: float = None       # largest red extension, defaults to cycle - red
    samples: tuple = ()             # historical red extensions (s)

    def __post_init__(self):
        if not 0 < self.red < self.cycle:
            raise ValueError("red duration must lie strictly inside the cycle")
        if not 0 <= self.phase0 < self.cycle:
            raise ValueError("initial phase must lie in [0, cycle)")
        bound = self.cycle - self.red if self.adapt_bound is None else self.adapt_bound
        if not 0 <= bound <= self.cycle - self.red:
            raise ValueError("adaptation bound must lie in [0, cycle - red]")
        object.__setattr__(self, "adapt_bound", float(bound))
        s = np.asarray(self.samples, dtype=float)
        if s.size and (np.any(s < 0) or np.any(s > self.cycle - self.red)):
            raise ValueError("red-extension samples must lie in [0, cycle - red]")
        object.__setattr__(self, "samples", tuple(float(x) for x in s))

    @property
    def green(self) -> float:
        return self.cycle - self.red


@dataclass(frozen=True)
class EcoDriveState:
    time: float
    speed: float

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("position-domain state needs a positive speed")


@dataclass(frozen=True)
class ChanceSpec:
    """Per-intersection enforcement levels and the resulting margins."""

    levels: tuple
    margins: tuple

    def __post_init__(self):
        if len(self.levels) != len(self.margins):
            raise ValueError("one level and one margin per intersection")
        if any(not 0 <= e <= 1 for e in self.levels):
            raise ValueError("enforcement levels must lie in [0, 1]")
        if any(a < 0 for a in self.margins):
            raise ValueError("margins must be non-negative")


@dataclass(frozen=True)
class FuelRateModel:
    """Willans-type fuel power: ``p0 + P / eff + k P^2`` with ``P = F_w v`` (W)."""

    idle_power: float = 4000.0
    efficiency: float = 0.30
    quad: float = 0.0

    def __post_init__(self):
        if self.idle_power < 0 or not 0 < self.efficiency <= 1 or self.quad < 0:
            raise ValueError("invalid fuel-rate coefficients")

    def rate(self, v, wheel_force):
        p = np.asarray(wheel_force, dtype=float) * np.asarray(v, dtype=float)
        return self.idle_power + p / self.efficiency + self.quad * p * p


@dataclass(frozen=True)
class EcoDriveParams:
    vehicle: VehicleParams = VehicleParams()
    env: Environment = Environment()
    fuel: FuelRateModel = FuelRateModel()
    step: float = 10.0                  # S_s, m
    speed_min: float = 1.0
    speed_max: float = 15.0             # further capped by the route speed limit
    speed_quantum: float = 0.25
    time_quantum: float = 0.5
    accel_bounds: tuple = (-2.0, 1.5)
    wheel_force_max: float = 5000.0
    brake_force_max: float = 10000.0
    max_speed_change: float = 3.0       # per position step

    def __post_init__(self):
        if not 0 < self.speed_min < self.speed_max:
            raise ValueError("speed bounds must satisfy 0 < v_min < v_max")
        if self.step <= 0 or self.speed_quantum <= 0 or self.time_quantum < 0:
            raise ValueError("step and quantisation must be positive")

    def speed_levels(self) -> np.ndarray:
        n = int(math.floor((self.speed_max - self.speed_min) / self.speed_quantum + 1e-9))
        return self.speed_min + self.speed_quantum * np.arange(n + 1)


@dataclass
class EcoDriveSolution:
    positions: np.ndarray       # K + 1
    times: np.ndarray           # K + 1
    speeds: np.ndarray          # K + 1
    wheel_forces: np.ndarray    # K
    brake_forces: np.ndarray    # K
    fuel: np.ndarray            # K, fuel energy per step (J)
    cost: float
    crossing_times: np.ndarray
    crossing_phases: np.ndarray
    margins: np.ndarray         # crossing phase minus red duration
    stops: np.ndarray           # stop-hold used at each signal
    signals: tuple = field(default=(), repr=False)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "t", "v", "F_w", "F_b"])
            for k in range(len(self.positions)):
                fw = repr(float(self.wheel_forces[k])) if k < len(self.wheel_forces) else ""
                fb = repr(float(self.brake_forces[k])) if k < len(self.brake_forces) else ""
                w.writerow([repr(float(self.positions[k])), repr(float(self.times[k])),
                            repr(float(self.speeds[k])), fw, fb])


def crossing_phase(t_p, sig: SignalTiming):
    """Cycle time at which the vehicle passes the signal."""
    if np.any(np.asarray(t_p) < 0):
        raise ValueError("crossing time must be non-negative")
    return np.mod(sig.phase0 + np.asarray(t_p, dtype=float), sig.cycle)


def alpha_from_samples(samples, eta: float) -> float:
    """Smallest sample whose empirical CDF reaches ``1 - eta``; zero for ``eta = 1``."""
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise EmptySamples("no red-extension samples")
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    j = int(math.ceil(s.size * (1.0 - eta) - 1e-9))
    return 0.0 if j <= 0 else float(s[j - 1])


def chance_spec(signals, eta) -> ChanceSpec:
    """Margins for per-intersection levels (scalar ``eta`` applies to all)."""
    etas = tuple(float(eta) for _ in signals) if np.isscalar(eta) else tuple(float(e) for e in eta)
    return ChanceSpec(etas, tuple(alpha_from_samples(s.samples, e) for s, e in zip(signals, etas)))


def steady_cruise_speed(params: EcoDriveParams, grade: float = 0.0, speed_max=None) -> float:
    """Speed minimising fuel per metre at constant speed (bounded scalar search)."""
    from scipy.optimize import minimize_scalar

    hi = params.speed_max if speed_max is None else speed_max

    def per_metre(v):
        f = float(resistance_force(v, grade, params.vehicle, params.env))
        return float(params.fuel.rate(v, max(f, 0.0))) / v

    res = minimize_scalar(per_metre, bounds=(params.speed_min, hi), method="bounded",
                          options={"xatol": 1e-8})
    return float(res.x)


def _signal_steps(signals, positions):
    """Step index k with s_k <= s_i < s_{k+1} for each signal (one signal per step)."""
    out = {}
    for i, sig in enumerate(signals):
        k = int(np.searchsorted(positions, sig.position, side="right") - 1)
        if k < 0 or k >= len(positions) - 1:
            raise ValueError(f"signal {i} lies outside the route")
        if k in out:
            raise ValueError("at most one signal per position step")
        out[k] = i
    return out


def _green_ok(t_p, sig, margin):
    return crossing_phase(np.maximum(t_p, 0.0), sig) >= sig.red + margin


def _next_green(t, sig, margin):
    """Earliest time >= t whose phase lies in [red + margin, cycle)."""
    c = crossing_phase(t, sig)
    start = sig.red + margin
    out = t + np.where(c >= start, 0.0, start - c)
    # round-off can leave the phase a hair short of the window start
    for _ in range(4):
        short = crossing_phase(out, sig) < start
        if not np.any(short):
            break
        out = np.where(short, np.nextafter(out, np.inf), out)
    return out


def solve_ecodrive(route: RouteProfile, signals, chance: ChanceSpec | None, params: EcoDriveParams,
                   initial_speed: float, time_budget: float, initial_time: float = 0.0,
                   allow_stop: bool = True) -> EcoDriveSolution:
    """Minimum-fuel position-indexed trajectory through the corridor.

    ``chance=None`` enforces crossing on nominal green; otherwise signal
    ``i`` must be crossed at phase ``>= red + margins[i]``.  Raises
    :class:`Infeasible` when no trajectory meets the budget.
    """
    signals = tuple(signals)
    if any(a.position > b.position for a, b in zip(signals, signals[1:])):
        raise ValueError("signals must be sorted by position")
    if chance is not None and len(chance.margins) != len(signals):
        raise ValueError("chance specification does not match the signals")
    margins = np.zeros(len(signals)) if chance is None else np.asarray(chance.margins, dtype=float)
    S = params.step
    K = int(round(route.length / S))
    if K < 1 or abs(K * S - route.length) > 1e-6 * max(1.0, route.length):
        raise ValueError("route length must be a whole number of position steps")
    s0 = route.breakpoints[0]
    positions = s0 + S * np.arange(K + 1)
    levels = params.speed_levels()
    if not params.speed_min - 1e-9 <= initial_speed <= params.speed_max + 1e-9:
        raise ValueError("initial speed outside the speed bounds")
    m = params.vehicle.mass
    dq = params.speed_quantum
    n_up = int(math.floor(params.max_speed_change / dq + 1e-9))
    deltas = np.arange(-n_up, n_up + 1) * dq
    deltas = deltas[np.argsort(np.abs(deltas), kind="stable")]  # prefer small speed changes
    a_lo, a_hi = params.accel_bounds
    sig_at = _signal_steps(signals, positions)
    grade = route.grade_at(positions[:-1])
    vmax_at = np.minimum(route.speed_limit_at(positions), params.speed_max)
    fuel = params.fuel

    def snap(v):
        return params.speed_min + dq * np.round((v - params.speed_min) / dq)

    def expand(k, v, t, relax=False):
        v2 = snap(v[:, None] + deltas[None, :])
        f_res = resistance_force(v, grade[k], params.vehicle, params.env)
        net = m * v[:, None] * (v2 - v[:, None]) / S + f_res[:, None]
        fw, fb = np.maximum(net, 0.0), np.maximum(-net, 0.0)
        acc = v[:, None] * (v2 - v[:, None]) / S
        t2 = np.broadcast_to((t + S / v)[:, None], v2.shape).copy()
        ok = ((v2 >= params.speed_min - 1e-9) & (v2 <= vmax_at[k + 1] + 1e-9)
              & (acc >= a_lo - 1e-9) & (acc <= a_hi + 1e-9)
              & (fw <= params.wheel_force_max + 1e-9) & (fb <= params.brake_force_max + 1e-9))
        cost = fuel.rate(v[:, None], fw) * (S / v[:, None])
        stop = np.zeros(v2.shape, dtype=bool)
        tcross = np.full(v2.shape, np.nan)
        if k in sig_at:
            i = sig_at[k]
            t_p = t + (signals[i].position - positions[k]) / v
            if not relax:
                ok &= _green_ok(t_p, signals[i], margins[i])[:, None]
            tcross = np.broadcast_to(t_p[:, None], v2.shape)
            if allow_stop:
                # stop-hold column, only for states that cannot cross on green
                t_go, t_s, c_s = _stop_hold(k, v, t, positions, signals[i], margins[i], params, grade[k],
                                            wait=not relax)
                none = np.ones(v.shape, dtype=bool) if relax else ~ok.any(axis=1)
                v2 = np.column_stack([v2, np.full(v.shape, params.speed_min)])
                t2 = np.column_stack([t2, t_s])
                fw = np.column_stack([fw, np.zeros(v.shape)])
                fb = np.column_stack([fb, np.zeros(v.shape)])
                cost = np.column_stack([cost, c_s])
                ok = np.column_stack([ok, none & (params.speed_min <= vmax_at[k + 1] + 1e-9)])
                stop = np.column_stack([stop, np.ones(v.shape, dtype=bool)])
                tcross = np.column_stack([tcross, t_go])
        return v2, t2, cost, ok, {"fw": fw, "fb": fb, "stop": stop.astype(float), "fuel": cost,
                                  "tcross": tcross}

    def terminal(v, t):
        return np.zeros(v.shape), t <= time_budget + 1e-9

    # Admissible cost-to-go: the same DP with signals and budget dropped,
    # over speed only (backward on the speed levels).
    n_lv = levels.size
    V = np.zeros((K + 1, n_lv))
    for k in range(K - 1, -1, -1):
        v2, _, c, ok, _ = expand(k, levels, np.zeros(n_lv), relax=True)
        j = np.clip(np.round((v2 - params.speed_min) / dq).astype(int), 0, n_lv - 1)
        V[k] = np.min(np.where(ok, c + V[k + 1][j], np.inf), axis=1)
    rest_time = np.concatenate([np.cumsum((S / vmax_at[:-1])[::-1])[::-1], [0.0]])

    def lower(k, v, t):
        j = np.clip(np.round((v - params.speed_min) / dq).astype(int), 0, n_lv - 1)
        late = t + rest_time[k] > time_budget + 1e-9
        return np.where(late, np.inf, V[k][j])

    # bound schedule: tight bounds prune hard; any bound at or above the
    # optimum returns exactly the unpruned result
    v0, _, c0, ok0, _ = expand(0, np.array([float(initial_speed)]), np.array([float(initial_time)]), True)
    j0 = np.clip(np.round((v0 - params.speed_min) / dq).astype(int), 0, n_lv - 1)
    lb = float(np.min(np.where(ok0, c0 + V[1][j0], np.inf)))
    res = None
    if np.isfinite(lb) and initial_time + rest_time[0] <= time_budget + 1e-9:
        for factor in [1.0 + 0.01 * 1.5 ** j for j in range(12)] + [np.inf]:
            stats = {}
            res = forward_dp(initial_speed, initial_time, K, expand, terminal, 0.0, params.time_quantum,
                             bound=lb * factor, lower=lower, stats=stats)
            # nothing cut by the bound: a larger bound cannot help
            if res is not None or not stats.get("bound_pruned", 0):
                break
    if res is None:
        raise Infeasible("no admissible speed profile through the corridor within the time budget")
    speeds = np.array([v for v, _ in res.values])
    times = np.array([t for _, t in res.values])
    fw = np.array([a["fw"] for a in res.aux])
    fb = np.array([a["fb"] for a in res.aux])
    stopped = np.array([a["stop"] > 0.5 for a in res.aux], dtype=bool)
    step_fuel = np.array([a["fuel"] for a in res.aux])
    ct = np.empty(len(signals))
    stops = np.zeros(len(signals), dtype=bool)
    for k, i in sig_at.items():
        ct[i] = res.aux[k]["tcross"]
        stops[i] = stopped[k]
    phases = np.array([float(crossing_phase(ct[i], s)) for i, s in enumerate(signals)])
    red = np.array([s.red for s in signals])
    return EcoDriveSolution(positions, times, speeds, fw, fb, step_fuel, res.cost, ct, phases,
                            phases - red, stops, signals)


def _stop_hold(k, v, t, positions, sig, margin, params, theta, wait=True):
    """Stop-hold primitive: brake uniformly to the bar (mean speed v/2), wait
    for the admissible green, then launch to ``v_min`` and finish the step.

    Returns departure time, next-state time and fuel energy (vectorised).
    """
    vmin = params.speed_min
    t_bar = t + 2.0 * (sig.position - positions[k]) / v
    t_go = _next_green(t_bar, sig, margin) if wait else t_bar
    rest = positions[k + 1] - sig.position
    t_out = t_go + rest / vmin
    f_res = float(resistance_force(vmin, theta, params.vehicle, params.env))
    work = 0.5 * params.vehicle.mass * vmin ** 2 + max(f_res, 0.0) * rest
    cost = params.fuel.idle_power * (t_out - t) + work / params.fuel.efficiency
    return t_go, t_out, cost


def monte_carlo_green(solution: EcoDriveSolution, n_draws: int = 10_000, seed: int = 0):
    """Empirical green-crossing frequency per signal and jointly.

    Red extensions are drawn with replacement from each signal's samples.
    """
    rng = np.random.default_rng(seed)
    per = []
    joint = np.ones(n_draws, dtype=bool)
    for sig, phase in zip(solution.signals, solution.crossing_phases):
        if not sig.samples:
            raise EmptySamples("signal has no red-extension samples")
        ext = rng.choice(np.asarray(sig.samples), size=n_draws, replace=True)
        green = phase >= sig.red + ext
        per.append(float(green.mean()))
        joint &= green
    return np.array(per), float(joint.mean())


def load_samples_csv(path):
    """Red-extension samples, one column per intersection (blank cells skipped)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(rows[0])
    return [tuple(float(c) for c in col if c != "") for col in cols]
