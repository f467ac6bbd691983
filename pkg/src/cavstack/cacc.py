"""Cooperative adaptive cruise control by receding-horizon optimisation.

The ego vehicle regulates speed and gap behind a preceding vehicle whose
future speeds come from a shared forecast (or a constant-speed /
constant-acceleration guess when none is shared).  A hard minimum gap is
imposed along the horizon, and the horizon end must admit a *coasting*
continuation: rolling out with zero traction and zero brake until the end
of the forecast keeps the gap above the minimum.  Because the dynamics are
monotone (less force means lower speeds and larger gaps everywhere), this
single rollout decides membership exactly.

The optimal control problem is solved by forward dynamic programming over
net-acceleration levels; forces follow from the chosen acceleration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._lattice import forward_dp
from .errors import Infeasible
from .models import Environment, LongitudinalState, VehicleParams, resistance_force

__all__ = [
    "CaccState",
    "CaccInput",
    "LeadForecast",
    "SpacingPolicy",
    "CaccParams",
    "CaccSolution",
    "CaccStepResult",
    "reference_gap",
    "predict_lead",
    "longitudinal_step",
    "terminal_safe_set",
    "solve_cacc_ocp",
    "cacc_mpc_step",
]

CaccState = LongitudinalState
MODES = ("acc", "cacc", "cacc_forecast")


@dataclass(frozen=True)
class CaccInput:
    wheel_force: float
    brake_force: float

    def __post_init__(self):
        if self.brake_force < 0:
            raise ValueError("brake force must be non-negative")


@dataclass(frozen=True)
class LeadForecast:
    """Preceding-vehicle speed now and its predicted accelerations."""

    speed: float
    accels: tuple
    dt: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("lead speed must be non-negative")
        v = self.speeds()
        if np.any(v < -1e-9):
            raise ValueError("forecast implies negative lead speed")

    @property
    def horizon(self) -> int:
        return len(self.accels)

    def speeds(self) -> np.ndarray:
        """Implied speeds at steps 0..N_f (length N_f + 1)."""
        return self.speed + self.dt * np.concatenate([[0.0], np.cumsum(self.accels)])

    @classmethod
    def constant(cls, speed: float, horizon: int, dt: float) -> "LeadForecast":
        return cls(speed, (0.0,) * horizon, dt)

    @classmethod
    def static_obstacle(cls, horizon: int, dt: float) -> "LeadForecast":
        return cls(0.0, (0.0,) * horizon, dt)


@dataclass(frozen=True)
class SpacingPolicy:
    kind: str = "constant_headway"
    standstill_gap: float = 5.0
    headway: float = 1.0
    hard_min: float = 4.0

    def __post_init__(self):
        if self.kind not in ("constant_distance", "constant_headway"):
            raise ValueError(f"unknown spacing policy {self.kind!r}")
        if not self.hard_min > 0:
            raise ValueError("hard minimum gap must be positive")
        if self.kind == "constant_headway" and not self.headway > 0:
            raise ValueError("constant headway policy needs a positive headway")


def reference_gap(policy: SpacingPolicy, v):
    if np.any(np.asarray(v) < 0):
        raise ValueError("speed must be non-negative")
    if policy.kind == "constant_distance":
        return policy.standstill_gap + 0.0 * np.asarray(v, dtype=float)
    return policy.headway * np.asarray(v, dtype=float) + policy.standstill_gap


@dataclass(frozen=True)
class CaccParams:
    vehicle: VehicleParams = VehicleParams()
    env: Environment = Environment()
    dt: float = 0.5
    horizon: int = 6
    wheel_force_bounds: tuple = (0.0, 4000.0)
    brake_force_max: float = 8000.0
    accel_bounds: tuple = (-4.0, 2.5)
    speed_max: float = 35.0
    accel_step: float = 0.5
    weights: tuple = (1e-4, 1.0, 0.5)   # effort per N^2, speed per (m/s)^2, gap per m^2
    brake_weight: float = 1e-4          # extra effort per N^2 of friction braking
    grade: float = 0.0
    speed_bucket: float = 0.05
    gap_bucket: float = 0.5
    mode: str = "cacc_forecast"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.dt <= 0 or self.horizon < 1 or self.accel_step <= 0:
            raise ValueError("dt, horizon and accel_step must be positive")
        lo, hi = self.accel_bounds
        if not lo <= 0 <= hi:
            raise ValueError("acceleration bounds must bracket zero")

    def accel_levels(self) -> np.ndarray:
        """Acceleration levels ordered by preference: 0, -1, +1, -2, ... steps."""
        lo, hi = self.accel_bounds
        n_dn = int(np.floor(-lo / self.accel_step + 1e-9))
        n_up = int(np.floor(hi / self.accel_step + 1e-9))
        js = [0]
        for m in range(1, max(n_dn, n_up) + 1):
            if m <= n_dn:
                js.append(-m)
            if m <= n_up:
                js.append(m)
        return np.array(js, dtype=float) * self.accel_step


@dataclass
class CaccSolution:
    inputs: list
    states: list
    cost: float
    lead_speeds: np.ndarray


@dataclass
class CaccStepResult:
    input: CaccInput
    fallback: bool
    solution: CaccSolution | None = field(default=None, repr=False)


def predict_lead(mode: str, speed: float, accel: float, forecast, horizon: int, dt: float) -> LeadForecast:
    """Lead prediction for the three information levels.

    ``acc``: constant speed; ``cacc``: current acceleration held (speed
    floored at zero); ``cacc_forecast``: the shared acceleration sequence.
    """
    if mode == "acc":
        return LeadForecast.constant(speed, horizon, dt)
    if mode == "cacc":
        acc = []
        v = speed
        for _ in range(horizon):
            a = max(accel, -v / dt)
            acc.append(a)
            v += dt * a
        return LeadForecast(speed, tuple(acc), dt)
    if mode == "cacc_forecast":
        if forecast is None or len(forecast) < horizon:
            raise ValueError("shared forecast shorter than the requested horizon")
        return LeadForecast(speed, tuple(forecast[:horizon]), dt)
    raise ValueError(f"unknown mode {mode!r}")


def _resistance(v, params: CaccParams):
    return resistance_force(v, params.grade, params.vehicle, params.env)


def longitudinal_step(x: CaccState, u: CaccInput, lead_speed: float, params: CaccParams) -> CaccState:
    """Plant update: Euler gap and speed dynamics; a stopped vehicle stays put."""
    m = params.vehicle.mass
    v2 = x.speed + params.dt / m * (u.wheel_force - u.brake_force - float(_resistance(x.speed, params)))
    return CaccState(x.gap + params.dt * (lead_speed - x.speed), max(0.0, v2))


def terminal_safe_set(x: CaccState, lead: LeadForecast, params: CaccParams, start: int,
                      policy: SpacingPolicy = SpacingPolicy()) -> bool:
    """Whether ``x`` at step ``start`` can coast to the forecast end without
    the gap dropping below the hard minimum."""
    if start > lead.horizon:
        raise ValueError("start step beyond the forecast")
    vp = lead.speeds()
    return bool(_coast_ok(np.array([x.gap]), np.array([x.speed]), vp[start:-1], params,
                          policy.hard_min)[0])


def _coast_ok(gap, speed, lead_speeds, params, hard_min):
    """Vectorised coasting rollout against the lead speeds at the rollout steps."""
    d = np.array(gap, dtype=float, copy=True)
    v = np.array(speed, dtype=float, copy=True)
    ok = np.ones(d.shape, dtype=bool)
    m = params.vehicle.mass
    for vp in lead_speeds:
        d = d + params.dt * (vp - v)
        v = np.maximum(0.0, v - params.dt / m * _resistance(v, params) * (v > 0))
        ok &= d >= hard_min - 1e-9
    return ok


def _forces(v, v2, params: CaccParams):
    """Wheel and brake force realising the speed change ``v -> v2``."""
    m = params.vehicle.mass
    net = m * (v2 - v) / params.dt + _resistance(v, params)
    held = (v <= 0) & (v2 <= 0)  # a stopped vehicle needs no force
    net = np.where(held, 0.0, net)
    return np.maximum(net, 0.0), np.maximum(-net, 0.0)


def solve_cacc_ocp(x: CaccState, lead: LeadForecast | None, policy: SpacingPolicy, params: CaccParams,
                   refs=None) -> CaccSolution:
    """Finite-horizon CACC problem.

    ``refs`` are reference speeds for steps 1..N (free-road references from
    the eco-driving layer); by default the predicted lead speeds are used.
    With ``lead=None`` there is no gap constraint and no gap cost.
    Raises :class:`Infeasible` when no admissible sequence exists.
    """
    N, dt, m = params.horizon, params.dt, params.vehicle.mass
    if lead is not None and lead.horizon < N:
        raise ValueError("lead forecast shorter than the control horizon")
    vp = lead.speeds() if lead is not None else np.zeros(N + 1)
    if refs is None:
        if lead is None:
            raise ValueError("free-road solve needs reference speeds")
        vref = vp[1:N + 1]
    else:
        vref = np.asarray(refs, dtype=float)[:N]
        if vref.size < N:
            raise ValueError("reference speeds shorter than the horizon")
    w_a, w_v, w_d = params.weights
    acc = params.accel_levels()
    a_lo, a_hi = params.accel_bounds
    f_lo, f_hi = params.wheel_force_bounds

    def expand(k, v, d):
        coast = v - dt / m * _resistance(v, params) * (v > 0)
        v2 = np.concatenate([v[:, None] + dt * acc[None, :], coast[:, None]], axis=1)
        v2 = np.maximum(v2, 0.0)
        a = (v2 - v[:, None]) / dt
        fw, fb = _forces(v[:, None], v2, params)
        ok = ((fw >= f_lo - 1e-9) & (fw <= f_hi + 1e-9) & (fb <= params.brake_force_max + 1e-9)
              & (v2 <= params.speed_max + 1e-9))
        ok[:, :-1] &= (a[:, :-1] >= a_lo - 1e-9) & (a[:, :-1] <= a_hi + 1e-9)
        if lead is None:
            d2 = np.zeros(v2.shape)  # no preceding vehicle: gap is not tracked
        else:
            d2 = np.broadcast_to((d + dt * (vp[k] - v))[:, None], v2.shape)
        cost = (w_a * (m * a) ** 2 + params.brake_weight * fb ** 2 + w_v * (vref[k] - v2) ** 2)
        if lead is not None:
            ok &= d2 >= policy.hard_min - 1e-9
            cost = cost + w_d * (reference_gap(policy, v2) - d2) ** 2
        return v2, d2, cost, ok, {"fw": fw, "fb": fb}

    def terminal(v, d):
        if lead is None:
            return np.zeros(v.shape), np.ones(v.shape, dtype=bool)
        return np.zeros(v.shape), _coast_ok(d, v, vp[N:-1], params, policy.hard_min)

    qd = params.gap_bucket if lead is not None else 0.0
    res = forward_dp(x.speed, x.gap, N, expand, terminal, params.speed_bucket, qd)
    if res is None:
        raise Infeasible("no admissible CACC input sequence over the horizon")
    inputs = [CaccInput(r["fw"], r["fb"]) for r in res.aux]
    states = [CaccState(d, v) for v, d in res.values]
    return CaccSolution(inputs, states, res.cost, vp)


def cacc_mpc_step(x: CaccState, lead: LeadForecast | None, policy: SpacingPolicy, params: CaccParams,
                  refs=None) -> CaccStepResult:
    """First optimal input; maximum braking (flagged) when the problem is infeasible."""
    try:
        sol = solve_cacc_ocp(x, lead, policy, params, refs)
    except Infeasible:
        brake = params.brake_force_max if x.speed > 0 else 0.0
        return CaccStepResult(CaccInput(0.0, brake), True, None)
    return CaccStepResult(sol.inputs[0], False, sol)
