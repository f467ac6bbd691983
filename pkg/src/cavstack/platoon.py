"""Multi-vehicle longitudinal coordination with gap-dependent drag.

Vehicles share one road and are ordered by slot (1 is the front).  Each
vehicle feels a drag coefficient that depends on the bumper-to-bumper gap to
the nearest vehicle ahead that is on the road; the front vehicle drives
alone.  Vehicles join at their origin at a fixed departure time and leave at
their destination, which must be reached inside an arrival window.

Plans are state trajectories (position, speed) on a common time grid; the
wheel and brake forces follow from the speed change and the realised drag.
A round of coordination lets every vehicle re-plan against the latest plans
of the others (block coordinate descent on the total wheel energy), so the
total never increases.  Slot changes are searched outside the trajectory
optimisation.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._lattice import forward_dp
from .errors import Infeasible
from .models import Environment, VehicleParams, resistance_force

__all__ = [
    "DragCoupling",
    "PlatoonAgent",
    "TopologyConfig",
    "PlatoonParams",
    "AgentPlan",
    "RoundResult",
    "PlatoonTrace",
    "OrderResult",
    "drag_coefficient",
    "plan_horizon",
    "local_platoon_ocp",
    "evaluate_plans",
    "warm_start",
    "coordinate_round",
    "order_search",
    "run_platoon",
    "platoon_window",
    "shift_plan",
]

TOPOLOGIES = ("PF", "BD", "PLF", "BDL", "TPF", "TPLF")
EXCHANGES = ("state", "state+forecast")


@dataclass(frozen=True)
class DragCoupling:
    """Drag coefficient, relative to the standalone value, tabulated over gap.

    The ratio grows with the gap and reaches 1 at the last breakpoint;
    beyond the table the vehicle drives as if alone.
    """

    gaps: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0)
    ratios: tuple = (0.55, 0.60, 0.66, 0.72, 0.78, 0.87, 0.93, 1.0)
    d_min: float = 5.0

    def __post_init__(self):
        g = np.asarray(self.gaps, dtype=float)
        r = np.asarray(self.ratios, dtype=float)
        if g.ndim != 1 or g.size < 2 or g.size != r.size:
            raise ValueError("gap and ratio tables must be 1-D, equal length, >= 2 points")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise ValueError("gap breakpoints must be non-negative and strictly increasing")
        if np.any(r <= 0) or np.any(np.diff(r) < 0):
            raise ValueError("drag ratios must be positive and non-decreasing in the gap")
        if r[-1] != 1.0:
            raise ValueError("the last drag ratio must equal 1 (standalone)")
        if not self.d_min >= 0:
            raise ValueError("minimum gap must be non-negative")

    def ratio(self, d):
        """Ratio for gaps ``d``; NaN marks 'no vehicle ahead' (ratio 1)."""
        d = np.asarray(d, dtype=float)
        if np.any(d < 0):
            raise ValueError("gap must be non-negative")
        out = np.interp(np.nan_to_num(d, nan=np.inf), self.gaps, self.ratios, right=1.0)
        return np.where(np.isnan(d), 1.0, out)


def drag_coefficient(d, coupling: DragCoupling, standalone: float):
    """Drag coefficient at gap ``d`` (``None``, NaN or inf: no vehicle ahead)."""
    if d is None:
        return float(standalone)
    r = coupling.ratio(d)
    return standalone * (float(r) if np.ndim(r) == 0 else r)


@dataclass(frozen=True)
class PlatoonAgent:
    id: str
    s: float
    v: float
    slot: int
    params: VehicleParams = VehicleParams()
    origin: float = 0.0
    destination: float = 1000.0
    departure: tuple = (0.0, 0.0)    # joins at the window's opening
    arrival: tuple = (0.0, math.inf)

    def __post_init__(self):
        if not self.origin <= self.s <= self.destination:
            raise ValueError(f"agent {self.id}: position outside [origin, destination]")
        if self.v <= 0:
            raise ValueError(f"agent {self.id}: speed must be positive")
        if self.slot < 1:
            raise ValueError(f"agent {self.id}: slots start at 1")
        for lo, hi in (self.departure, self.arrival):
            if lo > hi:
                raise ValueError(f"agent {self.id}: window lower end exceeds upper end")


@dataclass(frozen=True)
class TopologyConfig:
    """Information flow.  Every kind passes the predecessor's data; the
    bidirectional kinds also pass the follower's plan, which lets a vehicle
    account for the drag it saves the one behind."""

    kind: str = "BD"
    exchange: str = "state+forecast"

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if self.exchange not in EXCHANGES:
            raise ValueError(f"exchange must be one of {EXCHANGES}")

    def neighbours(self, slot: int, n: int) -> set:
        out = {slot - 1}
        if self.kind in ("BD", "BDL"):
            out.add(slot + 1)
        if self.kind in ("PLF", "BDL", "TPLF"):
            out.add(1)
        if self.kind in ("TPF", "TPLF"):
            out.add(slot - 2)
        return {p for p in out if 1 <= p <= n and p != slot}

    @property
    def sees_follower(self) -> bool:
        return self.kind in ("BD", "BDL") and self.exchange == "state+forecast"


@dataclass(frozen=True)
class PlatoonParams:
    dt: float = 10.0
    speed_bounds: tuple = (16.0, 24.0)
    speed_quantum: float = 0.25
    max_speed_change: float = 2.0     # per step
    wheel_force_max: float = 20000.0
    brake_force_max: float = 60000.0
    coupling: DragCoupling = DragCoupling()
    env: Environment = Environment()
    grade: float = 0.0
    position_bucket: float | None = None   # default dt * speed_quantum

    def __post_init__(self):
        lo, hi = self.speed_bounds
        if self.dt <= 0 or self.speed_quantum <= 0 or not 0 < lo < hi:
            raise ValueError("dt, speed quantum and speed bounds must be positive, lo < hi")

    def deltas(self) -> np.ndarray:
        m = int(np.floor(self.max_speed_change / self.speed_quantum + 1e-9))
        return np.arange(-m, m + 1) * self.speed_quantum

    @property
    def bucket(self) -> float:
        return self.dt * self.speed_quantum if self.position_bucket is None else self.position_bucket


@dataclass
class AgentPlan:
    """State trajectory on the common grid ``t0 + k dt``, k = 0..N.

    Before departure the agent waits at its origin; once it reaches the
    destination it leaves the road (position pinned at the destination,
    speed 0)."""

    agent_id: str
    t0: float
    dt: float
    s: np.ndarray
    v: np.ndarray
    active: np.ndarray
    arrival_time: float
    cost: float = math.nan

    @property
    def horizon(self) -> int:
        return self.s.size - 1


@dataclass
class RoundResult:
    plans: dict
    totals: list          # total energy after warm start and after each round
    fallbacks: list       # (round, agent id) pairs that kept their previous plan


@dataclass
class PlatoonTrace:
    t: np.ndarray
    agents: list          # ids in slot order
    s: np.ndarray         # (V, N+1)
    v: np.ndarray
    active: np.ndarray
    gap: np.ndarray       # gap to the vehicle ahead, NaN when none
    wheel_force: np.ndarray  # (V, N)
    brake_force: np.ndarray
    energy: np.ndarray    # per agent (J)
    feasible: bool
    stage_energy: np.ndarray = None  # (V, N) wheel energy per step (J)

    @property
    def min_gap(self) -> float:
        g = self.gap[~np.isnan(self.gap)]
        return float(g.min()) if g.size else math.inf

    def to_csv(self, path, agent_id: str):
        i = self.agents.index(agent_id)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "v", "active", "gap", "F_w", "F_b"])
            for k in range(self.t.size):
                fw = repr(float(self.wheel_force[i, k])) if k < self.t.size - 1 else ""
                fb = repr(float(self.brake_force[i, k])) if k < self.t.size - 1 else ""
                g = self.gap[i, k]
                w.writerow([repr(float(self.t[k])), repr(float(self.s[i, k])), repr(float(self.v[i, k])),
                            int(self.active[i, k]), "" if np.isnan(g) else repr(float(g)), fw, fb])


@dataclass
class OrderResult:
    order: tuple          # agent ids, front first
    plans: dict
    cost: float
    swaps: list           # adjacent slot swaps (p, p+1) taking identity to ``order``
    evaluated: int


# ---------------------------------------------------------------------------
# grid helpers

def plan_horizon(agents, params: PlatoonParams, t0: float = 0.0) -> int:
    """Steps until every arrival window has closed."""
    hi = max(a.arrival[1] for a in agents)
    if not math.isfinite(hi):
        raise ValueError("a finite arrival window is needed to size the horizon")
    return int(math.ceil((hi - t0) / params.dt - 1e-9))


def _departure_step(agent: PlatoonAgent, params: PlatoonParams, t0: float) -> int:
    if agent.departure[0] <= t0:
        return 0
    q = (agent.departure[0] - t0) / params.dt
    k = int(round(q))
    if abs(q - k) > 1e-9:
        raise ValueError(f"agent {agent.id}: departure time is not on the planning grid")
    return k


def _stage(vp: VehicleParams, params: PlatoonParams, s, v, v2, gap, dest):
    """Wheel energy, wheel force and brake force of one step.

    Work is charged at the mean speed of the step (at the start speed alone
    a speed zig-zag would look cheaper than cruising).  A step that reaches
    the destination holds speed and is charged the road load over the
    remaining distance only.
    """
    cx = vp.drag_coeff * params.coupling.ratio(np.maximum(gap, 0.0))
    res = resistance_force(v, params.grade, vp, params.env, c_x=cx)
    cross = s + params.dt * v >= dest
    net = np.where(cross, res, vp.mass * (v2 - v) / params.dt + res)
    fw = np.maximum(net, 0.0)
    dist = np.where(cross, dest - s, 0.5 * params.dt * (v + v2))
    return fw * dist, fw, np.maximum(-net, 0.0)


def _forces_ok(fw, fb, params):
    return (fw <= params.wheel_force_max + 1e-9) & (fb <= params.brake_force_max + 1e-9)


def _extrapolate(agent, plan: AgentPlan, params, N) -> AgentPlan:
    """Constant-speed guess from the plan's first on-road state."""
    k0 = int(np.argmax(plan.active)) if plan.active.any() else 0
    s = plan.s.copy()
    v = plan.v.copy()
    act = plan.active.copy()
    if plan.active.any():
        for k in range(k0 + 1, N + 1):
            if not act[k - 1]:
                s[k], v[k], act[k] = s[k - 1], v[k - 1], False
                continue
            nxt = s[k - 1] + params.dt * v[k0]
            if nxt >= agent.destination:
                s[k], v[k], act[k] = agent.destination, 0.0, False
            else:
                s[k], v[k], act[k] = nxt, v[k0], True
    return AgentPlan(plan.agent_id, plan.t0, plan.dt, s, v, act, math.nan)


def _context(agent, agents, plans, N):
    """Per-step nearest on-road vehicle ahead and behind (excluding ``agent``)."""
    ahead = sorted((a for a in agents if a.slot < agent.slot), key=lambda a: -a.slot)
    behind = sorted((a for a in agents if a.slot > agent.slot), key=lambda a: a.slot)
    pred = [None] * (N + 1)
    fol = [None] * (N + 1)
    for k in range(N + 1):
        for a in ahead:
            if plans[a.id].active[k]:
                pred[k] = a
                break
        for a in behind:
            if plans[a.id].active[k]:
                fol[k] = a
                break
    return pred, fol


def _pred_arrays(pred, plans, N):
    ps = np.full(N + 1, np.nan)
    pl = np.zeros(N + 1)
    for k, a in enumerate(pred):
        if a is not None:
            ps[k] = plans[a.id].s[k]
            pl[k] = a.params.length
    return ps, pl


# ---------------------------------------------------------------------------
# local problem

def local_platoon_ocp(agent: PlatoonAgent, agents, plans: dict, params: PlatoonParams, N: int,
                      t0: float = 0.0, cooperative: bool = True) -> AgentPlan:
    """Energy-optimal state trajectory of one agent with the others' plans fixed.

    Minimises the agent's wheel energy plus, when ``cooperative``, the wheel
    energy of whichever vehicle drives directly behind it (whose drag depends
    on this agent's position); the plans of the follower then stay feasible.
    Constraints: speed bounds and per-step speed change, force bounds, the
    minimum gap to the vehicle ahead, and arrival inside the window by step N.
    Raises :class:`Infeasible`.
    """
    T = params.dt
    vp = agent.params
    M = vp.mass
    dest = agent.destination
    d_min = params.coupling.d_min
    k_dep = _departure_step(agent, params, t0)
    if k_dep > N:
        raise ValueError("departure lies beyond the horizon")
    others = {a.id: plans[a.id] for a in agents if a.id != agent.id}
    pred, fol = _context(agent, agents, others, N)
    ps, pl = _pred_arrays(pred, others, N)
    if not cooperative:
        fol = [None] * (N + 1)
    v_lo, v_hi = params.speed_bounds
    D = params.deltas()
    i0 = int(np.flatnonzero(D == 0.0)[0])
    a_lo, a_hi = agent.arrival
    s0 = agent.origin if k_dep > 0 else agent.s
    v0 = agent.v

    # follower stage cost when this agent is off the road (its predecessor is then ours)
    def fol_terms(k, s_self, on_road):
        f = fol[k]
        if f is None or k >= N:
            z = np.zeros(np.shape(s_self))
            return z, np.ones(np.shape(s_self), dtype=bool)
        fp = others[f.id]
        gap = np.where(on_road, s_self - vp.length - fp.s[k], ps[k] - pl[k] - fp.s[k])
        e, fw, fb = _stage(f.params, params, fp.s[k], fp.v[k], fp.v[k + 1], gap, f.destination)
        ok = _forces_ok(fw, fb, params) & ~(gap < d_min - 1e-9)
        return e, ok

    dmax = float(D.max())

    def expand(kk, v, s):
        k = k_dep + kk
        on = s < dest
        cross = on & (s + T * v >= dest)
        v2 = v[:, None] + D[None, :]
        gap = ps[k] - pl[k] - s
        e, fw, fb = _stage(vp, params, s[:, None], v[:, None], v2, gap[:, None], dest)
        ok = _forces_ok(fw, fb, params) & (v2 >= v_lo - 1e-9) & (v2 <= v_hi + 1e-9)
        # leaving the road: hold speed, check the window, pin the state
        t_arr = t0 + k * T + (dest - s) / np.where(v > 0, v, 1.0)
        in_win = (t_arr >= a_lo - 1e-9) & (t_arr <= a_hi + 1e-9)
        single = ~on | cross
        ok[single] = False
        ok[single, i0] = True
        ok[cross, i0] &= in_win[cross] & _forces_ok(fw[cross, i0], fb[cross, i0], params)
        e = np.where(on[:, None], e, 0.0)
        fw = np.where(on[:, None], fw, 0.0)
        fb = np.where(on[:, None], fb, 0.0)
        s2 = np.where(single, dest, s + T * v)[:, None] + 0.0 * v2
        v2 = np.where(single[:, None], 0.0, v2)
        on2 = s2 < dest
        if not np.isnan(ps[k + 1]):
            ok &= ~on2 | (s2 <= ps[k + 1] - pl[k + 1] - d_min + 1e-9)
        # the vehicle behind (at k+1) must keep its gap
        f = fol[k + 1]
        if f is not None:
            sf = others[f.id].s[k + 1]
            ok &= ~on2 | (s2 - vp.length - sf >= d_min - 1e-9)
        fe, fok = fol_terms(k, s, on)
        ok &= fok[:, None]
        cost = e + fe[:, None]
        # necessary reachability of the window and of the horizon end
        rem = N - (k + 1)
        m_hi = min(rem, int(math.floor((a_hi - t0) / T - (k + 1) + 1e-9)) + 1) if math.isfinite(a_hi) else rem
        if m_hi < 0:
            ok &= ~on2
        else:
            ok &= ~on2 | (s2 + _reach(v2, m_hi, dmax, v_hi, T) >= dest - 1e-6)
        m_lo = int(math.floor((a_lo - t0) / T - (k + 1) + 1e-9))
        if m_lo > 0:
            ok &= ~on2 | (s2 + _reach(v2, m_lo, -dmax, v_lo, T) <= dest + 1e-6)
        return v2, s2, cost, ok, {"fw": fw, "fb": fb}

    def terminal(v, s):
        return np.zeros(v.shape), s >= dest

    if s0 >= dest:
        raise ValueError("agent already at its destination")
    if k_dep <= N and not np.isnan(ps[k_dep]) and ps[k_dep] - pl[k_dep] - s0 < d_min - 1e-9:
        raise Infeasible(f"agent {agent.id}: minimum gap violated at departure")
    res = forward_dp(v0, s0, N - k_dep, expand, terminal, params.speed_quantum / 2, params.bucket)
    if res is None:
        raise Infeasible(f"agent {agent.id}: no admissible trajectory")
    s = np.full(N + 1, s0)
    v = np.full(N + 1, v0)
    for kk, (vv, ss) in enumerate(res.values):
        s[k_dep + kk] = ss
        v[k_dep + kk] = vv
    act = (np.arange(N + 1) >= k_dep) & (s < dest)
    k_last = int(np.flatnonzero(act)[-1])
    t_arr = t0 + k_last * T + (dest - s[k_last]) / v[k_last]
    plan = AgentPlan(agent.id, t0, T, s, v, act, t_arr)
    plan.cost = float(_agent_energy(agent, plan, ps, pl, params).sum())
    return plan


def _reach(v, m, dv, v_bound, T):
    """Distance covered in ``m`` steps when the speed ramps from ``v`` by
    ``dv`` per step (negative to slow down) until ``v_bound``."""
    v = np.asarray(v, dtype=float)
    n = np.clip(np.ceil((v_bound - v) / dv - 1e-12), 0, m)   # steps before the bound
    return T * (n * v + dv * n * (n - 1) / 2 + (m - n) * v_bound)


def _agent_energy(agent, plan, ps, pl, params):
    N = plan.horizon
    e = np.zeros(N)
    for k in range(N):
        if plan.active[k]:
            gap = ps[k] - pl[k] - plan.s[k]
            e[k] = float(_stage(agent.params, params, plan.s[k], plan.v[k], plan.v[k + 1], gap,
                                agent.destination)[0])
    return e


# ---------------------------------------------------------------------------
# evaluation and coordination

def evaluate_plans(agents, plans: dict, params: PlatoonParams) -> PlatoonTrace:
    """Execute the plans: each vehicle applies the force that realises its
    planned speeds under the realised drag.  ``feasible`` is False when a
    gap drops below the minimum or a force bound is exceeded."""
    order = sorted(agents, key=lambda a: a.slot)
    N = plans[order[0].id].horizon
    V = len(order)
    S = np.array([plans[a.id].s for a in order])
    Vv = np.array([plans[a.id].v for a in order])
    A = np.array([plans[a.id].active for a in order])
    gap = np.full((V, N + 1), np.nan)
    fw = np.zeros((V, N))
    fb = np.zeros((V, N))
    energy = np.zeros(V)
    stage = np.zeros((V, N))
    ok = True
    d_min = params.coupling.d_min
    for i, a in enumerate(order):
        pred, _ = _context(a, order, plans, N)
        ps, pl = _pred_arrays(pred, plans, N)
        for k in range(N + 1):
            if A[i, k] and not np.isnan(ps[k]):
                gap[i, k] = ps[k] - pl[k] - S[i, k]
        for k in range(N):
            if not A[i, k]:
                continue
            e, f_w, f_b = _stage(a.params, params, S[i, k], Vv[i, k], Vv[i, k + 1], gap[i, k], a.destination)
            fw[i, k], fb[i, k] = float(f_w), float(f_b)
            stage[i, k] = float(e)
            energy[i] += float(e)
            if not _forces_ok(f_w, f_b, params):
                ok = False
    g = gap[~np.isnan(gap)]
    if g.size and g.min() < d_min - 1e-9:
        ok = False
    t = plans[order[0].id].t0 + params.dt * np.arange(N + 1)
    return PlatoonTrace(t, [a.id for a in order], S, Vv, A, gap, fw, fb, energy, ok, stage)


def _total(agents, plans, params):
    tr = evaluate_plans(agents, plans, params)
    return (float(tr.energy.sum()) if tr.feasible else math.inf), tr


def warm_start(agents, params: PlatoonParams, N: int, t0: float = 0.0) -> dict:
    """Independent single-vehicle plans; when they clash, plans made one after
    another in slot order, each keeping clear of the ones ahead."""
    solo = {a.id: local_platoon_ocp(a, [a], {}, params, N, t0) for a in agents}
    if evaluate_plans(agents, solo, params).feasible:
        return solo
    plans = {}
    done = []
    for a in sorted(agents, key=lambda a: a.slot):
        plans[a.id] = local_platoon_ocp(a, done + [a], plans, params, N, t0, cooperative=False)
        done.append(a)
    return plans


def _view(agent, agents, plans, topology, params, N):
    """Plans as seen by ``agent``: forecasts when shared, otherwise
    constant-speed guesses from the current state."""
    if topology.exchange == "state+forecast":
        return plans
    return {a.id: (plans[a.id] if a.id == agent.id else _extrapolate(a, plans[a.id], params, N))
            for a in agents}


def coordinate_round(agents, plans: dict, topology: TopologyConfig, params: PlatoonParams,
                     rounds: int = 3, mode: str = "gauss_seidel", t0: float = 0.0) -> RoundResult:
    """``rounds`` passes in ascending slot order; each agent re-plans against
    the latest plans (``gauss_seidel``) or against the previous round's plans
    (``jacobi``).  A new plan is adopted only if the executed total energy
    does not increase and every plan stays feasible, so totals are
    non-increasing.  An agent whose local problem is infeasible keeps its
    previous plan."""
    if mode not in ("gauss_seidel", "jacobi"):
        raise ValueError("mode must be 'gauss_seidel' or 'jacobi'")
    order = sorted(agents, key=lambda a: a.slot)
    if sorted(a.slot for a in order) != list(range(1, len(order) + 1)):
        raise ValueError("slots must be a permutation of 1..V")
    cur = dict(plans)
    N = cur[order[0].id].horizon
    total, _ = _total(order, cur, params)
    if not math.isfinite(total):
        raise Infeasible("warm-start plans are not jointly feasible")
    totals = [total]
    fallbacks = []
    coop = topology.sees_follower
    for r in range(rounds):
        base = dict(cur)
        for a in order:
            src = cur if mode == "gauss_seidel" else base
            try:
                cand = local_platoon_ocp(a, order, _view(a, order, src, topology, params, N),
                                         params, N, t0, cooperative=coop)
            except Infeasible:
                fallbacks.append((r, a.id))
                continue
            trial = dict(cur)
            trial[a.id] = cand
            t_new, _ = _total(order, trial, params)
            if t_new <= total + 1e-9 * max(1.0, abs(total)):
                cur, total = trial, min(t_new, total)
        assert total <= totals[-1] + 1e-9 * max(1.0, abs(totals[-1])), "total energy increased"
        totals.append(total)
    tr = evaluate_plans(order, cur, params)
    for i, aid in enumerate(tr.agents):
        cur[aid].cost = float(tr.energy[i])
    return RoundResult(cur, totals, fallbacks)


def shift_plan(plan: AgentPlan, steps: int) -> AgentPlan:
    """Previous plan advanced by ``steps``; the tail holds the last state."""
    if steps < 0:
        raise ValueError("shift must be non-negative")
    n = plan.horizon + 1

    def sh(x):
        return np.concatenate([x[steps:], np.repeat(x[-1:], min(steps, n))])[:n]
    return AgentPlan(plan.agent_id, plan.t0 + steps * plan.dt, plan.dt, sh(plan.s), sh(plan.v),
                     sh(plan.active), plan.arrival_time, plan.cost)


def _bubble_swaps(order_ids, ids_by_slot):
    cur = list(ids_by_slot)
    swaps = []
    for target_pos, aid in enumerate(order_ids):
        j = cur.index(aid)
        while j > target_pos:
            cur[j - 1], cur[j] = cur[j], cur[j - 1]
            swaps.append((j, j + 1))   # slots are 1-based
            j -= 1
    return swaps


def _reslot(agents, order_ids, t0=0.0):
    """Agents re-slotted to ``order_ids`` (front first); on-road positions are
    handed down by slot, so the swap is instantaneous and speeds stay with
    the vehicles."""
    by_id = {a.id: a for a in agents}
    ident = sorted(agents, key=lambda a: a.slot)
    pos = [a.s for a in ident]
    out = []
    for p, aid in enumerate(order_ids):
        a = by_id[aid]
        s = pos[p] if ident[p].departure[0] <= t0 and a.departure[0] <= t0 else a.s
        if not a.origin <= s <= a.destination:
            return None
        out.append(replace(a, slot=p + 1, s=s))
    return out


def order_search(agents, params: PlatoonParams, topology: TopologyConfig = TopologyConfig(),
                 rounds: int = 3, cap: int = 6, t0: float = 0.0) -> OrderResult:
    """Slot order with the least coordinated energy.

    Exhaustive over permutations up to ``cap`` vehicles, adjacent-swap hill
    climbing beyond.  Orders whose plans are infeasible are skipped; the
    identity order is the fallback."""
    ident = [a.id for a in sorted(agents, key=lambda a: a.slot)]
    N = plan_horizon(agents, params, t0)
    seen = {}

    def score(order):
        key = tuple(order)
        if key not in seen:
            ag = _reslot(agents, order, t0)
            res = None
            if ag is not None:
                try:
                    ws = warm_start(ag, params, N, t0)
                    res = coordinate_round(ag, ws, topology, params, rounds, t0=t0)
                except Infeasible:
                    res = None
            seen[key] = (res.totals[-1], res.plans) if res is not None else (math.inf, None)
        return seen[key][0]

    if len(agents) <= cap:
        best = None
        for perm in itertools.permutations(ident):
            c = score(perm)
            if best is None or c < score(best):
                best = perm
    else:
        best = tuple(ident)
        improved = True
        while improved:
            improved = False
            cands = []
            for j in range(len(best) - 1):
                nb = list(best)
                nb[j], nb[j + 1] = nb[j + 1], nb[j]
                cands.append(tuple(nb))
            c_best = min(cands, key=score)
            if score(c_best) < score(best):
                best, improved = c_best, True
    if not math.isfinite(score(best)):
        best = tuple(ident)
    cost, plans = seen[tuple(best)]
    return OrderResult(tuple(best), plans, cost, _bubble_swaps(best, ident), len(seen))


def run_platoon(agents, params: PlatoonParams, topology: TopologyConfig = TopologyConfig(),
                rounds: int = 3, replan_every: int | None = None, mode: str = "gauss_seidel",
                t0: float = 0.0) -> tuple:
    """Plan, coordinate and execute the trip.  With ``replan_every`` the
    coordination is repeated on the remaining trip every that many steps,
    warm-started from the shifted plans.  Returns ``(trace, independent)``
    where ``independent`` is the summed energy of the single-vehicle plans."""
    N = plan_horizon(agents, params, t0)
    solo = {a.id: local_platoon_ocp(a, [a], {}, params, N, t0) for a in agents}
    independent = float(sum(p.cost for p in solo.values()))
    plans = warm_start(agents, params, N, t0)
    plans = coordinate_round(agents, plans, topology, params, rounds, mode, t0).plans
    if replan_every:
        k = 0
        while k + replan_every < N:
            k += replan_every
            cur = []
            for a in agents:
                p = plans[a.id]
                if p.active[k]:
                    cur.append(replace(a, s=float(p.s[k]), v=float(p.v[k])))
                else:
                    cur.append(a)
            live = [a for a in cur if plans[a.id].active[k] or a.departure[0] > t0 + k * params.dt]
            if not live:
                break
            tk = t0 + k * params.dt
            sub = {a.id: _tail(plans[a.id], k) for a in live}
            sub = coordinate_round(live, sub, topology, params, rounds, mode, tk).plans
            for a in live:
                plans[a.id] = _splice(plans[a.id], sub[a.id], k)
    return evaluate_plans(agents, plans, params), independent


def _tail(plan: AgentPlan, k: int) -> AgentPlan:
    return AgentPlan(plan.agent_id, plan.t0 + k * plan.dt, plan.dt, plan.s[k:].copy(), plan.v[k:].copy(),
                     plan.active[k:].copy(), plan.arrival_time, plan.cost)


def _splice(plan: AgentPlan, tail: AgentPlan, k: int) -> AgentPlan:
    return AgentPlan(plan.agent_id, plan.t0, plan.dt, np.concatenate([plan.s[:k], tail.s]),
                     np.concatenate([plan.v[:k], tail.v]), np.concatenate([plan.active[:k], tail.active]),
                     tail.arrival_time, math.nan)


def platoon_window(trace: PlatoonTrace, band: float, d_min: float) -> float:
    """Longest contiguous stretch (fraction of the trip) in which every vehicle
    is on the road and every gap lies in ``[d_min, band]``."""
    on = trace.active.all(axis=0)
    g = trace.gap[1:] if trace.gap.shape[0] > 1 else np.zeros((0, trace.t.size))
    inb = np.all((g >= d_min - 1e-9) & (g <= band + 1e-9), axis=0) & on
    best = run = 0
    for x in inb:
        run = run + 1 if x else 0
        best = max(best, run)
    any_on = np.flatnonzero(trace.active.any(axis=0))
    if any_on.size == 0:
        return 0.0
    trip = any_on[-1] - any_on[0] + 1
    return best / trip
