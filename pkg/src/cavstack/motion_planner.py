"""Collision-free trajectory planning with the kinematic bicycle.

The vehicle body is covered by a row of circles and obstacles are bounded
convex polygons given by halfspaces, so clearance reduces to point-polygon
distances.  Planning runs in two stages: a lattice search over held
(acceleration, steering) primitives finds a feasible seed, then projected
gradient steps on a penalised effort objective smooth it.  A refined
candidate only replaces the seed if it passes every hard check and lowers
the cost.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

from .errors import Infeasible
from .models import BicycleState, VehicleParams, bicycle_jacobian, bicycle_step

__all__ = [
    "ObstaclePolytope",
    "EgoFootprint",
    "PlanProblem",
    "Trajectory",
    "signed_clearance",
    "plan_trajectory",
    "evaluate_cost",
    "check_trajectory",
    "load_trajectory_csv",
]


@dataclass(frozen=True, eq=False)
class ObstaclePolytope:
    """Bounded convex region ``{p : A p <= b}``."""

    normals: np.ndarray
    offsets: np.ndarray
    vertices: np.ndarray = field(init=False, repr=False)
    center: np.ndarray = field(init=False, repr=False)   # bounding circle
    radius: float = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).ravel()
        if A.shape[1] != 2 or A.shape[0] != b.size or b.size < 3:
            raise ValueError("need at least three 2-D halfspaces")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms <= 0):
            raise ValueError("halfspace normals must be nonzero")
        # Chebyshev centre: max r s.t. a_i.c + r |a_i| <= b_i
        res = linprog([0, 0, -1], A_ub=np.column_stack([A, norms]), b_ub=b,
                      bounds=[(None, None), (None, None), (0, None)], method="highs")
        if res.status == 3:
            raise ValueError("obstacle region is unbounded")
        if res.status != 0 or res.x[2] <= 1e-9:
            raise ValueError("obstacle region is empty")
        center = res.x[:2]
        # boundedness: every direction must be blocked by some halfspace
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            r = linprog(-np.asarray(d, float), A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
            if r.status == 3:
                raise ValueError("obstacle region is unbounded")
        hs = HalfspaceIntersection(np.column_stack([A, -b]), center)
        verts = hs.intersections
        ang = np.arctan2(verts[:, 1] - center[1], verts[:, 0] - center[0])
        verts = verts[np.argsort(ang)]
        keep = np.ones(len(verts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(verts, axis=0), axis=1) > 1e-9
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        verts = verts[keep]
        mid = verts.mean(axis=0)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "center", mid)
        object.__setattr__(self, "radius", float(np.max(np.linalg.norm(verts - mid, axis=1))) + 1e-9)

    @classmethod
    def box(cls, xmin, ymin, xmax, ymax) -> "ObstaclePolytope":
        return cls(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float),
                   np.array([xmax, -xmin, ymax, -ymin], float))

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all(pts @ self.normals.T <= self.offsets + 1e-12, axis=1)

    def distance(self, pts):
        """Signed distance (negative inside) and its gradient for points ``(n, 2)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        norms = np.linalg.norm(self.normals, axis=1)
        face = (pts @ self.normals.T - self.offsets) / norms
        inside = np.all(face <= 0, axis=1)
        v0 = self.vertices
        v1 = np.roll(v0, -1, axis=0)
        e = v1 - v0
        t = np.clip(np.einsum("nkd,kd->nk", pts[:, None, :] - v0[None], e) / np.sum(e * e, axis=1), 0, 1)
        near = v0[None] + t[..., None] * e[None]
        diff = pts[:, None, :] - near
        dist = np.linalg.norm(diff, axis=2)
        j = np.argmin(dist, axis=1)
        out_d = dist[np.arange(len(pts)), j]
        with np.errstate(invalid="ignore", divide="ignore"):
            out_g = diff[np.arange(len(pts)), j] / out_d[:, None]
        i = np.argmax(face, axis=1)
        in_d = face[np.arange(len(pts)), i]
        in_g = self.normals[i] / norms[i][:, None]
        d = np.where(inside, in_d, out_d)
        g = np.where(inside[:, None], in_g, np.nan_to_num(out_g))
        return d, g


@dataclass(frozen=True, eq=False)
class EgoFootprint:
    """Circles along the body axis, offsets in the body frame from the reference point."""

    offsets: np.ndarray
    radius: float
    length: float
    width: float
    body_offset: float = 0.0  # body-rectangle centre relative to the reference point

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=float).ravel()
        object.__setattr__(self, "offsets", offs)
        if not self.radius > 0 or offs.size < 1:
            raise ValueError("footprint needs at least one circle with positive radius")
        # coverage: every point of the body rectangle lies in some circle; check a
        # dense set of boundary and interior points
        xs = self.body_offset + np.linspace(-self.length / 2, self.length / 2, 81)
        ys = np.linspace(-self.width / 2, self.width / 2, 21)
        px, py = np.meshgrid(xs, ys)
        d = np.hypot(px.ravel()[:, None] - offs[None, :], py.ravel()[:, None])
        if np.any(d.min(axis=1) > self.radius + 1e-9):
            raise ValueError("circles do not cover the vehicle body")

    @classmethod
    def covering(cls, vehicle: VehicleParams = VehicleParams(), n: int = 3) -> "EgoFootprint":
        """``n`` equal circles, each circumscribing one slab of the body."""
        c0 = (vehicle.lf - vehicle.lr) / 2.0
        L, W = vehicle.length, vehicle.width
        offs = c0 - L / 2 + (2 * np.arange(n) + 1) * L / (2 * n)
        r = math.hypot(L / (2 * n), W / 2)
        return cls(offs, r, L, W, c0)

    def centers(self, x, y, psi):
        """Circle centres for arrays of poses, shape ``(..., n_circles, 2)``."""
        x, y, psi = (np.asarray(a, dtype=float)[..., None] for a in (x, y, psi))
        return np.stack([x + self.offsets * np.cos(psi), y + self.offsets * np.sin(psi)], axis=-1)


def signed_clearance(x: BicycleState, footprint: EgoFootprint, obstacle: ObstaclePolytope) -> float:
    c = footprint.centers(x.x, x.y, x.heading).reshape(-1, 2)
    d, _ = obstacle.distance(c)
    return float(np.min(d) - footprint.radius)


@dataclass
class PlanProblem:
    start: BicycleState
    goal_low: tuple          # (X, Y, psi, v)
    goal_high: tuple
    horizon: int = 10
    dt: float = 0.5
    accel_bounds: tuple = (-3.0, 2.0)
    steer_bounds: tuple = (-0.5, 0.5)
    speed_bounds: tuple = (0.0, 15.0)
    obstacles: list = field(default_factory=list)
    time_weight: float = 1.0
    effort_weight: float = 0.1
    margin: float = 0.1
    steer_levels: int = 7
    accel_levels: int = 3
    vehicle: VehicleParams = VehicleParams()
    footprint: EgoFootprint | None = None
    cell: tuple = (0.25, 0.25, 0.1, 0.5)  # lattice dedup resolution in (X, Y, psi, v)
    refine_iters: int = 40

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon and step must be positive")
        lo, hi = np.asarray(self.goal_low, float), np.asarray(self.goal_high, float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo > hi):
            raise ValueError("goal box must be a nonempty 4-D box")
        for a, b in (self.accel_bounds, self.steer_bounds, self.speed_bounds):
            if a > b:
                raise ValueError("input and speed boxes must be nonempty")
        if max(abs(self.steer_bounds[0]), abs(self.steer_bounds[1])) >= math.pi / 2:
            raise ValueError("steering bounds must lie inside (-pi/2, pi/2)")
        if self.footprint is None:
            self.footprint = EgoFootprint.covering(self.vehicle)

    def in_goal(self, s):
        s = np.asarray(s, dtype=float)
        return np.all((s >= np.asarray(self.goal_low) - 1e-12) & (s <= np.asarray(self.goal_high) + 1e-12), axis=-1)


@dataclass
class Trajectory:
    states: list
    inputs: np.ndarray       # (N, 2): acceleration, steering
    cost: float
    dt: float
    seed_cost: float = float("nan")
    refined: bool = False

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "X", "Y", "psi", "v", "a", "delta"])
            for k, s in enumerate(self.states):
                if k < len(self.inputs):
                    a, d = (repr(float(u)) for u in self.inputs[k])
                else:
                    a = d = ""
                w.writerow([repr(k * self.dt), repr(s.x), repr(s.y), repr(s.heading), repr(s.speed), a, d])


def load_trajectory_csv(path):
    """Rows of the trajectory CSV as a float array; missing inputs become NaN."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(c) if c else np.nan for c in r] for r in rows])


def _rollout(start: BicycleState, inputs, p: PlanProblem):
    states = [start]
    for a, d in inputs:
        states.append(bicycle_step(states[-1], float(a), float(d), p.vehicle, p.dt))
    return states


def evaluate_cost(p: PlanProblem, inputs) -> float:
    """Time until first goal entry (T_s per step) plus input effort."""
    states = _rollout(p.start, inputs, p)
    arr = np.array([s.as_array() for s in states])
    return _cost_from(arr, np.asarray(inputs, dtype=float), p)


def _cost_from(arr, inputs, p):
    inside = p.in_goal(arr)
    first = int(np.argmax(inside)) if inside.any() else len(arr) - 1
    return float(p.time_weight * p.dt * first + p.effort_weight * np.sum(inputs ** 2))


def _substep_poses(a, b, n=10):
    """Linear pose interpolation at ``n`` sub-steps (end points included)."""
    t = np.linspace(0.0, 1.0, n + 1)
    a, b = np.asarray(a)[..., None, :3], np.asarray(b)[..., None, :3]
    return a + (b - a) * t[:, None]


def _min_clearance(poses, p: PlanProblem, cap: float = np.inf):
    """Min clearance over obstacles for poses ``(..., 3)``.

    Values at or below ``cap`` are exact; poses whose bounding-circle bound
    already exceeds ``cap`` get that bound instead.
    """
    out = np.full(poses.shape[:-1], np.inf)
    if not p.obstacles:
        return out
    fp = p.footprint
    reach = float(np.max(np.abs(fp.offsets))) + fp.radius
    flat_pose = poses.reshape(-1, 3)
    res = np.full(flat_pose.shape[0], np.inf)
    for obs in p.obstacles:
        lb = np.hypot(flat_pose[:, 0] - obs.center[0], flat_pose[:, 1] - obs.center[1]) - obs.radius - reach
        near = lb <= cap
        val = lb.copy()
        if near.any():
            c = fp.centers(flat_pose[near, 0], flat_pose[near, 1], flat_pose[near, 2])
            d, _ = obs.distance(c.reshape(-1, 2))
            val[near] = d.reshape(c.shape[:-1]).min(axis=-1) - fp.radius
        res = np.minimum(res, val)
    return res.reshape(poses.shape[:-1])


def check_trajectory(p: PlanProblem, traj_states, inputs) -> bool:
    """Hard checks: boxes, clearance margin at sub-steps, goal at the horizon end."""
    arr = np.array([s.as_array() for s in traj_states])
    u = np.asarray(inputs, dtype=float)
    if len(arr) != p.horizon + 1 or u.shape != (p.horizon, 2):
        return False
    if np.any(u[:, 0] < p.accel_bounds[0] - 1e-12) or np.any(u[:, 0] > p.accel_bounds[1] + 1e-12):
        return False
    if np.any(u[:, 1] < p.steer_bounds[0] - 1e-12) or np.any(u[:, 1] > p.steer_bounds[1] + 1e-12):
        return False
    if np.any(arr[:, 3] < p.speed_bounds[0] - 1e-12) or np.any(arr[:, 3] > p.speed_bounds[1] + 1e-12):
        return False
    if not p.in_goal(arr[-1]):
        return False
    poses = _substep_poses(arr[:-1], arr[1:])
    return bool(np.all(_min_clearance(poses, p, p.margin) > p.margin))


def _step_vec(s, a, d, p):
    """Vectorised bicycle step used during the search (final states come from bicycle_step)."""
    lr, lf = p.vehicle.lr, p.vehicle.lf
    beta = np.arctan(lr / (lr + lf) * np.tan(d))
    x, y, psi, v = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    return np.stack([x + p.dt * v * np.cos(psi + beta), y + p.dt * v * np.sin(psi + beta),
                     psi + p.dt * v / lr * np.sin(beta), np.maximum(0.0, v + p.dt * a)], axis=-1)


def _levels(lo, hi, n):
    """``n`` levels on ``[lo, hi]``; an odd count that brackets zero includes zero."""
    if n <= 1:
        return np.array([min(max(0.0, lo), hi)])
    if n % 2 and lo < 0 < hi:
        m = (n - 1) // 2
        return np.concatenate([np.linspace(lo, 0, m + 1)[:-1], [0.0], np.linspace(0, hi, m + 1)[1:]])
    return np.linspace(lo, hi, n)


def _primitives(p: PlanProblem):
    acc = _levels(*p.accel_bounds, p.accel_levels)
    st = _levels(*p.steer_bounds, p.steer_levels)
    A, D = np.meshgrid(acc, st, indexing="ij")
    u = np.column_stack([A.ravel(), D.ravel()])
    # cheaper primitives first so equal-cost ties resolve towards small inputs
    return u[np.argsort(np.sum(u ** 2, axis=1), kind="stable")]


def _goal_gaps(s, p):
    lo, hi = np.asarray(p.goal_low), np.asarray(p.goal_high)
    gap = np.linalg.norm(np.maximum(0.0, np.maximum(lo[:2] - s[:, :2], s[:, :2] - hi[:2])), axis=1)
    vgap = np.maximum(0.0, np.maximum(lo[3] - s[:, 3], s[:, 3] - hi[3]))
    return gap, vgap


def _reachable(s, k, p):
    """Necessary condition for meeting the goal box at the horizon end.

    Per step the position moves at most ``v_max * dt`` and the speed changes
    at most ``max|a| * dt``.
    """
    rem = p.horizon - k
    gap, vgap = _goal_gaps(s, p)
    amax = max(abs(p.accel_bounds[0]), abs(p.accel_bounds[1]))
    return (gap <= rem * p.speed_bounds[1] * p.dt + 1e-9) & (vgap <= rem * amax * p.dt + 1e-9)


def _cost_to_go_bound(s, entered, k, p):
    """Admissible lower bound on the remaining cost from step ``k``."""
    rem = p.horizon - k
    if rem <= 0:
        return np.zeros(len(s))
    gap, vgap = _goal_gaps(s, p)
    steps = np.maximum(1.0, np.ceil(gap / max(p.speed_bounds[1] * p.dt, 1e-12) - 1e-9))
    time = np.where(entered, 0.0, p.time_weight * p.dt * steps)
    # sum a^2 over rem steps with sum |a| dt >= vgap is at least (vgap/dt)^2 / rem
    return time + p.effort_weight * (vgap / p.dt) ** 2 / rem


def _cell_keys(s, ent, cell):
    """Dedup keys: packed integer cells, or exact rows when ``cell`` is zero."""
    if cell.min() <= 0:
        return np.column_stack([ent.astype(float), s])
    q = np.floor(s / cell + 0.5).astype(np.int64)
    q -= q.min(axis=0)
    span = q.max(axis=0) + 1
    if float(np.prod(span.astype(float))) * 2 >= 2.0 ** 62:
        return np.column_stack([ent, q])
    key = ent.astype(np.int64)
    for j in range(4):
        key = key * span[j] + q[:, j]
    return key


def _lattice_search(p: PlanProblem, cell=None, bound: float = np.inf):
    """Layered search over held primitives, one survivor per (entered, cell).

    Within a cell the cheapest partial plan survives; ties go to the
    lower-effort primitive, then the earlier parent.  With a vanishing cell
    size this is exhaustive enumeration of the primitive tree.
    """
    prims = _primitives(p)
    eff = p.effort_weight * np.sum(prims ** 2, axis=1)
    cell = np.asarray(p.cell if cell is None else cell, dtype=float)
    n_p = len(prims)
    s = p.start.as_array()[None, :]
    cost = np.zeros(1)
    entered = p.in_goal(s)
    parents, acts = [], []
    for k in range(p.horizon):
        kids = _step_vec(s[:, None, :], prims[None, :, 0], prims[None, :, 1], p).reshape(-1, 4)
        par = np.repeat(np.arange(len(s)), n_p)
        act = np.tile(np.arange(n_p), len(s))
        ok = (kids[:, 3] >= p.speed_bounds[0] - 1e-12) & (kids[:, 3] <= p.speed_bounds[1] + 1e-12)
        ok &= _reachable(kids, k + 1, p)
        if p.obstacles and ok.any():
            idx = np.nonzero(ok)[0]
            poses = _substep_poses(s[par[idx]], kids[idx])
            ok[idx] = np.all(_min_clearance(poses, p, p.margin) > p.margin, axis=1)
        if not ok.any():
            return None, np.inf
        kids, par, act = kids[ok], par[ok], act[ok]
        step_time = np.where(entered[par], 0.0, p.time_weight * p.dt)
        tc = cost[par] + step_time + eff[act]
        ent = entered[par] | p.in_goal(kids)
        if np.isfinite(bound):
            live = tc + _cost_to_go_bound(kids, ent, k + 1, p) <= bound + 1e-9 * max(1.0, abs(bound))
            if not live.any():
                return None, np.inf
            kids, par, act, tc, ent = kids[live], par[live], act[live], tc[live], ent[live]
        rank = np.lexsort((par, act))
        order = rank[np.argsort(tc[rank], kind="stable")]
        _, first = np.unique(_cell_keys(kids[order], ent[order], cell), axis=0, return_index=True)
        keep = np.sort(order[first])
        s, cost, entered = kids[keep], tc[keep], ent[keep]
        parents.append(par[keep])
        acts.append(act[keep])
    done = p.in_goal(s)
    if not done.any():
        return None, np.inf
    i = int(np.flatnonzero(done)[np.argmin(cost[done])])
    best = float(cost[i])
    seq = []
    for k in range(p.horizon - 1, -1, -1):
        seq.append(prims[acts[k][i]])
        i = int(parents[k][i])
    return np.array(seq[::-1]), best


def _penalised(p: PlanProblem, u, entry: int, rho=200.0, buffer=0.01):
    """Effort + penalties and gradient w.r.t. inputs (via analytic Jacobians).

    The goal box is enforced at the horizon end and at the seed's entry
    step ``entry`` so the time term cannot grow.
    """
    N = p.horizon
    states = [p.start]
    for a, d in u:
        states.append(bicycle_step(states[-1], float(a), float(d), p.vehicle, p.dt))
    arr = np.array([s.as_array() for s in states])
    J = p.effort_weight * float(np.sum(u ** 2))
    gx = np.zeros_like(arr)
    # clearance along the linearly interpolated sub-step poses
    if p.obstacles:
        t = np.linspace(0.0, 1.0, 11)[1:]
        a, b = arr[:-1, None, :3], arr[1:, None, :3]
        poses = (a + (b - a) * t[:, None]).reshape(-1, 3)
        w_b = np.tile(t, N)
        seg = np.repeat(np.arange(N), t.size)
        fp = p.footprint
        c = fp.centers(poses[:, 0], poses[:, 1], poses[:, 2])      # (P, n, 2)
        cos, sin = np.cos(poses[:, 2])[:, None], np.sin(poses[:, 2])[:, None]
        for obs in p.obstacles:
            d, g = obs.distance(c.reshape(-1, 2))
            d, g = d.reshape(c.shape[:-1]), g.reshape(c.shape)
            viol = np.maximum(0.0, p.margin + buffer - (d - fp.radius))
            J += rho * float(np.sum(viol ** 2))
            coef = -2 * rho * viol                                      # dJ/dd
            gpose = np.stack([np.sum(coef * g[..., 0], axis=1), np.sum(coef * g[..., 1], axis=1),
                              np.sum(coef * fp.offsets * (-g[..., 0] * sin + g[..., 1] * cos), axis=1)],
                             axis=1)
            np.add.at(gx[:, :3], seg + 1, w_b[:, None] * gpose)
            np.add.at(gx[:, :3], seg, (1 - w_b)[:, None] * gpose)
    lo, hi = np.asarray(p.goal_low), np.asarray(p.goal_high)
    mid_lo, mid_hi = lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo)
    for k in sorted({entry, N}):
        below, above = np.maximum(0, mid_lo - arr[k]), np.maximum(0, arr[k] - mid_hi)
        J += rho * float(np.sum(below ** 2 + above ** 2))
        gx[k] += 2 * rho * (above - below)
    vlo, vhi = p.speed_bounds
    sb, sa = np.maximum(0, vlo - arr[:, 3]), np.maximum(0, arr[:, 3] - vhi)
    J += rho * float(np.sum(sb ** 2 + sa ** 2))
    gx[:, 3] += 2 * rho * (sa - sb)
    # backward pass
    grad = 2 * p.effort_weight * u.copy()
    lam = gx[-1].copy()
    for k in range(N - 1, -1, -1):
        A, B = bicycle_jacobian(states[k], float(u[k, 0]), float(u[k, 1]), p.vehicle, p.dt)
        grad[k] += B.T @ lam
        lam = gx[k] + A.T @ lam
    return J, grad


def _project(p, u):
    return np.column_stack([np.clip(u[:, 0], *p.accel_bounds), np.clip(u[:, 1], *p.steer_bounds)])


def _entry_step(p, u):
    arr = np.array([s.as_array() for s in _rollout(p.start, u, p)])
    inside = p.in_goal(arr)
    return int(np.argmax(inside)) if inside.any() else p.horizon


def _refine(p: PlanProblem, u0, cost0):
    entry = max(1, _entry_step(p, u0))
    u, best_u, best_c = u0.copy(), None, cost0
    J, g = _penalised(p, u, entry)
    step = 0.5
    for _ in range(p.refine_iters):
        while step > 1e-6:
            cand = _project(p, u - step * g)
            Jc, gc = _penalised(p, cand, entry)
            if Jc < J:
                break
            step *= 0.5
        else:
            break
        u, J, g = cand, Jc, gc
        step *= 1.5
        states = _rollout(p.start, u, p)
        if check_trajectory(p, states, u):
            c = evaluate_cost(p, u)
            if c < best_c:
                best_u, best_c = u.copy(), c
    return best_u, best_c


def plan_trajectory(p: PlanProblem, refine: bool = True) -> Trajectory:
    """Lattice seed plus optional refinement; raises :class:`Infeasible`."""
    if p.obstacles and _min_clearance(p.start.as_array()[None, :3], p)[0] <= 0.0:
        raise ValueError("start state is in collision")
    # a coarse pass gives an incumbent whose cost bounds the fine search
    _, ub = _lattice_search(p, cell=4.0 * np.asarray(p.cell, dtype=float))
    seq, _ = _lattice_search(p, bound=ub)
    if seq is None:
        raise Infeasible("motion-primitive search exhausted without reaching the goal set")
    states = _rollout(p.start, seq, p)
    if not check_trajectory(p, states, seq):
        raise Infeasible("lattice seed failed the exact replay check")
    cost = evaluate_cost(p, seq)
    traj = Trajectory(states, np.asarray(seq, dtype=float), cost, p.dt, seed_cost=cost)
    if refine and p.refine_iters > 0:
        u, c = _refine(p, traj.inputs, cost)
        if u is not None:
            traj = Trajectory(_rollout(p.start, u, p), u, c, p.dt, seed_cost=cost, refined=True)
    return traj
