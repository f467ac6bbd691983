import math

import numpy as np
import pytest

from cavstack.errors import Infeasible
from cavstack.models import BicycleState, VehicleParams, bicycle_step
from cavstack.motion_planner import (
    EgoFootprint, ObstaclePolytope, PlanProblem, evaluate_cost, load_trajectory_csv,
    plan_trajectory, signed_clearance,
)

VEH = VehicleParams()


# --- independent helpers -------------------------------------------------

def raster_distance(center, verts, spacing=0.005):
    """Distance from ``center`` to a convex polygon by dense boundary sampling;
    negative when the centre lies inside."""
    v0, v1 = verts, np.roll(verts, -1, axis=0)
    pts = []
    for a, b in zip(v0, v1):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        pts.append(a + np.linspace(0, 1, n)[:, None] * (b - a))
    pts = np.vstack(pts)
    d = float(np.min(np.linalg.norm(pts - center, axis=1)))
    cross = (v1[:, 0] - v0[:, 0]) * (center[1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (center[0] - v0[:, 0])
    inside = np.all(cross >= 0) or np.all(cross <= 0)
    return -d if inside else d


def raster_collides(states, obstacles, vehicle=VEH, cell=0.05, sub=10):
    """Dense check: vehicle rectangle sampled at ``T_s/10`` sub-steps against
    obstacle cells rasterised at ``cell`` resolution."""
    arr = np.array([s.as_array() for s in states])
    c0 = (vehicle.lf - vehicle.lr) / 2
    bx, by = np.meshgrid(np.linspace(-vehicle.length / 2, vehicle.length / 2, 47) + c0,
                         np.linspace(-vehicle.width / 2, vehicle.width / 2, 19))
    bx, by = bx.ravel(), by.ravel()
    for obs in obstacles:
        lo = obs.vertices.min(axis=0) - cell
        hi = obs.vertices.max(axis=0) + cell
        gx = np.arange(lo[0], hi[0] + cell, cell)
        gy = np.arange(lo[1], hi[1] + cell, cell)
        cx, cy = np.meshgrid(gx + cell / 2, gy + cell / 2, indexing="ij")
        occ = (np.all(np.column_stack([cx.ravel(), cy.ravel()]) @ obs.normals.T <= obs.offsets, axis=1)
               .reshape(cx.shape))
        for k in range(len(arr) - 1):
            for t in np.linspace(0, 1, sub + 1):
                x, y, psi = arr[k, :3] + t * (arr[k + 1, :3] - arr[k, :3])
                px = x + bx * math.cos(psi) - by * math.sin(psi)
                py = y + bx * math.sin(psi) + by * math.cos(psi)
                ix = np.floor((px - lo[0]) / cell).astype(int)
                iy = np.floor((py - lo[1]) / cell).astype(int)
                m = (ix >= 0) & (iy >= 0) & (ix < occ.shape[0]) & (iy < occ.shape[1])
                if np.any(occ[ix[m], iy[m]]):
                    return True
    return False


def box_clearance(x, y, psi, fp, box):
    """Clearance of the circle footprint to an axis-aligned box, vectorised."""
    xmin, ymin, xmax, ymax = box
    out = np.inf
    for o in fp.offsets:
        cx, cy = x + o * np.cos(psi), y + o * np.sin(psi)
        dx = np.maximum(np.maximum(xmin - cx, cx - xmax), 0.0)
        dy = np.maximum(np.maximum(ymin - cy, cy - ymax), 0.0)
        outside = np.hypot(dx, dy)
        inside = np.maximum(np.maximum(xmin - cx, cx - xmax), np.maximum(ymin - cy, cy - ymax))
        d = np.where((dx > 0) | (dy > 0), outside, inside)
        out = np.minimum(out, d - fp.radius)
    return out


def enumerate_primitives(p, box, accels, steers):
    """Exhaustive search over all held-primitive sequences of length N."""
    lr, lf = VEH.lr, VEH.lf
    prims = np.array([(a, d) for a in accels for d in steers])
    s = p.start.as_array()[None, :]
    cost = np.zeros(1)
    entered = np.zeros(1, dtype=bool)
    lo, hi = np.array(p.goal_low), np.array(p.goal_high)
    for _ in range(p.horizon):
        a = np.repeat(prims[None, :, 0], len(s), 0).ravel()
        d = np.repeat(prims[None, :, 1], len(s), 0).ravel()
        par = np.repeat(np.arange(len(s)), len(prims))
        x, y, psi, v = s[par].T
        beta = np.arctan(lr / (lr + lf) * np.tan(d))
        nxt = np.column_stack([x + p.dt * v * np.cos(psi + beta), y + p.dt * v * np.sin(psi + beta),
                               psi + p.dt * v / lr * np.sin(beta), np.maximum(0, v + p.dt * a)])
        ok = (nxt[:, 3] >= p.speed_bounds[0]) & (nxt[:, 3] <= p.speed_bounds[1])
        for t in np.linspace(0, 1, 11):
            q = s[par, :3] + t * (nxt[:, :3] - s[par, :3])
            ok &= box_clearance(q[:, 0], q[:, 1], q[:, 2], p.footprint, box) > p.margin
        c = cost[par] + np.where(entered[par], 0.0, p.time_weight * p.dt) + p.effort_weight * (a ** 2 + d ** 2)
        ent = entered[par] | np.all((nxt >= lo) & (nxt <= hi), axis=1)
        s, cost, entered = nxt[ok], c[ok], ent[ok]
    fin = np.all((s >= lo) & (s <= hi), axis=1)
    return float(cost[fin].min()) if fin.any() else np.inf


# --- geometry -------------------------------------------------------------

def small_disc(r=0.5):
    return EgoFootprint(np.array([0.0]), r, 0.2, 0.2)


def test_clearance_centre_inside_is_at_most_minus_radius():
    fp = small_disc()
    obs = ObstaclePolytope.box(-1, -1, 1, 1)
    assert signed_clearance(BicycleState(0.3, -0.2, 0.4, 1.0), fp, obs) <= -fp.radius


def test_clearance_two_radii_from_face():
    fp = small_disc(0.5)
    obs = ObstaclePolytope.box(-1, -1, 1, 1)
    assert signed_clearance(BicycleState(2.0, 0.0, 0.0, 1.0), fp, obs) == pytest.approx(0.5, abs=1e-12)


def test_clearance_matches_raster_oracle():
    rng = np.random.default_rng(0)
    fp = EgoFootprint.covering(VEH)
    for _ in range(40):
        # random convex polygon: halfspaces tangent to a circle
        ang = np.sort(rng.uniform(0, 2 * np.pi, int(rng.integers(3, 7))))
        ang = ang if np.max(np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))) < np.pi else np.linspace(0, 2 * np.pi, 5)[:-1]
        c, r = rng.uniform(-3, 3, 2), rng.uniform(0.5, 2.0)
        A = np.column_stack([np.cos(ang), np.sin(ang)])
        obs = ObstaclePolytope(A, A @ c + r)
        st = BicycleState(*rng.uniform(-6, 6, 2), rng.uniform(-np.pi, np.pi), 1.0)
        centres = fp.centers(st.x, st.y, st.heading).reshape(-1, 2)
        ref = min(raster_distance(q, obs.vertices) for q in centres) - fp.radius
        assert signed_clearance(st, fp, obs) == pytest.approx(ref, abs=0.01)


def test_polytope_validation():
    with pytest.raises(ValueError):  # unbounded
        ObstaclePolytope(np.array([[1, 0], [0, 1], [1, 1]], float), np.array([1, 1, 3], float))
    with pytest.raises(ValueError):  # empty
        ObstaclePolytope(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float), np.array([0, -1, 1, 1], float))


def test_footprint_must_cover_body():
    with pytest.raises(ValueError):
        EgoFootprint(np.array([0.0]), 0.5, 4.0, 1.8)
    fp = EgoFootprint.covering(VEH, 3)
    assert len(fp.offsets) == 3


# --- planning -------------------------------------------------------------

def straight_problem(**kw):
    base = dict(start=BicycleState(0, 0, 0, 5), goal_low=(18, -1, -0.2, 0), goal_high=(22, 1, 0.2, 15),
                horizon=8, dt=0.5)
    base.update(kw)
    return PlanProblem(**base)


def test_no_obstacles_drives_straight():
    tr = plan_trajectory(straight_problem())
    assert np.max(np.abs(tr.inputs[:, 1])) < 0.02


def test_blocked_corridor_is_infeasible():
    p = straight_problem(horizon=5, dt=0.8, obstacles=[ObstaclePolytope.box(8, -50, 10, 50)])
    with pytest.raises(Infeasible):
        plan_trajectory(p)


def test_single_square_within_five_percent_of_exhaustive():
    box = (7.0, -1.0, 9.0, 1.0)
    steers = (-0.4, 0.0, 0.4)
    accels = (-2.0, 0.0, 2.0)
    p = PlanProblem(BicycleState(0, 0, 0, 5), (14, -3, -0.5, 0), (19, 3, 0.5, 12), horizon=6, dt=0.6,
                    obstacles=[ObstaclePolytope.box(*box)], steer_bounds=(-0.4, 0.4),
                    accel_bounds=(-2.0, 2.0), steer_levels=3, accel_levels=3)
    ref = enumerate_primitives(p, box, accels, steers)
    assert np.isfinite(ref)
    tr = plan_trajectory(p)
    assert abs(tr.seed_cost - ref) <= 0.05 * ref
    assert tr.cost <= tr.seed_cost
    assert not raster_collides(tr.states, p.obstacles)


def test_trajectory_contract_and_replay(tmp_path):
    p = straight_problem(obstacles=[ObstaclePolytope.box(8, -1.5, 10, 1.5)], goal_low=(18, -2, -0.3, 0),
                         goal_high=(22, 2, 0.3, 15))
    tr = plan_trajectory(p)
    # bitwise replay
    s = p.start
    for k, (a, d) in enumerate(tr.inputs):
        s = bicycle_step(s, float(a), float(d), VEH, p.dt)
        assert s == tr.states[k + 1]
    arr = np.array([q.as_array() for q in tr.states])
    assert p.in_goal(arr[-1])
    assert np.all((tr.inputs[:, 0] >= p.accel_bounds[0]) & (tr.inputs[:, 0] <= p.accel_bounds[1]))
    assert np.all((tr.inputs[:, 1] >= p.steer_bounds[0]) & (tr.inputs[:, 1] <= p.steer_bounds[1]))
    assert np.all((arr[:, 3] >= p.speed_bounds[0]) & (arr[:, 3] <= p.speed_bounds[1]))
    assert all(signed_clearance(q, p.footprint, p.obstacles[0]) > p.margin for q in tr.states)
    assert tr.cost == evaluate_cost(p, tr.inputs)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    back = load_trajectory_csv(path)
    assert np.array_equal(back[:, 1:5], arr)
    assert np.array_equal(back[:-1, 5:], tr.inputs)
    assert np.all(np.isnan(back[-1, 5:]))


def test_larger_margin_never_cheaper():
    # exact lattice (no cell merging, no refinement): optimum over primitives
    obs = [ObstaclePolytope.box(7, -1.2, 9, 0.8)]
    costs = []
    for eps in (0.05, 0.1, 0.3, 0.6):
        p = PlanProblem(BicycleState(0, 0, 0, 5), (14, -3, -0.5, 0), (19, 3, 0.5, 12), horizon=5, dt=0.7,
                        obstacles=obs, steer_levels=3, accel_levels=3, margin=eps, cell=(0, 0, 0, 0))
        try:
            costs.append(plan_trajectory(p, refine=False).cost)
        except Infeasible:
            costs.append(np.inf)
    assert all(a <= b for a, b in zip(costs, costs[1:]))
    assert np.isfinite(costs[0])


def random_instance(rng):
    n_obs = int(rng.integers(0, 3))
    obstacles = []
    for _ in range(n_obs):
        cx, cy = rng.uniform(6, 12), rng.uniform(-3, 3)
        w, h = rng.uniform(0.5, 2.0, 2)
        obstacles.append(ObstaclePolytope.box(cx - w, cy - h, cx + w, cy + h))
    gx = rng.uniform(14, 20)
    return PlanProblem(BicycleState(0, rng.uniform(-1, 1), rng.uniform(-0.2, 0.2), rng.uniform(3, 7)),
                       (gx - 2, -3, -0.6, 0), (gx + 2, 3, 0.6, 12), horizon=5, dt=0.7,
                       obstacles=obstacles, steer_levels=5, accel_levels=3, refine_iters=10)


def test_random_instances_pass_dense_raster_check():
    rng = np.random.default_rng(11)
    solved = 0
    for _ in range(500):
        p = random_instance(rng)
        try:
            tr = plan_trajectory(p)
        except Infeasible:
            continue
        except ValueError:  # start placed inside an obstacle
            continue
        solved += 1
        assert not raster_collides(tr.states, p.obstacles)
    assert solved >= 250
