import itertools

import numpy as np
import pytest

from cavstack.cacc import (
    CaccInput, CaccParams, CaccState, LeadForecast, SpacingPolicy, cacc_mpc_step,
    longitudinal_step, predict_lead, reference_gap, solve_cacc_ocp, terminal_safe_set,
)
from cavstack.errors import Infeasible
from cavstack.models import resistance_force

POL = SpacingPolicy()


def test_reference_gap_examples():
    assert reference_gap(SpacingPolicy("constant_distance", 10.0), 27.0) == 10.0
    assert reference_gap(SpacingPolicy("constant_headway", 5.0, 1.0), 20.0) == 25.0
    assert reference_gap(SpacingPolicy("constant_headway", 5.0, 1.0), 0.0) == 5.0
    with pytest.raises(ValueError):
        SpacingPolicy("constant_headway", 5.0, 0.0)


def test_terminal_set_trivial_cases():
    p = CaccParams()
    lead = LeadForecast.constant(20.0, 30, p.dt)
    assert terminal_safe_set(CaccState(1000.0, 30.0), lead, p, 0, POL)
    stopped = LeadForecast.static_obstacle(30, p.dt)
    assert not terminal_safe_set(CaccState(POL.hard_min, 5.0), stopped, p, 0, POL)


def enumerate_no_brake(x, lead, params, start, levels=3):
    """Does any quantized F_w sequence in [0, F_f(v)] with no braking stay safe?"""
    vp = lead.speeds()
    steps = lead.horizon - start
    for seq in itertools.product(range(levels), repeat=steps):
        s, ok = x, True
        for i, lv in zip(range(steps), seq):
            ff = max(float(resistance_force(s.speed, params.grade, params.vehicle)), 0.0)
            s = longitudinal_step(s, CaccInput(ff * lv / (levels - 1), 0.0), vp[start + i], params)
            if s.gap < POL.hard_min - 1e-9:
                ok = False
                break
        if ok:
            return True
    return False


def test_terminal_set_matches_enumeration():
    p = CaccParams()
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        acc = rng.uniform(-3, 1, n)
        v_lead = float(rng.uniform(0, 25))
        speeds = v_lead + p.dt * np.concatenate([[0], np.cumsum(acc)])
        acc = np.where(speeds[1:] < 0, 0.0, acc)  # keep the lead non-negative
        v_lead_ok = v_lead + p.dt * np.cumsum(acc)
        if np.any(v_lead_ok < 0):
            continue
        lead = LeadForecast(v_lead, tuple(acc), p.dt)
        x = CaccState(float(rng.uniform(POL.hard_min, 25)), float(rng.uniform(0, 25)))
        assert terminal_safe_set(x, lead, p, 0, POL) == enumerate_no_brake(x, lead, p, 0)


def enumerate_cacc(x, lead, params, policy):
    """Exhaustive search over net-acceleration level (plus coasting) sequences."""
    N, dt, m = params.horizon, params.dt, params.vehicle.mass
    w_a, w_v, w_d = params.weights
    vp = lead.speeds()
    acc = list(params.accel_levels()) + [None]
    best, firsts = np.inf, []
    for seq in itertools.product(range(len(acc)), repeat=N):
        s, cost, ok, first = x, 0.0, True, None
        for k, i in enumerate(seq):
            ff = float(resistance_force(s.speed, params.grade, params.vehicle))
            if acc[i] is None:
                v2 = max(0.0, s.speed - dt / m * ff) if s.speed > 0 else 0.0
            else:
                v2 = max(0.0, s.speed + dt * acc[i])
                a = (v2 - s.speed) / dt
                if not params.accel_bounds[0] - 1e-9 <= a <= params.accel_bounds[1] + 1e-9:
                    ok = False
                    break
            net = 0.0 if (s.speed <= 0 and v2 <= 0) else m * (v2 - s.speed) / dt + ff
            fw, fb = max(net, 0.0), max(-net, 0.0)
            if fw > params.wheel_force_bounds[1] + 1e-9 or fb > params.brake_force_max + 1e-9:
                ok = False
                break
            if first is None:
                first = (fw, fb)
            s2 = longitudinal_step(s, CaccInput(fw, fb), vp[k], params)
            if s2.gap < policy.hard_min - 1e-9 or s2.speed > params.speed_max + 1e-9:
                ok = False
                break
            a = (s2.speed - s.speed) / dt
            cost += (w_a * (m * a) ** 2 + params.brake_weight * fb ** 2 + w_v * (vp[k + 1] - s2.speed) ** 2
                     + w_d * (float(reference_gap(policy, s2.speed)) - s2.gap) ** 2)
            s = s2
        if not ok or not terminal_safe_set(s, lead, params, N, policy):
            continue
        tol = 1e-9 * max(1.0, cost)
        if cost < best - tol:
            best, firsts = cost, [first]
        elif cost <= best + tol:
            firsts.append(first)
    return best, firsts


def test_ocp_matches_enumeration():
    rng = np.random.default_rng(1)
    quantum_checked = 0
    for _ in range(15):
        p = CaccParams(horizon=4, accel_step=1.0, accel_bounds=(-3.0, 2.0), speed_bucket=0.0,
                       gap_bucket=0.0)
        nf = 10
        v_lead = float(rng.uniform(5, 25))
        acc = tuple(rng.uniform(-1, 1, nf))
        lead = LeadForecast(v_lead, acc, p.dt)
        x = CaccState(float(rng.uniform(6, 40)), float(rng.uniform(3, 28)))
        ref, firsts = enumerate_cacc(x, lead, p, POL)
        if not np.isfinite(ref):
            with pytest.raises(Infeasible):
                solve_cacc_ocp(x, lead, POL, p)
            continue
        sol = solve_cacc_ocp(x, lead, POL, p)
        assert sol.cost == pytest.approx(ref, rel=1e-9, abs=1e-9)
        u = sol.inputs[0]
        q = p.vehicle.mass * p.accel_step
        assert any(abs(u.wheel_force - fw) <= q + 1e-6 and abs(u.brake_force - fb) <= q + 1e-6
                   for fw, fb in firsts)
        quantum_checked += 1
    assert quantum_checked >= 8


def test_free_road_equilibrium():
    p = CaccParams()
    v = 20.0
    sol = solve_cacc_ocp(CaccState(0.0, v), None, POL, p, refs=[v] * p.horizon)
    ff = float(resistance_force(v, 0.0, p.vehicle))
    assert sol.cost == 0.0
    assert sol.inputs[0].wheel_force == pytest.approx(ff, rel=1e-12)
    assert sol.inputs[0].brake_force == 0.0
    res = cacc_mpc_step(CaccState(0.0, v), None, POL, p, refs=[v] * p.horizon)
    assert res.input == sol.inputs[0]


def test_static_obstacle_stops_short():
    p = CaccParams(horizon=10)
    v0 = 12.0
    a_max = -p.accel_bounds[0]
    d0 = POL.hard_min + v0 ** 2 / (2 * a_max) + 5.0
    lead = LeadForecast.static_obstacle(40, p.dt)
    sol = solve_cacc_ocp(CaccState(d0, v0), lead, POL, p)
    assert all(s.gap >= POL.hard_min for s in sol.states)
    # the witness coasting tail must stop before the obstacle
    assert terminal_safe_set(sol.states[-1], lead, p, p.horizon, POL)


def test_infeasible_falls_back_to_max_brake():
    p = CaccParams()
    lead = LeadForecast.static_obstacle(40, p.dt)
    res = cacc_mpc_step(CaccState(POL.hard_min + 0.5, 25.0), lead, POL, p)
    assert res.fallback
    assert res.input == CaccInput(0.0, p.brake_force_max)


def test_mpc_step_matches_first_input_and_is_deterministic():
    rng = np.random.default_rng(2)
    p = CaccParams(horizon=4)
    for _ in range(50):
        lead = LeadForecast(float(rng.uniform(5, 25)), tuple(rng.uniform(-0.5, 0.5, 20)), p.dt)
        x = CaccState(float(rng.uniform(10, 40)), float(rng.uniform(5, 25)))
        try:
            sol = solve_cacc_ocp(x, lead, POL, p)
        except Infeasible:
            continue
        a = cacc_mpc_step(x, lead, POL, p)
        b = cacc_mpc_step(x, lead, POL, p)
        assert a.input == b.input == sol.inputs[0]


def test_predict_lead_modes():
    acc = predict_lead("acc", 10.0, 1.0, None, 5, 0.5)
    assert np.all(acc.speeds() == 10.0)
    c = predict_lead("cacc", 1.0, -1.0, None, 5, 0.5)
    assert np.all(c.speeds() >= 0) and c.speeds()[-1] == 0.0
    f = predict_lead("cacc_forecast", 10.0, 0.0, [0.5] * 8, 5, 0.5)
    assert f.horizon == 5 and f.speeds()[-1] == pytest.approx(11.25)


def test_closed_loop_safety_random_episodes():
    rng = np.random.default_rng(3)
    p = CaccParams(horizon=4, accel_step=1.0)
    nf = 24
    for _ in range(200):
        steps = 12
        acc = rng.uniform(-1.5, 1.0, steps + nf)
        v = float(rng.uniform(8, 25))
        speeds = v + p.dt * np.concatenate([[0], np.cumsum(acc)])
        acc = np.where(speeds[1:] < 0, 0.0, acc)
        vl = np.maximum(v + p.dt * np.concatenate([[0], np.cumsum(acc)]), 0.0)
        acc = np.diff(vl) / p.dt
        x = CaccState(float(rng.uniform(15, 50)), float(rng.uniform(5, 25)))
        feasible = True
        for t in range(steps):
            res = cacc_mpc_step(x, LeadForecast(float(vl[t]), tuple(acc[t:t + nf]), p.dt), POL, p)
            if res.fallback:
                feasible = False
                break
            x = longitudinal_step(x, res.input, float(vl[t]), p)
            assert x.gap >= POL.hard_min - 1e-6
        if feasible:
            # recursive feasibility: lead followed its forecast, so no solve failed
            assert x.gap >= POL.hard_min - 1e-6
