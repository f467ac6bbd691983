import json
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavstack.errors import DiscriminantNegative
from cavstack.maps import (
    Table1D, Table2D, default_maps, load_table_csv, power_balance_residual, save_table_csv,
)
from cavstack.models import (
    BatteryParams, BicycleState, Environment, RouteProfile, VehicleParams, battery_step,
    battery_step_array, bicycle_jacobian, bicycle_step, resistance_force,
)

VP = VehicleParams()
ENV = Environment()
BATT = BatteryParams()


# -- resistance -------------------------------------------------------------

def test_resistance_vanishes_at_rest_without_rolling():
    vp = VehicleParams(rolling_coeff=1e-12)
    assert resistance_force(0.0, 0.0, vp) == pytest.approx(0.0, abs=1e-7)


def test_resistance_rolling_only():
    vp = VehicleParams(mass=1500.0, rolling_coeff=0.01)
    assert resistance_force(0.0, 0.0, vp, Environment(gravity=9.81)) == pytest.approx(147.15, rel=1e-12)


def test_resistance_term_by_term():
    v, th = 30.0, 0.05
    grade = VP.mass * 9.81 * math.sin(th)
    roll = VP.mass * 9.81 * VP.rolling_coeff
    visc = VP.mass * 9.81 * VP.viscous_coeff * v
    aero = 0.5 * 1.225 * VP.frontal_area * VP.drag_coeff * v ** 2
    assert resistance_force(v, th, VP) == pytest.approx(grade + roll + visc + aero, rel=1e-12)


def test_resistance_drag_override():
    base = resistance_force(25.0, 0.0, VP)
    half = resistance_force(25.0, 0.0, VP, c_x=VP.drag_coeff / 2)
    assert base - half == pytest.approx(0.25 * 1.225 * VP.frontal_area * VP.drag_coeff * 625.0, rel=1e-12)


def test_resistance_monotone_in_speed():
    rng = np.random.default_rng(0)
    v = np.linspace(0.0, 60.0, 601)
    for _ in range(50):
        vp = VehicleParams(mass=float(rng.uniform(800, 40000)), frontal_area=float(rng.uniform(1.5, 10)),
                           drag_coeff=float(rng.uniform(0.2, 0.9)), rolling_coeff=float(rng.uniform(1e-3, 0.02)),
                           viscous_coeff=float(rng.uniform(1e-6, 1e-3)))
        f = resistance_force(v, float(rng.uniform(0, 0.1)), vp)
        assert np.all(np.diff(f) > 0)


def test_vehicle_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass=0.0)
    with pytest.raises(ValueError):
        VehicleParams(length=2.0, lf=1.3, lr=1.5)
    with pytest.raises(ValueError):
        Environment(gravity=0.0)
    with pytest.raises(ValueError):
        BatteryParams(e_min=5.0, e_max=5.0)


# -- battery ----------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(1e3, 1e8), st.floats(1e-3, 10.0), st.floats(1.0, 1e6), st.floats(1.0, 1e3),
       st.floats(1e-3, 100.0))
def test_zero_power_is_identity(e, r, q, a, dt):
    b = BatteryParams(ocv_fit=a, resistance=r, capacity=q, e_min=0.0, e_max=1e9)
    assert battery_step(e, 0.0, b, dt) == e
    assert battery_step_array(np.array([e]), np.array([0.0]), b, dt)[0] == e


def test_battery_sign_and_monotonicity():
    e = 20e6
    assert battery_step(e, 1000.0, BATT, 1.0) < e
    assert battery_step(e, -1000.0, BATT, 1.0) > e
    p = np.linspace(-80e3, 80e3, 321)
    for e0 in np.linspace(BATT.e_min, BATT.e_max, 9):
        nxt = [battery_step(float(e0), float(x), BATT, 1.0) for x in p]
        assert np.all(np.diff(nxt) < 0)


def test_battery_closed_form():
    # E' = E - T A/(R Q) (E - sqrt(E^2 - 2 R Q P E / A)), evaluated in decimal arithmetic
    from decimal import Decimal, getcontext
    getcontext().prec = 50
    A, R, Q = (Decimal(repr(x)) for x in (BATT.ocv_fit, BATT.resistance, BATT.capacity))
    for e, p, dt in [(20e6, 15e3, 1.0), (8e6, -30e3, 0.5), (30e6, 60e3, 10.0), (12e6, 1.0, 2.0)]:
        E, P, T = Decimal(repr(e)), Decimal(repr(p)), Decimal(repr(dt))
        ref = E - T * A / (R * Q) * (E - (E * E - 2 * R * Q * P * E / A).sqrt())
        assert battery_step(e, p, BATT, dt) == pytest.approx(float(ref), rel=1e-12)


def test_battery_array_matches_scalar():
    rng = np.random.default_rng(1)
    e = rng.uniform(BATT.e_min, BATT.e_max, 200)
    p = rng.uniform(-50e3, 50e3, 200)
    arr = battery_step_array(e, p, BATT, 1.0)
    for i in range(200):
        assert arr[i] == battery_step(float(e[i]), float(p[i]), BATT, 1.0)


def test_discriminant_negative():
    b = BatteryParams()
    p_max = b.ocv_fit * 1e6 / (2 * b.resistance * b.capacity)
    with pytest.raises(DiscriminantNegative):
        battery_step(1e6, 1.01 * p_max, b, 1.0)
    assert math.isnan(battery_step_array(1e6, 1.01 * p_max, b, 1.0))


# -- bicycle ----------------------------------------------------------------

def test_straight_line():
    x = BicycleState(1.0, 2.0, 0.0, 10.0)
    y = bicycle_step(x, 0.0, 0.0, VP, 0.1)
    assert (y.x, y.y, y.heading, y.speed) == (2.0, 2.0, 0.0, 10.0)
    z = bicycle_step(BicycleState(0.0, 0.0, 0.7, 5.0), 1.0, 0.0, VP, 0.2)
    assert z.heading == 0.7


def test_exact_stop_and_clamp():
    x = BicycleState(0.0, 0.0, 0.3, 6.0)
    assert bicycle_step(x, -6.0 / 0.5, 0.1, VP, 0.5).speed == 0.0
    assert bicycle_step(x, -100.0, 0.1, VP, 0.5).speed == 0.0
    with pytest.raises(ValueError):
        bicycle_step(x, 0.0, math.pi / 2, VP, 0.1)


def _fd_jacobian(x, a, d, dt):
    z = np.array([x.x, x.y, x.heading, x.speed, a, d])

    def f(z):
        s = bicycle_step(BicycleState(z[0], z[1], z[2], max(z[3], 0.0)), z[4], z[5], VP, dt)
        return np.array([s.x, s.y, s.heading, s.speed])

    J = np.zeros((4, 6))
    for j in range(6):
        h = 1e-6 * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        J[:, j] = (f(zp) - f(zm)) / (2 * h)
    return J


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        x = BicycleState(*rng.uniform(-50, 50, 2), float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(1, 30)))
        a, d = float(rng.uniform(-3, 3)), float(rng.uniform(-0.5, 0.5))
        dt = float(rng.uniform(0.05, 0.5))
        A, B = bicycle_jacobian(x, a, d, VP, dt)
        J = np.hstack([A, B])
        Jfd = _fd_jacobian(x, a, d, dt)
        rel = np.max(np.abs(J - Jfd)) / np.max(np.abs(J))
        worst = max(worst, rel)
    assert worst <= 1e-5


def _fit_circle(pts):
    """Algebraic least-squares circle: x^2 + y^2 + D x + E y + F = 0."""
    M = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    rhs = -(pts[:, 0] ** 2 + pts[:, 1] ** 2)
    D, E, F = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return math.sqrt(D * D / 4 + E * E / 4 - F)


@pytest.mark.parametrize("steer", [0.05, 0.15, 0.3, -0.4])
def test_constant_steer_arc_radius(steer):
    x = BicycleState(0.0, 0.0, 0.0, 8.0)
    pts = [(0.0, 0.0)]
    for _ in range(2000):
        x = bicycle_step(x, 0.0, steer, VP, 0.005)
        pts.append((x.x, x.y))
    kappa = VP.lr / (VP.lf + VP.lr)
    beta = math.atan(kappa * math.tan(steer))
    analytic = (VP.lf + VP.lr) / (abs(math.tan(steer)) * math.cos(beta))
    assert _fit_circle(np.array(pts)) == pytest.approx(analytic, rel=0.01)


# -- route ------------------------------------------------------------------

def test_route_profile_lookup():
    r = RouteProfile((0.0, 100.0, 300.0), (0.0, 0.02, 0.0), (10.0, 20.0, 20.0), (100.0, 200.0, 300.0))
    assert r.length == 300.0
    assert r.grade_at(50.0) == pytest.approx(0.01)
    assert r.speed_limit_at(99.9) == 10.0 and r.speed_limit_at(100.0) == 20.0
    assert r.aux_power_at(150.0) == 200.0
    with pytest.raises(ValueError):
        RouteProfile((0.0, 0.0), (0.0, 0.0), (10.0, 10.0))
    with pytest.raises(ValueError):
        RouteProfile((0.0, 1.0), (0.0, 0.0), (10.0, 0.0))


# -- maps -------------------------------------------------------------------

MAPS = default_maps()


def test_fuel_map_invariants():
    v = np.linspace(0, 45, 30)
    te = np.linspace(0, 190, 30)
    for g in range(1, MAPS.gear_count + 1):
        f = MAPS.fuel(g, 1, te[None, :], v[:, None])
        assert np.all(f >= 0)
        assert np.all(MAPS.fuel(g, 0, te[None, :], v[:, None]) == 0)
    lo, hi = MAPS.motor_bounds(v)
    assert np.all(lo <= hi)
    lo, hi = MAPS.engine_bounds(v)
    assert np.all(lo <= hi)


def test_power_balance_engine_decoupled_when_off():
    r_t, _ = power_balance_residual(2, 0, 0.0, 123.0, 10.0, 0.0, 0.0, MAPS, trans_torque=0.0)
    assert r_t == 0.0


def test_power_balance_consistent_inputs():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v, g = float(rng.uniform(1, 40)), int(rng.integers(1, MAPS.gear_count + 1))
        tt = float(MAPS.trans_torque(v, g))
        te = float(rng.uniform(0, 50))
        tm = tt - te
        pa = float(rng.uniform(0, 2000))
        pb = float(MAPS.motor(v, tm)) + pa
        r_t, r_p = power_balance_residual(g, 1, tm, te, v, pa, pb, MAPS)
        assert abs(r_t) < 1e-9 and abs(r_p) < 1e-6


def _bilinear(x, y, vals, qx, qy):
    """Plain-python bilinear lookup with clamping."""
    qx = min(max(qx, x[0]), x[-1])
    qy = min(max(qy, y[0]), y[-1])
    i = max(0, min(len(x) - 2, int(np.searchsorted(x, qx, side="right")) - 1))
    j = max(0, min(len(y) - 2, int(np.searchsorted(y, qy, side="right")) - 1))
    tx = (qx - x[i]) / (x[i + 1] - x[i])
    ty = (qy - y[j]) / (y[j + 1] - y[j])
    return ((1 - tx) * (1 - ty) * vals[i][j] + tx * (1 - ty) * vals[i + 1][j]
            + (1 - tx) * ty * vals[i][j + 1] + tx * ty * vals[i + 1][j + 1])


def test_power_balance_random_inputs():
    rng = np.random.default_rng(4)
    t = MAPS.motor_power
    for _ in range(100):
        v, g = float(rng.uniform(0, 50)), int(rng.integers(1, MAPS.gear_count + 1))
        tm, te = float(rng.uniform(-300, 300)), float(rng.uniform(0, 190))
        pa, pb = float(rng.uniform(0, 3000)), float(rng.uniform(-5e4, 5e4))
        s = int(rng.integers(0, 2))
        road = float(np.interp(v, MAPS.road_load.x, MAPS.road_load.values)) if v > 0 else 0.0
        tt = road * MAPS.wheel_radius / MAPS.gear_ratios[g - 1]
        r_t, r_p = power_balance_residual(g, s, tm, te, v, pa, pb, MAPS)
        assert r_t == pytest.approx(tt - tm - s * te, abs=1e-9)
        ref = pb - _bilinear(t.x.tolist(), t.y.tolist(), t.values.tolist(), v, tm) - pa
        assert r_p == pytest.approx(ref, rel=1e-9, abs=1e-6)


def test_table_csv_round_trip(tmp_path):
    t1 = Table1D(np.array([0.0, 1.5, 3.0]), np.array([1.0, -2.0, 0.1]), "v", "T")
    t2 = MAPS.fuel_power[1]
    save_table_csv(t1, tmp_path / "a.csv")
    save_table_csv(t2, tmp_path / "b.csv")
    a, b = load_table_csv(tmp_path / "a.csv"), load_table_csv(tmp_path / "b.csv")
    assert np.array_equal(a.x, t1.x) and np.array_equal(a.values, t1.values)
    assert np.array_equal(b.x, t2.x) and np.array_equal(b.y, t2.y) and np.array_equal(b.values, t2.values)
    assert (b.x_name, b.y_name) == (t2.x_name, t2.y_name)


def test_table_validation():
    with pytest.raises(ValueError):
        Table1D(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        Table2D(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.zeros((3, 2)))


def test_bundled_defaults_match_code_defaults():
    with (resources.files("cavstack") / "data" / "phev_defaults.json").open() as fh:
        d = json.load(fh)
    assert VehicleParams(**d["vehicle"]) == VehicleParams()
    assert Environment(**d["environment"]) == Environment()
    assert BatteryParams(**d["battery"]) == BatteryParams()
    m = default_maps(resolution=d["maps"]["resolution"], gear_ratios=tuple(d["maps"]["gear_ratios"]),
                     wheel_radius=d["maps"]["wheel_radius"])
    assert m.gear_ratios == MAPS.gear_ratios and m.wheel_radius == MAPS.wheel_radius
    assert np.array_equal(m.motor_power.values, MAPS.motor_power.values)
