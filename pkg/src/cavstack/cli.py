"""Command-line entry point: ``cavstack <command> [options]``.

Exit status: 0 on success, 2 when the scenario is infeasible (no route, no
admissible plan), 1 on any other error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import sim
from .charge_planner import cdcs_baseline, plan_charge, synthetic_commute
from .eco_router import RoutingPolicy, compare_routes, load_graph_csv, save_route_csv
from .ecodrive import EcoDriveParams, chance_spec, monte_carlo_green, solve_ecodrive
from .errors import CavError, Infeasible, NoRoute, ScenarioError
from .models import Environment

DEFAULTS = {
    "route": "diamond_route",
    "plan-charge": "charge_commute",
    "ecodrive": "corridor3",
    "sim-cacc": "cacc_sinusoid",
    "sim-platoon": "platoon3",
    "sim-stack": "stack_diamond",
}
KIND_OK = {
    "route": {"route", "stack"},
    "plan-charge": {"charge"},
    "ecodrive": {"ecodrive", "stack"},
    "sim-cacc": {"cacc"},
    "sim-platoon": {"platoon"},
    "sim-stack": set(sim.KINDS),
}


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _finite(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _load(args, command, path=None) -> sim.Scenario:
    if path is None:
        path = args.scenario[0] if args.scenario else sim.bundled_scenario(DEFAULTS[command])
    sc = sim.load_scenario(path, args.config_override, args.seed)
    if sc.kind not in KIND_OK[command]:
        raise ScenarioError(f"{command} cannot run a {sc.kind!r} scenario")
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_route(args) -> int:
    sc = _load(args, "route")
    g = sc.section("graph")
    if not g:
        raise ScenarioError("route command needs a graph section")
    graph = load_graph_csv(sc.resolve(g["nodes"]), sc.resolve(g["edges"]))
    vehicle, env = sc.vehicle(), Environment()
    pol = sim._build(RoutingPolicy, sc.section("routing"), "routing", vehicle=vehicle, env=env)
    e0 = float(sc.section("battery").get("e0", 20e6))
    c = compare_routes(graph, g["origin"], g["destination"], e0, pol)
    out = _out(args)
    summary = {}
    for name, r in (("eco", c.eco), ("shortest", c.shortest)):
        summary[name] = {"nodes": r.nodes, "length_m": r.length, "cost_J": r.cost, "fuel_J": r.fuel,
                         "battery_used_J": r.battery_used}
    summary["extra_length_m"] = c.extra_length
    summary["cost_saving_J"] = c.cost_saving
    if args.format == "csv":
        save_route_csv(c.eco, graph, out / "eco_route.csv")
        save_route_csv(c.shortest, graph, out / "shortest_route.csv")
    else:
        series = {}
        for name, r in (("eco", c.eco), ("shortest", c.shortest)):
            dist = np.concatenate([[0.0], np.cumsum([graph.edge(u, v).length for u, v in zip(r.nodes, r.nodes[1:])])])
            series[name] = (dist, r.battery)
        (out / "routes.svg").write_text(sim.svg_plot([("distance [m]", "battery energy [J]", series)]))
    _write_json(out / "route_summary.json", summary)
    print(f"eco route {'-'.join(c.eco.nodes)}: {c.eco.length:.0f} m, {c.eco.cost:.6g} J")
    print(f"shortest route {'-'.join(c.shortest.nodes)}: {c.shortest.length:.0f} m, {c.shortest.cost:.6g} J")
    return 0


def _plan_csv(plan, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "s", "E_star", "P_b", "P_f", "gear", "T_m", "T_e"])
        n = len(plan.battery_powers)
        for k in range(n + 1):
            row = [k, repr(float(k * plan.dt)), repr(float(plan.positions[k])), repr(float(plan.energies[k]))]
            if k < n:
                row += [repr(float(plan.battery_powers[k])), repr(float(plan.fuel_powers[k])), int(plan.gears[k]),
                        repr(float(plan.motor_torques[k])), repr(float(plan.engine_torques[k]))]
            else:
                row += [""] * 5
            w.writerow(row)


def cmd_plan_charge(args) -> int:
    sc = _load(args, "plan-charge")
    vehicle = sc.vehicle()
    layer = sim._EnergyLayer(sc, vehicle, Environment())
    c = dict(sc.section("commute"))
    dt = float(c.pop("dt", 10.0))
    fc = synthetic_commute(int(c.pop("seed", sc.seed)), int(c.pop("n_steps", 30)), vehicle, dt, **c)
    fc = type(fc)(fc.dt, fc.speeds, (layer.aux,) * fc.horizon, fc.wheel_forces)
    args_ = (layer.e0, fc, layer.weights, layer.floor, layer.maps, layer.battery)
    plan = plan_charge(*args_)
    base = cdcs_baseline(*args_)
    out = _out(args)
    if args.format == "csv":
        _plan_csv(plan, out / "charge_plan.csv")
        _plan_csv(base, out / "cdcs_plan.csv")
    else:
        panel = ("position [m]", "battery energy [J]",
                 {"plan": (plan.positions, plan.energies), "cdcs": (base.positions, base.energies)})
        (out / "charge_plan.svg").write_text(sim.svg_plot([panel]))
    _write_json(out / "charge_summary.json", {"plan_cost": plan.cost, "cdcs_cost": base.cost,
                                               "saving": base.cost - plan.cost, "steps": fc.horizon})
    print(f"planned cost {plan.cost:.6g} J, charge-depleting/sustaining baseline {base.cost:.6g} J")
    return 0


def cmd_ecodrive(args) -> int:
    sc = _load(args, "ecodrive")
    vehicle, env = sc.vehicle(), Environment()
    route, _ = sim._route(sc, vehicle, env, float(sc.section("battery").get("e0", 20e6)))
    signals = sim._signals(sc)
    ecfg = dict(sc.section("ecodrive"))
    v0 = float(ecfg.pop("initial_speed"))
    budget = float(ecfg.pop("time_budget"))
    ecfg.pop("eta", None)
    params = sim._build(EcoDriveParams, ecfg, "ecodrive", vehicle=vehicle, env=env)
    etas = [None] + [float(e) for e in sc.data.get("etas", [])]
    draws = int(sc.data.get("mc_draws", 10_000))
    out = _out(args)
    summary, panel = {}, {}
    for eta in etas:
        label = "deterministic" if eta is None else f"eta_{eta:g}"
        chance = None if eta is None else chance_spec(signals, eta)
        sol = solve_ecodrive(route, signals, chance, params, v0, budget)
        entry = {"cost_J": sol.cost, "margins_s": sol.margins.tolist(), "travel_time_s": float(sol.times[-1])}
        if all(s.samples for s in signals):
            per, joint = monte_carlo_green(sol, draws, sc.seed)
            entry["green_frequency"] = per.tolist()
            entry["joint_green_frequency"] = joint
        summary[label] = entry
        panel[label] = (sol.times, sol.positions)
        if args.format == "csv":
            sol.to_csv(out / f"ecodrive_{label}.csv")
        print(f"{label}: cost {sol.cost:.6g} J, margins {np.round(sol.margins, 3).tolist()}")
    if args.format != "csv":
        horizon = max(float(x[0][-1]) for x in panel.values())
        for sig in signals:
            # each red phase is a horizontal segment at the stop line
            c0, j = -sig.phase0, 0
            while c0 < horizon:
                if c0 + sig.red > 0:
                    panel[f"red@{sig.position:g}#{j}"] = ([max(c0, 0.0), min(c0 + sig.red, horizon)],
                                                         [sig.position, sig.position])
                    j += 1
                c0 += sig.cycle
        (out / "ecodrive.svg").write_text(sim.svg_plot([("time [s]", "position [m]", panel)]))
    _write_json(out / "ecodrive_summary.json", summary)
    return 0


def _emit_episode(trace, args, stem):
    out = _out(args)
    paths = sim.emit(trace, out, args.format, stem)
    info = {k: _finite(v) for k, v in trace.info.items()
            if isinstance(v, (int, float, str, bool, list)) or v is None}
    if info:
        _write_json(out / f"{stem}_info.json", info)
    m = trace.metrics
    print(f"{stem}: {len(trace)} records, fuel {m['fuel_J']:.6g} J, battery {m['battery_J']:.6g} J, "
          f"min gap {m['min_gap']:.4g} m, braking {m['braking_J']:.6g} J, violations {m['violations']}")
    return paths


def _simulate(args, command) -> int:
    paths = args.scenario or [None]
    scs = [_load(args, command, p) for p in paths]
    traces = sim.run_batch(scs, args.threads)
    for p, tr in zip(paths, traces):
        stem = "trace" if len(paths) == 1 else Path(p).stem
        _emit_episode(tr, args, stem)
    return 0


def cmd_sim_cacc(args) -> int:
    return _simulate(args, "sim-cacc")


def cmd_sim_platoon(args) -> int:
    return _simulate(args, "sim-platoon")


def cmd_sim_stack(args) -> int:
    return _simulate(args, "sim-stack")


# ---------------------------------------------------------------------------
# validate: bundled regression scenarios

def _check_cacc():
    sc = sim.load_scenario(sim.bundled_scenario("cacc_sinusoid"))
    chk = sc.data["checks"]
    t0 = time.perf_counter()
    tr = sim.run_closed_loop(sc)
    dt = time.perf_counter() - t0
    frac = sim.braking_fraction(tr, chk["periodic_from"])
    hard = tr.info["hard_min"]
    yield "cacc min gap", tr.metrics["min_gap"] >= hard - 1e-9, f"{tr.metrics['min_gap']:.3f} m >= {hard} m"
    yield "cacc periodic braking", frac < chk["braking_fraction_max"], f"{frac:.2e} of traction"
    yield "cacc runtime", dt < chk["runtime_max"], f"{dt:.2f} s"


def _check_ecodrive():
    sc = sim.load_scenario(sim.bundled_scenario("corridor3"))
    route, _ = sim._route(sc, sc.vehicle(), Environment(), 0.0)
    signals = sim._signals(sc)
    e = dict(sc.section("ecodrive"))
    v0, budget = e.pop("initial_speed"), e.pop("time_budget")
    params = sim._build(EcoDriveParams, e, "ecodrive")
    det = solve_ecodrive(route, signals, None, params, v0, budget)
    prev, ok_freq, ok_mono, ok_det = None, True, True, True
    for eta in sorted(sc.data["etas"], reverse=True):
        sol = solve_ecodrive(route, signals, chance_spec(signals, eta), params, v0, budget)
        per, _ = monte_carlo_green(sol, 10_000, sc.seed)
        ok_freq &= bool(np.all(per >= 1 - eta - 0.02))
        if prev is not None:
            ok_mono &= bool(np.all(sol.margins >= prev - 1e-9))
        ok_det &= bool(np.all(det.margins < sol.margins))
        prev = sol.margins
    yield "ecodrive green frequency", ok_freq, "per intersection >= 1 - eta - 0.02"
    yield "ecodrive margins monotone", ok_mono, "non-decreasing as eta decreases"
    yield "ecodrive deterministic margin", ok_det, "below every robust margin"


def _check_route():
    sc = sim.load_scenario(sim.bundled_scenario("diamond_route"))
    g = sc.section("graph")
    graph = load_graph_csv(sc.resolve(g["nodes"]), sc.resolve(g["edges"]))
    c = compare_routes(graph, g["origin"], g["destination"], float(sc.section("battery")["e0"]))
    yield ("eco route longer and cheaper", c.eco.length > c.shortest.length and c.eco.cost < c.shortest.cost,
           f"+{c.extra_length:.0f} m, -{c.cost_saving:.4g} J")


def _check_platoon():
    sc = sim.load_scenario(sim.bundled_scenario("platoon3"))
    tr = sim.run_closed_loop(sc)
    d_min = sim._platoon_params(sc).coupling.d_min
    yield "platoon gaps", tr.metrics["min_gap"] >= d_min - 1e-9, f"min {tr.metrics['min_gap']:.2f} m"
    yield ("platoon energy", tr.info["coordinated_J"] <= tr.info["independent_J"] + 1e-6,
           f"{tr.info['coordinated_J']:.4g} J vs {tr.info['independent_J']:.4g} J")
    yield "platoon window", tr.info["window"] >= sc.data["checks"]["window_min"], f"{tr.info['window']:.0%} of trip"


CHECKS = {"cacc": _check_cacc, "ecodrive": _check_ecodrive, "route": _check_route, "platoon": _check_platoon}


def cmd_validate(args) -> int:
    names = args.only or list(CHECKS)
    failed = 0
    for name in names:
        for label, ok, detail in CHECKS[name]():
            print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
            failed += not ok
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavstack", description="Planning and control stack for connected vehicles.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        sp.add_argument("--scenario", action="append" if multi else None, default=None,
                        help="scenario JSON (default: the bundled one)" + ("; repeatable" if multi else ""))
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--format", choices=("csv", "svg"), default="csv")
        sp.add_argument("--config-override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted scenario key, e.g. cacc.horizon=4; repeatable")

    commands = (
        ("route", cmd_route, False, "energy-optimal vs shortest route on a road graph"),
        ("plan-charge", cmd_plan_charge, False, "trip battery plan vs deplete-then-sustain"),
        ("ecodrive", cmd_ecodrive, False, "speed plan through signals, nominal and chance-constrained"),
        ("sim-cacc", cmd_sim_cacc, True, "closed-loop car following"),
        ("sim-platoon", cmd_sim_platoon, True, "coordinated multi-vehicle platoon"),
        ("sim-stack", cmd_sim_stack, True, "route, speed plan, following and powertrain together"),
    )
    for name, fn, multi, text in commands:
        sp = sub.add_parser(name, help=text)
        common(sp, multi)
        if multi:
            sp.add_argument("--threads", type=int, default=1, help="episodes run concurrently")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("validate", help="run the bundled regression scenarios")
    sp.add_argument("--only", action="append", choices=sorted(CHECKS))
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are errors (1); status 2 is reserved for infeasible scenarios
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "scenario", None) is not None and not isinstance(args.scenario, list):
        args.scenario = [args.scenario]
    try:
        return args.func(args)
    except (Infeasible, NoRoute) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (CavError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
