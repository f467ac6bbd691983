"""Scenario files, closed-loop episodes and trace output.

A scenario is a JSON document with a ``schema_version`` and a ``kind``.  The
kind selects how the episode is driven:

``script``    ego speed follows a script; optional energy layers run on top
``charge``    like ``script`` but the speed script is a synthetic commute
``cacc``      ego follows a scripted lead vehicle under receding-horizon CACC
``platoon``   several vehicles coordinate over a whole trip
``route`` / ``ecodrive`` / ``stack``
              ego drives a route (from a road graph or a profile); remote
              plans are computed first and the on-board loops track them

Every episode yields an :class:`EpisodeTrace`: one record per vehicle per
step on a uniform time grid, plus episode metrics that are a pure function
of the records.  Solver failures inside the loop are recorded as flagged
steps rather than raised.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .cacc import CaccParams, CaccState, SpacingPolicy, cacc_mpc_step, longitudinal_step, predict_lead
from .charge_planner import plan_charge, synthetic_commute
from .eco_router import RoutingPolicy, load_graph_csv, shortest_distance_path, shortest_energy_path
from .ecodrive import EcoDriveParams, SignalTiming, chance_spec, crossing_phase, load_samples_csv, solve_ecodrive
from .errors import CavError, ScenarioError
from .maps import default_maps
from .models import BatteryParams, Environment, RouteProfile, VehicleParams, battery_step, resistance_force
from .platoon import DragCoupling, PlatoonAgent, PlatoonParams, TopologyConfig, platoon_window, run_platoon
from .powertrain_mpc import (
    EnergyWeights, PowertrainForecast, PowertrainMPCConfig, PowertrainState, TerminalCharge, mpc_step,
)

__all__ = [
    "SCHEMA_VERSION",
    "Scenario",
    "EpisodeTrace",
    "FLAG_SOLVER",
    "FLAG_GAP",
    "FLAG_SIGNAL",
    "FLAG_BATTERY",
    "load_scenario",
    "bundled_scenario",
    "apply_override",
    "episode_metrics",
    "run_closed_loop",
    "run_batch",
    "emit",
    "read_trace_csv",
    "braking_fraction",
    "svg_plot",
]

SCHEMA_VERSION = 1
KINDS = ("script", "charge", "cacc", "platoon", "route", "ecodrive", "stack")
LAYERS = ("eco_router", "ecodrive", "charge_planner", "cacc", "powertrain_mpc", "platoon")
DEFAULT_CONTROLLERS = {
    "script": (),
    "charge": ("charge_planner", "powertrain_mpc"),
    "cacc": ("cacc",),
    "platoon": ("platoon",),
    "route": ("eco_router", "cacc"),
    "ecodrive": ("ecodrive", "cacc"),
    "stack": ("eco_router", "ecodrive", "charge_planner", "cacc", "powertrain_mpc"),
}
ALLOWED = {
    "script": {"charge_planner", "powertrain_mpc"},
    "charge": {"charge_planner", "powertrain_mpc"},
    "cacc": {"cacc"},
    "platoon": {"platoon"},
}
for _k in ("route", "ecodrive", "stack"):
    ALLOWED[_k] = {"eco_router", "ecodrive", "charge_planner", "cacc", "powertrain_mpc"}

# record flags (bit mask)
FLAG_SOLVER = 1     # a controller fell back or a solver failed
FLAG_GAP = 2        # gap below the hard minimum
FLAG_SIGNAL = 4     # signal crossed during red
FLAG_BATTERY = 8    # battery power not deliverable

COLUMNS = ("t", "agent", "s", "v", "d", "F_w", "F_b", "E_q", "P_f", "flag")
FLOAT_COLUMNS = ("t", "s", "v", "d", "F_w", "F_b", "E_q", "P_f")


# ---------------------------------------------------------------------------
# scenarios

def _data_dir():
    return resources.files("cavstack") / "data"


@dataclass
class Scenario:
    kind: str
    data: dict
    base: Path | None = None
    seed: int = 0
    controllers: tuple = ()

    def resolve(self, name: str) -> Path:
        """Referenced file: absolute, next to the scenario, then bundled data."""
        cands = [Path(name)] if Path(name).is_absolute() else []
        if self.base is not None:
            cands.append(self.base / name)
        cands.append(Path(str(_data_dir() / name)))
        for c in cands:
            if c.is_file():
                return c
        raise ScenarioError(f"referenced file {name!r} not found")

    def section(self, key, default=None) -> dict:
        out = self.data.get(key, {} if default is None else default)
        if not isinstance(out, dict):
            raise ScenarioError(f"section {key!r} must be an object")
        return out

    def vehicle(self, spec=None) -> VehicleParams:
        spec = self.data.get("vehicle") if spec is None else spec
        if spec is None:
            return VehicleParams()
        if isinstance(spec, str):
            name, _, key = spec.partition("#")
            with self.resolve(name).open() as fh:
                table = json.load(fh)
            if key:
                if key not in table:
                    raise ScenarioError(f"vehicle {key!r} not defined in {name}")
                table = table[key]
            spec = table
        return _build(VehicleParams, spec, "vehicle")


def _build(cls, cfg: dict, what: str, **extra):
    names = {f.name for f in fields(cls)}
    bad = set(cfg) - names
    if bad:
        raise ScenarioError(f"unknown {what} keys: {sorted(bad)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()}
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid {what}: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, item: str) -> dict:
    """Set a dotted key, e.g. ``cacc.horizon=4``; the value is parsed as JSON
    when possible.  List elements are addressed by index."""
    key, sep, text = item.partition("=")
    if not sep or not key:
        raise ScenarioError(f"override {item!r} is not of the form key=value")
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError) as exc:
                raise ScenarioError(f"override {item!r}: bad list index {p!r}") from exc
        else:
            node = node.setdefault(p, {})
        if not isinstance(node, (dict, list)):
            raise ScenarioError(f"override {item!r}: {p!r} is not a section")
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = _parse_value(text)
        except (ValueError, IndexError) as exc:
            raise ScenarioError(f"override {item!r}: bad list index {last!r}") from exc
    else:
        node[last] = _parse_value(text)
    return data


def load_scenario(source, overrides=(), seed: int | None = None) -> Scenario:
    """Read and check a scenario (path or already-parsed dict).

    Raises :class:`ScenarioError` for unknown versions or kinds, bad
    controller lists and unresolvable file references.
    """
    base = None
    if isinstance(source, dict):
        data = deepcopy(source)
    else:
        path = Path(source)
        try:
            with path.open() as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
        base = path.resolve().parent
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for item in overrides:
        apply_override(data, item)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {data.get('schema_version')!r}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ScenarioError(f"unknown scenario kind {kind!r}")
    ctrl = tuple(data.get("controllers", DEFAULT_CONTROLLERS[kind]))
    unknown = set(ctrl) - set(LAYERS)
    if unknown:
        raise ScenarioError(f"unknown controllers {sorted(unknown)}")
    if set(ctrl) - ALLOWED[kind]:
        raise ScenarioError(f"controllers {sorted(set(ctrl) - ALLOWED[kind])} cannot run in a {kind} scenario")
    if kind in ("route", "ecodrive", "stack") and "cacc" not in ctrl:
        raise ScenarioError("route-following scenarios need the cacc layer")
    if seed is None:
        seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed must be a non-negative integer")
    sc = Scenario(kind, data, base, seed, ctrl)
    _check_refs(sc)
    return sc


def _check_refs(sc: Scenario):
    specs = [sc.data.get("vehicle")] + [a.get("vehicle") for a in sc.data.get("agents", [])
                                        if isinstance(a, dict)]
    for spec in specs:
        if spec is not None:
            sc.vehicle(spec)
    for key in ("samples_csv",):
        if key in sc.data:
            sc.resolve(sc.data[key])
    if "graph" in sc.data:
        g = sc.section("graph")
        for key in ("nodes", "edges"):
            if key not in g:
                raise ScenarioError(f"graph section needs {key!r}")
            sc.resolve(g[key])


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (``name`` without suffix)."""
    p = Path(str(_data_dir() / f"{name}.json"))
    if not p.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return p


# ---------------------------------------------------------------------------
# traces

@dataclass
class EpisodeTrace:
    """Per-step records (columns of equal length) and episode metrics.

    Each vehicle's rows are consecutive and uniformly spaced by ``dt``.  A
    row holds the state at ``t`` and the input applied over the following
    step; the last row of a vehicle is its final state (inputs NaN).
    """

    dt: float
    records: dict
    metrics: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = {len(self.records[c]) for c in COLUMNS}
        if len(n) != 1:
            raise ValueError("record columns differ in length")
        if not self.metrics:
            self.metrics = episode_metrics(self.records, self.dt)

    def __len__(self):
        return len(self.records["t"])

    def column(self, name, agent=None) -> np.ndarray:
        col = self.records[name]
        if agent is None:
            return np.asarray(col)
        mask = np.asarray(self.records["agent"]) == agent
        return np.asarray(col)[mask]

    @property
    def agents(self) -> list:
        return list(dict.fromkeys(self.records["agent"]))

    def same_as(self, other: "EpisodeTrace") -> bool:
        """Bitwise equality of records (NaN equal to NaN) and metrics."""
        if list(self.records["agent"]) != list(other.records["agent"]):
            return False
        for c in FLOAT_COLUMNS + ("flag",):
            a = np.asarray(self.records[c])
            b = np.asarray(other.records[c])
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return _same_metrics(self.metrics, other.metrics)


def _same_metrics(a, b):
    if a.keys() != b.keys():
        return False
    return all(np.asarray(a[k], dtype=float).tobytes() == np.asarray(b[k], dtype=float).tobytes() for k in a)


class _Recorder:
    def __init__(self):
        self.rows = {c: [] for c in COLUMNS}

    def add(self, t, agent, s, v, d=math.nan, fw=math.nan, fb=math.nan, e=math.nan, pf=math.nan, flag=0):
        for c, x in zip(COLUMNS, (t, agent, s, v, d, fw, fb, e, pf, flag)):
            self.rows[c].append(x)

    def trace(self, dt, info=None) -> EpisodeTrace:
        rec = {c: np.array(self.rows[c], dtype=float) for c in FLOAT_COLUMNS}
        rec["agent"] = [str(a) for a in self.rows["agent"]]
        rec["flag"] = np.array(self.rows["flag"], dtype=np.int64)
        return EpisodeTrace(float(dt), rec, info=info or {})


def _fsum_finite(x):
    x = np.asarray(x, dtype=float)
    return math.fsum(x[np.isfinite(x)].tolist())


def episode_metrics(records: dict, dt: float) -> dict:
    """Metrics as a pure function of the records.

    fuel_J       sum of fuel power times dt
    battery_J    net battery energy drawn (first minus last E_q per vehicle)
    traction_J   sum of F_w v dt;  braking_J: sum of F_b v dt
    min_gap      smallest recorded gap (inf when no gap is tracked)
    violations   number of flagged rows
    """
    v = np.asarray(records["v"], dtype=float)
    d = np.asarray(records["d"], dtype=float)
    eq = np.asarray(records["E_q"], dtype=float)
    agents = np.asarray(records["agent"], dtype=object)
    drawn = []
    for a in dict.fromkeys(records["agent"]):
        e = eq[agents == a]
        e = e[np.isfinite(e)]
        if e.size:
            drawn.append(float(e[0] - e[-1]))
    dg = d[np.isfinite(d)]
    return {
        "fuel_J": _fsum_finite(np.asarray(records["P_f"], dtype=float) * dt),
        "battery_J": math.fsum(drawn),
        "traction_J": _fsum_finite(np.asarray(records["F_w"], dtype=float) * v * dt),
        "braking_J": _fsum_finite(np.asarray(records["F_b"], dtype=float) * v * dt),
        "min_gap": float(dg.min()) if dg.size else math.inf,
        "violations": int(np.count_nonzero(np.asarray(records["flag"]))),
    }


def braking_fraction(trace: EpisodeTrace, t_from: float = -math.inf, agent=None) -> float:
    """Friction braking energy over traction energy for rows with ``t >= t_from``."""
    t = trace.column("t", agent)
    m = t >= t_from
    v = trace.column("v", agent)[m]
    brk = _fsum_finite(trace.column("F_b", agent)[m] * v)
    trac = _fsum_finite(trace.column("F_w", agent)[m] * v)
    return brk / trac if trac > 0 else (0.0 if brk == 0 else math.inf)


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(trace: EpisodeTrace, path: Path):
    r = trace.records
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(len(trace)):
            w.writerow([_fmt(r["t"][i]), r["agent"][i]] + [_fmt(r[c][i]) for c in FLOAT_COLUMNS[1:]]
                       + [int(r["flag"][i])])


def read_trace_csv(path, dt: float | None = None) -> EpisodeTrace:
    """Parse a trace written by :func:`emit`.  ``dt`` defaults to the spacing
    of the first vehicle's rows (NaN for a single row)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ValueError("not a trace CSV (header mismatch)")
    body = rows[1:]
    rec = {c: np.array([float(r[i]) for r in body], dtype=float)
           for i, c in enumerate(COLUMNS) if c in FLOAT_COLUMNS}
    rec["agent"] = [r[1] for r in body]
    rec["flag"] = np.array([int(r[9]) for r in body], dtype=np.int64)
    if dt is None:
        same = [i for i, a in enumerate(rec["agent"]) if body and a == rec["agent"][0]]
        dt = float(rec["t"][same[1]] - rec["t"][same[0]]) if len(same) > 1 else math.nan
    return EpisodeTrace(dt, rec)


# ---------------------------------------------------------------------------
# SVG summary

_PANEL_W, _PANEL_H, _PAD_L, _PAD_R, _PAD_T, _PAD_B = 640, 200, 70, 20, 30, 45
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_LABELS = {"d": "gap [m]", "v": "speed [m/s]", "E_q": "battery energy [J]", "s": "position [m]",
           "P_f": "fuel power [W]", "F_w": "wheel force [N]", "F_b": "brake force [N]", "t": "time [s]"}


def _ticks(lo, hi, n=5):
    if not hi > lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def svg_plot(panels) -> str:
    """Stacked line plots.  Each panel is ``(xlabel, ylabel, series)`` with
    ``series`` a mapping name -> (x, y); every series becomes one polyline."""
    h = len(panels) * (_PANEL_H + _PAD_T + _PAD_B)
    w = _PANEL_W + _PAD_L + _PAD_R
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    for p, (xlabel, ylabel, series) in enumerate(panels):
        top = p * (_PANEL_H + _PAD_T + _PAD_B) + _PAD_T
        clean = []
        for name, (xs, ys) in series.items():
            xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
            ok = np.isfinite(xs) & np.isfinite(ys)
            clean.append((name, xs[ok], ys[ok]))
        allx = np.concatenate([c[1] for c in clean]) if clean else np.zeros(0)
        ally = np.concatenate([c[2] for c in clean]) if clean else np.zeros(0)
        x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
        y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5

        def px(v):
            return _PAD_L + (v - x0) / (x1 - x0) * _PANEL_W

        def py(v):
            return top + _PANEL_H - (v - y0) / (y1 - y0) * _PANEL_H

        out.append('<g class="panel">')
        out.append(f'<rect x="{_PAD_L}" y="{top}" width="{_PANEL_W}" height="{_PANEL_H}" '
                   'fill="none" stroke="#444"/>')
        for tv in _ticks(x0, x1):
            out.append(f'<text x="{px(tv):.1f}" y="{top + _PANEL_H + 15}" font-size="10" '
                       f'text-anchor="middle">{tv:.4g}</text>')
        for tv in _ticks(y0, y1):
            out.append(f'<text x="{_PAD_L - 5}" y="{py(tv) + 3:.1f}" font-size="10" '
                       f'text-anchor="end">{tv:.4g}</text>')
        out.append(f'<text class="xlabel" x="{_PAD_L + _PANEL_W / 2}" y="{top + _PANEL_H + 35}" '
                   f'font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
        cy = top + _PANEL_H / 2
        out.append(f'<text class="ylabel" x="15" y="{cy}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 15 {cy})">{escape(ylabel)}</text>')
        for j, (name, xs, ys) in enumerate(clean):
            if xs.size == 0:
                continue
            pts = " ".join(f"{px(u):.2f},{py(v):.2f}" for u, v in zip(xs, ys))
            out.append(f'<polyline data-series="{escape(str(name))}" fill="none" '
                       f'stroke="{_COLOURS[j % len(_COLOURS)]}" stroke-width="1.2" points="{pts}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _trace_panels(trace: EpisodeTrace, columns, x="t"):
    return [(_LABELS.get(x, x), _LABELS.get(c, c),
             {f"{c}:{a}": (trace.column(x, a), trace.column(c, a)) for a in trace.agents})
            for c in columns]


def _default_panels(trace: EpisodeTrace):
    panels = []
    if np.isfinite(trace.records["d"]).any():
        panels.append("d")
    panels.append("v")
    if np.isfinite(trace.records["E_q"]).any():
        panels.append("E_q")
    return panels


def emit(trace: EpisodeTrace, out, fmt: str = "csv", stem: str = "trace", panels=None, x: str = "t") -> list:
    """Write the trace as ``<stem>.csv`` or an SVG summary ``<stem>.svg``
    (one polyline per vehicle and panel) into directory ``out``; the
    metrics always go to ``<stem>_metrics.json``.  Returns written paths."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt == "csv":
        p = out / f"{stem}.csv"
        _write_csv(trace, p)
    elif fmt in ("svg", "svg-summary"):
        p = out / f"{stem}.svg"
        p.write_text(svg_plot(_trace_panels(trace, panels or _default_panels(trace), x)))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    paths.append(p)
    m = out / f"{stem}_metrics.json"
    m.write_text(json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                             for k, v in trace.metrics.items()}, indent=2, sort_keys=True) + "\n")
    paths.append(m)
    return paths


# ---------------------------------------------------------------------------
# energy layer shared by the scripted and route runners

class _EnergyLayer:
    """Receding-horizon powertrain control acting on the realised motion."""

    def __init__(self, sc: Scenario, vehicle: VehicleParams, env: Environment):
        cfg = dict(sc.section("powertrain"))
        self.horizon = int(cfg.pop("horizon", 5))
        self.aux = float(cfg.pop("aux_power", 600.0))
        w = cfg.pop("weights", {})
        self.weights = _build(EnergyWeights, w, "weights")
        self.config = _build(PowertrainMPCConfig, cfg, "powertrain")
        bcfg = dict(sc.section("battery"))
        self.e0 = float(bcfg.pop("e0", 20e6))
        floor = bcfg.pop("floor", None)
        self.battery = _build(BatteryParams, bcfg, "battery")
        self.floor = self.battery.e_min if floor is None else float(floor)
        self.maps = default_maps(vehicle, env)
        self.state = PowertrainState(self.e0, 1, 0, None)
        self.plan_t = self.plan_e = None

    def set_plan(self, plan_times, plan_energies):
        self.plan_t = np.asarray(plan_times, dtype=float)
        self.plan_e = np.asarray(plan_energies, dtype=float)

    def reference(self, t_end: float) -> float:
        if self.plan_t is None:
            return self.floor
        return float(np.interp(t_end, self.plan_t, self.plan_e))

    def step(self, t, dt, speeds, forces):
        """Apply one step; returns (E_q before, fuel power, flag)."""
        x = self.state
        n = len(speeds)
        fc = PowertrainForecast(dt, tuple(float(v) for v in speeds), (self.aux,) * n,
                                tuple(float(f) for f in forces))
        term = TerminalCharge(min(self.reference(t + n * dt), x.energy))
        res = mpc_step(x, fc, self.weights, term, self.maps, self.battery, self.config)
        u, v = res.input, float(speeds[0])
        flag = FLAG_SOLVER if res.fallback else 0
        pb = float(self.maps.motor(v, u.motor_torque)) + self.aux
        pf = float(self.maps.fuel(x.gear, x.engine_on, u.engine_torque, v))
        try:
            e2 = battery_step(x.energy, pb, self.battery, dt)
        except CavError:
            e2, flag = x.energy, flag | FLAG_BATTERY
        if not self.battery.e_min - 1e-6 <= e2 <= self.battery.e_max + 1e-6:
            flag |= FLAG_BATTERY
            e2 = min(max(e2, self.battery.e_min), self.battery.e_max)
        if res.solution is not None:
            nxt = res.solution.states[1]
            self.state = PowertrainState(e2, nxt.gear, nxt.engine_on, nxt.dwell)
        else:
            switched = u.gear_cmd != 0 or u.engine_cmd != 0
            dwell = 0 if switched else (None if x.dwell is None else x.dwell + 1)
            self.state = PowertrainState(e2, x.gear + u.gear_cmd, x.engine_on + u.engine_cmd, dwell)
        return x.energy, pf, flag


def _demand_forces(v, grade, vehicle, env, dt):
    """Wheel force realising the speed sequence ``v`` (last entry has no step)."""
    v = np.asarray(v, dtype=float)
    acc = np.diff(v) / dt
    return resistance_force(v[:-1], np.asarray(grade, dtype=float), vehicle, env) + vehicle.mass * acc


# ---------------------------------------------------------------------------
# runners

def _script_speeds(sc: Scenario, rng):
    m = sc.section("motion")
    dt = float(sc.data.get("dt", m.get("dt", 1.0)))
    if sc.kind == "charge" or "commute" in m:
        c = dict(m.get("commute", sc.section("commute")))
        dt = float(c.pop("dt", 10.0))
        fc = synthetic_commute(int(c.pop("seed", sc.seed)), int(c.pop("n_steps", 30)), sc.vehicle(), dt, **c)
        v = np.append(np.asarray(fc.speeds), fc.speeds[-1])
        return dt, v, np.asarray(fc.wheel_forces), fc
    duration = float(sc.data.get("duration", m.get("duration", 60.0)))
    K = int(round(duration / dt))
    t = dt * np.arange(K + 1)
    if "times" in m:
        v = np.interp(t, np.asarray(m["times"], float), np.asarray(m["speeds"], float))
    else:
        v = np.full(K + 1, float(m.get("speed", 10.0)))
    sd = float(m.get("noise_sd", 0.0))
    if sd > 0:
        v = np.maximum(v + rng.normal(0.0, sd, v.size), 0.0)
    grade = float(m.get("grade", 0.0))
    f = _demand_forces(v, np.full(K, grade), sc.vehicle(), Environment(), dt)
    return dt, v, f, None


def _run_script(sc: Scenario) -> EpisodeTrace:
    rng = np.random.default_rng(sc.seed)
    dt, v, force, fc = _script_speeds(sc, rng)
    K = v.size - 1
    s0 = float(sc.section("motion").get("s0", 0.0))
    energy = None
    if "powertrain_mpc" in sc.controllers or "charge_planner" in sc.controllers:
        energy = _EnergyLayer(sc, sc.vehicle(), Environment())
    info = {}
    if "charge_planner" in sc.controllers:
        fc_full = fc or PowertrainForecast(dt, tuple(v[:-1]), (energy.aux,) * K, tuple(force))
        plan = plan_charge(energy.e0, fc_full, energy.weights, energy.floor, energy.maps, energy.battery)
        energy.set_plan(dt * np.arange(K + 1), plan.energies)
        info["plan_cost"] = float(plan.cost)
    rec = _Recorder()
    s = s0
    for k in range(K):
        t = k * dt
        if energy is not None and "powertrain_mpc" in sc.controllers:
            n = min(energy.horizon, K - k)
            eq, pf, flag = energy.step(t, dt, v[k:k + n], force[k:k + n])
            fw, fb = max(force[k], 0.0), max(-force[k], 0.0)
            rec.add(t, "ego", s, v[k], fw=fw, fb=fb, e=eq, pf=pf, flag=flag)
        else:
            rec.add(t, "ego", s, v[k], fw=0.0, fb=0.0, pf=0.0)
        s = s + dt * v[k]
    e_end = energy.state.energy if energy is not None and "powertrain_mpc" in sc.controllers else math.nan
    rec.add(K * dt, "ego", s, v[K], e=e_end)
    return rec.trace(dt, info)


class _Lead:
    """Scripted preceding vehicle: speed as a function of time plus seeded noise."""

    def __init__(self, cfg: dict, dt: float, n: int, rng):
        self.cfg = cfg
        t = dt * np.arange(n + 1)
        kind = cfg.get("profile", "constant")
        if kind == "sinusoid":
            v = cfg.get("mean", 20.0) + cfg.get("amplitude", 3.0) * np.sin(2 * np.pi * t / cfg.get("period", 20.0))
        elif kind == "table":
            v = np.interp(t, np.asarray(cfg["times"], float), np.asarray(cfg["speeds"], float))
        elif kind == "constant":
            v = np.full(n + 1, float(cfg.get("speed", 20.0)))
        else:
            raise ScenarioError(f"unknown lead profile {kind!r}")
        sd = float(cfg.get("noise_sd", 0.0))
        if sd > 0:
            v = v + rng.normal(0.0, sd, v.size)
        self.v = np.maximum(v, 0.0)
        self.dt = dt

    def accels(self, k, n):
        return tuple(np.diff(self.v[k:k + n + 1]) / self.dt)


def _run_cacc(sc: Scenario) -> EpisodeTrace:
    rng = np.random.default_rng(sc.seed)
    ccfg = dict(sc.section("cacc"))
    params = _build(CaccParams, ccfg, "cacc", vehicle=sc.vehicle())
    policy = _build(SpacingPolicy, sc.section("policy"), "policy")
    dt = params.dt
    K = int(round(float(sc.data.get("duration", 120.0)) / dt))
    nf = int(sc.data.get("forecast_steps", 40))
    if nf < params.horizon:
        raise ScenarioError("forecast_steps must cover the control horizon")
    lead = _Lead(sc.section("lead"), dt, K + nf, rng)
    ego = sc.section("ego")
    x = CaccState(float(ego.get("gap", 60.0)), float(ego.get("speed", lead.v[0])))
    s = float(ego.get("s0", 0.0))
    rec = _Recorder()
    for k in range(K):
        acc_now = (lead.v[k] - lead.v[k - 1]) / dt if k else 0.0
        fc = predict_lead(params.mode, float(lead.v[k]), float(acc_now), lead.accels(k, nf), nf, dt)
        res = cacc_mpc_step(x, fc, policy, params)
        flag = FLAG_SOLVER if res.fallback else 0
        if x.gap < policy.hard_min - 1e-9:
            flag |= FLAG_GAP
        rec.add(k * dt, "ego", s, x.speed, x.gap, res.input.wheel_force, res.input.brake_force, flag=flag)
        s = s + dt * x.speed
        x = longitudinal_step(x, res.input, float(lead.v[k]), params)
    rec.add(K * dt, "ego", s, x.speed, x.gap, flag=FLAG_GAP if x.gap < policy.hard_min - 1e-9 else 0)
    return rec.trace(dt, {"hard_min": policy.hard_min, "lead_speed": lead.v[:K + 1]})


def _agents(sc: Scenario):
    out = []
    for i, a in enumerate(sc.data.get("agents", [])):
        a = dict(a)
        veh = sc.vehicle(a.pop("vehicle")) if "vehicle" in a else sc.vehicle()
        for key in ("departure", "arrival"):
            if key in a:
                a[key] = tuple(math.inf if x is None else float(x) for x in a[key])
        a.setdefault("slot", i + 1)
        out.append(_build(PlatoonAgent, a, "agent", params=veh))
    if not out:
        raise ScenarioError("platoon scenario has no agents")
    return out


def _platoon_params(sc: Scenario) -> PlatoonParams:
    cfg = dict(sc.section("platoon"))
    if "coupling" in cfg:
        cfg["coupling"] = _build(DragCoupling, cfg["coupling"], "coupling")
    return _build(PlatoonParams, cfg, "platoon")


def _run_platoon(sc: Scenario) -> EpisodeTrace:
    agents = _agents(sc)
    params = _platoon_params(sc)
    topo = _build(TopologyConfig, sc.section("topology"), "topology")
    tr, independent = run_platoon(agents, params, topo, int(sc.data.get("rounds", 3)),
                                  sc.data.get("replan_every"), sc.data.get("mode", "gauss_seidel"))
    d_min = params.coupling.d_min
    rec = _Recorder()
    N = tr.t.size - 1
    for i, a in enumerate(tr.agents):
        ks = np.flatnonzero(tr.active[i])
        if ks.size == 0:
            continue
        for k in range(int(ks[0]), int(ks[-1]) + 1):
            g = tr.gap[i, k]
            flag = FLAG_GAP if np.isfinite(g) and g < d_min - 1e-9 else 0
            rec.add(tr.t[k], a, tr.s[i, k], tr.v[i, k], g, tr.wheel_force[i, k], tr.brake_force[i, k],
                    pf=tr.stage_energy[i, k] / params.dt, flag=flag)
        k = int(ks[-1]) + 1
        if k <= N:
            rec.add(tr.t[k], a, tr.s[i, k], tr.v[i, k])
    band = float(sc.data.get("band", 20.0))
    info = {"independent_J": independent, "coordinated_J": float(tr.energy.sum()),
            "window": platoon_window(tr, band, d_min), "feasible": bool(tr.feasible), "platoon": tr}
    return rec.trace(params.dt, info)


def _route(sc: Scenario, vehicle, env, e0):
    """Route profile and the node path (when a graph is given)."""
    if "graph" in sc.data:
        g = sc.section("graph")
        graph = load_graph_csv(sc.resolve(g["nodes"]), sc.resolve(g["edges"]))
        if "eco_router" in sc.controllers:
            pol = _build(RoutingPolicy, sc.section("routing"), "routing", vehicle=vehicle, env=env)
            path = shortest_energy_path(graph, g["origin"], g["destination"], e0, pol).nodes
        else:
            path = shortest_distance_path(graph, g["origin"], g["destination"])
        edges = [graph.edge(u, w) for u, w in zip(path, path[1:])]
        if not edges:
            raise ScenarioError("origin equals destination: nothing to drive")
        # grade is interpolated between breakpoints; a short ramp keeps each edge uniform
        ramp = float(g.get("grade_ramp", 0.5))
        bp, gr, lim = [0.0], [edges[0].grade], [edges[0].speed]
        s = 0.0
        for j, e in enumerate(edges):
            s += e.length
            if j + 1 < len(edges):
                bp += [s - ramp, s]
                gr += [e.grade, edges[j + 1].grade]
                lim += [e.speed, edges[j + 1].speed]
            else:
                bp.append(s)
                gr.append(e.grade)
                lim.append(e.speed)
        return RouteProfile(tuple(bp), tuple(gr), tuple(lim)), list(path)
    rcfg = sc.section("route")
    if not rcfg:
        raise ScenarioError("route-following scenario needs a graph or a route section")
    return _build(RouteProfile, rcfg, "route"), None


def _signals(sc: Scenario):
    sigs = [dict(x) for x in sc.data.get("signals", [])]
    if "samples_csv" in sc.data:
        cols = load_samples_csv(sc.resolve(sc.data["samples_csv"]))
        if len(cols) < len(sigs):
            raise ScenarioError("samples file has fewer columns than signals")
        for s, col in zip(sigs, cols):
            s.setdefault("samples", col)
    return [_build(SignalTiming, s, "signal") for s in sigs]


def _run_route(sc: Scenario) -> EpisodeTrace:
    vehicle, env = sc.vehicle(), Environment()
    want_energy = "powertrain_mpc" in sc.controllers or "charge_planner" in sc.controllers
    energy = _EnergyLayer(sc, vehicle, env) if want_energy else None
    e0 = energy.e0 if energy is not None else float(sc.section("battery").get("e0", 20e6))
    route, nodes = _route(sc, vehicle, env, e0)
    signals = _signals(sc)
    info = {"nodes": nodes, "length": route.length}
    ecfg = dict(sc.section("ecodrive"))
    v0 = float(ecfg.pop("initial_speed", sc.section("ego").get("speed", route.speed_limit[0])))
    if "ecodrive" in sc.controllers:
        budget = float(ecfg.pop("time_budget"))
        eta = ecfg.pop("eta", None)
        eparams = _build(EcoDriveParams, ecfg, "ecodrive", vehicle=vehicle, env=env)
        chance = chance_spec(signals, eta) if eta is not None else None
        sol = solve_ecodrive(route, signals, chance, eparams, v0, budget)
        ref_t, ref_v, ref_s = sol.times, sol.speeds, sol.positions
        info["ecodrive_cost"] = float(sol.cost)
    else:
        ref_s = np.linspace(route.breakpoints[0], route.breakpoints[-1],
                            int(math.ceil(route.length)) + 1)
        ref_v = np.asarray(route.speed_limit_at(ref_s), dtype=float)
        ref_t = np.concatenate([[0.0], np.cumsum(np.diff(ref_s) / ref_v[:-1])])
    ccfg = dict(sc.section("cacc"))
    # tracking a speed plan needs a much lighter effort weight than gap regulation
    ccfg.setdefault("weights", (1e-6, 1.0, 0.0))
    ccfg.setdefault("brake_weight", 1e-6)
    gain = float(sc.data.get("tracking_gain", 0.2))
    params = _build(CaccParams, ccfg, "cacc", vehicle=vehicle, env=env)
    policy = _build(SpacingPolicy, sc.section("policy"), "policy")
    dt, N = params.dt, params.horizon
    v_hold = float(ref_v[-1])

    def vref(t):
        return np.interp(t, ref_t, ref_v, right=v_hold)

    def sref(t):
        return np.interp(t, ref_t, ref_s, right=np.inf)

    if "charge_planner" in sc.controllers:
        cdt = float(sc.section("charge").get("dt", 10.0))
        tc = np.arange(0.0, float(ref_t[-1]) + cdt, cdt)
        vc = vref(tc)
        sc_pos = np.interp(tc, ref_t, ref_s)
        fc = PowertrainForecast(cdt, tuple(vc[:-1]), (energy.aux,) * (tc.size - 1),
                                tuple(_demand_forces(vc, route.grade_at(sc_pos[:-1]), vehicle, env, cdt)))
        plan = plan_charge(energy.e0, fc, energy.weights, energy.floor, energy.maps, energy.battery)
        energy.set_plan(tc, plan.energies)
        info["plan_cost"] = float(plan.cost)
    max_steps = int(math.ceil(float(sc.data.get("time_limit", 2.0 * ref_t[-1] + 60.0)) / dt))
    rec = _Recorder()
    s, x = route.breakpoints[0], CaccState(0.0, v0)
    end = route.breakpoints[-1]
    k = 0
    while s < end and k < max_steps:
        t = k * dt
        cp = replace(params, grade=float(route.grade_at(s)))
        # speed plan plus position feedback (none once the plan has ended)
        err = sref(t) - s if t < ref_t[-1] else 0.0
        refs = np.clip(vref(t + dt * np.arange(1, N + 1)) + gain * err, 0.0, params.speed_max)
        res = cacc_mpc_step(x, None, policy, cp, refs)
        flag = FLAG_SOLVER if res.fallback else 0
        eq = pf = math.nan
        if energy is not None and "powertrain_mpc" in sc.controllers:
            if res.solution is not None:
                sp = [x.speed] + [st.speed for st in res.solution.states[1:]]
                fs = [u.wheel_force - u.brake_force for u in res.solution.inputs]
            else:
                sp, fs = [x.speed], [res.input.wheel_force - res.input.brake_force]
            n = min(energy.horizon, len(fs))
            eq, pf, f2 = energy.step(t, dt, sp[:n], fs[:n])
            flag |= f2
        s2 = s + dt * x.speed
        for sig in signals:
            if s < sig.position <= s2 and x.speed > 0:
                tc_ = t + (sig.position - s) / x.speed
                if crossing_phase(tc_, sig) < sig.red:
                    flag |= FLAG_SIGNAL
        rec.add(t, "ego", s, x.speed, fw=res.input.wheel_force, fb=res.input.brake_force, e=eq, pf=pf, flag=flag)
        x = longitudinal_step(x, res.input, x.speed, cp)
        s = s2
        k += 1
    e_end = energy.state.energy if energy is not None and "powertrain_mpc" in sc.controllers else math.nan
    rec.add(k * dt, "ego", s, x.speed, e=e_end)
    info["arrived"] = bool(s >= end)
    info["reference_time"] = float(ref_t[-1])
    return rec.trace(dt, info)


_RUNNERS = {"script": _run_script, "charge": _run_script, "cacc": _run_cacc, "platoon": _run_platoon,
            "route": _run_route, "ecodrive": _run_route, "stack": _run_route}


def run_closed_loop(scenario) -> EpisodeTrace:
    """Run one episode.  Remote plans (route, eco-driving reference, charge
    reference) are computed first; the on-board loops then step the plant.
    Planning failures before the loop propagate (Infeasible, NoRoute)."""
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    return _RUNNERS[sc.kind](sc)


def run_batch(scenarios, threads: int = 1) -> list:
    """Run independent episodes, in input order, on ``threads`` workers."""
    scs = [s if isinstance(s, Scenario) else load_scenario(s) for s in scenarios]
    if threads <= 1:
        return [run_closed_loop(s) for s in scs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(run_closed_loop, scs))
