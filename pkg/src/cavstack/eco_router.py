"""Minimum-energy routing with the battery charge carried along the path.

Edge energies depend on the battery energy at the edge entry (a depleted
battery forces the engine to cover the demand), so the search runs over
(node, battery energy) labels.  Labels keep their exact battery energy; the
battery quantum only widens dominance: at the same node a label beats
another if it is no more expensive, has no less charge (up to one quantum)
and has visited a subset of the other's nodes.  Paths are simple.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import NoRoute
from .models import BatteryParams, Environment, VehicleParams, resistance_force

__all__ = [
    "Edge",
    "RoadGraph",
    "EdgeEnergy",
    "RoutingPolicy",
    "RouteResult",
    "RouteComparison",
    "edge_energy",
    "path_energy",
    "shortest_energy_path",
    "shortest_distance_path",
    "compare_routes",
    "load_graph_csv",
    "save_route_csv",
]


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    length: float
    grade: float = 0.0       # rad
    speed: float = 13.9
    charger: bool = False
    charger_power: float = 0.0

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"edge {self.u}->{self.v}: length must be positive")
        if not self.speed > 0:
            raise ValueError(f"edge {self.u}->{self.v}: speed must be positive")


class RoadGraph:
    """Directed road graph; nodes carry planar coordinates (m)."""

    def __init__(self, nodes: dict, edges):
        self.nodes = {str(k): (float(x), float(y)) for k, (x, y) in nodes.items()}
        self.g = nx.DiGraph()
        self.g.add_nodes_from(self.nodes)
        for e in edges:
            if e.u not in self.nodes or e.v not in self.nodes:
                raise ValueError(f"edge {e.u}->{e.v} references an unknown node")
            if e.u == e.v:
                raise ValueError("self loops are not allowed")
            self.g.add_edge(e.u, e.v, edge=e)

    def edge(self, u, v) -> Edge:
        return self.g.edges[u, v]["edge"]

    def out_edges(self, u):
        return [d["edge"] for _, _, d in self.g.out_edges(u, data=True)]

    @property
    def edges(self):
        return [d["edge"] for _, _, d in self.g.edges(data=True)]


@dataclass(frozen=True)
class EdgeEnergy:
    fuel: float          # J, >= 0
    battery: float       # J, signed: negative = depletion
    charge_time: float = 0.0


@dataclass(frozen=True)
class RoutingPolicy:
    """Steady-speed edge model with an electric-preferred split."""

    vehicle: VehicleParams = VehicleParams()
    env: Environment = Environment()
    battery: BatteryParams = BatteryParams()
    motor_power_max: float = 60e3     # W at the wheel
    regen_power_max: float = 40e3     # W at the wheel
    motor_eff: float = 0.90
    engine_eff: float = 0.30
    reserve: float = 0.05             # fraction of the battery window kept in reserve
    weights: tuple = (1.0, 1.0)       # (fuel, battery)
    regen_credit: bool = False        # True: battery gains lower the cost too
    quantum: float | None = None      # default window / 200
    allow_charging: bool = False
    charge_dwell: float = 600.0       # s at a charger when charging is allowed

    def __post_init__(self):
        if not (0 < self.motor_eff <= 1 and 0 < self.engine_eff <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not 0 <= self.reserve < 1:
            raise ValueError("reserve must be a fraction in [0, 1)")

    @property
    def floor(self) -> float:
        return self.battery.e_min + self.reserve * self.battery.window

    @property
    def dq(self) -> float:
        return self.battery.window / 200.0 if self.quantum is None else self.quantum


@dataclass
class RouteResult:
    nodes: list
    cost: float
    energies: list
    battery: list        # battery energy at each node of the path
    length: float

    @property
    def fuel(self) -> float:
        return float(sum(e.fuel for e in self.energies))

    @property
    def battery_used(self) -> float:
        return float(self.battery[0] - self.battery[-1])


@dataclass
class RouteComparison:
    eco: RouteResult
    shortest: RouteResult
    extra_length: float   # eco minus shortest
    cost_saving: float    # shortest minus eco


def _battery_limits(energy, dt, policy):
    """Terminal-power interval keeping the end energy inside [floor, e_max]."""
    b = policy.battery
    k = 2.0 * b.resistance * b.capacity / b.ocv_fit
    rate = dt * b.ocv_fit / (b.resistance * b.capacity)
    p_hi = energy / k                                 # battery capability
    r = energy - (energy - policy.floor) / rate       # sqrt(disc) must stay >= r
    if r > 0:
        p_hi = min(p_hi, (energy * energy - r * r) / (k * energy))
    r2 = energy + (b.e_max - energy) / rate
    p_lo = -(r2 * r2 - energy * energy) / (k * energy)
    return max(p_hi, 0.0), min(p_lo, 0.0)


def _step(energy, p_batt, dt, policy):
    if p_batt == 0.0:
        return float(energy)
    b = policy.battery
    k = 2.0 * b.resistance * b.capacity / b.ocv_fit
    rate = dt * b.ocv_fit / (b.resistance * b.capacity)
    disc = max(energy * energy - k * p_batt * energy, 0.0)
    return float(energy - rate * (energy - math.sqrt(disc)))


def edge_energy(edge: Edge, energy: float, policy: RoutingPolicy = RoutingPolicy()) -> EdgeEnergy:
    """Fuel and battery energy of a steady traversal at the edge speed.

    Traction comes from the motor (up to its power limit) while the battery
    stays above the reserve floor, the engine covers the rest.  Braking
    power is recovered up to the regeneration limit and the battery top.
    """
    v = edge.speed
    dt = edge.length / v
    p_wheel = float(resistance_force(v, edge.grade, policy.vehicle, policy.env)) * v
    p_max, p_min = _battery_limits(energy, dt, policy)
    if p_wheel > 0:
        p_batt = min(p_wheel, policy.motor_power_max) / policy.motor_eff
        p_batt = min(p_batt, p_max) if energy > policy.floor else 0.0
        p_engine = p_wheel - p_batt * policy.motor_eff
        fuel = p_engine / policy.engine_eff * dt
    else:
        p_batt = -min(-p_wheel, policy.regen_power_max) * policy.motor_eff
        p_batt = max(p_batt, p_min)
        fuel = 0.0
    return EdgeEnergy(max(fuel, 0.0), _step(energy, p_batt, dt, policy) - energy)


def _edge_cost(en: EdgeEnergy, policy):
    gf, gq = policy.weights
    dq = -en.battery if policy.regen_credit else max(-en.battery, 0.0)
    return gf * en.fuel + gq * dq


def _charged(edge, energy, policy):
    """Battery energy after an optional stop at the edge's charger."""
    b = policy.battery
    return min(b.e_max, energy + edge.charger_power * policy.charge_dwell)


def path_energy(g: RoadGraph, nodes, x0: float, policy: RoutingPolicy = RoutingPolicy()) -> RouteResult:
    """Exact propagation of the battery energy along a given node sequence."""
    x = [float(x0)]
    ens = []
    cost = length = 0.0
    for u, v in zip(nodes, nodes[1:]):
        e = g.edge(u, v)
        en = edge_energy(e, x[-1], policy)
        ens.append(en)
        cost += _edge_cost(en, policy)
        length += e.length
        x.append(x[-1] + en.battery)
    return RouteResult(list(nodes), cost, ens, x, length)


def shortest_energy_path(g: RoadGraph, origin, destination, x0: float, policy: RoutingPolicy = RoutingPolicy(),
                         terminal_min: float | None = None) -> RouteResult:
    """Minimum weighted-energy simple path with the battery kept in its window
    and at least ``terminal_min`` (default: the battery floor) at the end.
    Raises :class:`NoRoute`."""
    for n in (origin, destination):
        if n not in g.nodes:
            raise ValueError(f"unknown node {n!r}")
    b = policy.battery
    if not b.e_min <= x0 <= b.e_max:
        raise ValueError("initial battery energy outside its window")
    x_star = b.e_min if terminal_min is None else terminal_min
    if origin == destination:
        if x0 < x_star:
            raise NoRoute("initial charge below the terminal requirement")
        return RouteResult([origin], 0.0, [], [float(x0)], 0.0)
    q = policy.dq
    # label: (cost, -energy, seq, node, energy, visited, path, energies, charge)
    heap = [(0.0, -x0, 0, origin, float(x0), frozenset([origin]), (origin,), (), ())]
    kept = {n: [] for n in g.nodes}
    seq = 1
    best = None

    def dominated(node, cost, x, visited):
        for c2, x2, vis2 in kept[node]:
            if c2 <= cost and x2 >= x - q and vis2 <= visited:
                return True
        return False

    while heap:
        cost, _, _, node, x, visited, path, ens, xs = heapq.heappop(heap)
        if best is not None and cost > best.cost and not policy.regen_credit:
            break   # edge costs are non-negative, nothing cheaper can follow
        if node == destination:
            if x >= x_star - 1e-9 and (best is None or cost < best.cost):
                best = RouteResult(list(path), cost, list(ens), [float(x0), *xs], 0.0)
            continue
        if dominated(node, cost, x, visited):
            continue
        kept[node].append((cost, x, visited))
        for e in g.out_edges(node):
            if e.v in visited:
                continue
            en = edge_energy(e, x, policy)
            x2 = x + en.battery
            if not b.e_min - 1e-9 <= x2 <= b.e_max + 1e-9:
                continue
            c2 = cost + _edge_cost(en, policy)
            options = [(x2, en)]
            if policy.allow_charging and e.charger and e.charger_power > 0:
                x3 = _charged(e, x2, policy)
                if x3 > x2:
                    options.append((x3, EdgeEnergy(en.fuel, x3 - x, (x3 - x2) / e.charger_power)))
            for xn, enn in options:
                if dominated(e.v, c2, xn, visited | {e.v}):
                    continue
                heapq.heappush(heap, (c2, -xn, seq, e.v, xn, visited | {e.v}, path + (e.v,),
                                      ens + (enn,), xs + (xn,)))
                seq += 1
    if best is None:
        raise NoRoute(f"no admissible path from {origin!r} to {destination!r}")
    best.length = float(sum(g.edge(u, v).length for u, v in zip(best.nodes, best.nodes[1:])))
    return best


def shortest_distance_path(g: RoadGraph, origin, destination) -> list:
    try:
        return nx.shortest_path(g.g, origin, destination, weight=lambda u, v, d: d["edge"].length)
    except (nx.NetworkXNoPath, nx.NodeNotFound) as exc:
        raise NoRoute(str(exc)) from exc


def compare_routes(g: RoadGraph, origin, destination, x0: float,
                   policy: RoutingPolicy = RoutingPolicy()) -> RouteComparison:
    eco = shortest_energy_path(g, origin, destination, x0, policy)
    short = path_energy(g, shortest_distance_path(g, origin, destination), x0, policy)
    return RouteComparison(eco, short, eco.length - short.length, short.cost - eco.cost)


def load_graph_csv(nodes_csv, edges_csv) -> RoadGraph:
    """nodes.csv: id,x,y; edges.csv: from,to,length,grade,speed[,charger,charger_power]."""
    nodes = {}
    with open(nodes_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            nodes[row["id"]] = (float(row["x"]), float(row["y"]))
    edges = []
    with open(edges_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            edges.append(Edge(row["from"], row["to"], float(row["length"]), float(row.get("grade") or 0.0),
                              float(row.get("speed") or 13.9), str(row.get("charger", "0")).strip() in ("1", "true", "True"),
                              float(row.get("charger_power") or 0.0)))
    return RoadGraph(nodes, edges)


def save_route_csv(route: RouteResult, g: RoadGraph, path) -> None:
    """Node sequence with coordinates and the battery energy on arrival."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "battery"])
        for n, x in zip(route.nodes, route.battery):
            w.writerow([n, repr(g.nodes[n][0]), repr(g.nodes[n][1]), repr(float(x))])
