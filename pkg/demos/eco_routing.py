"""Longer but cheaper: routing on battery energy instead of distance.

The bundled diamond has a short route over a hill and a longer route that
descends gently.  The hill costs more going up than regeneration returns
coming down, so the energy-optimal route takes the detour.

    python3 demos/eco_routing.py
"""
from importlib import resources

from cavstack.eco_router import RoutingPolicy, compare_routes, load_graph_csv

data = resources.files("cavstack") / "data"
graph = load_graph_csv(data / "diamond_nodes.csv", data / "diamond_edges.csv")

for credit in (False, True):
    c = compare_routes(graph, "O", "D", 20e6, RoutingPolicy(regen_credit=credit))
    print(f"regeneration credited: {credit}")
    for name, r in (("shortest", c.shortest), ("eco", c.eco)):
        print(f"  {name:8s} {'-'.join(r.nodes)}  {r.length:6.0f} m  cost {r.cost / 1e6:6.3f} MJ  "
              f"fuel {r.fuel / 1e6:5.3f} MJ  battery used {r.battery_used / 1e6:6.3f} MJ")
    print(f"  detour +{c.extra_length:.0f} m saves {c.cost_saving / 1e6:.3f} MJ")
