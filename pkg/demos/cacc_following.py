"""Following a lead car whose speed swings +-3 m/s around 20 m/s.

The lead shares its planned speed sequence.  The follower starts 60 m back
and 5 m/s faster, closes in, and then rides the oscillation by trading gap
for speed.  After the catch-up the friction brakes stay essentially unused.

    python3 demos/cacc_following.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from cavstack import sim

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/cacc_following")

sc = sim.load_scenario(sim.bundled_scenario("cacc_sinusoid"))
trace = sim.run_closed_loop(sc)
m = trace.metrics

t = trace.column("t", "ego")
v = trace.column("v", "ego")
print(f"simulated {t[-1]:.0f} s at dt {trace.dt} s")
print(f"closest approach {m['min_gap']:.2f} m (hard limit {trace.info['hard_min']} m)")
print(f"speed range after 40 s: {v[t >= 40].min():.2f} to {v[t >= 40].max():.2f} m/s")
print(f"braking / traction after 40 s: {sim.braking_fraction(trace, 40.0):.1e}")

files = sim.emit(trace, out, "svg")
print("wrote", ", ".join(str(f) for f in files))
