"""Route, speed plan, car following and energy management together.

A plug-in hybrid picks the energy-optimal route over the diamond network,
plans its speed through a signal on that route, and follows the plan with
the car-following controller while the powertrain controller splits the
demand between engine and motor against a trip-level battery plan.

    python3 demos/full_stack.py [out_dir]
"""
import sys
from pathlib import Path

from cavstack import sim

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/full_stack")

sc = sim.load_scenario(sim.bundled_scenario("stack_diamond"))
trace = sim.run_closed_loop(sc)
info, m = trace.info, trace.metrics
print(f"route {'-'.join(info['nodes'])} ({info['length']:.0f} m), arrived: {info['arrived']}")
print(f"fuel {m['fuel_J'] / 1e6:.3f} MJ, battery {m['battery_J'] / 1e6:.3f} MJ, "
      f"braking {m['braking_J'] / 1e3:.1f} kJ, flagged steps {m['violations']}")
files = dict.fromkeys(sim.emit(trace, out, "csv") + sim.emit(trace, out, "svg"))
print("wrote", ", ".join(str(f) for f in files))
