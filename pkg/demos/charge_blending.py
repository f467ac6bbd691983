"""Spreading battery use over a hilly commute.

A plug-in hybrid that drains the battery first and then holds it at the
floor has to climb the late hills on the engine alone.  Planning the whole
trip ahead lets the engine help where it is efficient and saves battery for
where it is not.

    python3 demos/charge_blending.py
"""
import numpy as np

from cavstack.charge_planner import cdcs_baseline, plan_charge, synthetic_commute
from cavstack.maps import default_maps
from cavstack.models import BatteryParams
from cavstack.powertrain_mpc import EnergyWeights

maps, batt, w = default_maps(), BatteryParams(), EnergyWeights()
floor = batt.e_min

for seed in range(5):
    fc = synthetic_commute(seed, 40)
    e0 = floor + 2e6
    plan = plan_charge(e0, fc, w, floor, maps, batt)
    base = cdcs_baseline(e0, fc, w, floor, maps, batt)
    switch = "never" if base.switch_index is None else f"step {base.switch_index}"
    print(f"commute {seed}: planned {plan.cost / 1e6:6.3f} MJ, deplete-then-sustain {base.cost / 1e6:6.3f} MJ "
          f"(switches {switch}), engine steps {np.count_nonzero(plan.engine_torques)} vs "
          f"{np.count_nonzero(base.engine_torques)}")
