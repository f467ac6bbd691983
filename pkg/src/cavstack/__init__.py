"""Planning and control for connected and automated vehicles.

Layers, from remote to on-board: energy-aware routing (:mod:`eco_router`),
battery charge planning (:mod:`charge_planner`), signal-aware eco-driving
(:mod:`ecodrive`), platoon coordination (:mod:`platoon`), car following
(:mod:`cacc`), local motion planning (:mod:`motion_planner`) and hybrid
powertrain control (:mod:`powertrain_mpc`), all on the plant models in
:mod:`models`.  :mod:`sim` composes them into closed-loop episodes.
"""
from .errors import (
    CavError, DiscriminantNegative, EmptySamples, Infeasible, NoRoute, ScenarioError,
)

__version__ = "0.1.0"

__all__ = [
    "CavError",
    "DiscriminantNegative",
    "EmptySamples",
    "Infeasible",
    "NoRoute",
    "ScenarioError",
    "__version__",
]
