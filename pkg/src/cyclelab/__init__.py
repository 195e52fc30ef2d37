"""Periodic-orbit towers over a piecewise-affine heterodimensional cycle."""
from .errors import CycleLabError, Infeasible
from .measures import PeriodicMeasure, TestFunction, default_dictionary, integrate
from .quotient import CycleCentralData, corbd_solve, nu_for_fixed_point, return_map
from .system import CycleSpec, CycleSystem, build_model, realize_orbit
from .tower import Tower, TowerConfig, build_tower, extend, init_tower

__all__ = [
    "CycleLabError", "Infeasible", "PeriodicMeasure", "TestFunction", "default_dictionary",
    "integrate", "CycleCentralData", "corbd_solve", "nu_for_fixed_point", "return_map",
    "CycleSpec", "CycleSystem", "build_model", "realize_orbit", "Tower", "TowerConfig",
    "build_tower", "extend", "init_tower",
]
__version__ = "0.1.0"
