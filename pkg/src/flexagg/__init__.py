"""Guaranteed-dispatchable aggregate flexibility regions for distribution
feeders with heterogeneous controllable resources.

The package computes, at the substation of a multi-phase feeder, either
per-period intervals of active power or per-period active-reactive
ellipses such that every trajectory inside the region admits a fleet
schedule respecting device and network limits.  Regions are sized by an
adaptive scenario-generation loop over an embedded LP/MILP engine, and
any published region can be audited by dispatch recovery, Monte Carlo
sampling and exhaustive grid scans.
"""

__version__ = "0.1.0"

from .apa import AroOptions, AroResult, solve_apa
from .arpa import ArpaOptions, ArpaResult, rotation_grid_scan, solve_arpa
from .compact import CompactModel, build_scenario_model, feasibility_probe
from .devices import (DclParams, EsParams, FleetDevice, HvacParams, LoadParams,
                      PvParams)
from .disagg import (CostParams, DispatchSchedule, GridScan, VerifyReport,
                     monte_carlo_verify, pq_grid_scan, solve_pd)
from .errors import (BigMTooSmall, ConfigError, FlexaggError, ModelInfeasible,
                     NumericalError)
from .network import Bus, DeviceConnection, Line, NetworkModel
from .solver import SolverOptions

__all__ = [
    "AroOptions", "AroResult", "solve_apa",
    "ArpaOptions", "ArpaResult", "rotation_grid_scan", "solve_arpa",
    "CompactModel", "build_scenario_model", "feasibility_probe",
    "DclParams", "EsParams", "FleetDevice", "HvacParams", "LoadParams",
    "PvParams",
    "CostParams", "DispatchSchedule", "GridScan", "VerifyReport",
    "monte_carlo_verify", "pq_grid_scan", "solve_pd",
    "BigMTooSmall", "ConfigError", "FlexaggError", "ModelInfeasible",
    "NumericalError",
    "Bus", "DeviceConnection", "Line", "NetworkModel",
    "SolverOptions",
    "__version__",
]
