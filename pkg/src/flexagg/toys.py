"""Bundled example feeders and fleets.

Small synthetic instances that exercise every device kind and both
connection kinds, used by the test suite, the command-line examples and
the shipped data files.  Ratings are chosen so the nonlinear power flow
converges comfortably and voltages stay inside the default band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import (DclParams, EsParams, FleetDevice, HvacParams, LoadParams,
                      PvParams)
from .errors import ConfigError
from .network import Bus, DeviceConnection, Line, NetworkModel

_PHASE_INDEX = {"a": 0, "b": 1, "c": 2}


def _single_phase_block(phase: str, z: complex) -> np.ndarray:
    y = np.zeros((3, 3), dtype=complex)
    i = _PHASE_INDEX[phase]
    y[i, i] = 1.0 / z
    return y


def _trunk_block(z_self: complex, z_mut: complex) -> np.ndarray:
    z = np.full((3, 3), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    return np.linalg.inv(z)


def two_bus_feeder() -> NetworkModel:
    """Single-phase feeder with one connection point behind one line."""
    return NetworkModel(
        buses=[Bus("sub", ("a",)), Bus("b1", ("a",))],
        lines=[Line("sub", "b1", ("a",), _single_phase_block("a", 0.01 + 0.01j))],
        substation="sub",
        v0=np.array([1.0 + 0.0j]),
        connections=[DeviceConnection("cw", "b1", "wye", ("a",))],
    )


def eight_bus_feeder() -> NetworkModel:
    """Radial three-phase feeder: a trunk of four buses with three
    single-phase laterals, mixing wye and delta connection points."""
    trunk = _trunk_block(0.02 + 0.04j, 0.005 + 0.01j)
    v0 = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    abc = ("a", "b", "c")
    return NetworkModel(
        buses=[
            Bus("sub", abc), Bus("b1", abc), Bus("b2", abc), Bus("b3", abc),
            Bus("b4", ("a",)), Bus("b5", ("b",)), Bus("b6", ("c",)),
            Bus("b7", abc),
        ],
        lines=[
            Line("sub", "b1", abc, trunk),
            Line("b1", "b2", abc, trunk),
            Line("b2", "b3", abc, trunk),
            Line("b1", "b4", ("a",), _single_phase_block("a", 0.03 + 0.03j)),
            Line("b2", "b5", ("b",), _single_phase_block("b", 0.03 + 0.03j)),
            Line("b3", "b6", ("c",), _single_phase_block("c", 0.03 + 0.03j)),
            Line("b3", "b7", abc, trunk),
        ],
        substation="sub",
        v0=v0,
        connections=[
            DeviceConnection("gen_site", "b2", "wye", abc),
            DeviceConnection("store_site", "b3", "delta", ("ab",)),
            DeviceConnection("cool_site", "b4", "wye", ("a",)),
            DeviceConnection("defer_site", "b5", "wye", ("b",)),
            DeviceConnection("load_site_c", "b6", "wye", ("c",)),
            DeviceConnection("mixed_site", "b7", "wye", abc),
        ],
    )


def two_bus_fleet() -> list[FleetDevice]:
    """Generator plus storage plus a fixed load: the workhorse fleet."""
    return [
        FleetDevice("pv1", "pv", "cw", PvParams(p_lo=0.0, p_hi=0.3, s_max=0.45)),
        FleetDevice("es1", "es", "cw", EsParams(
            p_lo=-0.2, p_hi=0.2, s_max=0.3, e0=0.4, e_lo=0.1, e_hi=0.7)),
        FleetDevice("ld1", "load", "cw", LoadParams(p=0.1, q=0.02)),
    ]


def two_bus_coupled_fleet() -> list[FleetDevice]:
    """Lossy storage plus a late generation window.

    Retention below one ties the storage periods together through the
    terminal-neutrality row.  A coupled two-scenario baseline must hold
    the storage to one schedule across both extremes, so only the late
    generator contributes width; treating every extreme with fresh
    recourse frees the storage in the early period as well.
    """
    return [
        FleetDevice("es1", "es", "cw", EsParams(
            p_lo=-1.0, p_hi=1.0, s_max=1.5, e0=0.5, e_lo=0.0, e_hi=2.0,
            kappa=0.5)),
        FleetDevice("pv1", "pv", "cw", PvParams(
            p_lo=0.0, p_hi=[0.0, 0.8], s_max=1.2)),
        FleetDevice("ld1", "load", "cw", LoadParams(p=0.05, q=0.01)),
    ]


def eight_bus_fleet() -> list[FleetDevice]:
    """One of every device kind spread over the three-phase feeder."""
    return [
        FleetDevice("pv1", "pv", "gen_site", PvParams(
            p_lo=0.0, p_hi=0.15, s_max=0.2)),
        FleetDevice("es1", "es", "store_site", EsParams(
            p_lo=-0.12, p_hi=0.12, s_max=0.18, e0=0.2, e_lo=0.05, e_hi=0.4,
            kappa=0.97)),
        FleetDevice("es2", "es_split", "mixed_site", EsParams(
            p_lo=-0.1, p_hi=0.1, s_max=0.15, e0=0.15, e_lo=0.05, e_hi=0.3,
            kappa=0.95, eff_dis=0.92, eff_cha=0.9, cycle_penalty=1e-4)),
        FleetDevice("hv1", "hvac", "cool_site", HvacParams(
            p_max=0.7, eta=0.25, alpha=0.35, beta=-8.0, f0=23.0,
            f_lo=20.0, f_hi=25.0, f_out=31.0, f_comfort=22.5)),
        FleetDevice("dc1", "dcl", "defer_site", DclParams(
            p_lo=0.0, p_hi=0.25, eta=0.2, e_lo=0.1, e_hi=0.3)),
        FleetDevice("ld1", "load", "load_site_c", LoadParams(p=0.08, q=0.02)),
        FleetDevice("ld2", "load", "mixed_site", LoadParams(p=0.06, q=0.015)),
    ]


@dataclass(frozen=True)
class Instance:
    """A bundled feeder-plus-fleet pairing with its default study window."""

    name: str
    description: str
    network: NetworkModel
    fleet: list[FleetDevice]
    horizon: int
    dt_hours: float
    coupled: bool     # carries storage or thermostat coupling across periods
    designated: bool  # the instance on which strict dominance is asserted


def _build_registry() -> dict:
    return {
        "2bus": Instance(
            name="2bus",
            description="single-phase feeder, generator + storage + load",
            network=two_bus_feeder(), fleet=two_bus_fleet(),
            horizon=2, dt_hours=0.5, coupled=True, designated=False),
        "2bus-coupled": Instance(
            name="2bus-coupled",
            description="lossy storage against a late generation window; "
                        "the coupled baseline is strictly narrower here",
            network=two_bus_feeder(), fleet=two_bus_coupled_fleet(),
            horizon=2, dt_hours=1.0, coupled=True, designated=True),
        "8bus": Instance(
            name="8bus",
            description="three-phase radial feeder, every device kind, "
                        "wye and delta connections",
            network=eight_bus_feeder(), fleet=eight_bus_fleet(),
            horizon=3, dt_hours=0.5, coupled=True, designated=False),
    }


def instance_names() -> list[str]:
    return sorted(_build_registry())


def instance(name: str) -> Instance:
    registry = _build_registry()
    if name not in registry:
        raise ConfigError(f"unknown bundled instance {name!r}; "
                          f"available: {', '.join(sorted(registry))}")
    return registry[name]
