"""File formats: feeder and fleet schemas, result tables, manifests.

JSON carries configuration (feeders, fleets, run configs, manifests),
CSV carries tabular results, JSONL carries iteration logs.  Parsers
reject unknown fields so a typo fails loudly instead of silently doing
nothing.  Every number is serialized with 12 significant digits, and no
output embeds a timestamp, so identical inputs produce byte-identical
files.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .apa import AroResult
from .arpa import ArpaResult
from .devices import (DclParams, EsParams, FleetDevice, HvacParams, LoadParams,
                      PvParams)
from .errors import ConfigError
from .network import Bus, DeviceConnection, Line, NetworkModel

Series = Union[float, list[float]]


def fmt12(x) -> str:
    """12-significant-digit decimal rendering used in every table."""
    return f"{float(x):.12g}"


def _round12(obj):
    """Recursively rewrite floats at 12 significant digits for JSON."""
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_round12(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt12(obj))
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return obj


def _strict(model_cls, payload, what: str):
    try:
        return model_cls.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


# ---------------------------------------------------------------------------
# feeder schema


class BusRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    phases: list[str]


class LineRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    from_bus: str
    to_bus: str
    phases: list[str]
    y_series: list[list[list[float]]]  # 3x3 of [re, im]


class ConnectionRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    bus: str
    kind: Literal["wye", "delta"]
    phases: list[str]


class FeederFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    substation: str
    v0: list[list[float]]  # [re, im] per substation phase
    buses: list[BusRecord]
    lines: list[LineRecord]
    connections: list[ConnectionRecord]
    v_lo: float = 0.9
    v_hi: float = 1.1
    i_hi: float | None = None
    s_base_mva: float = 1.0


def _complex_grid(cells, what: str) -> np.ndarray:
    arr = np.asarray(cells, dtype=float)
    if arr.shape != (3, 3, 2):
        raise ConfigError(f"{what}: y_series must be a 3x3 grid of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def feeder_from_payload(payload) -> NetworkModel:
    spec = _strict(FeederFile, payload, "feeder file")
    v0 = np.array([complex(re, im) for re, im in spec.v0])
    return NetworkModel(
        buses=[Bus(b.id, tuple(b.phases)) for b in spec.buses],
        lines=[Line(ln.from_bus, ln.to_bus, tuple(ln.phases),
                    _complex_grid(ln.y_series, f"line {ln.from_bus}-{ln.to_bus}"))
               for ln in spec.lines],
        substation=spec.substation,
        v0=v0,
        connections=[DeviceConnection(c.id, c.bus, c.kind, tuple(c.phases))
                     for c in spec.connections],
        v_lo=spec.v_lo, v_hi=spec.v_hi, i_hi=spec.i_hi,
        s_base_mva=spec.s_base_mva,
    )


def feeder_to_payload(net: NetworkModel, name: str) -> dict:
    def grid(y: np.ndarray):
        return [[[float(y[i, j].real), float(y[i, j].imag)] for j in range(3)]
                for i in range(3)]

    return {
        "name": name,
        "substation": net.substation,
        "v0": [[float(v.real), float(v.imag)] for v in net.v0],
        "buses": [{"id": b.id, "phases": list(b.phases)} for b in net.buses],
        "lines": [{"from_bus": ln.from_bus, "to_bus": ln.to_bus,
                   "phases": list(ln.phases), "y_series": grid(ln.y_series)}
                  for ln in net.lines],
        "connections": [{"id": c.id, "bus": c.bus, "kind": c.kind,
                         "phases": list(c.phases)} for c in net.connections],
        "v_lo": net.v_lo, "v_hi": net.v_hi, "i_hi": net.i_hi,
        "s_base_mva": net.s_base_mva,
    }


def load_feeder(path) -> NetworkModel:
    return feeder_from_payload(_read_json(path, "feeder file"))


# ---------------------------------------------------------------------------
# fleet schema


class PvSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p_lo: Series
    p_hi: Series
    s_max: float


class EsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p_lo: Series
    p_hi: Series
    s_max: float
    e0: float
    e_lo: float
    e_hi: float
    kappa: float = 1.0
    eff_dis: float = 1.0
    eff_cha: float = 1.0
    cycle_penalty: float = 0.0


class DclSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p_lo: Series
    p_hi: Series
    eta: float
    e_lo: float
    e_hi: float


class HvacSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p_max: Series
    eta: float
    alpha: float
    beta: float
    f0: float
    f_lo: float
    f_hi: float
    f_out: Series
    f_comfort: float | None = None


class LoadSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p: Series
    q: Series


class PvRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["pv"]
    connection: str
    params: PvSpec


class EsRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["es"]
    connection: str
    params: EsSpec


class EsSplitRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["es_split"]
    connection: str
    params: EsSpec


class DclRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["dcl"]
    connection: str
    params: DclSpec


class HvacRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["hvac"]
    connection: str
    params: HvacSpec


class LoadRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    kind: Literal["load"]
    connection: str
    params: LoadSpec


DeviceRecord = Annotated[
    Union[PvRecord, EsRecord, EsSplitRecord, DclRecord, HvacRecord, LoadRecord],
    Field(discriminator="kind"),
]


class FleetFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    devices: list[DeviceRecord]


_PARAM_CLS = {"pv": PvParams, "es": EsParams, "es_split": EsParams,
              "dcl": DclParams, "hvac": HvacParams, "load": LoadParams}


def fleet_from_payload(payload) -> list[FleetDevice]:
    spec = _strict(FleetFile, payload, "fleet file")
    fleet = []
    for rec in spec.devices:
        params = _PARAM_CLS[rec.kind](**rec.params.model_dump())
        fleet.append(FleetDevice(rec.id, rec.kind, rec.connection, params))
    return fleet


def fleet_to_payload(fleet: list[FleetDevice], name: str) -> dict:
    devices = []
    for dev in fleet:
        fields = {}
        for key, val in vars(dev.params).items():
            if isinstance(val, np.ndarray):
                val = val.tolist()
            fields[key] = val
        devices.append({"id": dev.id, "kind": dev.kind,
                        "connection": dev.connection_id, "params": fields})
    return {"name": name, "devices": devices}


def load_fleet(path) -> list[FleetDevice]:
    return fleet_from_payload(_read_json(path, "fleet file"))


# ---------------------------------------------------------------------------
# run configuration


class CostFile(BaseModel):
    model_config = ConfigDict(extra="forbid")
    es_cycle: Union[float, dict[str, float]] = 0.0
    hvac_comfort: Union[float, dict[str, float]] = 0.0
    pv_operating: Union[float, dict[str, float]] = 0.0
    pv_curtail: Union[float, dict[str, float]] = 0.0
    energy_price: Series = 0.0
    segments: int = 16


class RunConfig(BaseModel):
    """Top-level run description consumed by the solve command."""

    model_config = ConfigDict(extra="forbid")
    mode: Literal["apa", "arpa", "pd", "verify", "scan"]
    feeder: str
    fleet: str
    horizon: int = Field(ge=1)
    dt_hours: float = Field(gt=0.0)
    out_dir: str = "."
    seed: int = 0
    epsilon: float = 1e-6
    big_m: float | None = None
    heuristic: bool = False
    n_samples: int = 200
    resolution: float = 0.5
    p_range: tuple[float, float] | None = None  # scan window, MW
    q_range: tuple[float, float] | None = None  # scan window, MVar
    theta: float = 0.0
    regulation: str | None = None      # trajectory CSV for pd mode
    intervals: str | None = None       # intervals CSV for verify mode
    cost: CostFile | None = None


def load_run_config(path) -> RunConfig:
    return _strict(RunConfig, _read_json(path, "run config"), "run config")


def _read_json(path, what: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {p} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# bundled data


def bundled_path(kind: str, name: str) -> Path:
    """Path of a bundled feeder/fleet JSON inside the installed package."""
    fname = f"{kind}_{name.replace('-', '_')}.json"
    root = resources.files("flexagg").joinpath("data")
    path = Path(str(root.joinpath(fname)))
    if not path.exists():
        raise ConfigError(f"no bundled {kind} named {name!r}")
    return path


# ---------------------------------------------------------------------------
# result tables


def write_intervals_csv(path, result: AroResult):
    lines = ["t,p_lo_MW,p_hi_MW"]
    for t in range(len(result.p_lo)):
        lines.append(f"{t},{fmt12(result.p_lo[t])},{fmt12(result.p_hi[t])}")
    _write_text(path, "\n".join(lines) + "\n")


def read_intervals_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_csv(path, ["t", "p_lo_MW", "p_hi_MW"])
    lo = np.array([float(r["p_lo_MW"]) for r in rows])
    hi = np.array([float(r["p_hi_MW"]) for r in rows])
    return lo, hi


def write_ellipses_csv(path, result: ArpaResult):
    """Per-period ellipse table.

    y1 and y2 are the semi-axis lengths along the rotated frame; y3 is the
    off-diagonal entry of the assembled shape matrix (zero when theta is 0),
    written out so plotting tools can rebuild the matrix without trig.
    """
    off = result.off_diagonal
    lines = ["t,pc_MW,qc_MVar,y1,y2,y3,theta"]
    for t in range(len(result.center)):
        lines.append(",".join([
            str(t),
            fmt12(result.center[t, 0]), fmt12(result.center[t, 1]),
            fmt12(result.axes[t, 0]), fmt12(result.axes[t, 1]),
            fmt12(off[t]), fmt12(result.theta[t]),
        ]))
    _write_text(path, "\n".join(lines) + "\n")


def read_ellipses_csv(path) -> ArpaResult:
    rows = _read_csv(path, ["t", "pc_MW", "qc_MVar", "y1", "y2", "y3",
                            "theta"])
    center = np.array([[float(r["pc_MW"]), float(r["qc_MVar"])] for r in rows])
    axes = np.array([[float(r["y1"]), float(r["y2"])] for r in rows])
    theta = np.array([float(r["theta"]) for r in rows])
    return ArpaResult(center=center, axes=axes, theta=theta, status="loaded",
                      rounds=[], scenarios=[], schedules=[], degenerate=[],
                      dt_hours=0.0)


def write_ellipse_points_csv(path, result: ArpaResult, n: int = 64):
    """Boundary samples of every period ellipse, ready for scatter plots."""
    lines = ["t,p_MW,q_MVar"]
    for t in range(len(result.center)):
        for point in result.boundary_points(t, n):
            lines.append(f"{t},{fmt12(point[0])},{fmt12(point[1])}")
    _write_text(path, "\n".join(lines) + "\n")


def write_grid_csv(path, scan):
    lines = ["p_MW,q_MVar,feasible"]
    for p, q, ok in scan.rows():
        lines.append(f"{fmt12(p)},{fmt12(q)},{1 if ok else 0}")
    _write_text(path, "\n".join(lines) + "\n")


def write_schedule_csv(path, names, x, p0, q0):
    """Per-period dispatch table, one column per decision variable."""
    x = np.asarray(x, dtype=float)
    lines = ["t," + ",".join(names) + ",p0_MW,q0_MVar"]
    for t in range(x.shape[0]):
        cells = [str(t)] + [fmt12(v) for v in x[t]]
        cells += [fmt12(p0[t]), fmt12(q0[t])]
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def read_regulation_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Trajectory input: columns t,p_reg_MW and optionally q_reg_MVar."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"regulation file not found: {p}")
    text = p.read_text().strip().splitlines()
    if not text:
        raise ConfigError(f"regulation file {p} is empty")
    header = [h.strip() for h in text[0].split(",")]
    if header[:2] != ["t", "p_reg_MW"]:
        raise ConfigError(f"regulation file {p} must start with columns "
                          "t,p_reg_MW")
    has_q = len(header) > 2 and header[2] == "q_reg_MVar"
    p_reg, q_reg = [], []
    for line in text[1:]:
        cells = line.split(",")
        p_reg.append(float(cells[1]))
        if has_q:
            q_reg.append(float(cells[2]))
    return np.array(p_reg), (np.array(q_reg) if has_q else None)


def _read_csv(path, columns) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"result file not found: {p}")
    text = p.read_text().strip().splitlines()
    header = [h.strip() for h in text[0].split(",")]
    if header != columns:
        raise ConfigError(f"{p} has columns {header}, expected {columns}")
    return [dict(zip(header, line.split(","))) for line in text[1:]]


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# logs, reports, manifests


def round_tree(obj):
    """Apply 12-significant-digit rounding through nested dicts and lists."""
    return _round12(obj)


def round_payload(rec) -> dict:
    """One iteration record as a JSON-ready dict."""
    row = {}
    for key, val in vars(rec).items():
        if isinstance(val, np.ndarray):
            val = val.tolist()
        row[key] = val
    return _round12(row)


def write_log_jsonl(path, rounds):
    rows = [rec if isinstance(rec, dict) else round_payload(rec)
            for rec in rounds]
    lines = [json.dumps(_round12(row), sort_keys=True) for row in rows]
    _write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def write_report_json(path, payload: dict):
    _write_text(path, json.dumps(_round12(payload), indent=2, sort_keys=True)
                + "\n")


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, inputs: dict, settings: dict):
    """Run provenance: input hashes plus the settings that shaped the run.

    Deliberately carries no timestamps or host details so reruns with the
    same inputs are byte-identical.
    """
    from . import __version__

    payload = {
        "format_version": 1,
        "package": {"name": "flexagg", "version": __version__},
        "inputs": {name: {"file": Path(p).name, "sha256": sha256_of(p)}
                   for name, p in sorted(inputs.items())},
        "settings": _round12(settings),
    }
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
