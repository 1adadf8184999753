"""HTTP facade over the aggregation and dispatch library.

Every computation the package offers is reachable through a small JSON
API.  The command-line client drives this app in process through an ASGI
transport, so no network daemon is required for batch work; ``flexagg
serve`` mounts the same app in uvicorn for interactive use.

Error contract: invalid inputs map to 400 (or 422 when the request body
itself fails validation), an empty operating set maps to 409, and
numerical failures map to 500.  Endpoints whose job is to report on
feasibility (/disaggregate, /solve) return infeasibility as a structured
200 answer instead, because there a "no" is a result, not an error.
"""

from typing import Literal, Optional, Union

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import __version__, toys
from .apa import AroOptions, AroResult, solve_apa
from .arpa import ArpaOptions, ArpaResult, rotation_grid_scan, solve_arpa
from .compact import CompactModel, build_scenario_model
from .disagg import (CostParams, monte_carlo_verify, pq_grid_scan, solve_pd)
from .errors import (BadArity, ConfigError, ConicPresent, DimensionMismatch,
                     FlexaggError, InconsistentLayout, InfeasibleParams,
                     ModelInfeasible, SingularAdmittance)
from .io import (CostFile, FeederFile, FleetFile, feeder_from_payload,
                 fleet_from_payload, round_tree)
from .mps import read_mps
from .solver import SolverOptions, solve_lp, solve_milp

_BAD_INPUT = (ConfigError, DimensionMismatch, InconsistentLayout,
              InfeasibleParams, BadArity, ConicPresent, SingularAdmittance)

app = FastAPI(title="flexagg", version=__version__)


@app.exception_handler(FlexaggError)
async def _flexagg_error(request: Request, exc: FlexaggError):
    if isinstance(exc, _BAD_INPUT):
        code = 400
    elif isinstance(exc, ModelInfeasible):
        code = 409
    else:
        code = 500
    return JSONResponse(status_code=code,
                        content={"error": type(exc).__name__,
                                 "detail": str(exc)})


# ---------------------------------------------------------------------------
# request bodies


class ProblemSpec(BaseModel):
    """Which feeder and fleet to study, bundled or inline."""

    model_config = ConfigDict(extra="forbid")
    instance: Optional[str] = None
    feeder: Optional[FeederFile] = None
    fleet: Optional[FleetFile] = None
    horizon: Optional[int] = Field(default=None, ge=1)
    dt_hours: Optional[float] = Field(default=None, gt=0.0)


class AggregateActiveRequest(ProblemSpec):
    epsilon: float = 1e-6
    big_m: Optional[float] = None
    max_rounds: Optional[int] = None
    heuristic: bool = False
    target: Literal["active", "reactive"] = "active"


class AggregatePqRequest(ProblemSpec):
    epsilon: float = 1e-6
    big_m: Optional[float] = None
    theta: Union[float, list[float]] = 0.0
    scan_rotations: bool = False
    angles: Optional[list[float]] = None


class DisaggregateRequest(ProblemSpec):
    p_reg: list[float]
    q_reg: Optional[list[float]] = None
    cost: Optional[CostFile] = None


class IntervalsBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p_lo: list[float]
    p_hi: list[float]


class EllipsesBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    center: list[list[float]]   # (T, 2)
    axes: list[list[float]]     # (T, 2)
    theta: list[float]          # (T,)


class VerifyRequest(ProblemSpec):
    intervals: Optional[IntervalsBody] = None
    ellipses: Optional[EllipsesBody] = None
    n: int = Field(default=200, ge=1)
    seed: int = 0


class ScanPqRequest(ProblemSpec):
    resolution: float = Field(gt=0.0)
    p_range: Optional[tuple[float, float]] = None
    q_range: Optional[tuple[float, float]] = None
    ellipses: Optional[EllipsesBody] = None


class SolveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mps: str
    feas_tol: float = 1e-7


# ---------------------------------------------------------------------------
# shared helpers


def build_model(spec: ProblemSpec) -> CompactModel:
    """Assemble the operating model a request describes."""
    if spec.instance is not None:
        if spec.feeder is not None or spec.fleet is not None:
            raise ConfigError("give either a bundled instance name or an "
                              "inline feeder and fleet, not both")
        inst = toys.instance(spec.instance)
        net, fleet = inst.network, inst.fleet
        horizon = spec.horizon if spec.horizon is not None else inst.horizon
        dt = spec.dt_hours if spec.dt_hours is not None else inst.dt_hours
    else:
        if spec.feeder is None or spec.fleet is None:
            raise ConfigError("request needs an instance name or both an "
                              "inline feeder and fleet")
        if spec.horizon is None or spec.dt_hours is None:
            raise ConfigError("inline problems must state horizon and "
                              "dt_hours")
        net = feeder_from_payload(spec.feeder)
        fleet = fleet_from_payload(spec.fleet)
        horizon, dt = spec.horizon, spec.dt_hours
    return build_scenario_model(net, fleet, horizon, dt)


def _ellipse_region(body: EllipsesBody) -> ArpaResult:
    center = np.asarray(body.center, dtype=float)
    axes = np.asarray(body.axes, dtype=float)
    theta = np.asarray(body.theta, dtype=float)
    if center.shape != axes.shape or center.ndim != 2 or center.shape[1] != 2:
        raise DimensionMismatch("center and axes must both be (T, 2)")
    if theta.shape != (center.shape[0],):
        raise DimensionMismatch("theta must carry one angle per period")
    return ArpaResult(center=center, axes=axes, theta=theta, status="loaded",
                      rounds=[], scenarios=[], schedules=[], degenerate=[],
                      dt_hours=0.0)


def _interval_log(res: AroResult) -> list:
    """Per-round progress rows; timing is omitted so logs replay identically."""
    return [round_tree({
        "round_index": r.round_index,
        "master_objective": r.master_objective,
        "sub_objective": r.sub_objective,
        "scenario": list(r.scenario) if r.scenario is not None else None,
        "big_m": r.big_m,
    }) for r in res.rounds]


def _ellipse_log(res: ArpaResult) -> list:
    return [round_tree({
        "round_index": r.round_index,
        "master_objective": r.master_objective,
        "sub_objective": r.sub_objective,
        "assignment": list(r.assignment) if r.assignment is not None else None,
        "cuts": r.cuts,
        "big_m": r.big_m,
    }) for r in res.rounds]


def interval_payload(res: AroResult) -> dict:
    return {
        "status": res.status,
        "target": res.target,
        "dt_hours": res.dt_hours,
        "p_lo": round_tree(res.p_lo),
        "p_hi": round_tree(res.p_hi),
        "width": round_tree(res.width),
        "energy_mwh": round_tree(res.energy_mwh),
        "rounds": len(res.rounds),
        "log": _interval_log(res),
    }


def ellipse_payload(res: ArpaResult) -> dict:
    return {
        "status": res.status,
        "dt_hours": res.dt_hours,
        "center": round_tree(res.center),
        "axes": round_tree(res.axes),
        "theta": round_tree(res.theta),
        "off_diagonal": round_tree(res.off_diagonal),
        "log_area": round_tree(res.log_area),
        "degenerate": [list(pair) for pair in res.degenerate],
        "rounds": len(res.rounds),
        "log": _ellipse_log(res),
    }


# ---------------------------------------------------------------------------
# endpoints


@app.get("/health")
async def health():
    return {"status": "ok", "version": __version__}


@app.get("/instances")
async def instances():
    out = []
    for name in toys.instance_names():
        inst = toys.instance(name)
        out.append({"name": inst.name, "description": inst.description,
                    "horizon": inst.horizon, "dt_hours": inst.dt_hours,
                    "coupled": inst.coupled, "designated": inst.designated})
    return {"instances": out}


@app.post("/aggregate/active")
async def aggregate_active(req: AggregateActiveRequest):
    model = build_model(req)
    options = AroOptions(epsilon=req.epsilon, big_m=req.big_m,
                         max_rounds=req.max_rounds, heuristic=req.heuristic,
                         target=req.target)
    result = solve_apa(model, options)
    return interval_payload(result)


@app.post("/aggregate/pq")
async def aggregate_pq(req: AggregatePqRequest):
    model = build_model(req)
    theta = req.theta if np.isscalar(req.theta) else np.asarray(req.theta)
    options = ArpaOptions(epsilon=req.epsilon, big_m=req.big_m, theta=theta)
    if req.scan_rotations:
        angles = None if req.angles is None else np.asarray(req.angles)
        result, table = rotation_grid_scan(model, angles, options)
        payload = ellipse_payload(result)
        payload["scan_table"] = [
            {"theta": round_tree(th), "log_area": round_tree(area),
             "status": status}
            for th, area, status in table]
        return payload
    result = solve_arpa(model, options)
    return ellipse_payload(result)


@app.post("/disaggregate")
async def disaggregate(req: DisaggregateRequest):
    model = build_model(req)
    cost = None
    if req.cost is not None:
        fields = req.cost.model_dump()
        price = fields.pop("energy_price")
        cost = CostParams(energy_price=np.asarray(price, dtype=float)
                          if isinstance(price, list) else price, **fields)
    try:
        sched = solve_pd(model, np.asarray(req.p_reg, dtype=float),
                         None if req.q_reg is None
                         else np.asarray(req.q_reg, dtype=float),
                         cost=cost)
    except ModelInfeasible as exc:
        return {"feasible": False, "detail": str(exc)}
    columns = [f"{v.device_id}.{v.fieldname}.{v.phase}"
               for v in model.layout.per_period]
    return {
        "feasible": True,
        "columns": columns,
        "x": round_tree(sched.x),
        "p0": round_tree(sched.p0),
        "q0": round_tree(sched.q0),
        "states": round_tree(sched.states),
        "objective_pwl": round_tree(sched.objective_pwl),
        "objective_exact": round_tree(sched.objective_exact),
        "pwl_gap_bound": round_tree(sched.pwl_gap_bound),
        "max_violation": round_tree(sched.max_violation),
    }


@app.post("/verify")
async def verify(req: VerifyRequest):
    model = build_model(req)
    if (req.intervals is None) == (req.ellipses is None):
        raise ConfigError("give exactly one of intervals or ellipses")
    if req.intervals is not None:
        region = (np.asarray(req.intervals.p_lo, dtype=float),
                  np.asarray(req.intervals.p_hi, dtype=float))
    else:
        region = _ellipse_region(req.ellipses)
    report = monte_carlo_verify(model, region, n=req.n, seed=req.seed)
    return {
        "feasible_count": report.feasible_count,
        "total": report.total,
        "feasible_rate": round_tree(report.feasible_rate),
        "seed": report.seed,
        "failures": [
            {"index": f.index, "p_reg": round_tree(f.p_reg),
             "q_reg": round_tree(f.q_reg), "detail": f.detail}
            for f in report.failures],
    }


@app.post("/scan-pq")
async def scan_pq(req: ScanPqRequest):
    model = build_model(req)
    region = None if req.ellipses is None else _ellipse_region(req.ellipses)
    scan = pq_grid_scan(model, req.resolution, p_range=req.p_range,
                        q_range=req.q_range, region=region)
    payload = {
        "resolution": round_tree(scan.resolution),
        "p_values": round_tree(scan.p_values),
        "q_values": round_tree(scan.q_values),
        "feasible": scan.feasible.astype(int).tolist(),
        "n_feasible": int(scan.feasible.sum()),
    }
    if scan.in_region is not None:
        payload["in_region"] = scan.in_region.astype(int).tolist()
        payload["containment_ok"] = bool(scan.containment_ok)
    return payload


@app.post("/solve")
async def solve(req: SolveRequest):
    problem = read_mps(req.mps)
    opts = SolverOptions(feas_tol=req.feas_tol)
    if problem.binaries:
        sol = solve_milp(problem, opts)
    else:
        sol = solve_lp(problem.lp, opts)
    return {
        "status": sol.status,
        "objective": round_tree(sol.objective),
        "x": round_tree(sol.x) if sol.x is not None else None,
        "iters": sol.iters,
        "nodes": sol.nodes,
        "bound": round_tree(sol.bound),
        "gap": round_tree(sol.gap),
    }
