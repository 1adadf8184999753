"""Command-line client for the flexibility service.

Each subcommand builds a JSON request, sends it to the HTTP app (in
process by default, over the wire with --server), and serializes the
answer into plot-ready artifact files: CSV tables, a JSONL iteration
log, and a manifest recording input hashes and settings.

Exit codes: 0 success, 1 bad configuration or input, 2 model
infeasibility, 3 numerical failure.
"""

import asyncio
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import click
import httpx
import numpy as np

from . import io
from .errors import ConfigError

log = logging.getLogger("flexagg.cli")

_EXIT_BAD_INPUT = 1
_EXIT_INFEASIBLE = 2
_EXIT_NUMERICAL = 3


@dataclass
class CliState:
    threads: int = 1
    tol: float = 1e-6
    big_m: float | None = None
    seed: int = 0
    server: str | None = None


class ServiceClient:
    """Blocking JSON client; drives the app in process unless a URL is given."""

    def __init__(self, server: str | None = None):
        self.server = server

    def request(self, method: str, path: str, payload=None):
        if self.server:
            resp = httpx.request(method, self.server.rstrip("/") + path,
                                 json=payload, timeout=600.0)
            return resp.status_code, resp.json()

        from .service import app

        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://flexagg",
                                         timeout=600.0) as client:
                return await client.request(method, path, json=payload)

        resp = asyncio.run(go())
        return resp.status_code, resp.json()

    def get(self, path: str):
        return self.request("GET", path)

    def post(self, path: str, payload: dict):
        return self.request("POST", path, payload)


def _demand_ok(status: int, body):
    """Return the body on success, exit with the mapped code otherwise."""
    if status < 400:
        return body
    detail = body.get("detail", body) if isinstance(body, dict) else body
    click.echo(f"error: {detail}", err=True)
    if status in (400, 422):
        raise SystemExit(_EXIT_BAD_INPUT)
    if status == 409:
        raise SystemExit(_EXIT_INFEASIBLE)
    raise SystemExit(_EXIT_NUMERICAL)


def _problem_payload(instance, feeder, ders, horizon, dt_hours):
    """Build the problem part of a request plus the files to fingerprint."""
    if instance is not None:
        payload = {"instance": instance}
        inputs = {}
        try:
            inputs = {"feeder": io.bundled_path("feeder", instance),
                      "fleet": io.bundled_path("fleet", instance)}
        except ConfigError:
            pass  # name is validated server-side; manifest just goes without
    else:
        if feeder is None or ders is None:
            raise ConfigError("give --instance, or --feeder and --ders "
                              "together")
        if horizon is None or dt_hours is None:
            raise ConfigError("--feeder/--ders input needs --horizon and "
                              "--dt as well")
        payload = {"feeder": io._read_json(feeder, "feeder file"),
                   "fleet": io._read_json(ders, "fleet file")}
        inputs = {"feeder": feeder, "fleet": ders}
    if horizon is not None:
        payload["horizon"] = horizon
    if dt_hours is not None:
        payload["dt_hours"] = dt_hours
    return payload, inputs


def _settings(state: CliState, mode: str, **extra) -> dict:
    base = {"mode": mode, "tol": state.tol, "big_m": state.big_m,
            "seed": state.seed, "threads": state.threads}
    base.update(extra)
    return base


def _sibling(out_path, name: str) -> Path:
    return Path(out_path).parent / name


_problem_options = [
    click.option("--instance", default=None,
                 help="bundled instance name (see `flexagg instances`)"),
    click.option("--feeder", default=None, help="feeder JSON file"),
    click.option("--ders", default=None, help="DER fleet JSON file"),
    click.option("--horizon", type=int, default=None,
                 help="number of dispatch periods"),
    click.option("--dt", "dt_hours", type=float, default=None,
                 help="period length in hours"),
]


def problem_options(fn):
    for opt in reversed(_problem_options):
        fn = opt(fn)
    return fn


@click.group()
@click.option("--threads", type=int, default=1, show_default=True,
              help="worker threads; the embedded solver runs single-threaded "
                   "for determinism, so values above 1 are accepted but "
                   "currently ignored")
@click.option("--tol", type=float, default=1e-6, show_default=True,
              help="convergence tolerance in MW")
@click.option("--big-m", type=float, default=None,
              help="dual linearization bound (default: automatic)")
@click.option("--seed", type=int, default=0, show_default=True,
              help="random seed for sampling commands")
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]),
              help="stderr log verbosity")
@click.option("--server", default=None, metavar="URL",
              help="base URL of a running service; default runs in process")
@click.pass_context
def main(ctx, threads, tol, big_m, seed, log_level, server):
    """Aggregate power flexibility toolkit."""
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    if threads > 1:
        log.info("running single-threaded; --threads is reserved")
    ctx.obj = CliState(threads=threads, tol=tol, big_m=big_m, seed=seed,
                       server=server)


@main.command()
@click.pass_obj
def instances(state):
    """List the bundled example instances."""
    body = _demand_ok(*ServiceClient(state.server).get("/instances"))
    for inst in body["instances"]:
        mark = " (designated coupled case)" if inst["designated"] else ""
        click.echo(f"{inst['name']}: {inst['description']}; horizon "
                   f"{inst['horizon']} x {inst['dt_hours']} h{mark}")


@main.command("aggregate-p")
@problem_options
@click.option("--heuristic", is_flag=True,
              help="two-scenario coupled baseline instead of the full loop")
@click.option("--target", type=click.Choice(["active", "reactive"]),
              default="active", show_default=True)
@click.option("--max-rounds", type=int, default=None)
@click.option("--out", default="intervals.csv", show_default=True,
              help="output CSV path; log.jsonl and manifest.json go next "
                   "to it")
@click.pass_obj
def aggregate_p(state, instance, feeder, ders, horizon, dt_hours, heuristic,
                target, max_rounds, out):
    """Compute per-period dispatchable active-power intervals."""
    try:
        payload, inputs = _problem_payload(instance, feeder, ders, horizon,
                                           dt_hours)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    payload.update({"epsilon": state.tol, "big_m": state.big_m,
                    "heuristic": heuristic, "target": target,
                    "max_rounds": max_rounds})
    body = _demand_ok(*ServiceClient(state.server).post("/aggregate/active",
                                                        payload))
    result = SimpleNamespace(p_lo=np.asarray(body["p_lo"]),
                             p_hi=np.asarray(body["p_hi"]))
    io.write_intervals_csv(out, result)
    io.write_log_jsonl(_sibling(out, "log.jsonl"), body["log"])
    io.write_manifest(_sibling(out, "manifest.json"), inputs,
                      _settings(state, "apa", heuristic=heuristic,
                                target=target, horizon=horizon,
                                dt_hours=dt_hours, instance=instance))
    click.echo(f"{body['status']} in {body['rounds']} rounds; "
               f"dispatchable energy {body['energy_mwh']} MWh -> {out}")


@main.command("aggregate-pq")
@problem_options
@click.option("--theta", type=float, default=0.0, show_default=True,
              help="ellipse axis rotation in radians")
@click.option("--scan-rotations", is_flag=True,
              help="grid-scan rotation angles and keep the best region")
@click.option("--out", default="ellipses.csv", show_default=True)
@click.pass_obj
def aggregate_pq(state, instance, feeder, ders, horizon, dt_hours, theta,
                 scan_rotations, out):
    """Compute per-period active-reactive ellipses.

    Writes the ellipse table plus a companion *_points.csv with 64
    boundary samples per period for plotting.
    """
    try:
        payload, inputs = _problem_payload(instance, feeder, ders, horizon,
                                           dt_hours)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    payload.update({"epsilon": state.tol, "big_m": state.big_m,
                    "theta": theta, "scan_rotations": scan_rotations})
    body = _demand_ok(*ServiceClient(state.server).post("/aggregate/pq",
                                                        payload))
    from .arpa import ArpaResult
    result = ArpaResult(center=np.asarray(body["center"]),
                        axes=np.asarray(body["axes"]),
                        theta=np.asarray(body["theta"]),
                        status=body["status"], rounds=[], scenarios=[],
                        schedules=[], degenerate=body["degenerate"],
                        dt_hours=body["dt_hours"])
    io.write_ellipses_csv(out, result)
    points_name = Path(out).stem + "_points.csv"
    io.write_ellipse_points_csv(_sibling(out, points_name), result, n=64)
    io.write_log_jsonl(_sibling(out, "log.jsonl"), body["log"])
    io.write_manifest(_sibling(out, "manifest.json"), inputs,
                      _settings(state, "arpa", theta=theta,
                                scan_rotations=scan_rotations,
                                horizon=horizon, dt_hours=dt_hours,
                                instance=instance))
    click.echo(f"{body['status']} in {body['rounds']} rounds; log area "
               f"{body['log_area']} -> {out}")


@main.command()
@problem_options
@click.option("--regulation", required=True,
              help="trajectory CSV with columns t,p_reg_MW[,q_reg_MVar]")
@click.option("--cost", "cost_path", default=None,
              help="operating-cost JSON; omitted means pure feasibility")
@click.option("--out", default="schedule.csv", show_default=True)
@click.pass_obj
def disaggregate(state, instance, feeder, ders, horizon, dt_hours,
                 regulation, cost_path, out):
    """Dispatch the fleet to track a requested substation trajectory."""
    try:
        payload, inputs = _problem_payload(instance, feeder, ders, horizon,
                                           dt_hours)
        p_reg, q_reg = io.read_regulation_csv(regulation)
        if cost_path is not None:
            payload["cost"] = io._read_json(cost_path, "cost file")
            inputs["cost"] = cost_path
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    inputs["regulation"] = regulation
    payload["p_reg"] = p_reg.tolist()
    if q_reg is not None:
        payload["q_reg"] = q_reg.tolist()
    body = _demand_ok(*ServiceClient(state.server).post("/disaggregate",
                                                        payload))
    report_path = _sibling(out, "report.json")
    io.write_manifest(_sibling(out, "manifest.json"), inputs,
                      _settings(state, "pd", horizon=horizon,
                                dt_hours=dt_hours, instance=instance))
    if not body["feasible"]:
        io.write_report_json(report_path, body)
        click.echo(f"infeasible: {body['detail']}", err=True)
        raise SystemExit(_EXIT_INFEASIBLE)
    io.write_schedule_csv(out, body["columns"], body["x"], body["p0"],
                          body["q0"])
    io.write_report_json(report_path, {
        "feasible": True,
        "objective_pwl": body["objective_pwl"],
        "objective_exact": body["objective_exact"],
        "pwl_gap_bound": body["pwl_gap_bound"],
        "max_violation": body["max_violation"],
        "states": body["states"],
    })
    click.echo(f"dispatched; exact cost {body['objective_exact']} -> {out}")


@main.command()
@problem_options
@click.option("--intervals", "intervals_path", default=None,
              help="intervals CSV produced by aggregate-p")
@click.option("--ellipses", "ellipses_path", default=None,
              help="ellipse CSV produced by aggregate-pq")
@click.option("--n", type=int, default=200, show_default=True,
              help="number of sampled trajectories")
@click.option("--seed", type=int, default=None,
              help="sampling seed (defaults to the global --seed)")
@click.option("--out", default="report.json", show_default=True)
@click.pass_obj
def verify(state, instance, feeder, ders, horizon, dt_hours, intervals_path,
           ellipses_path, n, seed, out):
    """Monte Carlo audit: sample the region, dispatch every draw."""
    if (intervals_path is None) == (ellipses_path is None):
        click.echo("error: give exactly one of --intervals or --ellipses",
                   err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    try:
        payload, inputs = _problem_payload(instance, feeder, ders, horizon,
                                           dt_hours)
        if intervals_path is not None:
            lo, hi = io.read_intervals_csv(intervals_path)
            payload["intervals"] = {"p_lo": lo.tolist(), "p_hi": hi.tolist()}
            inputs["intervals"] = intervals_path
        else:
            region = io.read_ellipses_csv(ellipses_path)
            payload["ellipses"] = {"center": region.center.tolist(),
                                   "axes": region.axes.tolist(),
                                   "theta": region.theta.tolist()}
            inputs["ellipses"] = ellipses_path
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    use_seed = state.seed if seed is None else seed
    payload.update({"n": n, "seed": use_seed})
    body = _demand_ok(*ServiceClient(state.server).post("/verify", payload))
    io.write_report_json(out, body)
    io.write_manifest(_sibling(out, "manifest.json"), inputs,
                      _settings(state, "verify", n=n, seed=use_seed,
                                horizon=horizon, dt_hours=dt_hours,
                                instance=instance))
    click.echo(f"feasible rate {body['feasible_rate']} "
               f"({body['feasible_count']}/{body['total']}) -> {out}")


@main.command("scan-pq")
@problem_options
@click.option("--res", type=float, default=0.5, show_default=True,
              help="grid resolution in MW / MVar")
@click.option("--p-range", type=(float, float), default=None,
              help="active power window, two values")
@click.option("--q-range", type=(float, float), default=None,
              help="reactive power window, two values")
@click.option("--ellipses", "ellipses_path", default=None,
              help="ellipse CSV; its first period sets the window and is "
                   "checked for containment")
@click.option("--out", default="grid.csv", show_default=True)
@click.pass_obj
def scan_pq(state, instance, feeder, ders, horizon, dt_hours, res, p_range,
            q_range, ellipses_path, out):
    """Exhaustive single-period P-Q feasibility scan."""
    try:
        payload, inputs = _problem_payload(instance, feeder, ders,
                                           horizon if horizon else 1,
                                           dt_hours)
        if ellipses_path is not None:
            region = io.read_ellipses_csv(ellipses_path)
            payload["ellipses"] = {"center": region.center.tolist(),
                                   "axes": region.axes.tolist(),
                                   "theta": region.theta.tolist()}
            inputs["ellipses"] = ellipses_path
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    payload["resolution"] = res
    if p_range is not None:
        payload["p_range"] = list(p_range)
    if q_range is not None:
        payload["q_range"] = list(q_range)
    body = _demand_ok(*ServiceClient(state.server).post("/scan-pq", payload))
    from .disagg import GridScan
    scan = GridScan(p_values=np.asarray(body["p_values"]),
                    q_values=np.asarray(body["q_values"]),
                    feasible=np.asarray(body["feasible"], dtype=bool),
                    in_region=None, resolution=body["resolution"])
    io.write_grid_csv(out, scan)
    io.write_manifest(_sibling(out, "manifest.json"), inputs,
                      _settings(state, "scan", resolution=res,
                                p_range=p_range, q_range=q_range,
                                instance=instance))
    total = len(body["p_values"]) * len(body["q_values"])
    note = ""
    if "containment_ok" in body:
        note = ("; region containment ok" if body["containment_ok"]
                else "; REGION CONTAINS INFEASIBLE POINTS")
    click.echo(f"{body['n_feasible']}/{total} grid points dispatchable"
               f"{note} -> {out}")


@main.command()
@click.argument("model_file")
@click.option("--out", default=None, help="write the answer as JSON")
@click.pass_obj
def solve(state, model_file, out):
    """Solve a raw optimization model in MPS format."""
    path = Path(model_file)
    if not path.exists():
        click.echo(f"error: model file not found: {model_file}", err=True)
        raise SystemExit(_EXIT_BAD_INPUT)
    body = _demand_ok(*ServiceClient(state.server).post(
        "/solve", {"mps": path.read_text()}))
    if out is not None:
        io.write_report_json(out, body)
    click.echo(f"{body['status']}; objective {body['objective']}")
    if body["status"] == "infeasible":
        raise SystemExit(_EXIT_INFEASIBLE)
    if body["status"] != "optimal":
        raise SystemExit(_EXIT_NUMERICAL)


@main.command()
@click.argument("config_file")
@click.pass_obj
def run(state, config_file):
    """Execute a JSON run configuration (see RunConfig)."""
    raise SystemExit(run_config_file(config_file, state))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Serve the HTTP API with uvicorn."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


# ---------------------------------------------------------------------------
# config-driven runner


def run_config_file(path, state: CliState | None = None) -> int:
    """Load a RunConfig JSON file and execute it; returns the exit code."""
    try:
        cfg = io.load_run_config(path)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return _EXIT_BAD_INPUT
    return run_config(cfg, state)


def run_config(cfg: "io.RunConfig", state: CliState | None = None) -> int:
    """Execute one mode of the pipeline as described by a RunConfig.

    Artifact files land in cfg.out_dir under fixed names; every run also
    writes manifest.json there.  Returns the process exit code instead
    of raising SystemExit so it can be embedded.
    """
    state = state or CliState()
    out_dir = Path(cfg.out_dir)
    client = ServiceClient(state.server)

    try:
        problem, inputs = _problem_payload(None, cfg.feeder, cfg.fleet,
                                           cfg.horizon, cfg.dt_hours)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return _EXIT_BAD_INPUT

    def finish(settings, extra_inputs=None):
        all_inputs = dict(inputs)
        all_inputs.update(extra_inputs or {})
        io.write_manifest(out_dir / "manifest.json", all_inputs, settings)
        return 0

    try:
        if cfg.mode == "apa":
            problem.update({"epsilon": cfg.epsilon, "big_m": cfg.big_m,
                            "heuristic": cfg.heuristic})
            status, body = client.post("/aggregate/active", problem)
            if status >= 400:
                return _demand_exit(status, body)
            result = SimpleNamespace(p_lo=np.asarray(body["p_lo"]),
                                     p_hi=np.asarray(body["p_hi"]))
            io.write_intervals_csv(out_dir / "intervals.csv", result)
            io.write_log_jsonl(out_dir / "log.jsonl", body["log"])
            return finish(_run_settings(cfg))

        if cfg.mode == "arpa":
            problem.update({"epsilon": cfg.epsilon, "big_m": cfg.big_m,
                            "theta": cfg.theta})
            status, body = client.post("/aggregate/pq", problem)
            if status >= 400:
                return _demand_exit(status, body)
            from .arpa import ArpaResult
            result = ArpaResult(center=np.asarray(body["center"]),
                                axes=np.asarray(body["axes"]),
                                theta=np.asarray(body["theta"]),
                                status=body["status"], rounds=[],
                                scenarios=[], schedules=[],
                                degenerate=body["degenerate"],
                                dt_hours=body["dt_hours"])
            io.write_ellipses_csv(out_dir / "ellipses.csv", result)
            io.write_ellipse_points_csv(out_dir / "ellipses_points.csv",
                                        result, n=64)
            io.write_log_jsonl(out_dir / "log.jsonl", body["log"])
            return finish(_run_settings(cfg))

        if cfg.mode == "pd":
            if cfg.regulation is None:
                click.echo("error: pd mode needs a regulation CSV", err=True)
                return _EXIT_BAD_INPUT
            p_reg, q_reg = io.read_regulation_csv(cfg.regulation)
            problem["p_reg"] = p_reg.tolist()
            if q_reg is not None:
                problem["q_reg"] = q_reg.tolist()
            if cfg.cost is not None:
                problem["cost"] = cfg.cost.model_dump()
            status, body = client.post("/disaggregate", problem)
            if status >= 400:
                return _demand_exit(status, body)
            io.write_report_json(out_dir / "report.json", body)
            code = finish(_run_settings(cfg),
                          {"regulation": cfg.regulation})
            if not body["feasible"]:
                click.echo(f"infeasible: {body['detail']}", err=True)
                return _EXIT_INFEASIBLE
            io.write_schedule_csv(out_dir / "schedule.csv", body["columns"],
                                  body["x"], body["p0"], body["q0"])
            return code

        if cfg.mode == "verify":
            if cfg.intervals is None:
                click.echo("error: verify mode needs an intervals CSV",
                           err=True)
                return _EXIT_BAD_INPUT
            lo, hi = io.read_intervals_csv(cfg.intervals)
            problem["intervals"] = {"p_lo": lo.tolist(), "p_hi": hi.tolist()}
            problem.update({"n": cfg.n_samples, "seed": cfg.seed})
            status, body = client.post("/verify", problem)
            if status >= 400:
                return _demand_exit(status, body)
            io.write_report_json(out_dir / "report.json", body)
            return finish(_run_settings(cfg), {"intervals": cfg.intervals})

        # scan
        problem["horizon"] = 1
        problem["resolution"] = cfg.resolution
        if cfg.p_range is not None:
            problem["p_range"] = list(cfg.p_range)
        if cfg.q_range is not None:
            problem["q_range"] = list(cfg.q_range)
        status, body = client.post("/scan-pq", problem)
        if status >= 400:
            return _demand_exit(status, body)
        from .disagg import GridScan
        scan = GridScan(p_values=np.asarray(body["p_values"]),
                        q_values=np.asarray(body["q_values"]),
                        feasible=np.asarray(body["feasible"], dtype=bool),
                        in_region=None, resolution=body["resolution"])
        io.write_grid_csv(out_dir / "grid.csv", scan)
        return finish(_run_settings(cfg))
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return _EXIT_BAD_INPUT


def _run_settings(cfg) -> dict:
    settings = cfg.model_dump(exclude={"feeder", "fleet", "out_dir",
                                       "regulation", "intervals"})
    cost = settings.get("cost")
    if cost is None:
        settings.pop("cost", None)
    return settings


def _demand_exit(status: int, body) -> int:
    detail = body.get("detail", body) if isinstance(body, dict) else body
    click.echo(f"error: {detail}", err=True)
    if status in (400, 422):
        return _EXIT_BAD_INPUT
    if status == 409:
        return _EXIT_INFEASIBLE
    return _EXIT_NUMERICAL


if __name__ == "__main__":
    main()
