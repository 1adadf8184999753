"""Schedule recovery and after-the-fact auditing of flexibility regions.

Once a region of substation trajectories has been published, the feeder
operator receives one requested trajectory and must produce a concrete
fleet schedule realizing it.  solve_pd recovers such a schedule, either
as a pure feasibility dispatch or priced with quadratic operating costs
handled through a secant piecewise-linear epigraph.  monte_carlo_verify
and pq_grid_scan audit an entire region after the fact by sampling or by
exhaustive scanning, which is how a published region earns trust.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .compact import CompactModel, feasibility_probe
from .devices import hvac_temperature_affine, simulate_states, _series
from .errors import ConfigError, DimensionMismatch, ModelInfeasible, NumericalError
from .solver import LpProblem, SolverOptions, solve_lp

VIOLATION_TOL = 1e-7


# ---------------------------------------------------------------------------
# cost model


def _lookup(table, device_id: str) -> float:
    if isinstance(table, dict):
        return float(table.get(device_id, 0.0))
    return float(table)


@dataclass(frozen=True)
class CostParams:
    """Operating-cost coefficients for priced dispatch.

    Scalar values apply to every device of the matching kind; a dict maps
    device ids to values, with absent ids costing nothing.  Quadratic
    coefficients must be nonnegative (the dispatch LP relies on convexity).
    energy_price is charged on substation active power, scalar or one
    value per period.
    """

    es_cycle: object = 0.0       # $/MW^2 on net storage power
    hvac_comfort: object = 0.0   # $/degF^2 on deviation from the comfort setpoint
    pv_operating: object = 0.0   # $/MW on generator output
    pv_curtail: object = 0.0     # $/MW^2 on undelivered generator headroom
    energy_price: object = 0.0   # $/MWh on substation active power
    segments: int = 16


@dataclass
class DispatchSchedule:
    """A concrete fleet schedule realizing one substation trajectory."""

    x: np.ndarray            # (T, n_per_period) decision block per period
    p0: np.ndarray           # realized substation active power (MW)
    q0: np.ndarray           # realized substation reactive power (MVar)
    states: dict             # device id -> simulated state series
    objective_pwl: float     # dispatch LP objective (secant overestimate)
    objective_exact: float   # same cost with square terms recomputed exactly
    pwl_gap_bound: float     # worst-case secant overshoot, sum over terms
    max_violation: float     # largest operating-row residual at the solution


@dataclass(frozen=True)
class _SquareTerm:
    # weight * (row @ x + shift)^2 with row @ x + shift confined to [lo, hi]
    weight: float
    row: np.ndarray
    shift: float
    lo: float
    hi: float
    label: str


def _quadratic_terms(model: CompactModel, cost: CostParams) -> list[_SquareTerm]:
    layout = model.layout
    tt = model.horizon
    nn = model.n_total
    terms: list[_SquareTerm] = []
    for dev in model.devices:
        if dev.kind in ("es", "es_split"):
            wgt = _lookup(cost.es_cycle, dev.id)
            _check_weight(wgt, dev.id, "es_cycle")
            if wgt == 0.0:
                continue
            cols = layout.find(dev.id, "p")
            lo = _series(dev.params.p_lo, tt, f"{dev.id}.p_lo")
            hi = _series(dev.params.p_hi, tt, f"{dev.id}.p_hi")
            nph = len(cols)
            for t in range(tt):
                row = np.zeros(nn)
                for j in cols:
                    row[layout.flat(t, j)] = 1.0
                terms.append(_SquareTerm(wgt, row, 0.0, nph * lo[t], nph * hi[t],
                                         f"cost:es:{dev.id}:{t}"))
        elif dev.kind == "hvac":
            wgt = _lookup(cost.hvac_comfort, dev.id)
            _check_weight(wgt, dev.id, "hvac_comfort")
            if wgt == 0.0:
                continue
            hp = dev.params
            setpoint = hp.f_comfort
            if setpoint is None:
                setpoint = 0.5 * (hp.f_lo + hp.f_hi)
            mat, free = hvac_temperature_affine(dev, layout, model.dt_hours)
            for t in range(tt):
                terms.append(_SquareTerm(
                    wgt, mat[t], free[t] - setpoint,
                    hp.f_lo - setpoint, hp.f_hi - setpoint,
                    f"cost:hvac:{dev.id}:{t}"))
        elif dev.kind == "pv":
            wgt = _lookup(cost.pv_curtail, dev.id)
            _check_weight(wgt, dev.id, "pv_curtail")
            if wgt == 0.0:
                continue
            cols = layout.find(dev.id, "p")
            lo = _series(dev.params.p_lo, tt, f"{dev.id}.p_lo")
            hi = _series(dev.params.p_hi, tt, f"{dev.id}.p_hi")
            nph = len(cols)
            for t in range(tt):
                row = np.zeros(nn)
                for j in cols:
                    row[layout.flat(t, j)] = 1.0
                terms.append(_SquareTerm(
                    wgt, row, -nph * hi[t], nph * (lo[t] - hi[t]), 0.0,
                    f"cost:pv_curtail:{dev.id}:{t}"))
    return terms


def _check_weight(wgt: float, device_id: str, name: str):
    if wgt < 0:
        raise ConfigError(f"{name} for {device_id} is negative; "
                          "quadratic cost coefficients must be >= 0")


def _linear_cost(model: CompactModel, cost: CostParams) -> tuple[np.ndarray, float]:
    """Linear objective over the flat decision vector plus its constant."""
    layout = model.layout
    tt = model.horizon
    c = model.penalty.copy()
    for dev in model.devices:
        if dev.kind != "pv":
            continue
        wgt = _lookup(cost.pv_operating, dev.id)
        for j in layout.find(dev.id, "p"):
            for t in range(tt):
                c[layout.flat(t, j)] += wgt
    price = _series(cost.energy_price, tt, "energy_price")
    c += price @ model.d_mat
    return c, float(price @ model.g_vec)


def _secant_rows(term: _SquareTerm, theta_col: int, n_cols: int, segments: int):
    """Epigraph rows theta >= chord(z) for each secant chord of z^2.

    Chords of a convex function lie above it, so the resulting LP value
    overestimates the true square by at most (segment width)^2 / 4.
    """
    lo, hi = term.lo, term.hi
    if hi - lo <= 1e-12:
        knots = [(lo, hi)]
    else:
        pts = np.linspace(lo, hi, segments + 1)
        knots = list(zip(pts[:-1], pts[1:]))
    rows, rhs = [], []
    for za, zb in knots:
        slope = za + zb
        row = np.zeros(n_cols)
        row[: term.row.size] = slope * term.row
        row[theta_col] = -1.0
        rows.append(row)
        rhs.append(za * zb - slope * term.shift)
    return rows, rhs


# ---------------------------------------------------------------------------
# dispatch recovery


def _tracking_model(model: CompactModel, p_reg, q_reg=None) -> CompactModel:
    """Append the trajectory-tracking equalities as paired rows for probing."""
    rows, rhs, tags = [], [], []
    pairs = [("p", model.d_mat, model.g_vec, np.asarray(p_reg, dtype=float))]
    if q_reg is not None:
        pairs.append(("q", model.f_mat, model.h_vec, np.asarray(q_reg, dtype=float)))
    for name, mat, off, want in pairs:
        for t in range(model.horizon):
            rows.extend([mat[t], -mat[t]])
            rhs.extend([want[t] - off[t], off[t] - want[t]])
            tags.extend([f"track:{name}:{t}:hi", f"track:{name}:{t}:lo"])
    return replace(
        model,
        w_mat=np.vstack([model.w_mat, np.array(rows)]),
        w_rhs=np.concatenate([model.w_rhs, np.array(rhs)]),
        row_tags=list(model.row_tags) + tags,
        row_scale=np.concatenate([model.row_scale, np.ones(len(rows))]),
    )


def solve_pd(model: CompactModel, p_reg, q_reg=None, cost: CostParams | None = None,
             opts: SolverOptions | None = None,
             filter_limit: int = 400) -> DispatchSchedule:
    """Recover a fleet schedule that tracks the requested trajectory.

    With cost=None this is the pure feasibility dispatch (zero objective);
    otherwise quadratic terms are handled by an inner secant piecewise
    linearization with cost.segments pieces per term, and the result
    reports both the LP value and the exact quadratic recomputation.
    Raises ModelInfeasible (with an irreducible row hint when the model is
    small enough; filter_limit=0 skips that reduction) if the trajectory
    is not dispatchable.
    """
    opts = opts or SolverOptions()
    tt = model.horizon
    nn = model.n_total
    p_reg = np.asarray(p_reg, dtype=float).ravel()
    if p_reg.size != tt:
        raise DimensionMismatch(f"trajectory has {p_reg.size} periods, model has {tt}")
    if q_reg is not None:
        q_reg = np.asarray(q_reg, dtype=float).ravel()
        if q_reg.size != tt:
            raise DimensionMismatch(f"reactive trajectory has {q_reg.size} periods, "
                                    f"model has {tt}")

    terms = _quadratic_terms(model, cost) if cost is not None else []
    n_theta = len(terms)
    n_cols = nn + n_theta

    if cost is not None:
        c_x, constant = _linear_cost(model, cost)
        c = np.concatenate([c_x, [t.weight for t in terms]])
    else:
        constant = 0.0
        c = np.zeros(n_cols)

    a_ub = [np.hstack([model.w_mat, np.zeros((model.n_rows, n_theta))])]
    b_ub = [model.w_rhs]
    segments = cost.segments if cost is not None else 1
    if cost is not None and segments < 1:
        raise ConfigError("cost.segments must be at least 1")
    for k, term in enumerate(terms):
        rows, rhs = _secant_rows(term, nn + k, n_cols, segments)
        a_ub.append(np.array(rows))
        b_ub.append(np.array(rhs))

    a_eq = [np.hstack([model.d_mat, np.zeros((tt, n_theta))])]
    b_eq = [p_reg - model.g_vec]
    if q_reg is not None:
        a_eq.append(np.hstack([model.f_mat, np.zeros((tt, n_theta))]))
        b_eq.append(q_reg - model.h_vec)

    lo = np.concatenate([np.full(nn, -np.inf), np.zeros(n_theta)])
    hi = np.full(n_cols, np.inf)
    sol = solve_lp(LpProblem(c=c, a_ub=np.vstack(a_ub), b_ub=np.concatenate(b_ub),
                             a_eq=np.vstack(a_eq), b_eq=np.concatenate(b_eq),
                             lo=lo, hi=hi), opts)
    if sol.status == "infeasible":
        probe = feasibility_probe(_tracking_model(model, p_reg, q_reg), opts,
                                  filter_limit=filter_limit)
        hint = ", ".join(str(t) for t in probe.hint_tags[:12])
        raise ModelInfeasible(
            f"trajectory is not dispatchable (worst slack {probe.max_violation:.6g}"
            + (f"); conflicting rows: {hint}" if hint else ")"))
    if sol.status != "optimal":
        raise NumericalError(f"dispatch LP ended with status {sol.status!r}")

    x = sol.x[:nn]
    p0 = model.d_mat @ x + model.g_vec
    q0 = model.f_mat @ x + model.h_vec
    resid = model.w_mat @ x - model.w_rhs
    states = {}
    for dev in model.devices:
        sim = simulate_states(dev, model.layout, model.dt_hours, x)
        if sim:
            states[dev.id] = sim

    if cost is not None:
        exact = float(c[:nn] @ x) + constant
        for term in terms:
            z = float(term.row @ x + term.shift)
            exact += term.weight * z * z
        pwl = float(sol.objective) + constant
        width = np.array([(t.hi - t.lo) for t in terms], dtype=float)
        wgt = np.array([t.weight for t in terms], dtype=float)
        bound = float(np.sum(wgt * (width / segments) ** 2 / 4.0))
    else:
        exact = pwl = bound = 0.0

    return DispatchSchedule(
        x=x.reshape(tt, model.layout.n_per_period).copy(),
        p0=p0, q0=q0, states=states,
        objective_pwl=pwl, objective_exact=exact, pwl_gap_bound=bound,
        max_violation=float(resid.max(initial=0.0)),
    )


# ---------------------------------------------------------------------------
# region auditing


@dataclass(frozen=True)
class FailureRecord:
    index: int
    p_reg: np.ndarray
    q_reg: np.ndarray | None
    detail: str


@dataclass
class VerifyReport:
    feasible_count: int
    total: int
    failures: list
    seed: int

    @property
    def feasible_rate(self) -> float:
        return self.feasible_count / self.total if self.total else 1.0


def _region_draws(region, n: int, rng) -> tuple[np.ndarray, np.ndarray | None]:
    """Uniform trajectory draws from an interval box or per-period ellipses."""
    if isinstance(region, tuple):
        lo, hi = (np.asarray(v, dtype=float).ravel() for v in region)
    elif hasattr(region, "p_lo"):
        lo, hi = region.p_lo, region.p_hi
    elif hasattr(region, "axes"):
        tt = len(region.center)
        radius = np.sqrt(rng.random((n, tt)))
        angle = rng.uniform(0.0, 2.0 * np.pi, (n, tt))
        p = np.empty((n, tt))
        q = np.empty((n, tt))
        for t in range(tt):
            u = radius[:, t, None] * np.column_stack([np.cos(angle[:, t]),
                                                      np.sin(angle[:, t])])
            pts = region.center[t] + u @ region.shape(t).T
            p[:, t] = pts[:, 0]
            q[:, t] = pts[:, 1]
        return p, q
    else:
        raise ConfigError("region must be an interval result, a (lo, hi) pair, "
                          "or an ellipse result")
    if lo.shape != hi.shape:
        raise DimensionMismatch("interval bounds disagree in length")
    if np.any(hi < lo - 1e-12):
        raise ConfigError("interval upper bound below lower bound")
    return lo + (hi - lo) * rng.random((n, lo.size)), None


def monte_carlo_verify(model: CompactModel, region, n: int = 200, seed: int = 0,
                       opts: SolverOptions | None = None) -> VerifyReport:
    """Audit a region by dispatching n uniformly sampled trajectories.

    region is an interval result / (lo, hi) pair (active power only) or an
    ellipse result (joint active-reactive, sampled uniformly on each
    period's disk).  Every draw is dispatched in feasibility mode; failing
    draws are returned verbatim.  Same seed, same draws, same report.
    """
    rng = np.random.default_rng(seed)
    p_draws, q_draws = _region_draws(region, n, rng)
    if p_draws.shape[1] != model.horizon:
        raise DimensionMismatch("region horizon disagrees with the model")
    failures = []
    for i in range(n):
        q_i = q_draws[i] if q_draws is not None else None
        try:
            solve_pd(model, p_draws[i], q_reg=q_i, opts=opts, filter_limit=0)
        except ModelInfeasible as exc:
            failures.append(FailureRecord(i, p_draws[i].copy(),
                                          None if q_i is None else q_i.copy(),
                                          str(exc)))
    return VerifyReport(n - len(failures), n, failures, seed)


@dataclass
class GridScan:
    p_values: np.ndarray      # scanned active-power grid axis (MW)
    q_values: np.ndarray      # scanned reactive-power grid axis (MVar)
    feasible: np.ndarray      # (len(p), len(q)) dispatchability mask
    in_region: np.ndarray | None  # same shape; None when no ellipse was given
    resolution: float

    @property
    def containment_ok(self) -> bool | None:
        """True when no in-region grid point failed to dispatch."""
        if self.in_region is None:
            return None
        return not bool(np.any(self.in_region & ~self.feasible))

    def rows(self):
        for i, p in enumerate(self.p_values):
            for j, q in enumerate(self.q_values):
                yield float(p), float(q), bool(self.feasible[i, j])


def _grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def pq_grid_scan(model: CompactModel, resolution: float,
                 p_range: tuple | None = None, q_range: tuple | None = None,
                 region=None, opts: SolverOptions | None = None) -> GridScan:
    """Exhaustively scan a single-period P-Q window for dispatchability.

    Each grid point is dispatched in feasibility mode.  When an ellipse
    result is supplied its membership mask is returned alongside, so a
    region is certified by containment_ok.  Ranges default to the ellipse
    bounding box padded by two grid steps.
    """
    if model.horizon != 1:
        raise ConfigError("the P-Q scan audits single-period models; "
                          f"this one has horizon {model.horizon}")
    if resolution <= 0:
        raise ConfigError("resolution must be positive")
    if (p_range is None or q_range is None) and region is None:
        raise ConfigError("give explicit ranges or a region to derive them from")
    if region is not None and (p_range is None or q_range is None):
        shape = region.shape(0)
        extent = np.linalg.norm(shape, axis=1)
        pad = 2.0 * resolution
        if p_range is None:
            p_range = (region.center[0, 0] - extent[0] - pad,
                       region.center[0, 0] + extent[0] + pad)
        if q_range is None:
            q_range = (region.center[0, 1] - extent[1] - pad,
                       region.center[0, 1] + extent[1] + pad)
    p_axis = _grid_axis(float(p_range[0]), float(p_range[1]), resolution)
    q_axis = _grid_axis(float(q_range[0]), float(q_range[1]), resolution)
    feasible = np.zeros((p_axis.size, q_axis.size), dtype=bool)
    member = np.zeros_like(feasible) if region is not None else None
    for i, p in enumerate(p_axis):
        for j, q in enumerate(q_axis):
            try:
                solve_pd(model, [p], q_reg=[q], opts=opts, filter_limit=0)
                feasible[i, j] = True
            except ModelInfeasible:
                pass
            if member is not None:
                member[i, j] = region.contains(0, np.array([p, q]))
    return GridScan(p_axis, q_axis, feasible, member, resolution)
