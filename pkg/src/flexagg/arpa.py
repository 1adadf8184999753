"""Per-period active/reactive ellipse region for the substation power.

Finds, for every period, an ellipse of joint (active, reactive)
substation operating points such that every trajectory threading the
ellipses is dispatchable by the fleet.  The ellipse axes follow a given
(optionally scanned) rotation; the semi-axis lengths and center are
decision variables, sized by maximizing the sum of log axis lengths (a
log-area proxy) through tangent cuts on the concave logarithm.

Certification again runs through scenario generation.  The disk of
directions behind each ellipse is covered by a circumscribed polygon,
so a scenario is one polygon vertex per period; the worst-case search
over assignments is the dualized dispatch-slack problem with
vertex-choice binaries, their products with the equality prices
linearized exactly (binary McCormick).  Any slack found adds the
offending assignment with a fresh recourse copy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .compact import CompactModel
from .errors import (BigMTooSmall, ConfigError, MaxRoundsExceeded,
                     ModelInfeasible, NumericalError)
from .solver import LpProblem, MilpProblem, SolverOptions, solve_lp, solve_milp


def u2_extreme_points(n_sq: int = 2) -> np.ndarray:
    """Vertices of a regular polygon circumscribing the unit disk.

    4*n_sq vertices at radius 1/cos(pi/(4*n_sq)); consecutive edges touch
    the disk, so the polygon's convex hull covers every unit direction.
    """
    if n_sq < 1:
        raise ConfigError("need at least one sector per quadrant")
    nv = 4 * n_sq
    ang = np.pi / nv + 2.0 * np.pi * np.arange(nv) / nv
    rad = 1.0 / np.cos(np.pi / nv)
    return rad * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def rotation_columns(theta: float):
    r1 = np.array([np.cos(theta), np.sin(theta)])
    r2 = np.array([-np.sin(theta), np.cos(theta)])
    return r1, r2


@dataclass
class ArpaOptions:
    epsilon: float = 1e-6
    max_rounds: int = 64
    big_m: float | None = None
    big_m_growth: float = 10.0
    big_m_retries: int = 3
    n_sq: int = 2
    theta: object = 0.0            # scalar or per-period axis rotation
    log_seeds: tuple = (1e-3, 1.0, 10.0, 100.0)
    max_cuts: int = 50
    log_gap: float = 1e-6
    y_floor: float = 1e-6          # smallest tangent point, bounding cut slopes
    degenerate_tol: float = 1e-9
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class ArpaRound:
    round_index: int
    master_objective: float
    sub_objective: float | None
    assignment: tuple | None
    cuts: int
    big_m: float
    seconds: float


@dataclass
class ArpaResult:
    center: np.ndarray     # (T, 2) MW / MVar
    axes: np.ndarray       # (T, 2) semi-axis lengths along the rotated frame
    theta: np.ndarray      # (T,)
    status: str
    rounds: list
    scenarios: list
    schedules: list
    degenerate: list       # (period, axis) pairs squeezed to (near) zero
    dt_hours: float

    def shape(self, t: int) -> np.ndarray:
        """Symmetric 2x2 map from unit directions to the period-t ellipse."""
        r1, r2 = rotation_columns(self.theta[t])
        return self.axes[t, 0] * np.outer(r1, r1) + self.axes[t, 1] * np.outer(r2, r2)

    @property
    def off_diagonal(self) -> np.ndarray:
        return np.array([self.shape(t)[0, 1] for t in range(len(self.axes))])

    @property
    def log_area(self) -> float:
        return float(np.sum(np.log(np.maximum(self.axes, 1e-300))))

    def contains(self, t: int, point, tol: float = 1e-7) -> bool:
        y = self.shape(t)
        rel = np.asarray(point, dtype=float) - self.center[t]
        scale = max(1.0, float(np.abs(y).max()))
        s, residual, *_ = np.linalg.lstsq(y, rel, rcond=None)
        if np.linalg.norm(y @ s - rel) > tol * scale:
            return False
        return float(np.hypot(*s)) <= 1.0 + tol

    def boundary_points(self, t: int, n: int = 64) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(n) / n
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return self.center[t] + dirs @ self.shape(t).T


def _theta_series(theta, tt: int) -> np.ndarray:
    arr = np.asarray(theta, dtype=float).ravel()
    if arr.size == 1:
        return np.full(tt, float(arr[0]))
    if arr.size != tt:
        raise ConfigError(f"theta: expected scalar or length-{tt} series")
    return arr


def check_pq_rank(model: CompactModel, tol: float = 1e-9):
    """The two substation maps must be independent each period, otherwise
    joint (p, q) targets are unreachable and the dual search diverges."""
    npp = model.layout.n_per_period
    for t in range(model.horizon):
        block = np.stack([
            model.d_mat[t, t * npp:(t + 1) * npp],
            model.f_mat[t, t * npp:(t + 1) * npp],
        ])
        sv = np.linalg.svd(block, compute_uv=False)
        if sv[-1] <= tol * max(sv[0], 1.0):
            raise ConfigError(
                f"active and reactive sensitivities are collinear in period {t}; "
                "a joint region needs independently controllable p and q")


# ---------------------------------------------------------------------------
# master


def solve_master_arpa(model: CompactModel, scenarios: list, vertices: np.ndarray,
                      theta: np.ndarray, cut_points: list,
                      opts: SolverOptions | None = None):
    """Largest-log-area ellipses dispatching every pooled vertex assignment.

    Columns: centers (2T), axis lengths (2T), log epigraphs (2T), then a
    recourse copy per scenario.  Returns (center, axes, epi, objective,
    schedules).
    """
    opts = opts or SolverOptions()
    tt = model.horizon
    n = model.n_total
    m = model.n_rows
    k = len(scenarios)
    i_cp, i_cq = 0, tt
    i_y1, i_y2 = 2 * tt, 3 * tt
    i_u1, i_u2 = 4 * tt, 5 * tt
    i_x = 6 * tt
    ntot = 6 * tt + k * n

    c = np.zeros(ntot)
    c[i_u1:i_u1 + 2 * tt] = -1.0  # maximize the log epigraph variables

    r1 = np.stack([rotation_columns(th)[0] for th in theta])  # (T, 2)
    r2 = np.stack([rotation_columns(th)[1] for th in theta])

    eq_rows, eq_rhs = [], []
    ub_rows, ub_rhs = [], []
    for s, assign in enumerate(scenarios):
        off = i_x + s * n
        blk = np.zeros((m, ntot))
        blk[:, off:off + n] = model.w_mat
        ub_rows.extend(blk)
        ub_rhs.extend(model.w_rhs)
        for t in range(tt):
            u = vertices[assign[t]]
            a1 = float(r1[t] @ u)  # Y u = a1*y1*r1 + a2*y2*r2
            a2 = float(r2[t] @ u)
            for comp, (i_c, sub_row, sub_off) in enumerate((
                    (i_cp, model.d_mat[t], model.g_vec[t]),
                    (i_cq, model.f_mat[t], model.h_vec[t]))):
                row = np.zeros(ntot)
                row[off:off + n] = sub_row
                row[i_c + t] = -1.0
                row[i_y1 + t] = -a1 * r1[t, comp]
                row[i_y2 + t] = -a2 * r2[t, comp]
                eq_rows.append(row)
                eq_rhs.append(-sub_off)
    for y0 in cut_points:
        # u <= log(y0) + (y - y0)/y0, scaled to unit infinity-norm so
        # tangents at tiny y0 do not wreck the basis conditioning
        scale = max(1.0, 1.0 / y0)
        for idx in range(2 * tt):
            row = np.zeros(ntot)
            row[i_u1 + idx] = 1.0 / scale
            row[i_y1 + idx] = -1.0 / (y0 * scale)
            ub_rows.append(row)
            ub_rhs.append((np.log(y0) - 1.0) / scale)

    lo = np.full(ntot, -np.inf)
    hi = np.full(ntot, np.inf)
    lo[i_y1:i_y1 + 2 * tt] = 0.0
    prob = LpProblem(c=c, a_ub=np.asarray(ub_rows), b_ub=np.asarray(ub_rhs),
                     a_eq=np.asarray(eq_rows), b_eq=np.asarray(eq_rhs),
                     lo=lo, hi=hi)
    sol = solve_lp(prob, opts)
    if sol.status == "infeasible":
        raise ModelInfeasible("no fleet schedule satisfies the operating "
                              "constraints; the model is empty")
    if sol.status != "optimal":
        raise NumericalError(f"ellipse master ended {sol.status}")
    center = np.stack([sol.x[i_cp:i_cp + tt], sol.x[i_cq:i_cq + tt]], axis=1)
    axes = np.stack([sol.x[i_y1:i_y1 + tt], sol.x[i_y2:i_y2 + tt]], axis=1)
    epi = np.stack([sol.x[i_u1:i_u1 + tt], sol.x[i_u2:i_u2 + tt]], axis=1)
    schedules = [sol.x[i_x + s * n:i_x + (s + 1) * n].reshape(tt, -1).copy()
                 for s in range(k)]
    return center, axes, epi, -sol.objective, schedules


# ---------------------------------------------------------------------------
# worst-case assignment search


def solve_sub_arpa(model: CompactModel, center, axes, theta, vertices,
                   big_m: float = 1e4, opts: SolverOptions | None = None):
    """Worst dispatch slack over per-period polygon vertex assignments.

    Dual of the slack dispatch LP with one binary per (vertex, period);
    the products (vertex choice x equality price) enter through exact
    binary McCormick rows.  Returns (slack, assignment, pressed).
    """
    opts = opts or SolverOptions()
    tt = model.horizon
    n = model.n_total
    m = model.n_rows
    nv = len(vertices)
    center = np.asarray(center, dtype=float)
    axes = np.asarray(axes, dtype=float)

    # precompute s_(i,t) = Y_t u_i coefficient pairs
    yu = np.zeros((nv, tt, 2))
    for t in range(tt):
        r1, r2 = rotation_columns(theta[t])
        y = axes[t, 0] * np.outer(r1, r1) + axes[t, 1] * np.outer(r2, r2)
        for i in range(nv):
            yu[i, t] = y @ vertices[i]

    i_mup = m           # price on the active equality, period t
    i_muq = m + tt
    i_z = m + 2 * tt
    i_rho = i_z + nv * tt
    ntot = i_rho + nv * tt

    def zcol(i, t):
        return i_z + t * nv + i

    def rcol(i, t):
        return i_rho + t * nv + i

    c = np.zeros(ntot)
    c[:m] = model.w_rhs
    c[i_mup:i_mup + tt] = center[:, 0] - model.g_vec
    c[i_muq:i_muq + tt] = center[:, 1] - model.h_vec
    for t in range(tt):
        for i in range(nv):
            c[rcol(i, t)] = 1.0

    eq_rows, eq_rhs = [], []
    stat = np.zeros((n, ntot))
    stat[:, :m] = model.w_mat.T
    stat[:, i_mup:i_mup + tt] = model.d_mat.T
    stat[:, i_muq:i_muq + tt] = model.f_mat.T
    eq_rows.extend(stat)
    eq_rhs.extend(np.zeros(n))
    for t in range(tt):
        row = np.zeros(ntot)
        for i in range(nv):
            row[zcol(i, t)] = 1.0
        eq_rows.append(row)
        eq_rhs.append(1.0)

    ub_rows, ub_rhs = [], []
    s_cap = np.zeros((nv, tt))
    for t in range(tt):
        for i in range(nv):
            a, b = yu[i, t]
            s = big_m * (abs(a) + abs(b))
            s_cap[i, t] = s
            zc, rc = zcol(i, t), rcol(i, t)
            # sc = a*mu_p + b*mu_q; rho = z * sc via four exact rows
            row = np.zeros(ntot)   # sc - rho + S z <= S
            row[i_mup + t] = a
            row[i_muq + t] = b
            row[rc] = -1.0
            row[zc] = s
            ub_rows.append(row)
            ub_rhs.append(s)
            row = np.zeros(ntot)   # rho - sc + S z <= S
            row[i_mup + t] = -a
            row[i_muq + t] = -b
            row[rc] = 1.0
            row[zc] = s
            ub_rows.append(row)
            ub_rhs.append(s)
            row = np.zeros(ntot)   # rho <= S z
            row[rc] = 1.0
            row[zc] = -s
            ub_rows.append(row)
            ub_rhs.append(0.0)
            row = np.zeros(ntot)   # -rho <= S z
            row[rc] = -1.0
            row[zc] = -s
            ub_rows.append(row)
            ub_rhs.append(0.0)

    lo = np.zeros(ntot)
    hi = np.ones(ntot)
    lo[i_mup:i_mup + 2 * tt] = -big_m
    hi[i_mup:i_mup + 2 * tt] = big_m
    caps = s_cap.T.ravel()  # (t, i) order matching rcol
    lo[i_rho:] = -caps
    hi[i_rho:] = caps
    prob = MilpProblem(
        lp=LpProblem(c=c, a_ub=np.asarray(ub_rows), b_ub=np.asarray(ub_rhs),
                     a_eq=np.asarray(eq_rows), b_eq=np.asarray(eq_rhs),
                     lo=lo, hi=hi),
        binaries=tuple(range(i_z, i_z + nv * tt)))
    sol = solve_milp(prob, opts)
    if sol.status != "optimal":
        raise NumericalError(f"assignment search ended {sol.status}")
    zvals = sol.x[i_z:i_z + nv * tt].reshape(tt, nv)
    assignment = np.argmax(zvals, axis=1)
    mus = sol.x[i_mup:i_mup + 2 * tt]
    pressed = bool(np.any(np.abs(mus) >= big_m * (1.0 - 1e-6)))
    return -sol.objective, assignment, pressed


def _solve_sub_adaptive(model, center, axes, theta, vertices, options: ArpaOptions):
    big_m = options.big_m if options.big_m is not None else _default_big_m(model)
    for _ in range(options.big_m_retries + 1):
        slack, assignment, pressed = solve_sub_arpa(
            model, center, axes, theta, vertices, big_m, options.solver)
        if not pressed:
            return slack, assignment, big_m
        big_m *= options.big_m_growth
    raise BigMTooSmall(
        f"equality prices still press the linearization cap at M={big_m:.3g}")


def _default_big_m(model: CompactModel) -> float:
    base = max(np.abs(model.w_rhs).max(initial=0.0),
               np.abs(model.g_vec).max(initial=0.0),
               np.abs(model.h_vec).max(initial=0.0), 1.0)
    return 10.0 * base * np.sqrt(max(model.n_rows, 1))


# ---------------------------------------------------------------------------
# outer loop


def solve_arpa(model: CompactModel, options: ArpaOptions | None = None) -> ArpaResult:
    """Certified per-period (p, q) ellipses via assignment generation."""
    options = options or ArpaOptions()
    if model.layout.n_per_period == 0:
        raise ConfigError("no controllable devices in the model")
    check_pq_rank(model)
    tt = model.horizon
    theta = _theta_series(options.theta, tt)
    vertices = u2_extreme_points(options.n_sq)
    nv = len(vertices)
    # four spread seed assignments keep the master bounded in every direction
    scenarios = [np.full(tt, idx, dtype=int)
                 for idx in (0, nv // 4, nv // 2, (3 * nv) // 4)]
    cut_points = sorted(float(v) for v in options.log_seeds)
    rounds: list[ArpaRound] = []

    center = axes = schedules = None
    obj = np.nan
    for r in range(options.max_rounds):
        t0 = time.perf_counter()
        obj, center, axes, schedules, ncuts = _refine_master(
            model, scenarios, vertices, theta, cut_points, options)
        slack, assignment, big_m = _solve_sub_adaptive(
            model, center, axes, theta, vertices, options)
        rounds.append(ArpaRound(r, obj, slack, tuple(int(i) for i in assignment),
                                ncuts, big_m, time.perf_counter() - t0))
        if slack <= options.epsilon:
            degenerate = [(t, ax) for t in range(tt) for ax in range(2)
                          if axes[t, ax] <= options.degenerate_tol]
            return ArpaResult(center, axes, theta, "converged", rounds,
                              scenarios, schedules, degenerate, model.dt_hours)
        if any(np.array_equal(assignment, s) for s in scenarios):
            raise BigMTooSmall(
                "assignment search reports positive slack for an enforced "
                "assignment; the linearization cap is distorting the dual")
        scenarios.append(assignment.copy())
    raise MaxRoundsExceeded(
        f"no certificate after {options.max_rounds} rounds; last slack {slack:.3g}")


def _refine_master(model, scenarios, vertices, theta, cut_points, options):
    """Cut loop: tighten the log tangents until the epigraph gap closes."""
    for it in range(options.max_cuts + 1):
        center, axes, epi, obj, schedules = solve_master_arpa(
            model, scenarios, vertices, theta, cut_points, options.solver)
        # epigraph order: epi[t, ax]; compare each against log of its axis
        gaps = epi.ravel() - np.log(np.maximum(axes.ravel(), options.y_floor))
        gap = float(gaps.max(initial=0.0))
        if gap <= options.log_gap:
            return obj, center, axes, schedules, len(cut_points)
        added = False
        for val in np.maximum(axes.ravel(), options.y_floor):
            fval = float(val)
            if all(abs(fval - cp) > 1e-9 * max(1.0, cp) for cp in cut_points):
                cut_points.append(fval)
                added = True
        if not added:
            return obj, center, axes, schedules, len(cut_points)
    return obj, center, axes, schedules, len(cut_points)


def rotation_grid_scan(model: CompactModel, angles=None,
                       options: ArpaOptions | None = None):
    """Re-solve over a grid of axis rotations; returns (best, table).

    table rows are (theta, log_area, status).
    """
    options = options or ArpaOptions()
    if angles is None:
        angles = np.linspace(0.0, np.pi / 2, 7)
    best = None
    table = []
    for th in angles:
        opts = ArpaOptions(**{**options.__dict__, "theta": float(th)})
        try:
            res = solve_arpa(model, opts)
            table.append((float(th), res.log_area, res.status))
            if best is None or res.log_area > best.log_area:
                best = res
        except (BigMTooSmall, MaxRoundsExceeded, NumericalError) as exc:
            table.append((float(th), -np.inf, f"failed: {exc}"))
    if best is None:
        raise NumericalError("every rotation in the scan failed")
    return best, table
