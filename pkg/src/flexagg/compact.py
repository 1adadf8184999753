"""Horizon-stacked operating model: one inequality system per fleet.

Assembles device blocks and linearized network limits into

    W x <= w,    p0(t) = d_t . x_t + g_t,    q0(t) = f_t . x_t + h_t

over the flat decision vector x (all device variables, all periods).
Inequality rows are scaled to unit infinity-norm so downstream duals and
big-M constants live on comparable scales; the substation maps D, F are
left in physical units (MW, MVar).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .devices import (
    ConicEntry,
    ConstraintBlock,
    FleetDevice,
    build_blocks,
    build_exogenous,
    build_layout,
    default_midpoint_x0,
)
from .errors import ConicPresent, ModelInfeasible
from .layout import VariableLayout
from .mps import write_mps
from .network import NetworkModel
from .powerflow import (
    InjectionProfile,
    LinearPFModel,
    build_linear_pf,
    make_operating_point,
)
from .solver import LpProblem, SolverOptions, solve_lp

_ZERO_ROW = 1e-12


@dataclass
class CompactModel:
    horizon: int
    dt_hours: float
    layout: VariableLayout
    d_mat: np.ndarray  # (T, n_total) active substation sensitivities
    g_vec: np.ndarray  # (T,)
    f_mat: np.ndarray  # (T, n_total) reactive counterparts
    h_vec: np.ndarray
    w_mat: np.ndarray  # (m, n_total)
    w_rhs: np.ndarray  # (m,)
    row_tags: list
    row_scale: np.ndarray  # original row / scale = stored row
    conic: list
    devices: list
    penalty: np.ndarray  # (n_total,) linear dispatch-cost adders
    linpf: LinearPFModel | None = None
    network: NetworkModel | None = None

    @property
    def n_total(self) -> int:
        return self.layout.n_total

    @property
    def n_rows(self) -> int:
        return self.w_mat.shape[0]

    def to_lp(self, c=None) -> LpProblem:
        n = self.n_total
        cvec = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        free = np.full(n, np.inf)
        return LpProblem(c=cvec, a_ub=self.w_mat, b_ub=self.w_rhs,
                         lo=-free, hi=free)


def assemble(net: NetworkModel, linpf: LinearPFModel, blocks: list,
             conics: list, fleet: list, dt_hours: float,
             include_network: bool = True, normalize: bool = True) -> CompactModel:
    lay = linpf.layout
    tt = lay.horizon
    npp = lay.n_per_period
    n = lay.n_total

    d_mat = np.zeros((tt, n))
    f_mat = np.zeros((tt, n))
    for t in range(tt):
        d_mat[t, t * npp:(t + 1) * npp] = linpf.d_vec
        f_mat[t, t * npp:(t + 1) * npp] = linpf.f_vec

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    tags: list[str] = []

    for blk in blocks:
        w, r = blk.dense()
        rows.extend(w)
        rhs.extend(r)
        tags.extend(blk.tags)

    if include_network:
        _network_rows(net, linpf, rows, rhs, tags)

    w_mat = np.asarray(rows, dtype=float).reshape(len(rhs), n)
    w_rhs = np.asarray(rhs, dtype=float)

    w_mat, w_rhs, tags, scale = _clean_and_scale(w_mat, w_rhs, tags, normalize)

    penalty = np.zeros(n)
    for blk in blocks:
        if blk.penalty is not None:
            penalty += blk.penalty

    return CompactModel(
        horizon=tt, dt_hours=dt_hours, layout=lay,
        d_mat=d_mat, g_vec=linpf.g_off.copy(),
        f_mat=f_mat, h_vec=linpf.h_off.copy(),
        w_mat=w_mat, w_rhs=w_rhs, row_tags=tags, row_scale=scale,
        conic=list(conics), devices=list(fleet), penalty=penalty,
        linpf=linpf, network=net)


def _network_rows(net: NetworkModel, linpf: LinearPFModel, rows, rhs, tags):
    tt = linpf.layout.horizon
    npp = linpf.layout.n_per_period
    n = linpf.layout.n_total
    node_names = [f"{bus}.{ph}" for bus, ph in net.load_nodes]
    line_names = [f"{net.lines[li].from_bus}-{net.lines[li].to_bus}.{ph}"
                  for li, ph in net.line_phase_slots]

    def put(row_p, val, tag):
        full = np.zeros(n)
        full[t * npp:(t + 1) * npp] = row_p
        rows.append(full)
        rhs.append(val)
        tags.append(tag)

    for t in range(tt):
        for k in range(linpf.a_mat.shape[0]):
            hi = linpf.v_hi[k] - linpf.a_off[t, k]
            lo = linpf.a_off[t, k] - linpf.v_lo[k]
            put(linpf.a_mat[k], hi, f"net:v_hi:{t}:{node_names[k]}")
            put(-linpf.a_mat[k], lo, f"net:v_lo:{t}:{node_names[k]}")
        for k in range(linpf.b_mat.shape[0]):
            if np.isfinite(linpf.i_hi[k]):
                put(linpf.b_mat[k], linpf.i_hi[k] - linpf.b_off[t, k],
                    f"net:i_hi:{t}:{line_names[k]}")
            if linpf.i_lo[k] > 0:
                put(-linpf.b_mat[k], linpf.b_off[t, k] - linpf.i_lo[k],
                    f"net:i_lo:{t}:{line_names[k]}")


def _clean_and_scale(w_mat, w_rhs, tags, normalize):
    norms = np.max(np.abs(w_mat), axis=1) if w_mat.size else np.zeros(len(w_rhs))
    keep = norms > _ZERO_ROW
    dead = ~keep
    if np.any(dead):
        bad = dead & (w_rhs < -1e-9)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ModelInfeasible(
                f"constant row {tags[i]!r} is violated with no variables to move")
    w_mat = w_mat[keep]
    w_rhs = w_rhs[keep]
    tags = [tg for tg, k in zip(tags, keep) if k]
    norms = norms[keep]
    if normalize:
        scale = norms.copy()
        w_mat = w_mat / scale[:, None]
        w_rhs = w_rhs / scale
    else:
        scale = np.ones(len(w_rhs))
    return w_mat, w_rhs, tags, scale


def build_scenario_model(net: NetworkModel, fleet: list, horizon: int,
                         dt_hours: float, x0=None, n_polygon: int = 8,
                         polygonize: bool = True, include_network: bool = True,
                         normalize: bool = True) -> CompactModel:
    """Full pipeline: layout, operating point, affine network map, blocks."""
    lay = build_layout(net, fleet, horizon)
    exog_w, exog_d = build_exogenous(net, fleet, horizon)
    profile = InjectionProfile(horizon=horizon, dt_hours=dt_hours, layout=lay,
                               exog_wye=exog_w, exog_delta=exog_d)
    if x0 is None:
        x0 = default_midpoint_x0(fleet, lay)
    op = make_operating_point(net, profile, x0)
    linpf = build_linear_pf(net, profile, op)
    blocks, conics = build_blocks(fleet, lay, dt_hours, n_polygon, polygonize)
    return assemble(net, linpf, blocks, conics, fleet, dt_hours,
                    include_network=include_network, normalize=normalize)


@dataclass
class ProbeResult:
    feasible: bool
    x: np.ndarray | None
    max_violation: float
    hint_tags: list = field(default_factory=list)


def feasibility_probe(model: CompactModel, opts: SolverOptions | None = None,
                      filter_limit: int = 400) -> ProbeResult:
    """Check the operating set is nonempty; on failure name offending rows.

    A slack relaxation finds the stressed rows cheaply; when the system is
    small enough a deletion filter reduces them to an irreducible
    infeasible subset worth reporting verbatim.
    """
    opts = opts or SolverOptions()
    m, n = model.w_mat.shape
    # slack relaxation: min 1's, W x <= w + s, s >= 0
    c = np.concatenate([np.zeros(n), np.ones(m)])
    a_ub = np.hstack([model.w_mat, -np.eye(m)])
    free = np.full(n, np.inf)
    lo = np.concatenate([-free, np.zeros(m)])
    hi = np.full(n + m, np.inf)
    sol = solve_lp(LpProblem(c=c, a_ub=a_ub, b_ub=model.w_rhs, lo=lo, hi=hi), opts)
    slack = sol.x[n:]
    worst = float(slack.max(initial=0.0))
    if sol.status == "optimal" and sol.objective <= opts.feas_tol * (1 + abs(model.w_rhs).max(initial=1.0)):
        return ProbeResult(True, sol.x[:n], worst)
    stressed = [model.row_tags[i] for i in np.nonzero(slack > opts.feas_tol)[0]]
    if m <= filter_limit:
        stressed = _deletion_filter(model, opts)
    return ProbeResult(False, None, worst, stressed)


def _deletion_filter(model: CompactModel, opts: SolverOptions) -> list:
    """Shrink the row set until every remaining row is needed for infeasibility."""
    n = model.n_total
    free = np.full(n, np.inf)
    active = list(range(model.n_rows))

    def infeasible(idx) -> bool:
        prob = LpProblem(c=np.zeros(n), a_ub=model.w_mat[idx], b_ub=model.w_rhs[idx],
                         lo=-free, hi=free)
        return solve_lp(prob, opts).status == "infeasible"

    i = 0
    while i < len(active):
        trial = active[:i] + active[i + 1:]
        if trial and infeasible(trial):
            active = trial
        else:
            i += 1
    return [model.row_tags[i] for i in active]


def export_mps(model: CompactModel, c=None, name: str = "FLEXAGG") -> str:
    """Fixed-format MPS text of the row system (refuses unsimplified cones)."""
    if model.conic:
        raise ConicPresent(
            "model still carries second-order cones; assemble with polygonize=True")
    return write_mps(model.to_lp(c), binaries=(), name=name)
