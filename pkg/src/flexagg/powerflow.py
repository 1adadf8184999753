"""Fixed-point multi-phase power flow and its affine surrogate.

The nonlinear solve iterates the implicit-Z-bus map

    v  <-  My(v) [p_wye; q_wye] + Md(v) [p_delta; q_delta] + m

with My(v) = inv(Yll) diag(conj(v))^-1 [I, -jI],
Md(v) = inv(Yll) H' diag(conj(H v))^-1 [I, -jI] and
m = -inv(Yll) Yl0 v0.  The affine surrogate freezes the voltage-dependent
matrices at a reference solution v_ref, which makes the complex-voltage
model exact both at zero injection and at the reference point; magnitude,
line-current and substation-power rows follow from the derivative rule
d|f|/dx = Re{conj(f) df/dx} / |f| evaluated at the reference.

Units: the network is per-unit internally; decision variables are MW /
MVar and the scaling by s_base_mva is folded into the exported matrices,
so voltage rows come out in per-unit volts per MW and the substation rows
in MW per MW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonConvergence
from .layout import VariableLayout
from .network import NetworkModel


@dataclass
class InjectionProfile:
    """Horizon description: exogenous injections plus the decision layout.

    exog_wye: complex (T x n_load_nodes) MW/MVar injections at load phase
    nodes (consumption enters negative).  exog_delta: complex
    (T x n_delta_slots).  The layout places each controllable variable.
    """

    horizon: int
    dt_hours: float
    layout: VariableLayout
    exog_wye: np.ndarray
    exog_delta: np.ndarray

    def __post_init__(self):
        self.exog_wye = np.atleast_2d(np.asarray(self.exog_wye, dtype=complex))
        self.exog_delta = np.atleast_2d(np.asarray(self.exog_delta, dtype=complex))
        if self.layout.horizon != self.horizon:
            raise DimensionMismatch("layout horizon disagrees with profile horizon")
        if self.exog_wye.shape[0] != self.horizon or self.exog_delta.shape[0] != self.horizon:
            raise DimensionMismatch("exogenous injection arrays must cover every period")
        if self.dt_hours <= 0:
            raise ConfigError("dt_hours must be positive")


@dataclass
class OperatingPoint:
    """Linearization record: controllable point and per-period fixed points."""

    x0: np.ndarray              # (T x n_per_period) MW
    v_t: np.ndarray             # (T x n_load_nodes) complex fixed points at x0
    ref_period: int = 0

    @property
    def v_ref(self) -> np.ndarray:
        return self.v_t[self.ref_period]


@dataclass
class LinearPFModel:
    """Affine network response  v = A x_t + a_t,  i = B x_t + b_t,
    p0 = d'x_t + g_t,  q0 = f'x_t + h_t  for each period t."""

    a_mat: np.ndarray
    a_off: np.ndarray           # (T x n_v)
    b_mat: np.ndarray
    b_off: np.ndarray           # (T x n_i)
    d_vec: np.ndarray
    g_off: np.ndarray           # (T,)
    f_vec: np.ndarray
    h_off: np.ndarray           # (T,)
    v_lo: np.ndarray
    v_hi: np.ndarray
    i_lo: np.ndarray
    i_hi: np.ndarray
    layout: VariableLayout
    op: OperatingPoint


def _injection_matrices(net: NetworkModel, layout: VariableLayout):
    """Columns mapping one period block of x (MW) to complex wye/delta
    injection increments (p.u.)."""
    npp = layout.n_per_period
    wye = np.zeros((net.n_load_nodes, npp), dtype=complex)
    delta = np.zeros((net.n_delta_slots, npp), dtype=complex)
    scale = 1.0 / net.s_base_mva
    for j, vd in enumerate(layout.per_period):
        if vd.coord_kind is None or vd.sign == 0:
            continue
        unit = 1.0 if vd.fieldname == "p" else 1.0j
        if vd.coord_kind == "wye":
            wye[vd.coord_index, j] += vd.sign * unit * scale
        elif vd.coord_kind == "delta":
            delta[vd.coord_index, j] += vd.sign * unit * scale
        else:
            raise ConfigError(f"unknown coordinate kind {vd.coord_kind}")
    return wye, delta


def controllable_injections(net: NetworkModel, layout: VariableLayout, x_period: np.ndarray):
    """Complex per-unit (wye, delta) injections for one period block of x."""
    wye_cols, delta_cols = _injection_matrices(net, layout)
    return wye_cols @ x_period, delta_cols @ x_period


def solve_fixed_point_pf(net: NetworkModel, s_wye: np.ndarray, s_delta: np.ndarray | None = None,
                         v_init: np.ndarray | None = None, tol: float = 1e-10,
                         max_iters: int = 100) -> np.ndarray:
    """Solve the nonlinear power flow by fixed-point iteration.

    s_wye: complex per-unit injections per load phase node.  s_delta:
    complex per-unit injections per delta slot.  Returns the complex load
    voltage vector; raises NonConvergence past max_iters.
    """
    nl = net.n_load_nodes
    s_wye = np.asarray(s_wye, dtype=complex).ravel()
    if s_wye.size != nl:
        raise DimensionMismatch("wye injection length != load node count")
    if s_delta is None:
        s_delta = np.zeros(net.n_delta_slots, dtype=complex)
    s_delta = np.asarray(s_delta, dtype=complex).ravel()
    if s_delta.size != net.n_delta_slots:
        raise DimensionMismatch("delta injection length != delta slot count")
    if nl == 0:
        return np.zeros(0, dtype=complex)
    v = net.no_load_voltage.copy() if v_init is None else np.asarray(v_init, dtype=complex).copy()
    m = net.no_load_voltage
    h = net.h_delta
    for _ in range(max_iters):
        i_inj = np.conj(s_wye) / np.conj(v)
        if net.n_delta_slots:
            u = h @ v
            i_inj = i_inj + h.T @ (np.conj(s_delta) / np.conj(u))
        v_new = net.yll_inv @ i_inj + m
        if np.max(np.abs(v_new - v)) <= tol:
            # residual check on the returned iterate
            return v_new
        v = v_new
    raise NonConvergence(f"fixed point not reached in {max_iters} iterations")


def pf_residual(net: NetworkModel, v: np.ndarray, s_wye: np.ndarray,
                s_delta: np.ndarray | None = None) -> float:
    """Infinity norm of v - (My(v) x + Md(v) x + m)."""
    if net.n_load_nodes == 0:
        return 0.0
    if s_delta is None:
        s_delta = np.zeros(net.n_delta_slots, dtype=complex)
    i_inj = np.conj(np.asarray(s_wye, dtype=complex)) / np.conj(v)
    if net.n_delta_slots:
        u = net.h_delta @ v
        i_inj = i_inj + net.h_delta.T @ (np.conj(np.asarray(s_delta, dtype=complex)) / np.conj(u))
    return float(np.max(np.abs(v - (net.yll_inv @ i_inj + net.no_load_voltage))))


def make_operating_point(net: NetworkModel, profile: InjectionProfile,
                         x0, ref_period: int = 0) -> OperatingPoint:
    """Solve the nonlinear flow at x0 for every period.

    x0 may be one period block (replicated) or a (T x n_per_period)
    array in MW.
    """
    tt = profile.horizon
    npp = profile.layout.n_per_period
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (tt, 1))
    if x0.shape != (tt, npp):
        raise DimensionMismatch(f"x0 must be ({tt}, {npp})")
    scale = 1.0 / net.s_base_mva
    v_t = np.zeros((tt, net.n_load_nodes), dtype=complex)
    v_guess = None
    for t in range(tt):
        sw, sd = controllable_injections(net, profile.layout, x0[t])
        sw = sw + profile.exog_wye[t] * scale
        sd = sd + profile.exog_delta[t] * scale
        v_t[t] = solve_fixed_point_pf(net, sw, sd, v_init=v_guess)
        v_guess = v_t[t]
    return OperatingPoint(x0=x0, v_t=v_t, ref_period=ref_period)


def build_linear_pf(net: NetworkModel, profile: InjectionProfile,
                    op: OperatingPoint) -> LinearPFModel:
    """Affine network model around the given operating point.

    The sensitivity matrices are evaluated once at op.v_ref; the offset
    vectors are fitted per period against the nonlinear solution at x0,
    so evaluating the model at x0[t] reproduces the period-t voltage
    magnitudes, currents and substation powers exactly.
    """
    tt = profile.horizon
    layout = profile.layout
    npp = layout.n_per_period
    nl = net.n_load_nodes
    scale = 1.0 / net.s_base_mva

    # precondition: v_ref really is a fixed point for its period
    t0 = op.ref_period
    sw0, sd0 = controllable_injections(net, layout, op.x0[t0])
    sw0 = sw0 + profile.exog_wye[t0] * scale
    sd0 = sd0 + profile.exog_delta[t0] * scale
    if nl and pf_residual(net, op.v_ref, sw0, sd0) > 1e-8:
        raise ConfigError("operating point voltage is not a fixed-point solution")

    wye_cols, delta_cols = _injection_matrices(net, layout)
    if nl:
        v_ref = op.v_ref
        # complex voltage Jacobian wrt real x: conj enters through conj(s)
        mc_wye = net.yll_inv @ np.diag(1.0 / np.conj(v_ref))
        jac = mc_wye @ np.conj(wye_cols)
        if net.n_delta_slots:
            u_ref = net.h_delta @ v_ref
            mc_del = net.yll_inv @ net.h_delta.T @ np.diag(1.0 / np.conj(u_ref))
            jac = jac + mc_del @ np.conj(delta_cols)
    else:
        jac = np.zeros((0, npp), dtype=complex)

    n_i = net.n_line_phases
    a_mat = np.zeros((nl, npp))
    b_mat = np.zeros((n_i, npp))
    a_off = np.zeros((tt, nl))
    b_off = np.zeros((tt, n_i))
    g_off = np.zeros(tt)
    h_off = np.zeros(tt)

    if nl:
        vmag = np.abs(op.v_ref)
        a_mat = (np.conj(op.v_ref)[:, None] * jac).real / vmag[:, None]
        i_ref = net.line_currents(op.v_ref)
        jac_i = _current_jacobian(net, jac)
        imag_ref = np.abs(i_ref)
        live = imag_ref > 1e-9
        b_mat[live] = (np.conj(i_ref)[live, None] * jac_i[live]).real / imag_ref[live, None]
        s0_row = net.v0 @ np.conj(net.y0l @ jac)
        d_vec = s0_row.real * net.s_base_mva
        f_vec = s0_row.imag * net.s_base_mva
    else:
        d_vec = np.zeros(npp)
        f_vec = np.zeros(npp)

    for t in range(tt):
        if nl:
            vt = op.v_t[t]
            a_off[t] = np.abs(vt) - a_mat @ op.x0[t]
            it = np.abs(net.line_currents(vt))
            b_off[t] = it - b_mat @ op.x0[t]
            s0 = net.substation_power(vt) * net.s_base_mva
        else:
            s0 = 0.0 + 0.0j
        g_off[t] = s0.real - d_vec @ op.x0[t]
        h_off[t] = s0.imag - f_vec @ op.x0[t]

    v_lo = _limit_array(net.v_lo, nl, 0.0)
    v_hi = _limit_array(net.v_hi, nl, np.inf)
    i_lo = np.zeros(n_i)
    i_hi = _limit_array(net.i_hi, n_i, np.inf)
    return LinearPFModel(a_mat, a_off, b_mat, b_off, d_vec, g_off, f_vec, h_off,
                         v_lo, v_hi, i_lo, i_hi, layout, op)


def _limit_array(val, n: int, default: float) -> np.ndarray:
    """Broadcast a scalar limit or validate a per-slot limit vector."""
    if val is None:
        return np.full(n, default)
    arr = np.asarray(val, dtype=float).ravel()
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise DimensionMismatch(f"limit vector length {arr.size} != slot count {n}")
    return arr


def _current_jacobian(net: NetworkModel, jac_v: np.ndarray) -> np.ndarray:
    """Complex line-current sensitivities given the load-voltage Jacobian."""
    from .network import PHASES

    npp = jac_v.shape[1]
    out = np.zeros((net.n_line_phases, npp), dtype=complex)
    ns = len(net.sub_nodes)
    for k, (li, p) in enumerate(net.line_phase_slots):
        ln = net.lines[li]
        row = np.zeros(npp, dtype=complex)
        for pj in ln.phases:
            yv = ln.y_series[PHASES.index(p), PHASES.index(pj)]
            if yv == 0:
                continue
            fi = net.node_index[(ln.from_bus, pj)]
            ti = net.node_index[(ln.to_bus, pj)]
            jf = jac_v[fi - ns] if fi >= ns else 0.0
            jt = jac_v[ti - ns] if ti >= ns else 0.0
            row = row + yv * (jf - jt)
        out[k] = row
    return out


def evaluate_linear(model: LinearPFModel, x_period: np.ndarray, t: int) -> dict:
    """Evaluate the affine model for one period block of x (MW)."""
    x = np.asarray(x_period, dtype=float).ravel()
    if x.size != model.layout.n_per_period:
        raise DimensionMismatch("x length != per-period variable count")
    return {
        "v": model.a_mat @ x + model.a_off[t],
        "i": model.b_mat @ x + model.b_off[t],
        "p0": float(model.d_vec @ x + model.g_off[t]),
        "q0": float(model.f_vec @ x + model.h_off[t]),
    }
