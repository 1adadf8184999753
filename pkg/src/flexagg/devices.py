"""Device parameter types and linear constraint blocks.

Every device contributes rows over the horizon-stacked decision vector.
Equalities are emitted as paired inequalities so the aggregate operating
set is a single system  W x <= w.  Apparent-power circles are replaced
by inscribed polygons (device capability must stay inside the true
circle); the circumscribed mode exists for outer uncertainty sets.

State-coupled devices (storage charge, deferrable energy, thermal mass)
have their state recursions eliminated into weighted partial sums of the
phase-summed device power, so no state variables appear in x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadArity, ConfigError, InfeasibleParams
from .layout import VariableDef, VariableLayout
from .network import DeviceConnection, NetworkModel


def polygonize_circle(radius: float, n_sides: int = 8, mode: str = "inscribed"):
    """Halfspace description of a regular polygon for the disk p^2+q^2 <= r^2.

    Returns (normals, offsets): rows satisfy normals[k] . (p, q) <= offsets[k],
    listed counterclockwise starting at angle 0.  'inscribed' puts the
    polygon vertices on the circle (sound inner approximation of a device
    capability); 'circumscribed' uses tangent halfspaces (outer cover).
    """
    if n_sides < 4 or n_sides % 2 != 0:
        raise BadArity("polygon needs an even side count of at least 4")
    if radius < 0:
        raise InfeasibleParams("negative radius")
    if mode not in ("inscribed", "circumscribed"):
        raise ConfigError(f"unknown polygon mode {mode!r}")
    ang = 2.0 * np.pi * np.arange(n_sides) / n_sides
    normals = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    off = radius * (np.cos(np.pi / n_sides) if mode == "inscribed" else 1.0)
    return normals, np.full(n_sides, off)


# ---------------------------------------------------------------------------
# parameters


def _series(val, horizon: int, name: str) -> np.ndarray:
    arr = np.asarray(val, dtype=float).ravel()
    if arr.size == 1:
        return np.full(horizon, float(arr[0]))
    if arr.size != horizon:
        raise ConfigError(f"{name}: expected scalar or length-{horizon} series")
    return arr


@dataclass(frozen=True)
class PvParams:
    """Curtailable generator: per-phase box on p plus an apparent-power disk."""

    p_lo: object
    p_hi: object
    s_max: float


@dataclass(frozen=True)
class EsParams:
    """Storage: discharge-positive power, retention-weighted energy band,
    horizon-neutral terminal charge.  Efficiencies and the cycling penalty
    only matter to the split-variable variant."""

    p_lo: object
    p_hi: object
    s_max: float
    e0: float
    e_lo: float
    e_hi: float
    kappa: float = 1.0
    eff_dis: float = 1.0
    eff_cha: float = 1.0
    cycle_penalty: float = 0.0


@dataclass(frozen=True)
class DclParams:
    """Deferrable load: power box, proportional reactive draw, energy band."""

    p_lo: object
    p_hi: object
    eta: float
    e_lo: float
    e_hi: float


@dataclass(frozen=True)
class HvacParams:
    """Thermostatic load with first-order indoor temperature dynamics."""

    p_max: object
    eta: float
    alpha: float
    beta: float
    f0: float
    f_lo: float
    f_hi: float
    f_out: object
    f_comfort: float | None = None


@dataclass(frozen=True)
class LoadParams:
    """Uncontrollable demand series folded into the exogenous injections."""

    p: object
    q: object


@dataclass(frozen=True)
class FleetDevice:
    id: str
    kind: str  # pv | es | es_split | dcl | hvac | load
    connection_id: str
    params: object


@dataclass
class ConstraintBlock:
    """Sparse rows over the flat decision vector belonging to one device."""

    device_id: str
    n_cols: int
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    penalty: np.ndarray | None = None

    def add(self, cols, vals, rhs: float, tag: str):
        self.cols.append(np.asarray(cols, dtype=int))
        self.vals.append(np.asarray(vals, dtype=float))
        self.rhs.append(float(rhs))
        self.tags.append(tag)

    def add_pair(self, cols, vals, lo: float, hi: float, tag: str):
        """lo <= row <= hi as two inequality rows."""
        vals = np.asarray(vals, dtype=float)
        self.add(cols, vals, hi, f"{tag}:hi")
        self.add(cols, -vals, -lo, f"{tag}:lo")

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.zeros((self.n_rows, self.n_cols))
        for i, (c, v) in enumerate(zip(self.cols, self.vals)):
            np.add.at(w[i], c, v)
        return w, np.asarray(self.rhs, dtype=float)


@dataclass(frozen=True)
class ConicEntry:
    """Unsolved second-order restriction ||(x_p, x_q)|| <= radius."""

    device_id: str
    period: int
    phase: str
    col_p: int
    col_q: int
    radius: float
    tag: str


# ---------------------------------------------------------------------------
# layout and exogenous construction


_CONTROLLABLE = {"pv": 1, "es": 1, "es_split": 1, "dcl": -1, "hvac": -1}


def build_layout(net: NetworkModel, fleet: list[FleetDevice], horizon: int) -> VariableLayout:
    """Period block of decision variables in fleet file order."""
    per: list[VariableDef] = []
    for dev in fleet:
        if dev.kind == "load":
            continue
        if dev.kind not in _CONTROLLABLE:
            raise ConfigError(f"device {dev.id}: unknown kind {dev.kind!r}")
        sign = _CONTROLLABLE[dev.kind]
        conn = net.connection(dev.connection_id)
        for ph in conn.phases:
            kind, idx = _coord(net, conn, ph)
            per.append(VariableDef(dev.id, dev.kind, "p", ph, sign, kind, idx))
            per.append(VariableDef(dev.id, dev.kind, "q", ph, sign, kind, idx))
            if dev.kind == "es_split":
                per.append(VariableDef(dev.id, dev.kind, "p_cha", ph, 0, None, None))
                per.append(VariableDef(dev.id, dev.kind, "p_dis", ph, 0, None, None))
    return VariableLayout(per_period=per, horizon=horizon)


def _coord(net: NetworkModel, conn: DeviceConnection, ph: str):
    if conn.kind == "wye":
        return "wye", net.load_index[(conn.bus, ph)]
    return "delta", net.delta_index[(conn.bus, ph)]


def build_exogenous(net: NetworkModel, fleet: list[FleetDevice], horizon: int):
    """Complex (T x nodes) and (T x delta slots) MW injections from fixed loads."""
    exog_w = np.zeros((horizon, net.n_load_nodes), dtype=complex)
    exog_d = np.zeros((horizon, net.n_delta_slots), dtype=complex)
    for dev in fleet:
        if dev.kind != "load":
            continue
        pr = _series(dev.params.p, horizon, f"{dev.id}.p")
        qr = _series(dev.params.q, horizon, f"{dev.id}.q")
        conn = net.connection(dev.connection_id)
        for ph in conn.phases:
            kind, idx = _coord(net, conn, ph)
            target = exog_w if kind == "wye" else exog_d
            target[:, idx] -= pr + 1j * qr  # consumption injects negatively
    return exog_w, exog_d


def default_midpoint_x0(fleet: list[FleetDevice], layout: VariableLayout) -> np.ndarray:
    """Midpoint of every device box, per period: the default linearization point."""
    tt = layout.horizon
    x0 = np.zeros((tt, layout.n_per_period))
    for dev in fleet:
        if dev.kind == "load":
            continue
        for t in range(tt):
            mid_p = 0.0
            if dev.kind == "pv":
                mid_p = 0.5 * (_series(dev.params.p_lo, tt, "p_lo")[t]
                               + _series(dev.params.p_hi, tt, "p_hi")[t])
            elif dev.kind in ("es", "es_split"):
                mid_p = 0.5 * (_series(dev.params.p_lo, tt, "p_lo")[t]
                               + _series(dev.params.p_hi, tt, "p_hi")[t])
            elif dev.kind == "dcl":
                mid_p = 0.5 * (_series(dev.params.p_lo, tt, "p_lo")[t]
                               + _series(dev.params.p_hi, tt, "p_hi")[t])
            elif dev.kind == "hvac":
                mid_p = 0.5 * _series(dev.params.p_max, tt, "p_max")[t]
            for j in layout.find(dev.id, "p"):
                x0[t, j] = mid_p
            if dev.kind in ("dcl", "hvac"):
                for j in layout.find(dev.id, "q"):
                    x0[t, j] = dev.params.eta * mid_p
    return x0


# ---------------------------------------------------------------------------
# constraint blocks


def build_blocks(fleet: list[FleetDevice], layout: VariableLayout, dt_hours: float,
                 n_polygon: int = 8, polygonize: bool = True):
    """All device blocks plus any conic leftovers when polygonize=False."""
    blocks: list[ConstraintBlock] = []
    conics: list[ConicEntry] = []
    for dev in fleet:
        if dev.kind == "load":
            continue
        if dev.kind == "pv":
            blk, con = pv_block(dev, layout, dt_hours, n_polygon, polygonize)
        elif dev.kind == "es":
            blk, con = es_block(dev, layout, dt_hours, n_polygon, polygonize)
        elif dev.kind == "es_split":
            blk, con = es_split_block(dev, layout, dt_hours, n_polygon, polygonize)
        elif dev.kind == "dcl":
            blk, con = dcl_block(dev, layout, dt_hours), []
        elif dev.kind == "hvac":
            blk, con = hvac_block(dev, layout, dt_hours), []
        else:
            raise ConfigError(f"device {dev.id}: unknown kind {dev.kind!r}")
        blocks.append(blk)
        conics.extend(con)
    return blocks, conics


def _phases_of(layout: VariableLayout, dev_id: str) -> list[str]:
    seen: dict[str, None] = {}
    for v in layout.per_period:
        if v.device_id == dev_id and v.fieldname == "p":
            seen.setdefault(v.phase, None)
    return list(seen)


def _circle_rows(blk: ConstraintBlock, conics: list, dev: FleetDevice,
                 layout: VariableLayout, s_max: float, n_polygon: int,
                 polygonize: bool):
    tt = layout.horizon
    for ph in _phases_of(layout, dev.id):
        jp = layout.find(dev.id, "p", ph)[0]
        jq = layout.find(dev.id, "q", ph)[0]
        for t in range(tt):
            cp, cq = layout.flat(t, jp), layout.flat(t, jq)
            if polygonize:
                normals, offs = polygonize_circle(s_max, n_polygon, "inscribed")
                for k in range(n_polygon):
                    blk.add([cp, cq], normals[k], offs[k],
                            f"{dev.kind}:{dev.id}:{ph}:rating:{t}:{k}")
            else:
                conics.append(ConicEntry(dev.id, t, ph, cp, cq, s_max,
                                         f"{dev.kind}:{dev.id}:{ph}:rating:{t}"))


def _power_box_rows(blk: ConstraintBlock, dev: FleetDevice, layout: VariableLayout,
                    p_lo, p_hi):
    tt = layout.horizon
    lo = _series(p_lo, tt, f"{dev.id}.p_lo")
    hi = _series(p_hi, tt, f"{dev.id}.p_hi")
    if np.any(lo > hi):
        raise InfeasibleParams(f"device {dev.id}: power lower bound above upper bound")
    for ph in _phases_of(layout, dev.id):
        jp = layout.find(dev.id, "p", ph)[0]
        for t in range(tt):
            blk.add_pair([layout.flat(t, jp)], [1.0], lo[t], hi[t],
                         f"{dev.kind}:{dev.id}:{ph}:p_box:{t}")


def _soc_sum_rows(blk: ConstraintBlock, dev: FleetDevice, layout: VariableLayout,
                  dt: float, kappa: float, e0: float, e_lo: float, e_hi: float,
                  col_weight):
    """Retention-weighted energy rows over phase-summed device power.

    col_weight(field) gives the discharge-weighting applied to each
    variable field contributing to the state drain.
    """
    tt = layout.horizon
    fields = [f for f in ("p", "p_dis", "p_cha") if layout.find(dev.id, f)]
    for t in range(tt):
        cols: list[int] = []
        vals: list[float] = []
        for tau in range(t + 1):
            wgt = dt * kappa ** (t - tau)
            for f in fields:
                cw = col_weight(f)
                if cw == 0.0:
                    continue
                for j in layout.find(dev.id, f):
                    cols.append(layout.flat(tau, j))
                    vals.append(wgt * cw)
        lo = kappa ** (t + 1) * e0 - e_hi
        hi = kappa ** (t + 1) * e0 - e_lo
        blk.add_pair(cols, vals, lo, hi, f"{dev.kind}:{dev.id}:soc:{t}")
    # terminal neutrality: state returns exactly to its start
    rhs = kappa ** tt * e0 - e0
    cols, vals = [], []
    for tau in range(tt):
        wgt = dt * kappa ** (tt - 1 - tau)
        for f in fields:
            cw = col_weight(f)
            if cw == 0.0:
                continue
            for j in layout.find(dev.id, f):
                cols.append(layout.flat(tau, j))
                vals.append(wgt * cw)
    blk.add_pair(cols, vals, rhs, rhs, f"{dev.kind}:{dev.id}:soc_terminal")


def pv_block(dev: FleetDevice, layout: VariableLayout, dt: float,
             n_polygon: int = 8, polygonize: bool = True):
    pp: PvParams = dev.params
    if pp.s_max < 0:
        raise InfeasibleParams(f"device {dev.id}: negative rating")
    blk = ConstraintBlock(dev.id, layout.n_total)
    conics: list[ConicEntry] = []
    _power_box_rows(blk, dev, layout, pp.p_lo, pp.p_hi)
    _circle_rows(blk, conics, dev, layout, pp.s_max, n_polygon, polygonize)
    return blk, conics


def es_block(dev: FleetDevice, layout: VariableLayout, dt: float,
             n_polygon: int = 8, polygonize: bool = True):
    ep: EsParams = dev.params
    _check_es(dev.id, ep)
    blk = ConstraintBlock(dev.id, layout.n_total)
    conics: list[ConicEntry] = []
    _power_box_rows(blk, dev, layout, ep.p_lo, ep.p_hi)
    _circle_rows(blk, conics, dev, layout, ep.s_max, n_polygon, polygonize)
    _soc_sum_rows(blk, dev, layout, dt, ep.kappa, ep.e0, ep.e_lo, ep.e_hi,
                  lambda f: 1.0 if f == "p" else 0.0)
    return blk, conics


def es_split_block(dev: FleetDevice, layout: VariableLayout, dt: float,
                   n_polygon: int = 8, polygonize: bool = True):
    """Storage with explicit charge/discharge split and efficiencies.

    p = p_dis - p_cha per phase; the state drains at p_dis/eff_dis and
    refills at eff_cha * p_cha.  A cycling penalty vector discourages
    simultaneous charge and discharge when a cost-based dispatch uses it.
    """
    ep: EsParams = dev.params
    _check_es(dev.id, ep)
    if not (0 < ep.eff_dis <= 1 and 0 < ep.eff_cha <= 1):
        raise InfeasibleParams(f"device {dev.id}: efficiencies must be in (0, 1]")
    tt = layout.horizon
    blk = ConstraintBlock(dev.id, layout.n_total)
    conics: list[ConicEntry] = []
    lo = _series(ep.p_lo, tt, "p_lo")
    hi = _series(ep.p_hi, tt, "p_hi")
    if np.any(lo > hi):
        raise InfeasibleParams(f"device {dev.id}: power lower bound above upper bound")
    for ph in _phases_of(layout, dev.id):
        jp = layout.find(dev.id, "p", ph)[0]
        jd = layout.find(dev.id, "p_dis", ph)[0]
        jc = layout.find(dev.id, "p_cha", ph)[0]
        for t in range(tt):
            cp, cd, cc = layout.flat(t, jp), layout.flat(t, jd), layout.flat(t, jc)
            blk.add_pair([cp, cd, cc], [1.0, -1.0, 1.0], 0.0, 0.0,
                         f"es_split:{dev.id}:{ph}:net_power:{t}")
            blk.add([cd], [-1.0], 0.0, f"es_split:{dev.id}:{ph}:dis_nonneg:{t}")
            blk.add([cc], [-1.0], 0.0, f"es_split:{dev.id}:{ph}:cha_nonneg:{t}")
            blk.add([cd], [1.0], max(hi[t], 0.0), f"es_split:{dev.id}:{ph}:dis_cap:{t}")
            blk.add([cc], [1.0], max(-lo[t], 0.0), f"es_split:{dev.id}:{ph}:cha_cap:{t}")
    _power_box_rows(blk, dev, layout, ep.p_lo, ep.p_hi)
    _circle_rows(blk, conics, dev, layout, ep.s_max, n_polygon, polygonize)
    _soc_sum_rows(blk, dev, layout, dt, ep.kappa, ep.e0, ep.e_lo, ep.e_hi,
                  lambda f: 1.0 / ep.eff_dis if f == "p_dis"
                  else (-ep.eff_cha if f == "p_cha" else 0.0))
    if ep.cycle_penalty > 0:
        pen = np.zeros(layout.n_total)
        for f in ("p_dis", "p_cha"):
            for j in layout.find(dev.id, f):
                for t in range(tt):
                    pen[layout.flat(t, j)] = ep.cycle_penalty * dt
        blk.penalty = pen
    return blk, conics


def _check_es(dev_id: str, ep: EsParams):
    if not (0 < ep.kappa <= 1):
        raise InfeasibleParams(f"device {dev_id}: retention must be in (0, 1]")
    if not (ep.e_lo <= ep.e0 <= ep.e_hi):
        raise InfeasibleParams(f"device {dev_id}: initial state outside the energy band")
    if ep.s_max < 0:
        raise InfeasibleParams(f"device {dev_id}: negative rating")


def dcl_block(dev: FleetDevice, layout: VariableLayout, dt: float) -> ConstraintBlock:
    dp: DclParams = dev.params
    if dp.e_lo > dp.e_hi:
        raise InfeasibleParams(f"device {dev.id}: energy band empty")
    tt = layout.horizon
    blk = ConstraintBlock(dev.id, layout.n_total)
    _power_box_rows(blk, dev, layout, dp.p_lo, dp.p_hi)
    for ph in _phases_of(layout, dev.id):
        jp = layout.find(dev.id, "p", ph)[0]
        jq = layout.find(dev.id, "q", ph)[0]
        for t in range(tt):
            blk.add_pair([layout.flat(t, jq), layout.flat(t, jp)],
                         [1.0, -dp.eta], 0.0, 0.0, f"dcl:{dev.id}:{ph}:q_tie:{t}")
    cols = [layout.flat(t, j) for t in range(tt) for j in layout.find(dev.id, "p")]
    vals = [dt] * len(cols)
    blk.add_pair(cols, vals, dp.e_lo, dp.e_hi, f"dcl:{dev.id}:energy")
    return blk


def hvac_temperature_affine(dev: FleetDevice, layout: VariableLayout, dt: float):
    """Affine map from the flat decision vector to indoor temperature.

    Returns (mat, free) with temperature_t = mat[t] @ x + free[t], the
    first-order recursion unrolled:
    F_t = (1-a)^t F0 + sum_tau (1-a)^(t-tau) (a*Fout_tau + dt*beta*p_tau)
    Both the comfort-band rows and the comfort-deviation cost use this one
    map so they can never drift apart.
    """
    hp: HvacParams = dev.params
    tt = layout.horizon
    f_out = _series(hp.f_out, tt, f"{dev.id}.f_out")
    decay = 1.0 - hp.alpha
    mat = np.zeros((tt, layout.n_total))
    free = np.zeros(tt)
    for t in range(tt):
        free[t] = decay ** (t + 1) * hp.f0
        free[t] += sum(decay ** (t - tau) * hp.alpha * f_out[tau]
                       for tau in range(t + 1))
        for tau in range(t + 1):
            wgt = decay ** (t - tau) * dt * hp.beta
            for j in layout.find(dev.id, "p"):
                mat[t, layout.flat(tau, j)] += wgt
    return mat, free


def hvac_block(dev: FleetDevice, layout: VariableLayout, dt: float) -> ConstraintBlock:
    hp: HvacParams = dev.params
    if not (0 < hp.alpha <= 1):
        raise InfeasibleParams(f"device {dev.id}: ambient mixing must be in (0, 1]")
    if hp.f_lo > hp.f_hi:
        raise InfeasibleParams(f"device {dev.id}: comfort band empty")
    tt = layout.horizon
    p_max = _series(hp.p_max, tt, f"{dev.id}.p_max")
    if np.any(p_max < 0):
        raise InfeasibleParams(f"device {dev.id}: negative power cap")
    blk = ConstraintBlock(dev.id, layout.n_total)
    for ph in _phases_of(layout, dev.id):
        jp = layout.find(dev.id, "p", ph)[0]
        jq = layout.find(dev.id, "q", ph)[0]
        for t in range(tt):
            blk.add_pair([layout.flat(t, jp)], [1.0], 0.0, p_max[t],
                         f"hvac:{dev.id}:{ph}:p_box:{t}")
            blk.add_pair([layout.flat(t, jq), layout.flat(t, jp)],
                         [1.0, -hp.eta], 0.0, 0.0, f"hvac:{dev.id}:{ph}:q_tie:{t}")
    mat, free = hvac_temperature_affine(dev, layout, dt)
    for t in range(tt):
        cols = np.nonzero(mat[t])[0]
        blk.add_pair(list(cols), list(mat[t, cols]),
                     hp.f_lo - free[t], hp.f_hi - free[t],
                     f"hvac:{dev.id}:temp:{t}")
    return blk


def simulate_states(dev: FleetDevice, layout: VariableLayout, dt: float,
                    x: np.ndarray) -> dict:
    """Forward-simulate device state series from a flat decision vector."""
    tt = layout.horizon
    x = np.asarray(x, dtype=float).ravel()
    out: dict = {}
    if dev.kind in ("es", "es_split"):
        ep: EsParams = dev.params
        e = ep.e0
        series = []
        for t in range(tt):
            if dev.kind == "es":
                drain = sum(x[layout.flat(t, j)] for j in layout.find(dev.id, "p"))
            else:
                drain = sum(x[layout.flat(t, j)] for j in layout.find(dev.id, "p_dis")) / ep.eff_dis
                drain -= ep.eff_cha * sum(x[layout.flat(t, j)] for j in layout.find(dev.id, "p_cha"))
            e = ep.kappa * e - dt * drain
            series.append(e)
        out["energy"] = np.array(series)
    elif dev.kind == "hvac":
        hp: HvacParams = dev.params
        f_out = _series(hp.f_out, tt, "f_out")
        f = hp.f0
        series = []
        for t in range(tt):
            p = sum(x[layout.flat(t, j)] for j in layout.find(dev.id, "p"))
            f = f + hp.alpha * (f_out[t] - f) + dt * hp.beta * p
            series.append(f)
        out["temperature"] = np.array(series)
    elif dev.kind == "dcl":
        out["energy_drawn"] = dt * np.cumsum(
            [sum(x[layout.flat(t, j)] for j in layout.find(dev.id, "p")) for t in range(tt)])
    return out
