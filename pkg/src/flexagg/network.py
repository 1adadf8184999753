"""Multi-phase feeder description and admittance assembly.

Buses carry a subset of the phases a/b/c; lines carry symmetric 3x3
complex series admittance blocks (entries outside the line's phase set
must be zero).  The substation bus holds a fixed complex voltage per
phase and acts as the slack.  All electrical quantities are per-unit;
``s_base_mva`` converts device-level MW/MVar into per-unit injections.

The admittance matrix is assembled over "phase nodes", one per
(bus, phase) pair, partitioned into substation rows/columns and load
rows/columns.  Device connections map onto load phase nodes (wye) or
onto phase-pair difference slots (delta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularAdmittance

PHASES = ("a", "b", "c")
DELTA_PAIRS = ("ab", "bc", "ca")


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]


@dataclass(frozen=True)
class Line:
    """Series element between two buses.

    y_series is the 3x3 complex admittance block indexed by phase
    (a, b, c); rows/columns of phases the line does not carry must be
    exactly zero.  The block must be symmetric.
    """

    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    y_series: np.ndarray


@dataclass(frozen=True)
class DeviceConnection:
    """Attachment point for devices: a bus plus wye phases or delta pairs."""

    id: str
    bus: str
    kind: str  # 'wye' | 'delta'
    phases: tuple[str, ...]  # phase letters for wye, pair names for delta


@dataclass
class NetworkModel:
    """Validated feeder model with cached index maps and Y partitions."""

    buses: list[Bus]
    lines: list[Line]
    substation: str
    v0: np.ndarray  # complex, aligned with the substation bus phase list
    connections: list[DeviceConnection]
    v_lo: float = 0.9
    v_hi: float = 1.1
    i_hi: float | None = None  # per-unit ampacity applied to every line phase
    s_base_mva: float = 1.0

    def __post_init__(self):
        self._validate()
        self._index()
        self._assemble()

    # -- validation -------------------------------------------------------

    def _validate(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate bus id")
        by_id = {b.id: b for b in self.buses}
        if self.substation not in by_id:
            raise ConfigError(f"substation bus {self.substation!r} not defined")
        for b in self.buses:
            bad = [p for p in b.phases if p not in PHASES]
            if bad or len(set(b.phases)) != len(b.phases) or not b.phases:
                raise ConfigError(f"bus {b.id}: invalid phase list {b.phases}")
        sub = by_id[self.substation]
        v0 = np.asarray(self.v0, dtype=complex).ravel()
        if v0.size != len(sub.phases):
            raise ConfigError("substation voltage length disagrees with its phase list")
        self.v0 = v0
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in by_id:
                    raise ConfigError(f"line references unknown bus {end!r}")
            y = np.asarray(ln.y_series, dtype=complex)
            if y.shape != (3, 3):
                raise ConfigError("line admittance block must be 3x3")
            if not np.allclose(y, y.T, atol=1e-12):
                raise ConfigError(f"line {ln.from_bus}-{ln.to_bus}: block not symmetric")
            for p in ln.phases:
                if p not in by_id[ln.from_bus].phases or p not in by_id[ln.to_bus].phases:
                    raise ConfigError(
                        f"line {ln.from_bus}-{ln.to_bus}: phase {p} missing at an end bus")
            mask = np.zeros((3, 3), dtype=bool)
            idx = [PHASES.index(p) for p in ln.phases]
            mask[np.ix_(idx, idx)] = True
            if np.any(np.abs(y[~mask]) > 0):
                raise ConfigError(
                    f"line {ln.from_bus}-{ln.to_bus}: admittance outside its phase set")
        # connectivity over the bus graph
        parent = {b.id: b.id for b in self.buses}

        def root(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for ln in self.lines:
            parent[root(ln.from_bus)] = root(ln.to_bus)
        comps = {root(b.id) for b in self.buses}
        if len(comps) > 1:
            raise ConfigError("feeder graph is not connected")

        cids = [c.id for c in self.connections]
        if len(set(cids)) != len(cids):
            raise ConfigError("duplicate connection id")
        for c in self.connections:
            if c.bus not in by_id:
                raise ConfigError(f"connection {c.id}: unknown bus {c.bus!r}")
            if c.bus == self.substation:
                raise ConfigError(f"connection {c.id}: devices at the substation are not modeled")
            if c.kind == "wye":
                for p in c.phases:
                    if p not in by_id[c.bus].phases:
                        raise ConfigError(f"connection {c.id}: phase {p} absent at bus {c.bus}")
            elif c.kind == "delta":
                for pr in c.phases:
                    if pr not in DELTA_PAIRS:
                        raise ConfigError(f"connection {c.id}: bad delta pair {pr!r}")
                    if pr[0] not in by_id[c.bus].phases or pr[1] not in by_id[c.bus].phases:
                        raise ConfigError(
                            f"connection {c.id}: pair {pr} needs both phases at bus {c.bus}")
            else:
                raise ConfigError(f"connection {c.id}: kind must be wye or delta")

    # -- indexing ---------------------------------------------------------

    def _index(self):
        self.sub_nodes: list[tuple[str, str]] = []
        self.load_nodes: list[tuple[str, str]] = []
        for b in self.buses:
            for p in sorted(b.phases, key=PHASES.index):
                if b.id == self.substation:
                    self.sub_nodes.append((b.id, p))
                else:
                    self.load_nodes.append((b.id, p))
        self.node_index = {bp: i for i, bp in enumerate(self.sub_nodes + self.load_nodes)}
        self.load_index = {bp: i for i, bp in enumerate(self.load_nodes)}
        # delta slots: distinct (bus, pair) in connection order
        slots: list[tuple[str, str]] = []
        for c in self.connections:
            if c.kind == "delta":
                for pr in c.phases:
                    if (c.bus, pr) not in slots:
                        slots.append((c.bus, pr))
        self.delta_slots = slots
        self.delta_index = {s: i for i, s in enumerate(slots)}
        # line-phase flow slots
        self.line_phase_slots: list[tuple[int, str]] = []
        for li, ln in enumerate(self.lines):
            for p in sorted(ln.phases, key=PHASES.index):
                self.line_phase_slots.append((li, p))

    # -- admittance -------------------------------------------------------

    def _assemble(self):
        nn = len(self.node_index)
        y = np.zeros((nn, nn), dtype=complex)
        for ln in self.lines:
            for pi in ln.phases:
                for pj in ln.phases:
                    yv = ln.y_series[PHASES.index(pi), PHASES.index(pj)]
                    if yv == 0:
                        continue
                    fi = self.node_index[(ln.from_bus, pi)]
                    fj = self.node_index[(ln.from_bus, pj)]
                    ti = self.node_index[(ln.to_bus, pi)]
                    tj = self.node_index[(ln.to_bus, pj)]
                    y[fi, fj] += yv
                    y[ti, tj] += yv
                    y[fi, tj] -= yv
                    y[ti, fj] -= yv
        ns = len(self.sub_nodes)
        self.y00 = y[:ns, :ns]
        self.y0l = y[:ns, ns:]
        self.yl0 = y[ns:, :ns]
        self.yll = y[ns:, ns:]
        nl = len(self.load_nodes)
        if nl:
            if np.linalg.matrix_rank(self.yll) < nl:
                raise SingularAdmittance("load admittance block is singular")
            self.yll_inv = np.linalg.inv(self.yll)
        else:
            self.yll_inv = np.zeros((0, 0), dtype=complex)
        # delta incidence over load nodes
        h = np.zeros((len(self.delta_slots), nl))
        for k, (bus, pr) in enumerate(self.delta_slots):
            h[k, self.load_index[(bus, pr[0])]] = 1.0
            h[k, self.load_index[(bus, pr[1])]] = -1.0
        self.h_delta = h
        self.no_load_voltage = (
            -self.yll_inv @ (self.yl0 @ self.v0) if nl else np.zeros(0, dtype=complex))

    # -- convenience ------------------------------------------------------

    @property
    def n_load_nodes(self) -> int:
        return len(self.load_nodes)

    @property
    def n_delta_slots(self) -> int:
        return len(self.delta_slots)

    @property
    def n_line_phases(self) -> int:
        return len(self.line_phase_slots)

    def connection(self, cid: str) -> DeviceConnection:
        for c in self.connections:
            if c.id == cid:
                return c
        raise ConfigError(f"unknown connection {cid!r}")

    def line_currents(self, v_load: np.ndarray) -> np.ndarray:
        """Complex current per line-phase slot, from-end toward to-end."""
        full = self.full_voltage(v_load)
        out = np.zeros(len(self.line_phase_slots), dtype=complex)
        for k, (li, p) in enumerate(self.line_phase_slots):
            ln = self.lines[li]
            acc = 0j
            for pj in ln.phases:
                yv = ln.y_series[PHASES.index(p), PHASES.index(pj)]
                vf = full[self.node_index[(ln.from_bus, pj)]]
                vt = full[self.node_index[(ln.to_bus, pj)]]
                acc += yv * (vf - vt)
            out[k] = acc
        return out

    def full_voltage(self, v_load: np.ndarray) -> np.ndarray:
        return np.concatenate([self.v0, v_load])

    def substation_power(self, v_load: np.ndarray) -> complex:
        """Total complex power injected into the feeder at the substation (p.u.)."""
        i0 = self.y00 @ self.v0 + self.y0l @ v_load
        return complex(self.v0 @ np.conj(i0))
