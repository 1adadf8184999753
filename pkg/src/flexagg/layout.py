"""Controllable-variable layout shared by the network and device models.

One period of the decision vector stacks, device by device, the active
and reactive injection variables (plus any auxiliary variables such as
charge/discharge splits that never touch the network).  The full horizon
concatenates identical period blocks, so variable ``j`` of period ``t``
lives at flat index ``t * n_per_period + j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InconsistentLayout


@dataclass(frozen=True)
class VariableDef:
    """One scalar decision variable within a period block.

    sign is the injection orientation: +1 for generation-positive
    devices, -1 for consumption-positive devices, 0 for auxiliary
    variables with no network coupling.  coord_kind/coord_index locate
    the network injection coordinate ('wye' -> load phase-node index,
    'delta' -> phase-pair slot index); auxiliary variables carry None.
    """

    device_id: str
    device_kind: str
    fieldname: str  # 'p', 'q', 'p_cha', 'p_dis'
    phase: str
    sign: int
    coord_kind: str | None
    coord_index: int | None


@dataclass
class VariableLayout:
    """Bijection between (device, phase, field, period) and flat indices."""

    per_period: list[VariableDef]
    horizon: int

    def __post_init__(self):
        keys = [(v.device_id, v.phase, v.fieldname) for v in self.per_period]
        if len(set(keys)) != len(keys):
            dup = [k for k in keys if keys.count(k) > 1][0]
            raise InconsistentLayout(f"duplicate variable {dup}")
        for v in self.per_period:
            if v.sign not in (-1, 0, 1):
                raise InconsistentLayout(f"bad sign {v.sign} on {v.device_id}")
            if (v.coord_kind is None) != (v.coord_index is None):
                raise InconsistentLayout(f"half-specified coordinate on {v.device_id}")
        if self.horizon < 1:
            raise InconsistentLayout("horizon must be at least 1")

    @property
    def n_per_period(self) -> int:
        return len(self.per_period)

    @property
    def n_total(self) -> int:
        return self.horizon * self.n_per_period

    def flat(self, t: int, j: int) -> int:
        if not (0 <= t < self.horizon and 0 <= j < self.n_per_period):
            raise InconsistentLayout(f"index ({t}, {j}) outside layout")
        return t * self.n_per_period + j

    def find(self, device_id: str, fieldname: str, phase: str | None = None) -> list[int]:
        """Per-period indices of a device's variables, optionally one phase."""
        out = [
            j for j, v in enumerate(self.per_period)
            if v.device_id == device_id and v.fieldname == fieldname
            and (phase is None or v.phase == phase)
        ]
        return out

    def device_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for v in self.per_period:
            seen.setdefault(v.device_id, None)
        return list(seen)
