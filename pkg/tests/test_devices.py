"""Device block tests against hand-computed projections and forward simulation."""

import numpy as np
import pytest

from flexagg.devices import (
    ConstraintBlock,
    DclParams,
    EsParams,
    FleetDevice,
    HvacParams,
    LoadParams,
    PvParams,
    build_blocks,
    build_exogenous,
    build_layout,
    default_midpoint_x0,
    dcl_block,
    es_block,
    es_split_block,
    hvac_block,
    polygonize_circle,
    pv_block,
    simulate_states,
)
from flexagg.errors import BadArity, InfeasibleParams
from flexagg.layout import VariableDef, VariableLayout
from flexagg.solver import LpProblem, solve_lp


def single_phase_layout(dev_id, kind, horizon, split=False):
    sign = 1 if kind in ("pv", "es", "es_split") else -1
    per = [
        VariableDef(dev_id, kind, "p", "a", sign, "wye", 0),
        VariableDef(dev_id, kind, "q", "a", sign, "wye", 0),
    ]
    if split:
        per.append(VariableDef(dev_id, kind, "p_cha", "a", 0, None, None))
        per.append(VariableDef(dev_id, kind, "p_dis", "a", 0, None, None))
    return VariableLayout(per_period=per, horizon=horizon)


def optimize(blocks, c, sense="min"):
    n = blocks[0].n_cols
    ws, rs = [], []
    for blk in blocks:
        w, r = blk.dense()
        ws.append(w)
        rs.append(r)
    w = np.vstack(ws)
    r = np.concatenate(rs)
    cvec = np.asarray(c, dtype=float)
    if sense == "max":
        cvec = -cvec
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    sol = solve_lp(LpProblem(c=cvec, a_ub=w, b_ub=r, lo=lo, hi=hi))
    assert sol.status == "optimal", sol.status
    return (-sol.objective if sense == "max" else sol.objective), sol.x


class TestPolygon:
    def test_inscribed_vertices_on_circle(self):
        normals, offs = polygonize_circle(2.0, 8, "inscribed")
        assert np.allclose(offs, 2.0 * np.cos(np.pi / 8))
        # adjacent facet intersections are the vertices, on the circle
        for k in range(8):
            a = np.stack([normals[k], normals[(k + 1) % 8]])
            v = np.linalg.solve(a, [offs[k], offs[(k + 1) % 8]])
            assert np.hypot(*v) == pytest.approx(2.0, abs=1e-12)
            ang = np.arctan2(v[1], v[0]) % (2 * np.pi)
            assert ang == pytest.approx((k * np.pi / 4 + np.pi / 8) % (2 * np.pi), abs=1e-12)

    def test_circumscribed_contains_circle(self):
        normals, offs = polygonize_circle(1.5, 8, "circumscribed")
        assert np.allclose(offs, 1.5)
        for ang in np.linspace(0, 2 * np.pi, 100):
            pt = 1.5 * np.array([np.cos(ang), np.sin(ang)])
            assert np.all(normals @ pt <= offs + 1e-12)

    def test_inscribed_inside_circle(self):
        normals, offs = polygonize_circle(1.0, 6, "inscribed")
        for k in range(6):
            a = np.stack([normals[k], normals[(k + 1) % 6]])
            v = np.linalg.solve(a, [offs[k], offs[(k + 1) % 6]])
            assert np.hypot(*v) <= 1.0 + 1e-12

    def test_bad_arity(self):
        with pytest.raises(BadArity):
            polygonize_circle(1.0, 3)
        with pytest.raises(BadArity):
            polygonize_circle(1.0, 7)
        with pytest.raises(BadArity):
            polygonize_circle(1.0, 2)

    def test_zero_radius_pins_origin(self):
        normals, offs = polygonize_circle(0.0, 4, "circumscribed")
        assert np.all(offs == 0.0)


class TestStorage:
    def test_energy_band_limits_first_period(self):
        # dt=0.5h, full retention, start 5 MWh in [0, 10]:
        # 0.5*p0 must stay in [5-10, 5-0], so p0 in [-10, 10]
        lay = single_phase_layout("b1", "es", 2)
        dev = FleetDevice("b1", "es", "c", EsParams(
            p_lo=-100, p_hi=100, s_max=200, e0=5, e_lo=0, e_hi=10, kappa=1.0))
        blk, _ = es_block(dev, lay, dt=0.5)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        hi, _ = optimize([blk], c, "max")
        lo, _ = optimize([blk], c, "min")
        assert hi == pytest.approx(10.0, abs=1e-8)
        assert lo == pytest.approx(-10.0, abs=1e-8)

    def test_terminal_neutrality(self):
        lay = single_phase_layout("b1", "es", 2)
        dev = FleetDevice("b1", "es", "c", EsParams(
            p_lo=-100, p_hi=100, s_max=200, e0=5, e_lo=0, e_hi=10, kappa=1.0))
        blk, _ = es_block(dev, lay, dt=0.5)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        c[lay.flat(1, 0)] = 1.0
        hi, _ = optimize([blk], c, "max")
        lo, _ = optimize([blk], c, "min")
        assert hi == pytest.approx(0.0, abs=1e-8)
        assert lo == pytest.approx(0.0, abs=1e-8)

    def test_retention_decay_hand_value(self):
        # kappa=0.5, dt=1, e0=4, band [0, 100]: after one idle period half
        # the charge is gone, and the terminal row must restore e0:
        # 0.5*p0 + p1 = 0.25*4 - 4 = -3
        lay = single_phase_layout("b1", "es", 2)
        dev = FleetDevice("b1", "es", "c", EsParams(
            p_lo=-100, p_hi=100, s_max=200, e0=4, e_lo=0, e_hi=100, kappa=0.5))
        blk, _ = es_block(dev, lay, dt=1.0)
        _, x = optimize([blk], np.eye(lay.n_total)[lay.flat(0, 0)], "max")
        p0 = x[lay.flat(0, 0)]
        p1 = x[lay.flat(1, 0)]
        assert 0.5 * p0 + p1 == pytest.approx(-3.0, abs=1e-8)

    def test_forward_simulation_respects_band(self):
        rng = np.random.default_rng(7)
        for trial in range(12):
            tt = 4
            # retention close to 1 so the box can restore decay losses
            kappa = rng.uniform(0.9, 1.0)
            e0 = rng.uniform(2, 6)
            dev = FleetDevice("s", "es", "c", EsParams(
                p_lo=-6, p_hi=6, s_max=10, e0=e0, e_lo=0.0, e_hi=10.0, kappa=kappa))
            lay = single_phase_layout("s", "es", tt)
            blk, _ = es_block(dev, lay, dt=0.25)
            c = rng.normal(size=lay.n_total)
            _, x = optimize([blk], c, "min")
            states = simulate_states(dev, lay, 0.25, x)["energy"]
            assert np.all(states >= -1e-7)
            assert np.all(states <= 10.0 + 1e-7)
            assert states[-1] == pytest.approx(e0, abs=1e-7)

    def test_split_matches_simple_when_lossless(self):
        rng = np.random.default_rng(11)
        tt = 3
        par = EsParams(p_lo=-4, p_hi=4, s_max=6, e0=3, e_lo=0, e_hi=6, kappa=0.9)
        dev_a = FleetDevice("s", "es", "c", par)
        dev_b = FleetDevice("s", "es_split", "c", par)
        lay_a = single_phase_layout("s", "es", tt)
        lay_b = single_phase_layout("s", "es_split", tt, split=True)
        blk_a, _ = es_block(dev_a, lay_a, dt=0.5)
        blk_b, _ = es_split_block(dev_b, lay_b, dt=0.5)
        for _ in range(8):
            cf = rng.normal(size=(tt, 2))  # objective over (p, q) only
            ca = np.zeros(lay_a.n_total)
            cb = np.zeros(lay_b.n_total)
            for t in range(tt):
                ca[lay_a.flat(t, 0)] = cf[t, 0]
                ca[lay_a.flat(t, 1)] = cf[t, 1]
                cb[lay_b.flat(t, 0)] = cf[t, 0]
                cb[lay_b.flat(t, 1)] = cf[t, 1]
            va, _ = optimize([blk_a], ca, "min")
            vb, _ = optimize([blk_b], cb, "min")
            assert vb == pytest.approx(va, abs=1e-7)

    def test_split_round_trip_losses_hand_value(self):
        # one period, terminal equality: dis/0.8 = 0.9*cha, so the net
        # power p = dis - cha = -0.28*cha, with cha capped at 10: p in [-2.8, 0]
        lay = single_phase_layout("s", "es_split", 1, split=True)
        dev = FleetDevice("s", "es_split", "c", EsParams(
            p_lo=-10, p_hi=10, s_max=50, e0=5, e_lo=0, e_hi=10, kappa=1.0,
            eff_dis=0.8, eff_cha=0.9))
        blk, _ = es_split_block(dev, lay, dt=1.0)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        hi, _ = optimize([blk], c, "max")
        lo, _ = optimize([blk], c, "min")
        assert hi == pytest.approx(0.0, abs=1e-8)
        assert lo == pytest.approx(-2.8, abs=1e-8)

    def test_split_simulation_respects_band(self):
        rng = np.random.default_rng(23)
        dev = FleetDevice("s", "es_split", "c", EsParams(
            p_lo=-5, p_hi=5, s_max=8, e0=4, e_lo=1, e_hi=9, kappa=0.95,
            eff_dis=0.9, eff_cha=0.85, cycle_penalty=0.01))
        lay = single_phase_layout("s", "es_split", 3, split=True)
        blk, _ = es_split_block(dev, lay, dt=0.5)
        assert blk.penalty is not None and blk.penalty.max() == pytest.approx(0.005)
        for _ in range(6):
            _, x = optimize([blk], rng.normal(size=lay.n_total), "min")
            states = simulate_states(dev, lay, 0.5, x)["energy"]
            assert np.all(states >= 1 - 1e-7) and np.all(states <= 9 + 1e-7)
            assert states[-1] == pytest.approx(4.0, abs=1e-7)

    def test_bad_params(self):
        lay = single_phase_layout("s", "es", 1)
        for par in (
            EsParams(p_lo=1, p_hi=-1, s_max=5, e0=3, e_lo=0, e_hi=5),
            EsParams(p_lo=-1, p_hi=1, s_max=5, e0=9, e_lo=0, e_hi=5),
            EsParams(p_lo=-1, p_hi=1, s_max=5, e0=3, e_lo=0, e_hi=5, kappa=0.0),
            EsParams(p_lo=-1, p_hi=1, s_max=-2, e0=3, e_lo=0, e_hi=5),
        ):
            with pytest.raises(InfeasibleParams):
                es_block(FleetDevice("s", "es", "c", par), lay, dt=1.0)


class TestThermostat:
    def test_single_period_hand_value(self):
        # F1 = 0.5*20 + 0.5*20 + 1*1*p = 20 + p must land in [19, 21];
        # with p >= 0 that allows p in [0, 1]
        lay = single_phase_layout("h", "hvac", 1)
        dev = FleetDevice("h", "hvac", "c", HvacParams(
            p_max=5, eta=0.3, alpha=0.5, beta=1.0, f0=20, f_lo=19, f_hi=21, f_out=20))
        blk = hvac_block(dev, lay, dt=1.0)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        hi, x = optimize([blk], c, "max")
        lo, _ = optimize([blk], c, "min")
        assert hi == pytest.approx(1.0, abs=1e-8)
        assert lo == pytest.approx(0.0, abs=1e-8)
        assert x[lay.flat(0, 1)] == pytest.approx(0.3 * hi, abs=1e-8)

    def test_cooling_sign(self):
        # beta < 0 (electric cooling) with a hot ambient: keeping under the
        # ceiling forces a minimum draw.  F1 = 0.5*24 + 0.5*30 - p = 27 - p
        # must be <= 25, so p >= 2.
        lay = single_phase_layout("h", "hvac", 1)
        dev = FleetDevice("h", "hvac", "c", HvacParams(
            p_max=10, eta=0.2, alpha=0.5, beta=-1.0, f0=24, f_lo=18, f_hi=25, f_out=30))
        blk = hvac_block(dev, lay, dt=1.0)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        lo, _ = optimize([blk], c, "min")
        assert lo == pytest.approx(2.0, abs=1e-8)

    def test_forward_simulation_respects_comfort(self):
        rng = np.random.default_rng(3)
        dev = FleetDevice("h", "hvac", "c", HvacParams(
            p_max=4, eta=0.2, alpha=0.3, beta=-0.8, f0=22,
            f_lo=20, f_hi=24, f_out=[28.0, 26.0, 30.0, 27.0]))
        lay = single_phase_layout("h", "hvac", 4)
        blk = hvac_block(dev, lay, dt=0.5)
        for _ in range(10):
            _, x = optimize([blk], rng.normal(size=lay.n_total), "min")
            temps = simulate_states(dev, lay, 0.5, x)["temperature"]
            assert np.all(temps >= 20 - 1e-7) and np.all(temps <= 24 + 1e-7)

    def test_bad_params(self):
        lay = single_phase_layout("h", "hvac", 1)
        for par in (
            HvacParams(p_max=5, eta=0.3, alpha=0.0, beta=1, f0=20, f_lo=19, f_hi=21, f_out=20),
            HvacParams(p_max=5, eta=0.3, alpha=0.5, beta=1, f0=20, f_lo=22, f_hi=21, f_out=20),
            HvacParams(p_max=-1, eta=0.3, alpha=0.5, beta=1, f0=20, f_lo=19, f_hi=21, f_out=20),
        ):
            with pytest.raises(InfeasibleParams):
                hvac_block(FleetDevice("h", "hvac", "c", par), lay, dt=1.0)


class TestDeferrableLoad:
    def test_energy_band_hand_values(self):
        # two one-hour periods, p in [0,3] each, total energy in [2,4]
        lay = single_phase_layout("d", "dcl", 2)
        dev = FleetDevice("d", "dcl", "c", DclParams(
            p_lo=0, p_hi=3, eta=0.5, e_lo=2, e_hi=4))
        blk = dcl_block(dev, lay, dt=1.0)
        tot = np.zeros(lay.n_total)
        tot[lay.flat(0, 0)] = tot[lay.flat(1, 0)] = 1.0
        hi, _ = optimize([blk], tot, "max")
        lo, _ = optimize([blk], tot, "min")
        assert hi == pytest.approx(4.0, abs=1e-8)
        assert lo == pytest.approx(2.0, abs=1e-8)
        first = np.zeros(lay.n_total)
        first[lay.flat(0, 0)] = 1.0
        hi0, x = optimize([blk], first, "max")
        assert hi0 == pytest.approx(3.0, abs=1e-8)
        assert x[lay.flat(0, 1)] == pytest.approx(1.5, abs=1e-8)

    def test_bad_params(self):
        lay = single_phase_layout("d", "dcl", 1)
        with pytest.raises(InfeasibleParams):
            dcl_block(FleetDevice("d", "dcl", "c",
                                  DclParams(p_lo=0, p_hi=1, eta=0.1, e_lo=3, e_hi=2)),
                      lay, dt=1.0)


class TestGenerator:
    def test_box_and_rating(self):
        lay = single_phase_layout("g", "pv", 1)
        dev = FleetDevice("g", "pv", "c", PvParams(p_lo=0, p_hi=0.9, s_max=1.0))
        blk, _ = pv_block(dev, lay, dt=1.0, n_polygon=16)
        c = np.zeros(lay.n_total)
        c[lay.flat(0, 0)] = 1.0
        hi, _ = optimize([blk], c, "max")
        assert hi == pytest.approx(0.9, abs=1e-8)
        # reactive reach at full output is limited by the polygon edge
        cq = np.zeros(lay.n_total)
        cq[lay.flat(0, 1)] = 1.0
        hiq, xq = optimize([blk], cq, "max")
        assert hiq <= 1.0 + 1e-9
        assert hiq >= np.cos(np.pi / 16) - 1e-9

    def test_conic_passthrough(self):
        lay = single_phase_layout("g", "pv", 2)
        dev = FleetDevice("g", "pv", "c", PvParams(p_lo=0, p_hi=0.9, s_max=1.0))
        blk, conics = pv_block(dev, lay, dt=1.0, polygonize=False)
        assert len(conics) == 2
        assert {c.period for c in conics} == {0, 1}
        assert all(c.radius == 1.0 for c in conics)
        # no polygon rows present, only the box
        assert blk.n_rows == 4


class TestFleetAssembly:
    def test_layout_and_exogenous(self, two_bus):
        fleet = [
            FleetDevice("pv1", "pv", "cw", PvParams(p_lo=0, p_hi=1, s_max=2)),
            FleetDevice("ld1", "load", "cw", LoadParams(p=[0.4, 0.6], q=[0.1, 0.1])),
        ]
        lay = build_layout(two_bus, fleet, horizon=2)
        assert lay.n_per_period == 2
        assert lay.per_period[0].sign == 1
        ew, ed = build_exogenous(two_bus, fleet, horizon=2)
        assert ew.shape == (2, two_bus.n_load_nodes)
        assert ew[0, 0] == pytest.approx(-0.4 - 0.1j)
        assert ew[1, 0] == pytest.approx(-0.6 - 0.1j)

    def test_build_blocks_and_midpoint(self, two_bus):
        fleet = [
            FleetDevice("pv1", "pv", "cw", PvParams(p_lo=0, p_hi=1, s_max=2)),
            FleetDevice("es1", "es", "cw", EsParams(
                p_lo=-2, p_hi=2, s_max=3, e0=1, e_lo=0, e_hi=2)),
            FleetDevice("ld1", "load", "cw", LoadParams(p=0.5, q=0.1)),
        ]
        lay = build_layout(two_bus, fleet, horizon=2)
        blocks, conics = build_blocks(fleet, lay, dt_hours=0.5)
        assert len(blocks) == 2 and not conics
        x0 = default_midpoint_x0(fleet, lay)
        assert x0.shape == (2, lay.n_per_period)
        assert x0[0, lay.find("pv1", "p")[0]] == pytest.approx(0.5)
        assert x0[0, lay.find("es1", "p")[0]] == pytest.approx(0.0)
