"""Fixed-point power flow and affine surrogate against a Gauss-Seidel oracle."""

import numpy as np
import pytest

from flexagg.errors import ConfigError, NonConvergence
from flexagg.layout import VariableDef, VariableLayout
from flexagg.network import Bus, DeviceConnection, Line, NetworkModel
from flexagg.powerflow import (
    InjectionProfile,
    build_linear_pf,
    evaluate_linear,
    make_operating_point,
    pf_residual,
    solve_fixed_point_pf,
)

from oracles import gauss_seidel_pf


def single_phase_2bus(y=None):
    yblock = np.zeros((3, 3), dtype=complex)
    yblock[0, 0] = y if y is not None else 1.0 / (0.01 + 0.01j)
    return NetworkModel(
        buses=[Bus("sub", ("a",)), Bus("b1", ("a",))],
        lines=[Line("sub", "b1", ("a",), yblock)],
        substation="sub",
        v0=np.array([1.0 + 0.0j]),
        connections=[DeviceConnection("c1", "b1", "wye", ("a",))],
    )


def three_phase_2bus():
    z_self = 0.02 + 0.04j
    z_mut = 0.005 + 0.01j
    z = np.full((3, 3), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    y = np.linalg.inv(z)
    v0 = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    return NetworkModel(
        buses=[Bus("sub", ("a", "b", "c")), Bus("b1", ("a", "b", "c"))],
        lines=[Line("sub", "b1", ("a", "b", "c"), y)],
        substation="sub",
        v0=v0,
        connections=[
            DeviceConnection("cw", "b1", "wye", ("a", "b", "c")),
            DeviceConnection("cd", "b1", "delta", ("ab",)),
        ],
    )


def test_zero_injection_gives_no_load_voltage():
    net = three_phase_2bus()
    v = solve_fixed_point_pf(net, np.zeros(3, dtype=complex))
    assert np.allclose(v, net.v0, atol=1e-12)
    # series-only feeder: no-load voltage is the substation phasor propagated
    assert np.allclose(net.no_load_voltage, net.v0, atol=1e-12)


def test_2bus_matches_gauss_seidel_oracle():
    net = single_phase_2bus()
    s_load = 0.1 + 0.05j
    v = solve_fixed_point_pf(net, np.array([-s_load]))

    y = 1.0 / (0.01 + 0.01j)
    ybus = np.array([[y, -y], [-y, y]])
    v_oracle = gauss_seidel_pf(ybus, [0], np.array([1.0 + 0j]), np.array([0, -s_load]))
    assert abs(v[0] - v_oracle[1]) <= 1e-8
    assert pf_residual(net, v, np.array([-s_load])) <= 1e-10


def test_3phase_with_delta_matches_oracle():
    net = three_phase_2bus()
    s_wye = np.array([-(0.10 + 0.04j), -(0.08 + 0.03j), -(0.12 + 0.05j)])
    s_delta = np.array([-(0.05 + 0.02j)])
    v = solve_fixed_point_pf(net, s_wye, s_delta)

    z_self = 0.02 + 0.04j
    z_mut = 0.005 + 0.01j
    z = np.full((3, 3), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    yb = np.linalg.inv(z)
    ybus = np.block([[yb, -yb], [-yb, yb]])
    sinj = np.concatenate([np.zeros(3), s_wye])
    v_or = gauss_seidel_pf(
        ybus, [0, 1, 2], net.v0, sinj,
        delta_pairs=[(3, 4)], s_delta=list(s_delta), tol=1e-13,
        v_init=np.concatenate([net.v0, net.v0]))
    assert np.max(np.abs(v - v_or[3:])) <= 1e-8


def test_half_scale_voltage_brackets():
    net = single_phase_2bus()
    s = np.array([-(0.2 + 0.1j)])
    v_full = np.abs(solve_fixed_point_pf(net, s))
    v_half = np.abs(solve_fixed_point_pf(net, 0.5 * s))
    v_zero = np.abs(solve_fixed_point_pf(net, 0.0 * s))
    lo = np.minimum(v_zero, v_full)
    hi = np.maximum(v_zero, v_full)
    assert np.all(v_half >= lo - 1e-12) and np.all(v_half <= hi + 1e-12)


def test_nonconvergence_on_absurd_loading():
    net = single_phase_2bus()
    with pytest.raises(NonConvergence):
        solve_fixed_point_pf(net, np.array([-(80.0 + 40.0j)]))


def _toy_profile(net, horizon=2):
    per = [
        VariableDef("g1", "pv", "p", "a", 1, "wye", 0),
        VariableDef("g1", "pv", "q", "a", 1, "wye", 0),
    ]
    layout = VariableLayout(per_period=per, horizon=horizon)
    exog_w = np.zeros((horizon, net.n_load_nodes), dtype=complex)
    exog_w[:, 0] = [-(0.05 + 0.02j), -(0.08 + 0.03j)][:horizon]
    exog_d = np.zeros((horizon, net.n_delta_slots), dtype=complex)
    return InjectionProfile(horizon=horizon, dt_hours=0.5, layout=layout,
                            exog_wye=exog_w, exog_delta=exog_d)


def test_linearization_exact_at_operating_point():
    net = single_phase_2bus()
    prof = _toy_profile(net)
    x0 = np.array([[0.05, 0.0], [0.02, 0.01]])
    op = make_operating_point(net, prof, x0)
    model = build_linear_pf(net, prof, op)
    for t in range(prof.horizon):
        out = evaluate_linear(model, x0[t], t)
        assert np.max(np.abs(out["v"] - np.abs(op.v_t[t]))) <= 1e-10
        i_true = np.abs(net.line_currents(op.v_t[t]))
        assert np.max(np.abs(out["i"] - i_true)) <= 1e-10
        s0 = net.substation_power(op.v_t[t]) * net.s_base_mva
        assert out["p0"] == pytest.approx(s0.real, abs=1e-10)
        assert out["q0"] == pytest.approx(s0.imag, abs=1e-10)


def test_linearization_sweep_error_below_one_percent():
    net = three_phase_2bus()
    per = [
        VariableDef("g1", "pv", "p", p, 1, "wye", i) for i, p in enumerate("abc")
    ] + [
        VariableDef("g1", "pv", "q", p, 1, "wye", i) for i, p in enumerate("abc")
    ]
    layout = VariableLayout(per_period=per, horizon=1)
    exog_w = np.full((1, 3), -(0.10 + 0.04j), dtype=complex)
    prof = InjectionProfile(1, 1.0, layout, exog_w,
                            np.zeros((1, net.n_delta_slots), dtype=complex))
    x0 = np.array([[0.05, 0.05, 0.05, 0.0, 0.0, 0.0]])
    op = make_operating_point(net, prof, x0)
    model = build_linear_pf(net, prof, op)
    rng = np.random.default_rng(0)
    scale = 1.0 / net.s_base_mva
    for _ in range(25):
        x = x0[0] * (1 + rng.uniform(-0.2, 0.2, size=6))
        out = evaluate_linear(model, x, 0)
        sw = np.zeros(3, dtype=complex)
        sw += exog_w[0] * scale
        sw += (x[:3] + 1j * x[3:]) * scale
        v_true = np.abs(solve_fixed_point_pf(net, sw))
        rel = np.abs(out["v"] - v_true) / v_true
        assert rel.max() <= 0.01


def test_evaluate_linear_is_affine():
    net = single_phase_2bus()
    prof = _toy_profile(net)
    op = make_operating_point(net, prof, np.array([0.05, 0.0]))
    model = build_linear_pf(net, prof, op)
    rng = np.random.default_rng(1)
    x = rng.normal(size=2)
    y = rng.normal(size=2)
    for alpha in (0.0, 0.3, 1.0, -0.7):
        mix = alpha * x + (1 - alpha) * y
        got = evaluate_linear(model, mix, 0)
        vx = evaluate_linear(model, x, 0)
        vy = evaluate_linear(model, y, 0)
        assert np.allclose(got["v"], alpha * vx["v"] + (1 - alpha) * vy["v"], atol=1e-12)
        assert got["p0"] == pytest.approx(alpha * vx["p0"] + (1 - alpha) * vy["p0"], abs=1e-12)


def test_operating_point_residual_guard():
    net = single_phase_2bus()
    prof = _toy_profile(net)
    op = make_operating_point(net, prof, np.array([0.05, 0.0]))
    op.v_t = op.v_t + 0.01  # corrupt the record
    with pytest.raises(ConfigError):
        build_linear_pf(net, prof, op)


def test_network_validation_errors():
    yb = np.zeros((3, 3), dtype=complex)
    yb[0, 0] = 100.0
    with pytest.raises(ConfigError):
        NetworkModel(
            buses=[Bus("sub", ("a",)), Bus("b1", ("a",)), Bus("orphan", ("a",))],
            lines=[Line("sub", "b1", ("a",), yb)],
            substation="sub",
            v0=np.array([1.0 + 0j]),
            connections=[],
        )
    asym = yb.copy()
    asym[0, 1] = 1.0
    with pytest.raises(ConfigError):
        NetworkModel(
            buses=[Bus("sub", ("a", "b")), Bus("b1", ("a", "b"))],
            lines=[Line("sub", "b1", ("a", "b"), asym)],
            substation="sub",
            v0=np.array([1.0, -1.0]),
            connections=[],
        )
