import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from iss_smallgain.kfun import Linear
from iss_smallgain.network import MAX, SUM, apply_gamma
from iss_smallgain.dynamics import (
    NOT_APPLICABLE,
    InputSignal,
    SimulationError,
    VectorFieldSpec,
    check_estimates,
    example_dynamics,
    fixed_point_oracle,
    gs_network_from_dynamics,
    integrate,
    parse_input,
    rk4_order_ratio,
    step_halving_error,
)


def test_scalar_decay_exact():
    spec = VectorFieldSpec.from_slopes((1.0,), (SUM,), [[0.0]], np.zeros((1, 0)))
    tr = integrate(spec, [1.0], (), T=1.0, dt=1e-3)
    assert tr.x[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-8)


def test_rk4_order():
    assert 14.0 < rk4_order_ratio() < 18.0


def test_example_against_scipy():
    spec = example_dynamics()
    u = InputSignal("const", 1.0)
    tr = integrate(spec, [1.0, 1.0, 1.0], u, T=10.0, dt=1e-3)
    ref = solve_ivp(lambda t, x: spec.rhs(x, np.array([1.0])), (0, 10), [1.0, 1.0, 1.0],
                    method="DOP853", rtol=1e-11, atol=1e-12)
    assert np.allclose(tr.x[-1], ref.y[:, -1], rtol=1e-7)


def test_constant_input_approaches_equilibrium():
    spec = example_dynamics()
    tr = integrate(spec, [1.0, 1.0, 1.0], InputSignal("const", 1.0), T=60.0, dt=1e-3)
    # equilibrium by hand: x1 = 0.729 x1 + 1, x2 = 0.9 x1, x3 = 0.9 x2
    x1 = 1 / (1 - 0.729)
    eq = np.array([x1, 0.9 * x1, 0.81 * x1])
    assert np.all(np.abs(tr.x[-1] - eq) <= 0.02 * eq)
    net = gs_network_from_dynamics(spec)
    assert np.allclose(fixed_point_oracle(net, 1.0), eq, rtol=1e-9)


def test_zero_input_decays():
    spec = example_dynamics()
    tr = integrate(spec, [1.0, 1.0, 1.0], InputSignal("const", 0.0), T=60.0, dt=1e-3)
    nrm = tr.norms()
    assert np.all(np.diff(nrm) <= 1e-15)
    # slowest mode decays like exp(-(1 - 0.9) t)
    assert nrm[-1] == pytest.approx(math.exp(-6.0), rel=0.2)


def test_gs_and_ag_estimates_hold():
    spec = example_dynamics()
    net = gs_network_from_dynamics(spec)
    for u in (InputSignal("const", 1.0), InputSignal("const", 0.0), parse_input("sine:2,0.5")):
        tr = integrate(spec, [1.0, -2.0, 0.5], u, T=60.0, dt=1e-2)
        rep = check_estimates(tr, net, Linear(0.1))
        assert rep.status == "checked"
        assert rep.gs_holds and rep.ag_holds and rep.passed, rep.to_json()


def test_unstable_variant_not_applicable():
    spec = example_dynamics(1.2)
    tr = integrate(spec, [1.0, 1.0, 1.0], InputSignal("const", 0.0), T=60.0, dt=1e-3)
    assert tr.diverging()
    rep = check_estimates(tr, gs_network_from_dynamics(spec), Linear(0.1))
    assert rep.status == NOT_APPLICABLE and not rep.passed


def test_divergence_guard_stops_run():
    spec = VectorFieldSpec.from_slopes((1.0, 1.0), (SUM, SUM), [[0, 3.0], [3.0, 0]], np.zeros((2, 0)))
    tr = integrate(spec, [1.0, 1.0], (), T=100.0, dt=1e-2, guard=1e6)
    assert tr.aborted and tr.T < 100.0
    assert np.all(np.isfinite(tr.x))


def test_step_halving_small():
    assert step_halving_error(example_dynamics(), [1.0, 1.0, 1.0], InputSignal("const", 1.0), T=60.0, dt=1e-3) <= 1e-6


def test_csv_format(tmp_path):
    tr = integrate(example_dynamics(), [1.0, 1.0, 1.0], InputSignal("const", 1.0), T=0.01, dt=1e-3)
    path = tmp_path / "traj.csv"
    text = tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3,u1"
    assert len(lines) == len(tr.t) + 1
    assert text == path.read_text()
    row = np.array([float(v) for v in lines[-1].split(",")])
    assert np.array_equal(row[1:4], tr.x[-1])


def test_gs_network_gains():
    spec = VectorFieldSpec.from_slopes((2.0, 1.0), (SUM, MAX), [[0, 0.8], [0.5, 0]], [[1.0, 1.0], [0.0, 0.0]])
    net = gs_network_from_dynamics(spec)
    assert net.gamma[0][1] == Linear(0.4)
    assert net.external[0](1.0) == pytest.approx(1.0)
    assert not net.has_external or net.external[1](1.0) == 0.0


def test_gs_gamma_monotone(rng):
    net = gs_network_from_dynamics(example_dynamics())
    for _ in range(200):
        s = rng.uniform(0, 5, 3)
        assert np.all(apply_gamma(net, s) <= apply_gamma(net, s + rng.uniform(0, 1, 3)) + 1e-15)


def test_input_signals():
    assert parse_input("step:2@1.5")(np.array([1.0, 2.0])).tolist() == [0.0, 2.0]
    s = parse_input("sine:3,1,2")
    assert s.sup_norm == 2.0 and np.max(np.abs(s(np.linspace(0, 1, 101)))) <= 2.0
    with pytest.raises(ValueError):
        parse_input("ramp:1")


def test_dimension_checks():
    with pytest.raises(SimulationError):
        VectorFieldSpec.from_slopes((1.0, -1.0), (SUM, SUM), np.zeros((2, 2)), np.zeros((2, 0)))
    with pytest.raises(SimulationError):
        integrate(example_dynamics(), [1.0, 1.0, 1.0], (InputSignal(), InputSignal()), T=0.1)
