import numpy as np
import pytest

from mfb import scenarios
from mfb.analysis import ValueFunction
from mfb.errors import DomainError
from mfb.measure import DiscreteMeasure
from mfb.pmp import (
    StateCostateCloud,
    check_maximization,
    check_sensitivity,
    forward_backward_sweep,
    hamiltonian,
    random_directions,
)
from mfb.problem import ControlSignal, evaluate_cost
from mfb.solver import solve


@pytest.fixture
def optimal_sweep(lq, mu0):
    return forward_backward_sweep(lq, mu0, ControlSignal.constant(-0.5, 1.0))


def terminal_cloud():
    return StateCostateCloud(1.0, np.array([[-1.5], [2.5]]), np.array([[1.5], [-2.5]]), np.array([0.5, 0.5]))


@pytest.mark.parametrize("u, expected", [(-0.5, 0.125), (0.0, 0.0)])
def test_hamiltonian_examples(lq, u, expected):
    assert hamiltonian(lq, 1.0, terminal_cloud(), u) == pytest.approx(expected, abs=1e-15)


def test_hamiltonian_vanishes_without_costate_or_cost():
    spec = scenarios.zero_cost1d()
    cloud = StateCostateCloud(0.0, np.array([[0.0], [1.0]]), np.zeros((2, 1)), np.array([0.5, 0.5]))
    for u in (-3.0, 0.0, 7.0):
        assert hamiltonian(spec, 0.0, cloud, u) == 0.0


def test_hamiltonian_rejects_control_outside_box(lq):
    with pytest.raises(DomainError):
        hamiltonian(lq, 1.0, terminal_cloud(), 11.0)


def test_cloud_marginals():
    cloud = terminal_cloud()
    assert cloud.state.n == 2
    np.testing.assert_allclose(cloud.as_measure().points, [[-1.5, 1.5], [2.5, -2.5]])
    np.testing.assert_allclose(cloud.barycentric, cloud.costates)


def test_lq_costates_constant(optimal_sweep):
    R = optimal_sweep.costates
    np.testing.assert_allclose(R, np.broadcast_to([[1.5], [-2.5]], R.shape), atol=1e-13)


def test_zero_terminal_gives_zero_costate(mu0):
    sw = forward_backward_sweep(scenarios.running_only1d(), mu0, ControlSignal(np.linspace(-1, 1, 40), 1.0))
    assert np.max(np.abs(sw.costates)) == 0.0


def test_terminal_condition_and_state_marginal(mu0):
    spec = scenarios.gaussian_interaction2d()
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.5], [-1.0, 2.0]], [0.5, 0.25, 0.25])
    u = ControlSignal(np.tile([0.2, -0.1], (20, 1)), 1.0)
    sw = forward_backward_sweep(spec, mu, u)
    tr = sw.trajectory
    np.testing.assert_allclose(sw.costates[-1], -spec.terminal_grad(tr.positions[-1], tr.weights))
    # The first marginal of every cloud is the forward flow.
    ref = evaluate_cost(spec, mu, u, steps=100).trajectory
    np.testing.assert_array_equal(sw[37].state.points, ref.positions[37])
    assert sw[0].t == 0.0 and sw[-1].t == 1.0


def test_hamiltonian_constant_along_autonomous_optimum(lq, mu0):
    # On an optimal pair of an autonomous problem H is constant in t.
    rep = solve(lq, mu0)
    sw = forward_backward_sweep(lq, mu0, rep.control)
    hs = [hamiltonian(lq, c.t, c, sw.node_control(k)) for k, c in enumerate(sw)]
    assert max(hs) - min(hs) <= 1e-4
    assert hs[0] == pytest.approx(0.125, abs=1e-4)


def test_interaction_costates_match_finite_differences(mu0):
    # dJ/dx_i(0) = -w_i r_i(0) by the chain rule through the flow.
    spec = scenarios.interaction1d()
    u = ControlSignal(np.linspace(-0.5, 0.5, 10), 1.0)
    sw = forward_backward_sweep(spec, mu0, u)
    step = 1e-6
    for i in range(mu0.n):
        P = mu0.points.copy()
        P[i, 0] += step
        plus = evaluate_cost(spec, mu0.with_points(P), u, steps=50).total
        P[i, 0] -= 2 * step
        minus = evaluate_cost(spec, mu0.with_points(P), u, steps=50).total
        fd = (plus - minus) / (2 * step)
        assert fd == pytest.approx(-mu0.weights[i] * sw.costates[0][i, 0], abs=1e-5)


def test_maximization_gap(lq, mu0, optimal_sweep):
    assert check_maximization(lq, optimal_sweep) <= 1e-3
    zero = forward_backward_sweep(lq, mu0, ControlSignal.constant(0.0, 1.0))
    assert check_maximization(lq, zero) == pytest.approx(0.5, abs=1e-3)


def test_maximization_gap_zero_problem(mu0):
    spec = scenarios.zero_cost1d()
    sw = forward_backward_sweep(spec, mu0, ControlSignal(np.linspace(-2, 2, 40), 1.0))
    assert check_maximization(spec, sw, u_grid=41) == 0.0


def test_random_directions_cross_product(rng):
    dirs = random_directions(rng, 4, 3, 2)
    assert len(dirs) == 12
    assert sorted({h for h, _ in dirs}) == [-1.0, 0.0, 1.0]
    assert all(np.linalg.norm(F, axis=1).max() <= 1.0 + 1e-15 for _, F in dirs)


def test_sensitivity_on_small_grid(lq, mu0, optimal_sweep):
    vf = ValueFunction(lq)
    dirs = [(1.0, np.zeros((2, 1))), (0.0, mu0.points / 3.0), (-1.0, np.array([[1.0], [-1.0]]))]
    res = check_sensitivity(lq, optimal_sweep, dirs, times=[0.0, 0.5], value_fn=vf)
    assert set(res.per_time) == {0.0, 0.5}
    assert res.worst_slack <= 5e-3
    assert res.probes > 0


def test_sweep_csv(optimal_sweep):
    lines = optimal_sweep.to_csv().splitlines()
    assert lines[0] == "t,particle_id,x_1,r_1,w"
    assert len(lines) == 1 + 2 * 201
