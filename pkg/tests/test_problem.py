import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfb import blocks, scenarios
from mfb.errors import DomainError, InvalidControlError
from mfb.measure import DiscreteMeasure
from mfb.problem import (
    ControlSignal,
    ProblemSpec,
    check_derivatives,
    evaluate_cost,
    validate_hypotheses,
)

from .oracles import lq_value


def test_spec_validation():
    with pytest.raises(DomainError):
        ProblemSpec(dim=1, control_dim=2, T=1.0, U=[[-1, 1]])
    with pytest.raises(DomainError):
        ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[1, -1]])
    with pytest.raises(DomainError):
        ProblemSpec(dim=1, control_dim=1, T=0.0, U=[[-1, 1]])


def test_control_box(lq):
    assert lq.contains(np.array([10.0 + 5e-13]))
    assert not lq.contains(np.array([10.1]))
    np.testing.assert_array_equal(lq.project(np.array([12.0])), [10.0])
    assert lq.control_grid(401).shape == (401, 1)
    boxed = ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[1.0, 3.0]])
    np.testing.assert_array_equal(boxed.default_control(), [2.0])


def test_velocity_composition():
    spec = scenarios.interaction1d(k=1.0)
    X = np.array([[-1.0], [3.0]])
    w = np.array([0.5, 0.5])
    V = spec.velocity(0.0, np.array([0.25]), X, w)
    np.testing.assert_allclose(V, 0.25 + (1.0 - X))
    assert V.shape == X.shape


def test_cost_composition():
    spec = ProblemSpec(
        dim=1,
        control_dim=1,
        T=1.0,
        U=[[-1, 1]],
        control_costs=[blocks.QuadraticControlCost(0.5)],
        state_costs=[blocks.LinearStateCost(2.0)],
        interactions=[blocks.QuadraticInteraction(1.0)],
        terminals=[blocks.QuadraticTerminal(1.0)],
        variance_penalty=0.5,
    )
    X = np.array([[-1.0], [3.0]])
    w = np.array([0.5, 0.5])
    # c = 1/2 u^2, l = 2x, W = 1/2 |x - y|^2 averaged over pairs: 1/4 * 16 * 2 / 2.
    assert spec.running_cost(np.array([1.0]), X, w) == pytest.approx(0.5 + 2.0 + 4.0)
    # phi = 1/2 int x^2 + 1/2 Var = 2.5 + 2.
    assert spec.terminal_cost(X, w) == pytest.approx(4.5)


@pytest.mark.parametrize("u, expected", [(0.0, 2.5), (-0.5, 2.25)])
def test_lq_costs(lq, mu0, u, expected):
    val = evaluate_cost(lq, mu0, ControlSignal.constant(u, 1.0)).total
    assert val == pytest.approx(expected, abs=1e-12)


def test_lq_cost_matches_closed_form_on_tail(lq):
    mu = DiscreteMeasure([[0.5], [2.0], [-1.0]], [0.2, 0.5, 0.3])
    tau = 0.4
    m = float(mu.mean()[0])
    u = ControlSignal.constant(-m / (1.0 + 1.0 - tau), 1.0, tau)
    assert evaluate_cost(lq, mu, u, tau).total == pytest.approx(lq_value(tau, mu.points, mu.weights), abs=1e-12)


def test_zero_costs_give_zero():
    spec = scenarios.zero_cost1d()
    u = ControlSignal(np.linspace(-3, 3, 40), 1.0)
    assert evaluate_cost(spec, scenarios.lq1d_mu0(), u).total == 0.0


def test_refining_steps_leaves_lq_total_unchanged(lq, mu0):
    u = ControlSignal(np.sin(np.arange(10.0)), 1.0)
    a = evaluate_cost(lq, mu0, u, steps=200).total
    b = evaluate_cost(lq, mu0, u, steps=400).total
    assert abs(a - b) <= 1e-8


def test_cost_invariant_under_relabeling():
    spec = scenarios.gaussian_interaction2d()
    mu = DiscreteMeasure([[0.0, 1.0], [1.0, -0.5], [2.0, 0.3]], [0.2, 0.3, 0.5])
    u = ControlSignal(np.tile([0.3, -0.2], (20, 1)), 1.0)
    a = evaluate_cost(spec, mu, u).total
    b = evaluate_cost(spec, mu.permuted([2, 0, 1]), u).total
    assert abs(a - b) <= 1e-12


def test_invalid_control_and_steps(lq, mu0):
    with pytest.raises(InvalidControlError):
        evaluate_cost(lq, mu0, ControlSignal.constant(11.0, 1.0))
    with pytest.raises(DomainError):
        evaluate_cost(lq, mu0, ControlSignal.constant(0.0, 1.0, intervals=40), steps=90)
    with pytest.raises(DomainError):
        evaluate_cost(lq, mu0, ControlSignal.constant(0.0, 1.0, tau=0.2), tau=0.0)


def test_control_signal_lookup():
    u = ControlSignal(np.arange(4.0), 1.0)
    assert u.dt == 0.25
    assert u.interval_index(0.25) == 1
    assert u.interval_index(1.0) == 3
    assert u.value_at(0.6)[0] == 2.0
    with pytest.raises(DomainError):
        ControlSignal(np.zeros((0, 1)), 1.0)


def test_json_round_trip():
    spec = scenarios.gaussian_interaction2d()
    back = ProblemSpec.from_dict(json.loads(spec.to_json()))
    assert back.to_json() == spec.to_json()
    with pytest.raises(DomainError):
        ProblemSpec.from_dict({**spec.to_dict(), "blocks": {"drifts": []}})
    with pytest.raises(ValueError):
        blocks.block_from_dict({"type": "no_such_block"})


@pytest.mark.parametrize(
    "make", [scenarios.lq1d, scenarios.interaction1d, scenarios.gaussian_interaction2d, scenarios.running_only1d]
)
def test_analytic_derivatives_match_finite_differences(make):
    assert check_derivatives(make(), probes=50, step=1e-5) <= 1e-6


def test_variance_penalty_derivative():
    spec = ProblemSpec(dim=2, control_dim=1, T=1.0, U=[[-1, 1]], variance_penalty=0.7, drifts=[blocks.PowerDrift(0.2, 3)])
    assert check_derivatives(spec) <= 1e-6


def test_lq_hypotheses(lq):
    rep = validate_hypotheses(lq, 5.0, 200, seed=0)
    assert rep.ok
    assert rep.constants["C1"] == pytest.approx(0.5, abs=1e-12)
    assert rep.constants["C2"] >= 0.0


def test_superlinear_drift_flagged():
    rep = validate_hypotheses(scenarios.quadratic_drift1d(), 5.0, 200, seed=0)
    assert "OCP-i-growth" in [v[0] for v in rep.violations]
    assert not rep.ok


def test_zero_problem_constants():
    spec = ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[-1, 1]])
    rep = validate_hypotheses(spec, 5.0, 50, seed=1)
    assert rep.ok
    assert all(v == 0.0 for v in rep.constants.values())


def test_negative_running_cost_flagged():
    spec = ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[-1, 1]], state_costs=[blocks.LinearStateCost(1.0)])
    rep = validate_hypotheses(spec, 2.0, 50, seed=2)
    assert "OCP-ii-nonnegative" in [v[0] for v in rep.violations]


def test_hypothesis_report_is_deterministic(lq):
    a = validate_hypotheses(lq, 5.0, 40, seed=9).to_dict()
    b = validate_hypotheses(lq, 5.0, 40, seed=9).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_cost_relabeling_property(seed, n):
    rng = np.random.Generator(np.random.Philox(seed))
    spec = scenarios.gaussian_interaction2d()
    mu = DiscreteMeasure(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
    u = ControlSignal(rng.uniform(-2, 2, size=(8, 2)), 1.0)
    a = evaluate_cost(spec, mu, u, steps=40).total
    b = evaluate_cost(spec, mu.permuted(rng.permutation(n)), u, steps=40).total
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=25)
@given(st.floats(-10, 10), st.lists(st.floats(-5, 5), min_size=1, max_size=5))
def test_lq_constant_control_cost_formula(c, xs):
    # Rigid translation by c over [0, 1]: 1/2 c^2 + 1/2 int (x + c)^2.
    spec = scenarios.lq1d()
    mu = DiscreteMeasure(np.array(xs)[:, None])
    got = evaluate_cost(spec, mu, ControlSignal.constant(c, 1.0)).total
    want = 0.5 * c * c + 0.5 * float(np.mean((np.array(xs) + c) ** 2))
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
