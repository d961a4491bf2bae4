import json

import numpy as np
import pytest

from mfb import blocks, scenarios
from mfb.analysis import (
    DEFAULT_EPS_GRID,
    ValueFunction,
    difference_quotients,
    dini_lower_derivative,
    direction_table,
    dpp_residuals,
    lipschitz_estimate,
    minimal_semiconcavity_constant,
    regularized_lower_derivative,
    sample_measures,
    semiconcavity_test,
    superdifferential_test,
    value,
)
from mfb.errors import AnalysisError, DomainError
from mfb.measure import DiscreteMeasure
from mfb.problem import ProblemSpec
from mfb.solver import solve

from .oracles import lq_value


@pytest.fixture
def vf(lq):
    return ValueFunction(lq)


def lq_gradient(mu, tau=0.0, T=1.0):
    m = float(mu.mean()[0])
    return mu.points - m + m / (1.0 + T - tau)


def test_eps_grid():
    assert DEFAULT_EPS_GRID[0] == 1e-2 and len(DEFAULT_EPS_GRID) == 7
    assert DEFAULT_EPS_GRID[-1] == pytest.approx(1e-2 / 64)


def test_sample_measures_stay_in_ball(rng):
    ms = sample_measures(rng, 20, 2, 5.0)
    assert all(np.linalg.norm(m.points, axis=1).max() <= 5.0 + 1e-12 for m in ms)
    assert all(2 <= m.n <= 6 for m in ms)


def test_value_examples(lq, mu0, vf):
    assert vf(0.0, mu0) == pytest.approx(2.25, abs=1e-3)
    mu = DiscreteMeasure([[0.3], [4.0], [-2.0]], [0.2, 0.3, 0.5])
    assert vf(1.0, mu) == lq.terminal_cost(mu.points, mu.weights)
    assert value(scenarios.running_only1d(), 0.3, mu) == 0.0
    with pytest.raises(DomainError):
        vf(1.2, mu)


def test_value_matches_closed_form(rng, vf):
    for mu in sample_measures(rng, 5, 1, 5.0, equal_weights=False):
        tau = float(rng.uniform(0, 1))
        assert vf(tau, mu) == pytest.approx(lq_value(tau, mu.points, mu.weights), abs=1e-3)


def test_value_cache(lq, mu0, vf):
    a = vf.evaluate(0.0, mu0)
    solves = vf.solves
    assert vf.evaluate(0.0, mu0.permuted([1, 0])) == a
    assert vf.solves == solves and len(vf) == 1
    parallel = ValueFunction(lq, jobs=3)
    probes = [(0.1 * k, mu0) for k in range(6)]
    assert [r.value for r in parallel.map(probes)] == [vf(t, m) for t, m in probes]


def test_nonconverged_values_flagged(mu0):
    vf = ValueFunction(scenarios.gaussian_interaction2d(), {"max_iters": 1})
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.5]])
    assert not vf.evaluate(0.0, mu).converged
    assert len(vf.flagged) == 1


def test_direction_table(mu0):
    np.testing.assert_array_equal(direction_table(mu0, 2.0), [[2.0], [2.0]])
    np.testing.assert_array_equal(direction_table(mu0, lambda X: -X), -mu0.points)
    with pytest.raises(DomainError):
        direction_table(mu0, np.zeros((3, 1)))


def test_dini_examples(lq, mu0, vf):
    assert dini_lower_derivative(lq, 0.0, mu0, 1.0, 0.0, value_fn=vf) == pytest.approx(0.125, abs=5e-3)
    assert dini_lower_derivative(lq, 0.0, mu0, 0.0, lambda X: X, value_fn=vf) == pytest.approx(4.5, abs=5e-2)
    assert dini_lower_derivative(lq, 0.0, mu0, 0.0, 0.0, value_fn=vf) == pytest.approx(0.0, abs=1e-9)


def test_dini_without_probes_raises(lq, mu0, vf):
    with pytest.raises(AnalysisError):
        dini_lower_derivative(lq, 1.0, mu0, 1.0, 0.0, value_fn=vf)
    qs, skipped = difference_quotients(lq, 1.0, mu0, 1.0, 0.0, value_fn=vf)
    assert qs == [] and len(skipped) == len(DEFAULT_EPS_GRID)


def test_regularized_agrees_with_dini_at_smooth_point(lq, mu0, vf, rng):
    F = np.array([[0.5], [-1.0]])
    plain = dini_lower_derivative(lq, 0.2, mu0, 1.0, F, value_fn=vf)
    reg = regularized_lower_derivative(lq, 0.2, mu0, 1.0, F, rng, perturbations=4, value_fn=vf)
    assert reg <= plain
    assert abs(reg - plain) <= 2e-2


def test_superdifferential_constant_value(mu0):
    spec = ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[-1, 1]], terminals=[blocks.ConstantTerminal(3.0)])
    dirs = [(1.0, np.ones((2, 1))), (-1.0, np.array([[1.0], [-1.0]]))]
    res = superdifferential_test(spec, 0.5, mu0, 0.0, 0.0, dirs)
    assert res.worst_slack == pytest.approx(0.0, abs=1e-12)


def test_superdifferential_gradient_of_lq(lq, mu0, vf):
    dirs = [(1.0, 0.0), (0.0, np.array([[1.0], [0.0]])), (-1.0, np.array([[-0.3], [1.0]]))]
    res = superdifferential_test(lq, 0.0, mu0, 0.125, lq_gradient(mu0), dirs, value_fn=vf)
    assert abs(res.worst_slack) <= 5e-3


def test_superdifferential_detects_wrong_xi(lq, mu0, vf):
    xi = lq_gradient(mu0) + np.array([[1.0], [0.0]])
    F = np.array([[1.0], [0.0]])
    res = superdifferential_test(lq, 0.0, mu0, 0.125, xi, [(0.0, -F)], value_fn=vf)
    # The pairing shifts by -w_0 = -0.5, so the slack is 0.5.
    assert res.worst_slack == pytest.approx(0.5, abs=5e-3)


def test_superdifferential_boundary_skip_and_validation(lq, mu0, vf):
    res = superdifferential_test(lq, 1.0, mu0, 0.0, 0.0, [(1.0, 0.0)], value_fn=vf)
    assert res.slacks == [] and len(res.skipped) == 1
    with pytest.raises(DomainError):
        superdifferential_test(lq, 0.0, mu0, 0.0, 0.0, [(0.0, 2.0)], value_fn=vf)


def affine_pairs(rng, count=4):
    ms = sample_measures(rng, 2 * count, 1, 5.0)
    return [(float(t), float(t)) for t in rng.uniform(0, 1, count)], list(zip(ms[::2], ms[1::2]))


def test_semiconcavity_affine_exact(rng):
    taus, pairs = affine_pairs(rng)
    rep = semiconcavity_test(scenarios.affine1d(), taus, pairs, C_r=0.0, tolerance=1e-9)
    assert rep.passed
    assert rep.statistic <= 1e-9
    assert rep.details["samples"] == 4 * 3 * 11


def test_semiconcavity_lq(lq, rng, vf):
    taus, pairs = affine_pairs(rng, 3)
    rep = semiconcavity_test(lq, taus, pairs, C_r=2.0, tolerance=1e-6, value_fn=vf)
    assert rep.passed
    assert rep.details["minimal_C_r"] <= 2.0
    assert minimal_semiconcavity_constant(lq, taus, pairs, value_fn=vf) == rep.details["minimal_C_r"]


def test_semiconcavity_endpoints_are_exact(lq, rng, vf):
    taus, pairs = affine_pairs(rng, 2)
    rep = semiconcavity_test(lq, taus, pairs, lambda_grid=[0.0, 1.0], value_fn=vf)
    assert rep.statistic == 0.0


def test_semiconcavity_mismatched_inputs(lq):
    with pytest.raises(DomainError):
        semiconcavity_test(lq, [(0.0, 0.0)], [])
    with pytest.raises(DomainError):
        semiconcavity_test(lq, [(0.0, 0.0)], [(DiscreteMeasure([[0.0]]), DiscreteMeasure([[0.0, 1.0]]))])


def test_lipschitz_affine_ratio_one():
    ms = [DiscreteMeasure([[0.0], [1.0]]), DiscreteMeasure([[2.5], [3.5]]), DiscreteMeasure([[-1.0], [0.0]])]
    rep = lipschitz_estimate(scenarios.affine1d(), [0.0, 0.5], ms, spatial_cap=1.0, time_cap=1.0)
    assert rep.details["L_r"] == pytest.approx(1.0, abs=1e-12)
    assert rep.details["M_r"] == pytest.approx(0.0, abs=1e-12)
    assert rep.passed


def test_lipschitz_constant_value(rng):
    spec = ProblemSpec(dim=1, control_dim=1, T=1.0, U=[[-1, 1]], terminals=[blocks.ConstantTerminal(2.0)])
    rep = lipschitz_estimate(spec, [0.0, 1.0], sample_measures(rng, 3, 1, 5.0))
    assert rep.details["L_r"] <= 1e-12 and rep.details["M_r"] <= 1e-12


def test_lipschitz_lq_within_ball_bounds(lq, rng, vf):
    # On B(0, 5): |grad V| <= 5 + 5/2 and |d_tau V| <= 25/2.
    ms = sample_measures(rng, 4, 1, 5.0)
    rep = lipschitz_estimate(lq, [0.0, 0.5, 1.0], ms, 7.5, 12.5, value_fn=vf)
    assert rep.passed
    assert 0.0 < rep.details["L_r"] <= 7.5
    data = json.loads(rep.to_json())
    assert data["check"] == "lipschitz"


def test_dpp_constant_along_optimum(lq, mu0, vf):
    rep = solve(lq, mu0)
    res = dpp_residuals(lq, rep, value_fn=vf)
    vals = list(res.values())
    assert len(vals) == 11
    assert max(vals) - min(vals) <= 5e-3
    assert vals[0] == pytest.approx(2.25, abs=1e-3)


def test_value_permutation_invariant(lq, rng):
    mu = sample_measures(rng, 1, 1, 5.0, equal_weights=False)[0]
    perm = rng.permutation(mu.n)
    a = ValueFunction(lq)(0.3, mu)
    b = ValueFunction(lq)(0.3, mu.permuted(perm))
    assert abs(a - b) <= 1e-10
