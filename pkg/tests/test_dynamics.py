import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfb.dynamics import flow, uniform_grid
from mfb.errors import BlowUpError, DomainError
from mfb.measure import DiscreteMeasure

from .oracles import mean_reversion


def mean_reverting(t, mu, X):
    return mu.mean() - X


def test_constant_field_translation_exact():
    mu = DiscreteMeasure([[-1.0, 0.5], [3.0, 2.0]])
    tr = flow(lambda t, m, X: np.broadcast_to([0.5, -1.0], X.shape), mu, 0.0, 1.0, steps=200)
    np.testing.assert_allclose(tr.final.points, mu.points + [0.5, -1.0], atol=1e-12)


def test_mean_reversion_contracts_like_exp():
    mu = DiscreteMeasure([[-1.0], [3.0], [0.5]])
    tr = flow(mean_reverting, mu, 0.0, 1.0, steps=200)
    np.testing.assert_allclose(tr.final.points, mean_reversion(mu.points, 1.0), atol=1e-8)
    for k in (50, 100, 150):
        np.testing.assert_allclose(tr.positions[k], mean_reversion(mu.points, tr.times[k]), atol=1e-8)


def test_semigroup():
    mu = DiscreteMeasure([[-1.0, 1.0], [2.0, 0.0]])

    def field(t, m, X):
        return np.sin(t) + (m.mean() - X) + 0.1 * X**2

    direct = flow(field, mu, 0.0, 1.0, steps=400).final
    half = flow(field, mu, 0.0, 0.5, steps=200).final
    two = flow(field, half, 0.5, 1.0, steps=200).final
    np.testing.assert_allclose(direct.points, two.points, atol=1e-8)


def test_backward_flow_inverts_forward():
    mu = DiscreteMeasure([[0.0], [1.0], [4.0]])
    fwd = flow(mean_reverting, mu, 0.0, 0.7, steps=140).final
    back = flow(mean_reverting, fwd, 0.7, 0.0, steps=140).final
    np.testing.assert_allclose(back.points, mu.points, atol=1e-8)


def test_weights_frozen_and_snapshots():
    mu = DiscreteMeasure([[0.0], [2.0]], [0.3, 0.7])
    tr = flow(mean_reverting, mu, 0.0, 1.0)
    assert tr.n_nodes == 201
    assert all(np.array_equal(s.weights, mu.weights) for s in tr.snapshots)
    assert tr.node_index(0.5) == 100
    with pytest.raises(DomainError):
        tr.node_index(0.5001)


def test_running_cost_integrated():
    mu = DiscreteMeasure([[1.0]])
    tr = flow(lambda t, m, X: np.zeros_like(X), mu, 0.0, 2.0, running_cost=lambda t, m: t**3)
    assert tr.running[-1] == pytest.approx(4.0, abs=1e-12)


def test_blowup_is_reported():
    mu = DiscreteMeasure([[1.0], [2.0]])
    with pytest.raises(BlowUpError) as info:
        flow(lambda t, m, X: X**2, mu, 0.0, 1.0, steps=200)
    assert info.value.particle == 1
    assert 0.4 < info.value.t < 0.55


def test_uniform_grid_hits_endpoints():
    g = uniform_grid(0.1, 0.7, 3)
    assert g[0] == 0.1 and g[-1] == 0.7


def test_csv_layout():
    tr = flow(mean_reverting, DiscreteMeasure([[0.0, 1.0]]), 0.0, 1.0, steps=2)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,particle_id,x_1,x_2,w"
    assert len(lines) == 1 + 3


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(0.1, 2.0))
def test_mass_and_mean_conserved(xs, T):
    mu = DiscreteMeasure(np.array(xs)[:, None])
    tr = flow(mean_reverting, mu, 0.0, T, steps=40)
    assert tr.final.weights.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(tr.final.mean(), mu.mean(), atol=1e-10)
