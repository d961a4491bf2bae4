import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfb.errors import DomainError, SizeError
from mfb.measure import DiscreteMeasure
from mfb.transport import (
    TransportPlan,
    barycentric_projection,
    graph_plan,
    identity_plan,
    northwest_corner_plan,
    optimal_plan,
    plan_interpolation_cost,
    product_plan,
    random_plan,
    wasserstein,
)

from .oracles import brute_force_ot


def test_two_point_example():
    mu = DiscreteMeasure([[0.0], [1.0]])
    nu = DiscreteMeasure([[1.0], [2.0]])
    plan, w = optimal_plan(mu, nu, 2)
    assert w == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(plan.mass, np.diag([0.5, 0.5]), atol=1e-14)
    assert plan.certificate <= 1e-12


def test_unequal_sizes_split_mass():
    mu = DiscreteMeasure([[0.0]])
    nu = DiscreteMeasure([[-1.0], [1.0]])
    plan, w = optimal_plan(mu, nu, 1)
    np.testing.assert_allclose(plan.mass, [[0.5, 0.5]])
    assert w == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1, 2])
def test_matches_brute_force(p):
    rng = np.random.Generator(np.random.Philox(7))
    for _ in range(30):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        w = wasserstein(DiscreteMeasure(x), DiscreteMeasure(y), p)
        assert w**p == pytest.approx(brute_force_ot(x, y, p), abs=1e-9)


def test_identical_measures_have_zero_distance():
    mu = DiscreteMeasure(np.arange(5.0)[:, None] ** 2)
    assert wasserstein(mu, mu, 2) == pytest.approx(0.0, abs=1e-12)


def test_errors():
    a = DiscreteMeasure([[0.0]])
    b = DiscreteMeasure([[0.0, 1.0]])
    with pytest.raises(DomainError):
        optimal_plan(a, b)
    with pytest.raises(DomainError):
        optimal_plan(a, a, p=0.5)
    big = DiscreteMeasure(np.zeros((6, 1)))
    with pytest.raises(SizeError):
        optimal_plan(big, big, max_particles=5)


def test_plan_validation():
    mu = DiscreteMeasure([[0.0], [1.0]])
    with pytest.raises(DomainError):
        TransportPlan(mu, mu, np.array([[0.5, 0.0], [0.0, 0.4]]))
    with pytest.raises(DomainError):
        TransportPlan(mu, mu, np.array([[0.6, -0.1], [-0.1, 0.6]]))


def test_barycentric_projection_of_graph_plan_is_the_map():
    mu = DiscreteMeasure([[0.0], [1.0], [3.0]], [0.2, 0.3, 0.5])
    f = mu.points**2 - 1.0
    np.testing.assert_allclose(barycentric_projection(graph_plan(mu, f)), f)
    np.testing.assert_allclose(barycentric_projection(identity_plan(mu)), mu.points)


def test_barycentric_projection_of_product_plan_is_constant_mean():
    mu = DiscreteMeasure([[0.0], [1.0]])
    nu = DiscreteMeasure([[2.0], [4.0], [9.0]])
    np.testing.assert_allclose(barycentric_projection(product_plan(mu, nu)), [[5.0], [5.0]])


def test_plan_interpolation_cost_bounds_w2():
    rng = np.random.Generator(np.random.Philox(3))
    mu = DiscreteMeasure(rng.normal(size=(4, 2)))
    nu = DiscreteMeasure(rng.normal(size=(5, 2)))
    w2 = wasserstein(mu, nu, 2)
    for plan in (product_plan(mu, nu), random_plan(mu, nu, rng), northwest_corner_plan(mu, nu)):
        assert plan_interpolation_cost(plan) >= w2 - 1e-12


def test_plan_json_format():
    mu = DiscreteMeasure([[0.0], [1.0]])
    d = product_plan(mu, mu).to_dict()
    assert d["rows"] == 2 and d["cols"] == 2 and np.allclose(d["mass"], 0.25)


points = st.lists(st.floats(-4, 4, allow_nan=False), min_size=2, max_size=8)


@given(points, points, points)
def test_metric_axioms(a, b, c):
    mu, nu, eta = (DiscreteMeasure(np.array(v)[:, None]) for v in (a, b, c))
    for p in (1, 2):
        d_mn = wasserstein(mu, nu, p)
        assert d_mn == pytest.approx(wasserstein(nu, mu, p), abs=1e-9)
        assert d_mn <= wasserstein(mu, eta, p) + wasserstein(eta, nu, p) + 1e-9


@given(points, points)
def test_w1_le_w2(a, b):
    mu, nu = DiscreteMeasure(np.array(a)[:, None]), DiscreteMeasure(np.array(b)[:, None])
    assert wasserstein(mu, nu, 1) <= wasserstein(mu, nu, 2) + 1e-9


@given(points, st.floats(-3, 3))
def test_translation_distance(a, s):
    mu = DiscreteMeasure(np.array(a)[:, None])
    assert wasserstein(mu, mu.with_points(mu.points + s), 2) == pytest.approx(abs(s), abs=1e-7)


def test_larger_problem_certified():
    rng = np.random.Generator(np.random.Philox(11))
    mu = DiscreteMeasure(rng.normal(size=(60, 2)), rng.dirichlet(np.ones(60)))
    nu = DiscreteMeasure(rng.normal(size=(45, 2)), rng.dirichlet(np.ones(45)))
    plan, _ = optimal_plan(mu, nu)
    assert plan.certificate < 1e-9
    # Vertex solutions have at most n + m - 1 positive entries.
    assert np.count_nonzero(plan.mass) <= 60 + 45 - 1
