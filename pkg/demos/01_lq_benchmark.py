"""
Solving the one-dimensional LQ benchmark
========================================

Two particles at -1 and 3 are steered by a common velocity u(t) over [0, 1].
The running cost is u^2/2 and the terminal cost is half the second moment.
A common shift cannot change the spread, so only the mean is worth moving,
and the optimal control is the constant -1/2 with total cost 2.25.
"""

import numpy as np

from mfb import scenarios, solve
from mfb.measure import DiscreteMeasure
from mfb.problem import ControlSignal, evaluate_cost

spec = scenarios.lq1d()
mu0 = scenarios.lq1d_mu0()

# Doing nothing costs half the second moment of mu0.
print("cost of u = 0     :", evaluate_cost(spec, mu0, ControlSignal.constant(0.0, 1.0)).total)

# Projected gradient with Armijo backtracking, starting from u = 0.
report = solve(spec, mu0)
print("solver converged  :", report.converged, "after", report.iterations, "iteration(s)")
print("optimal cost      :", report.cost)
print("control range     :", report.control.values.min(), report.control.values.max())

# The same problem restarted later in time from another cloud.
mu = DiscreteMeasure(np.array([[0.5], [2.0], [4.0]]))
late = solve(spec, mu, 0.6)
print("V(0.6, mu) solver :", late.cost)
print("V(0.6, mu) formula:", scenarios.lq1d_value(0.6, mu))
