"""
Costates, the Hamiltonian and the sensitivity relation
======================================================

Along the optimal pair the backward sweep gives each particle a costate.
For the LQ benchmark they are constant in time and equal to minus the
final positions. The Hamiltonian is then maximized by the applied control
and stays constant along the pair. Difference quotients of the value
function reproduce (H, -r), which is what the sensitivity checker measures.
"""

import numpy as np

from mfb import scenarios, solve
from mfb.analysis import ValueFunction
from mfb.pmp import check_maximization, check_sensitivity, forward_backward_sweep, hamiltonian, random_directions

spec = scenarios.lq1d()
mu0 = scenarios.lq1d_mu0()
report = solve(spec, mu0)
sweep = forward_backward_sweep(spec, mu0, report.control)

print("costates at t=0   :", sweep[0].costates.ravel())
print("costates at t=T   :", sweep[-1].costates.ravel())

H = [hamiltonian(spec, c.t, c, sweep.node_control(k)) for k, c in enumerate(sweep)]
print("H along the pair  : min %.6f max %.6f" % (min(H), max(H)))
print("maximization gap  :", check_maximization(spec, sweep))

# A small sensitivity probe: two random directions, three time samples.
rng = np.random.Generator(np.random.Philox(1))
dirs = random_directions(rng, 2, mu0.n, mu0.dim)
res = check_sensitivity(spec, sweep, dirs, times=[0.0, 0.3, 0.6], value_fn=ValueFunction(spec))
print("worst slack       :", res.worst_slack, "over", res.probes, "quotients")
