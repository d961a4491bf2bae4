"""
Optimal feedback from the value function
========================================

A control is admitted at (t, mu) when the lower derivative of the value
function along the velocity it induces, plus its running cost, is nearly
zero. For the LQ benchmark this residual equals (u + m/(2 - t))^2 / 2, so
the admitted set is a narrow band around the optimal feedback law.
Selecting the minimal-norm admitted control at every node and integrating
gives the open-loop optimal cost to about 1e-3. The selection leans toward
zero inside the band, so the realized control sits slightly above -1/2.
This takes under a minute.
"""

import numpy as np

from mfb import scenarios
from mfb.analysis import ValueFunction
from mfb.feedback import closed_loop_simulate, feedback_residual, feedback_set

spec = scenarios.lq1d()
mu0 = scenarios.lq1d_mu0()
vf = ValueFunction(spec)

for u in (-1.0, -0.5, 0.0):
    print("residual at u=%5.2f: %.6f" % (u, feedback_residual(spec, 0.0, mu0, u, value_fn=vf)))

fs = feedback_set(spec, 0.0, mu0, np.linspace(-1, 0, 21)[:, None], tol=5e-3, value_fn=vf)
print("admitted controls  :", fs.controls.ravel())

loop = closed_loop_simulate(spec, mu0, steps=5, value_fn=vf)
print("closed-loop control:", loop.control.values.ravel())
print("closed-loop cost   :", loop.cost)
