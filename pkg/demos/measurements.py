"""Stability with respect to measurements that are not norms.

* polar coordinates with omega = 1 + sin(theta): the angle creeps to 3 pi/2
  while the radius keeps growing until then;
* synchronization of coupled nodes, measured by the errors to the average;
* incremental stability, measured by the distance between two copies.
"""

import numpy as np

from sgk import certify, dtsim, scenarios

polar = scenarios.polar_example()
for theta in (0.0, np.pi / 2, np.pi):
    x = dtsim.trajectory(polar.system, [1.0, theta], None, 400)
    w = polar.omega(x)
    k = int(np.argmax(w <= 1e-3))
    print("polar theta0=%.3f: omega <= 1e-3 at k=%d, radius there %.2f" % (theta, k, x[k, 0]))

osc = scenarios.oscillator_sync()
z0 = np.array([1.5, -0.5, 0.2])
x = dtsim.trajectory(osc.system, osc.extras["to_error"](z0), None, 100)
w = osc.omega(x)
print("oscillators: error %.2e -> %.2e after 100 steps, average %.3e"
      % (w[0], w[-1], x[-1, -1]))

inc = scenarios.incremental_demo()
print("incremental certificate:", certify.check_max_form(inc.certificate, inc.system, inc.space).verdict)
x = dtsim.trajectory(inc.system, [2.0, -1.0], None, 5)
print("distance between copies:", np.round(inc.omega(x), 4))
