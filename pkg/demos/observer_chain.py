"""Distributed observer on a chain of four scalar plants.

Each observer sees its own output and the outputs and estimates of its
neighbours.  The tracking errors satisfy block estimates with gains s/2
and s/4, which compose into a network certificate and a decay bound.
"""

import numpy as np

from sgk import certify, composer, gaingraph, scenarios
from sgk.certify import SampleSpace, Strategy

sc = scenarios.observer_demo()
obs = sc.extras["observer"]
print("neighbours:", obs.neighbors)
print("cycles:", gaingraph.simple_cycles(sc.network))

space = SampleSpace(n_samples=4000, strategy=Strategy.UNIFORM)
print("block estimates:", composer.check_assumption(sc.network, sc.estimates, sc.system, space).verdict)
cert, sig = composer.compose_certificate(sc.network, sc.estimates, sc.mu, sc.system.blocks)
beta, gamma = certify.iss_estimate(cert)
rep = certify.check_iss_estimate(sc.system, sc.omega, beta, gamma, space.with_seed(1), 100)
print("tracking bound on %d runs of 100 steps: %s" % (rep.samples, rep.verdict))

rng = np.random.default_rng(0)
X, XH = obs.run(rng.uniform(-2, 2, 4), np.zeros(4), 30)
err = np.max(np.abs(XH - X), axis=1)
for k in (0, 5, 10, 20, 30):
    print("  k = %2d   max error = %.3e   bound = %.3e" % (k, err[k], beta(err[0], k)))
