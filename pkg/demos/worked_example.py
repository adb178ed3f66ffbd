"""Two scalar blocks coupled through max{s - s^2, s/2}.

Walks through the certification pipeline: cycle check, per-block
estimates, a network certificate built from them, the decomposition back
into block estimates, and the slow (non-exponential) decay near the origin.
"""

import time

import numpy as np

from sgk import certify, composer, dtsim, gaingraph, scenarios

sc = scenarios.example1()
t0 = time.perf_counter()

sg = gaingraph.check_small_gain(sc.network)
print("cycles:", [row["cycle"] for row in sg.details["cycles"]])
print("small-gain verdict:", sg.verdict, " worst margin: %.3e" % sg.worst_margin)

rep = composer.check_assumption(sc.network, sc.estimates, sc.system, sc.space)
print("block estimates hold on %d samples: %s" % (rep.samples, rep.verdict))

rep = certify.check_max_form(sc.certificate, sc.system, sc.space)
print("V = |x|_inf is a max-form certificate: %s" % rep.verdict)

cert, sig = composer.compose_certificate(sc.network, sc.estimates, sc.mu, sc.system.blocks)
print("composed certificate, inflation %.0e, scaling margin %.2e" % (sig.eps, sig.margin))
print("  max form:", certify.check_max_form(cert, sc.system, sc.space).verdict,
      " sandwich:", certify.check_sandwich(cert, sc.system, sc.space).verdict)

dec = composer.reverse_decompose(sc.certificate, sc.block_omegas, sc.mu)
print("decomposition horizon:", dec.Mhat, " c =", dec.c)

beta, gamma = certify.iss_estimate(sc.certificate)
rep = certify.check_iss_estimate(sc.system, sc.omega, beta, gamma, sc.space, 50)
print("trajectory bound over 50 steps:", rep.verdict)

w = sc.omega(dtsim.trajectory(sc.system, [0.5, 0.5], None, 20000))
ratio = w[1:] / w[:-1]
for k in (1, 10, 100, 1000, 10000):
    print("  k = %5d   omega = %.3e   one-step ratio = %.6f" % (k, w[k], ratio[k]))
print("first k with ratio > 0.999:", int(np.argmax(ratio > 0.999)))
print("elapsed %.2f s" % (time.perf_counter() - t0))
