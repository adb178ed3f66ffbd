"""Converting between the three certificate forms on random contractions.

An implication-form certificate plus a growth bound gives a max-form
certificate; a max-form certificate gives a dissipative one after a
rescaling.  Each output is re-checked by sampling.
"""

import numpy as np

from sgk import certify, kfun, scenarios
from sgk.certify import SampleSpace

rng = np.random.default_rng(1)
for t in range(5):
    sc = scenarios.random_contraction_network(rng, M=int(rng.integers(1, 4)))
    space = SampleSpace(n_samples=5000, seed=sc.space.seed)
    imp = sc.extras["implication"]
    mx = certify.implication_to_max(imp, sc.k_bound)
    diss = certify.max_to_dissipative(mx)
    checks = [certify.check_implication_form(imp, sc.system, space).verdict,
              certify.check_max_form(mx, sc.system, space).verdict,
              certify.check_dissipative_form(diss, sc.system, space).verdict]
    print("network %d: l=%d M=%d  implication/max/dissipative: %s  alpha_max(1)=%.3f"
          % (t, sc.system.n, imp.M, checks, mx.form.alpha(1.0)))

# growth after j steps from the one-step bound
kb = certify.KBound(kfun.identity(), kfun.identity())
for j in range(1, 5):
    th, ze = certify.propagate_k_bound(kb, j)
    print("j=%d  theta_j(1)=%g  zeta_j(1)=%g" % (j, th(1.0), ze(1.0)))

sc = scenarios.example1()
kb = certify.estimate_k_bound(sc.system, sc.omega, sc.space)
s = np.array([0.25, 0.5, 1.0, 2.0])
print("fitted kappa1:", np.round(kb.kappa1(s), 4), " exact:", np.maximum(s - s * s, s / 2))
