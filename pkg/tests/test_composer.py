import json

import numpy as np
import pytest

from sgk import certify, composer, gaingraph, kfun
from sgk.certify import Certificate, MaxForm, SampleSpace
from sgk.composer import NoValidMhat, SmallGainViolated, SubsystemEstimate
from sgk.dtsim import DiscreteSystem, MeasurementFunction, MonotonicNorm, norm_measure
from sgk.gaingraph import GainNetwork
from sgk.scenarios import example1, observer_demo, random_contraction_network

ID = kfun.identity()


def block_abs():
    return MeasurementFunction(lambda x: np.abs(x[..., 0]))


def decoupled(l=2):
    sys = DiscreteSystem(l, 0, lambda x, u: 0.5 * x, "decoupled", [[i] for i in range(l)])
    gains = [[kfun.linear(0.5) if i == j else None for j in range(l)] for i in range(l)]
    net = GainNetwork.from_matrix(gains, M=1)
    est = [SubsystemEstimate(lambda x: np.abs(x[..., 0]), block_abs()) for _ in range(l)]
    return sys, net, est


# -- assumption check --------------------------------------------------------

def test_assumption_example():
    sc = example1()
    assert composer.check_assumption(sc.network, sc.estimates, sc.system, sc.space).verdict


def test_assumption_decoupled():
    sys, net, est = decoupled()
    assert composer.check_assumption(net, est, sys, SampleSpace(n_samples=2000)).verdict


def test_assumption_zero_gains_fail():
    sc = example1()
    net = GainNetwork.from_matrix([[None, None], [None, None]], [ID, ID])
    rep = composer.check_assumption(net, sc.estimates, sc.system, sc.space)
    assert not rep.verdict
    assert rep.witness["reverified"] and rep.witness["block"] in (0, 1)


def test_assumption_needs_blocks():
    sc = example1()
    with pytest.raises(ValueError):
        composer.check_assumption(sc.network, sc.estimates[:1], sc.system, sc.space)


# -- composition -------------------------------------------------------------

def test_compose_single_block():
    sys, net, est = decoupled(1)
    cert, sig = composer.compose_certificate(net, est, MonotonicNorm.max_norm(), sys.blocks)
    assert sig.sigma[0].equals(ID)
    assert cert.form.alpha.equals(kfun.linear(0.5))
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(cert.value(x), np.abs(x[:, 0]))


def test_compose_decoupled():
    sys, net, est = decoupled(3)
    cert, _ = composer.compose_certificate(net, est, MonotonicNorm.max_norm(), sys.blocks)
    assert cert.form.alpha.equals(kfun.linear(0.5))
    assert certify.check_max_form(cert, sys, SampleSpace(n_samples=2000)).verdict


def test_compose_example_end_to_end():
    sc = example1()
    cert, sig = composer.compose_certificate(sc.network, sc.estimates, sc.mu, sc.system.blocks)
    assert sig.margin > 0
    assert certify.check_max_form(cert, sc.system, sc.space).verdict
    assert certify.check_sandwich(cert, sc.system, sc.space).verdict
    assert cert.provenance["construction"] == "composed"


def test_compose_rejects_infeasible():
    sys, _, est = decoupled()
    net = GainNetwork.from_matrix([[None, kfun.linear(2.0)], [kfun.linear(0.6), None]])
    with pytest.raises(SmallGainViolated) as err:
        composer.compose_certificate(net, est, MonotonicNorm.max_norm(), sys.blocks)
    assert not err.value.report.verdict


def test_compose_weighted_sandwich():
    sc = example1()
    mu = MonotonicNorm.weighted_sum([1.0, 2.0])
    cert, _ = composer.compose_certificate(sc.network, sc.estimates, mu, sc.system.blocks)
    assert certify.check_sandwich(cert, sc.system, sc.space).verdict


def test_compose_observer_certificate():
    sc = observer_demo()
    space = SampleSpace(n_samples=3000)
    assert composer.check_assumption(sc.network, sc.estimates, sc.system, space).verdict
    cert, _ = composer.compose_certificate(sc.network, sc.estimates, sc.mu, sc.system.blocks)
    assert certify.check_max_form(cert, sc.system, space).verdict
    assert certify.check_sandwich(cert, sc.system, space).verdict


def test_compose_random_networks(rng):
    for _ in range(10):
        sc = random_contraction_network(rng)
        space = SampleSpace(n_samples=2000, seed=sc.space.seed)
        assert composer.check_assumption(sc.network, sc.estimates, sc.system, space).verdict
        cert, _ = composer.compose_certificate(sc.network, sc.estimates, sc.mu, sc.system.blocks)
        assert certify.check_max_form(cert, sc.system, space).verdict


# -- horizon search ----------------------------------------------------------

def test_find_mhat_example():
    assert composer.find_Mhat(example1().certificate.form.alpha, ID, ID, 1.0) == 1


def test_find_mhat_strict():
    assert composer.find_Mhat(kfun.linear(0.5), ID, ID, 4.0) == 3


def test_find_mhat_exhausted():
    alpha = kfun.linear(0.999)
    assert composer.find_Mhat(alpha, ID, ID, 100.0, M_cap=5) is None


def test_find_mhat_rejects_small_c():
    with pytest.raises(ValueError):
        composer.find_Mhat(kfun.linear(0.5), ID, ID, 0.5)


# -- reverse direction -------------------------------------------------------

def test_weighted_sum_constant():
    mu = MonotonicNorm.weighted_sum([1, 1])
    assert mu.equivalence_constant(2) == 2.0
    np.testing.assert_array_equal(mu.unit_values(2), [1, 1])


def test_max_norm_constant_exactly_one():
    assert MonotonicNorm.max_norm().equivalence_constant(4) == 1.0


def test_reverse_example():
    sc = example1()
    res = composer.reverse_decompose(sc.certificate, sc.block_omegas, sc.mu)
    assert res.Mhat == 1 and res.c == 1.0
    assert res.chi.equals(sc.certificate.form.alpha)
    assert gaingraph.check_small_gain(res.network).verdict
    assert composer.check_assumption(res.network, res.estimates, sc.system, sc.space).verdict
    x = np.array([[0.3, -1.2]])
    np.testing.assert_allclose([e.value(x[:, [i]])[0] for i, e in enumerate(res.estimates)], [0.3, 1.2])
    assert json.loads(res.to_json())["Mhat"] == 1


def _linear_cert(rate=0.5):
    sc = example1()
    c = sc.certificate
    return sc, Certificate(c.V, MaxForm(kfun.linear(rate), c.form.gamma), ID, ID, 1, c.omega)


def test_reverse_weighted_sum_horizon():
    sc, cert = _linear_cert()
    res = composer.reverse_decompose(cert, sc.block_omegas, MonotonicNorm.weighted_sum([1, 1]))
    assert res.c == 2.0
    # (1/2)^M 2 s < s first holds at M = 2
    assert res.Mhat == 2
    assert res.chi.equals(kfun.linear(0.5))


def test_reverse_small_weights():
    sc, cert = _linear_cert()
    res = composer.reverse_decompose(cert, sc.block_omegas, MonotonicNorm.weighted_max([0.5, 0.5]))
    assert res.c == 1.0 and res.c_eff == 2.0
    assert res.Mhat == 2


def test_tangent_rate_has_no_horizon_for_c_above_one():
    # max{s - s^2, s/2} touches the identity at zero, so its iterates never beat 2 s
    alpha = example1().certificate.form.alpha
    assert composer.find_Mhat(alpha, ID, ID, 2.0, M_cap=16) is None


def test_reverse_needs_one_step_max_form():
    sc = example1()
    c = sc.certificate
    cert2 = Certificate(c.V, c.form, c.lower, c.upper, 2, c.omega)
    with pytest.raises(ValueError):
        composer.reverse_decompose(cert2, sc.block_omegas, sc.mu)


def test_reverse_no_horizon():
    sc = example1()
    c = sc.certificate
    slow = Certificate(c.V, MaxForm(kfun.linear(0.999), c.form.gamma), ID, ID, 1, c.omega)
    with pytest.raises(NoValidMhat):
        composer.reverse_decompose(slow, sc.block_omegas, MonotonicNorm.weighted_sum([50, 50]), M_cap=4)


def test_round_trip_example():
    sc = example1()
    res = composer.reverse_decompose(sc.certificate, sc.block_omegas, sc.mu)
    cert, _ = composer.compose_certificate(res.network, res.estimates, sc.mu, sc.system.blocks)
    assert cert.M == res.Mhat
    assert certify.check_max_form(cert, sc.system, sc.space).verdict
    assert certify.check_sandwich(cert, sc.system, sc.space).verdict


def test_round_trip_random(rng):
    for _ in range(5):
        sc = random_contraction_network(rng)
        space = SampleSpace(n_samples=2000, seed=sc.space.seed)
        assert certify.check_max_form(sc.certificate, sc.system, space).verdict
        res = composer.reverse_decompose(sc.certificate, sc.block_omegas, sc.mu)
        assert gaingraph.check_small_gain(res.network).verdict
        assert composer.check_assumption(res.network, res.estimates, sc.system, space).verdict
        cert, _ = composer.compose_certificate(res.network, res.estimates, sc.mu, sc.system.blocks)
        assert certify.check_max_form(cert, sc.system, space).verdict


# -- measurement split -------------------------------------------------------

def test_split_holds_for_max_norm():
    sc = example1()
    rep = composer.check_measurement_split(sc.omega, sc.block_omegas, sc.mu, sc.system, sc.space)
    assert rep.verdict and rep.details["direction"] == "both"


def test_split_directions():
    sc = example1()
    # the Euclidean norm dominates the max of the blocks but not conversely
    args = (norm_measure(), sc.block_omegas, sc.mu, sc.system, sc.space)
    assert composer.check_measurement_split(*args, direction="lower").verdict
    up = composer.check_measurement_split(*args, direction="upper")
    assert not up.verdict and up.witness["reverified"]
    assert not composer.check_measurement_split(*args, direction="both").verdict


def test_split_rejects_unknown_direction():
    sc = example1()
    with pytest.raises(ValueError):
        composer.check_measurement_split(sc.omega, sc.block_omegas, sc.mu, sc.system, sc.space, "sideways")
