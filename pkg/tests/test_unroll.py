import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bpttfield import nets, unroll
from bpttfield.errors import InputError, NonFiniteWarning, NumericalError, SpecError
from bpttfield.simulators import CartPoleSim, GuidanceSim, QuantumSim, ToySim
from bpttfield.unroll import LossSpec

from oracles import central_diff, rel_err, reference_updates, rollout_loss, toy_states

TOY = nets.polynomial()
QUAD = LossSpec("final", "quadratic", (2.0,))


def toy_bundle(theta, n, methods=unroll.METHODS, x0=-0.3):
    return unroll.compute_bundle(TOY, ToySim(), np.array(theta, float), [[x0]], QUAD, n, methods)


# -- rollout and loss ---------------------------------------------------------

def test_zero_controller_rollout():
    tape = unroll.rollout(TOY, ToySim(), np.zeros(2), [[-0.3]], 4)
    assert [float(x[0, 0]) for x in tape.states] == [-0.3] * 5
    assert unroll.loss_eval(tape, QUAD) == pytest.approx(2.645)
    assert len(tape.controls) == len(tape.sim_caches) == len(tape.net_caches) == 4


def test_identity_controller_rollout():
    tape = unroll.rollout(TOY, ToySim(), np.array([0.0, 1.0]), [[-0.3]], 2)
    np.testing.assert_allclose([x[0, 0] for x in tape.states], [-0.3, -0.6, -1.2])


def test_one_step_rollout_calls_each_map_once():
    calls = {"sim": 0}

    class Counting(ToySim):
        def _step(self, x, c):
            calls["sim"] += 1
            return super()._step(x, c)

    tape = unroll.rollout(TOY, Counting(), np.zeros(2), [[-0.3]], 1)
    assert calls["sim"] == 1 and len(tape.net_caches) == 1


def test_quantum_loss_zero_at_target():
    sim = QuantumSim(8)
    phi = sim.eigenstate(3)
    loss = LossSpec("final", "quantum-overlap", tuple(phi))
    tape = unroll.Tape(None, sim, None, [phi[None, :]] * 2, [np.zeros((1, 1))])
    assert unroll.loss_eval(tape, loss) == pytest.approx(0.0, abs=1e-14)


def test_guidance_loss_zero_at_origin():
    sim = GuidanceSim()
    x = np.zeros((1, sim.state_dim))
    x[0, :4] = [3, 0, 0, 3]  # drivers away, evaders at the origin
    loss = LossSpec("accumulated", "guidance-origin")
    tape = unroll.Tape(None, sim, None, [x, x, x], [np.zeros((1, 4))] * 2)
    assert unroll.loss_eval(tape, loss) == 0


def test_accumulated_loss_is_unweighted_sum():
    tape = unroll.rollout(TOY, ToySim(), np.array([0.0, 1.0]), [[-0.3]], 2)
    acc = unroll.loss_eval(tape, LossSpec("accumulated", "quadratic", (2.0,)))
    assert acc == pytest.approx(0.5 * (2.6 ** 2 + 3.2 ** 2))


def test_loss_spec_validation():
    with pytest.raises(SpecError):
        LossSpec("final", "quadratic", (1.0,), reg=0.1)
    with pytest.raises(SpecError):
        LossSpec("sometimes", "quadratic", (1.0,))
    with pytest.raises(SpecError):
        LossSpec("final", "quadratic")


# -- hand values --------------------------------------------------------------

def test_toy_hand_values():
    b = toy_bundle([0, 0], 1)
    np.testing.assert_allclose(b.regular, [-0.207, 0.69])
    b = toy_bundle([0, 1], 2)
    np.testing.assert_allclose(b.regular, [-1.728, 3.84])
    np.testing.assert_allclose(b.modified, [-1.44, 2.88])
    np.testing.assert_allclose(b.stopped, [-1.152, 1.92])
    np.testing.assert_allclose(b.combined, [-1.44, 2.88])


@pytest.mark.parametrize("n", range(1, 7))
def test_toy_regular_matches_hand_chain_rule(n):
    theta = np.array([0.3, -0.4])
    xs = toy_states(theta, n=n)
    # forward-mode sensitivities dx_i/dtheta
    d = np.zeros(2)
    for x in xs[:-1]:
        d = d * (1 + 2 * theta[0] * x + theta[1]) + np.array([x * x, x])
    np.testing.assert_allclose(toy_bundle(theta, n, {"R"}).regular, (xs[-1] - 2) * d, rtol=1e-12)


def test_single_step_methods_coincide():
    for net, sim, loss, theta, x0, n in [(TOY, ToySim(), QUAD, np.array([0.4, -0.2]), [[-0.3]], 1)]:
        b = unroll.compute_bundle(net, sim, theta, x0, loss, n)
        assert np.array_equal(b.regular, b.modified) and np.array_equal(b.regular, b.stopped)
    sim = CartPoleSim(2)
    net = nets.mlp(sim.state_dim, (5,), 1)
    b = unroll.compute_bundle(net, sim, nets.init_params(net, 0), sim.sample_initial(0, 3),
                              LossSpec("final", "pole-top"), 1)
    np.testing.assert_allclose(b.regular, b.modified, rtol=0, atol=1e-15)
    np.testing.assert_allclose(b.regular, b.stopped, rtol=0, atol=1e-15)


# -- oracles on the small instances -------------------------------------------

def test_regular_matches_finite_differences(instance):
    name, net, sim, loss, theta, x0, n = instance
    g = unroll.compute_bundle(net, sim, theta, x0, loss, n, {"R"}).regular
    fd = central_diff(lambda t: rollout_loss(net, sim, loss, t, x0, n), theta)
    assert rel_err(g, fd) < 1e-5


def test_updates_match_reference_interpreter(instance):
    name, net, sim, loss, theta, x0, n = instance
    b = unroll.compute_bundle(net, sim, theta, x0, loss, n)
    ref = reference_updates(net, sim, loss, theta, x0, n)
    for key, got in (("M", b.modified), ("R", b.regular), ("S", b.stopped)):
        scale = max(1.0, np.linalg.norm(ref[key]))
        assert np.max(np.abs(got - ref[key])) <= 1e-12 * scale, key


def test_loss_matches_direct_rollout(instance):
    name, net, sim, loss, theta, x0, n = instance
    b = unroll.compute_bundle(net, sim, theta, x0, loss, n, {"M"})
    assert b.loss == pytest.approx(rollout_loss(net, sim, loss, theta, x0, n), rel=1e-12)


def test_stopped_accumulated_is_sum_of_final_mode_terms():
    sim = CartPoleSim(1)
    net = nets.mlp(4, (6,), 1)
    th = nets.init_params(net, 9)
    x0 = sim.sample_initial(3, 4)
    acc = unroll.compute_bundle(net, sim, th, x0, LossSpec("accumulated", "pole-top"), 5, {"S"}).stopped
    total = sum(unroll.compute_bundle(net, sim, th, x0, LossSpec("final", "pole-top"), k, {"S"}).stopped
                for k in range(1, 6))
    np.testing.assert_allclose(acc, total, rtol=1e-12)


# -- bundle contract ----------------------------------------------------------

def test_batch_of_identical_samples_equals_single():
    sim = CartPoleSim(1)
    net = nets.mlp(4, (6,), 1)
    th = nets.init_params(net, 2)
    x = sim.sample_initial(1, 1)
    loss = LossSpec("final", "pole-top")
    one = unroll.compute_bundle(net, sim, th, x, loss, 8)
    many = unroll.compute_bundle(net, sim, th, np.repeat(x, 5, axis=0), loss, 8)
    for m in unroll.METHODS:
        np.testing.assert_allclose(many.get(m), one.get(m), rtol=1e-12, atol=1e-18)


def test_only_requested_methods_computed():
    b = toy_bundle([0, 1], 2, {"R"})
    assert b.regular is not None and b.modified is None and b.stopped is None and b.combined is None
    with pytest.raises(InputError):
        toy_bundle([0, 1], 2, {"Q"})


def test_bundle_is_deterministic():
    sim = QuantumSim(16)
    net = nets.quantum_cnn(16, 4)
    th = nets.init_params(net, 0)
    loss = LossSpec("accumulated", "quantum-overlap", tuple(sim.eigenstate(2)))
    x0 = sim.sample_initial(0, 4)
    a = unroll.compute_bundle(net, sim, th, x0, loss, 6)
    b = unroll.compute_bundle(net, sim, th, x0, loss, 6)
    for m in unroll.METHODS:
        assert a.get(m).tobytes() == b.get(m).tobytes()


def test_numeric_error_carries_step():
    class Blowup(ToySim):
        def _step(self, x, c):
            return x * 1e300 + c, {}

    with pytest.raises(NumericalError) as info:
        unroll.compute_bundle(TOY, Blowup(), np.zeros(2), [[1.0]], QUAD, 4)
    # x_1 = 1e300 is finite, its squared control is not
    assert info.value.step == 1
    assert str(info.value).count("(step") == 1


def test_overflowing_regular_gradient_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        with np.errstate(over="ignore"):
            b = toy_bundle([40.0, 40.0], 7, {"R", "M", "C"}, x0=3.0)
    assert any(issubclass(w.category, NonFiniteWarning) for w in caught)
    assert not np.isfinite(b.regular).all()
    # NaN / inf components never match in combine
    assert not np.isnan(b.combined).any()


# -- combine ------------------------------------------------------------------

def test_combine_examples():
    np.testing.assert_array_equal(unroll.combine([1, -2], [3, 5]), [3, 0])
    np.testing.assert_array_equal(unroll.combine([0, 1], [4, 1]), [0, 1])
    v = np.array([1.5, -2.0, 0.0])
    np.testing.assert_array_equal(unroll.combine(v, v), v)
    np.testing.assert_array_equal(unroll.combine([np.nan, 1], [1, 1]), [0, 1])
    with pytest.raises(InputError):
        unroll.combine([1, 2], [1, 2, 3])


vectors = arrays(np.float64, 12, elements=st.floats(-1e6, 1e6, allow_nan=False))


@settings(max_examples=200)
@given(r=vectors, m=vectors)
def test_combine_properties(r, m):
    out = unroll.combine(r, m)
    assert np.all((out == 0) | (out == m))
    assert np.all(out * r >= 0) and np.all(out * m >= 0)
    assert out @ r >= 0 and out @ m >= 0
