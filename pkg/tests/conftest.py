import numpy as np
import pytest

from bpttfield import nets
from bpttfield.simulators import CartPoleSim, GuidanceSim, LQRSim, QuantumSim, ToySim
from bpttfield.unroll import LossSpec

# acceptance lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def small_instances():
    """The small problems gradients are checked on: (name, net, sim, loss, theta, x0, n)."""
    out = []
    rng = np.random.default_rng(7)

    for n in (1, 2, 4, 6):
        out.append((f"toy-n{n}", nets.polynomial(), ToySim(), LossSpec("final", "quadratic", (2.0,)),
                    rng.uniform(-0.8, 0.8, 2), np.array([[-0.3]]), n))

    out.append(("lqr-n5", nets.linear(2, 1), LQRSim(), LossSpec("final", "quadratic", (1.0, 1.0)),
                rng.uniform(-0.5, 0.5, 2), np.array([[1.0, 0.0]]), 5))

    sim = CartPoleSim(1)
    net = nets.mlp(sim.state_dim, (4,), 1)
    out.append(("cartpole-k1-n10", net, sim, LossSpec("final", "pole-top"),
                nets.init_params(net, 1), sim.sample_initial(2, 3), 10))

    sim = GuidanceSim(1, 1, horizon=5 * 4 / 60, steps=5)
    net = nets.mlp(sim.state_dim, (4,), sim.control_dim)
    out.append(("guidance-1x1-n5", net, sim, LossSpec("accumulated", "guidance-origin", reg=0.01),
                nets.init_params(net, 3), sim.sample_initial(4, 2), 5))

    sim = QuantumSim(8)
    net = nets.quantum_cnn(8, 4)
    out.append(("quantum-8-n4", net, sim, LossSpec("accumulated", "quantum-overlap", tuple(sim.eigenstate(2))),
                nets.init_params(net, 5) * 3.0, sim.sample_initial(6, 2), 4))
    return out


@pytest.fixture(params=small_instances(), ids=lambda inst: inst[0])
def instance(request):
    return request.param
