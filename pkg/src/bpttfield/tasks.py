"""Training configuration and the task registry that turns it into a problem."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import ConfigError
from .optim import CLIP_MODES, OPTIMIZERS
from .simulators import AbsToySim, CartPoleSim, GuidanceSim, LQRSim, QuantumSim, ToySim
from .unroll import METHODS, LossSpec

TASKS = ("toy", "abs-toy", "lqr", "guidance", "cartpole", "cartpole-walls", "quantum")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on.

    Fields left at ``None`` take the task's default (see ``TASK_DEFAULTS``).
    """

    task: str = "cartpole"
    method: str = "C"
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int | None = None
    epochs: int = 1000
    dataset: int | None = None
    seed: int = 0
    clip: str = "none"
    clip_threshold: float = 1.0
    loss_mode: str | None = None
    n_steps: int | None = None
    dt: float | None = None
    # task parameters
    poles: int | None = None
    wall: float = 0.5
    reg: float = 1e-2
    target_state: int = 2
    grid: int = 32
    drivers: int = 2
    evaders: int = 4
    hidden: tuple | None = None
    features: int = 60
    x0: float = -0.3
    target: float = 2.0
    # persistence
    wallclock: bool = False

    def with_updates(self, **changes):
        return dataclasses.replace(self, **changes)

    def resolved(self, key):
        value = getattr(self, key)
        return TASK_DEFAULTS[self.task][key] if value is None else value

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}", key="task")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", key="method")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", key="optimizer")
        if self.clip not in CLIP_MODES:
            raise ConfigError(f"unknown clip mode {self.clip!r}", key="clip")
        if not self.lr > 0:
            raise ConfigError("lr must be positive", key="lr")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1", key="epochs")
        if self.loss_mode not in (None, "final", "accumulated"):
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}", key="loss_mode")
        ds, bs = self.resolved("dataset"), self.resolved("batch_size")
        if ds < 1 or bs < 1 or ds % bs:
            raise ConfigError(f"batch_size {bs} must divide dataset {ds}", key="batch_size")
        if self.resolved("n_steps") < 1:
            raise ConfigError("n_steps must be at least 1", key="n_steps")
        if self.task in ("cartpole", "cartpole-walls") and not 1 <= self.resolved("poles") <= 4:
            raise ConfigError("poles must be between 1 and 4", key="poles")
        if self.task == "quantum" and not 0 <= self.target_state < self.grid:
            raise ConfigError("target_state out of range", key="target_state")
        return self


_SMALL = {"dataset": 1, "batch_size": 1, "poles": 1, "hidden": (), "dt": 1.0}
TASK_DEFAULTS = {
    "toy": dict(_SMALL, n_steps=4, loss_mode="final"),
    "abs-toy": dict(_SMALL, n_steps=3, loss_mode="final"),
    "lqr": dict(_SMALL, n_steps=5, loss_mode="final"),
    "guidance": dict(dataset=256, batch_size=8, poles=1, hidden=(100, 100), n_steps=60,
                     loss_mode="accumulated", dt=4.0 / 60),
    "cartpole": dict(dataset=256, batch_size=8, poles=1, hidden=(100, 100), n_steps=100,
                     loss_mode="final", dt=0.01),
    "cartpole-walls": dict(dataset=256, batch_size=8, poles=4, hidden=(100, 100), n_steps=25,
                           loss_mode="accumulated", dt=0.04),
    "quantum": dict(dataset=256, batch_size=8, poles=1, hidden=(), n_steps=128,
                    loss_mode="accumulated", dt=1.0 / 128),
}

LQR_TARGET = (1.0, 1.0)


@dataclass
class Problem:
    """A network, a simulator and a loss, ready for ``unroll.compute_bundle``."""

    net: nets.NetworkSpec
    sim: object
    loss: LossSpec
    n_steps: int

    def sample(self, seed, count):
        return self.sim.sample_initial(seed, count)


def build_problem(cfg):
    cfg.validate()
    task = cfg.task
    n = cfg.resolved("n_steps")
    mode = cfg.resolved("loss_mode")
    dt = cfg.resolved("dt")
    if task in ("toy", "abs-toy"):
        sim = ToySim(cfg.x0) if task == "toy" else AbsToySim(cfg.x0)
        net = nets.polynomial(signs=(1, 1) if task == "toy" else (-1, 1))
        loss = LossSpec(mode, "quadratic", (cfg.target,))
    elif task == "lqr":
        sim = LQRSim()
        net = nets.linear(2, 1)
        loss = LossSpec(mode, "quadratic", LQR_TARGET)
    elif task == "guidance":
        sim = GuidanceSim(cfg.drivers, cfg.evaders, horizon=dt * n, steps=n)
        net = nets.mlp(sim.state_dim, cfg.resolved("hidden"), sim.control_dim)
        loss = LossSpec(mode, "guidance-origin", reg=cfg.reg)
    elif task in ("cartpole", "cartpole-walls"):
        wall = cfg.wall if task == "cartpole-walls" else None
        sim = CartPoleSim(cfg.resolved("poles"), dt=dt, wall=wall)
        net = nets.mlp(sim.state_dim, cfg.resolved("hidden"), 1)
        loss = LossSpec(mode, "pole-top")
    else:
        sim = QuantumSim(cfg.grid, dt=dt)
        net = nets.quantum_cnn(cfg.grid, cfg.features)
        loss = LossSpec(mode, "quantum-overlap", tuple(sim.eigenstate(cfg.target_state)))
    return Problem(net, sim, loss, n)


def run_seeds(seed):
    """Independent sub-seeds ``(init, train data, test data, shuffling)``."""
    children = np.random.SeedSequence(seed).spawn(4)
    return [int(c.generate_state(1)[0]) for c in children]

# row thresholds of the hyperparameter summary tables
SUMMARY_THRESHOLDS = {
    "toy": (1e-3, 0.1),
    "abs-toy": (1e-3, 0.1),
    "lqr": (1e-3, 0.1),
    "guidance": (0.5, 0.8),
    "cartpole": (0.002, 0.01),
    "cartpole-walls": (0.002, 0.01),
    "quantum": (30.0, 50.0),
}
