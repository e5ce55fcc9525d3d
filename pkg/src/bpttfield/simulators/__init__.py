"""Differentiable one-step simulators."""
from .base import Simulator, StepCache
from .cartpole import CartPoleSim, reflect
from .guidance import GuidanceSim, flock_kernel
from .quantum import QuantumSim, to_complex, to_pairs
from .toy import AbsToySim, LQRSim, ToySim

__all__ = [
    "Simulator", "StepCache", "ToySim", "AbsToySim", "LQRSim", "CartPoleSim",
    "GuidanceSim", "QuantumSim", "reflect", "flock_kernel", "to_complex", "to_pairs",
]
