"""Scalar toy systems and the linear quadratic regulator."""
from __future__ import annotations

import numpy as np

from .base import Simulator


class ToySim(Simulator):
    """``S(x, c) = x + c``."""

    name = "toy"
    state_dim = 1
    control_dim = 1

    def __init__(self, x0=-0.3):
        self.x0 = float(x0)

    def _step(self, x, c):
        return x + c, {}

    def _vjp_x(self, cache, a):
        return a.copy()

    def _vjp_c(self, cache, a):
        return a.copy()

    def _sample(self, rng, count):
        return np.full((count, 1), self.x0)


class AbsToySim(ToySim):
    """``S(x, c) = |x| + c``; the subgradient of ``|x|`` at 0 is taken as 0."""

    name = "abs-toy"

    def _step(self, x, c):
        return np.abs(x) + c, {"sign": np.sign(x)}

    def _vjp_x(self, cache, a):
        return a * cache["sign"]


class LQRSim(Simulator):
    """``S(x, c) = A x + B c``."""

    name = "lqr"

    A_DEFAULT = ((0.8, 0.5), (-1.2, 1.0))
    B_DEFAULT = ((-0.5,), (-0.6,))

    def __init__(self, A=A_DEFAULT, B=B_DEFAULT, x0=(1.0, 0.0)):
        self.A = np.array(A, dtype=np.float64)
        self.B = np.array(B, dtype=np.float64)
        self.state_dim = self.A.shape[0]
        self.control_dim = self.B.shape[1]
        self.x0 = np.array(x0, dtype=np.float64)

    def _step(self, x, c):
        return x @ self.A.T + c @ self.B.T, {}

    def _vjp_x(self, cache, a):
        return a @ self.A

    def _vjp_c(self, cache, a):
        return a @ self.B

    def _sample(self, rng, count):
        return np.tile(self.x0, (count, 1))
