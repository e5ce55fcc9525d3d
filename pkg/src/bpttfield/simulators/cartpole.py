"""Cart with ``k`` independent poles, semi-implicit Euler, optional walls.

State layout: ``(x, x_dot, theta_1..theta_k, theta_dot_1..theta_dot_k)``;
``theta = 0`` is the upright position.  The control is the horizontal force
on the cart.
"""
from __future__ import annotations

import numpy as np

from ..errors import SpecError
from .base import Simulator


class CartPoleSim(Simulator):
    name = "cartpole"
    control_dim = 1

    def __init__(self, poles=1, dt=0.01, g=9.8, m=0.1, M=1.1, l=0.5, wall=None, max_swing_deg=30.0):
        if poles < 1:
            raise SpecError("cart pole needs at least one pole")
        if min(dt, m, M, l) <= 0 or g < 0:
            raise SpecError("cart pole constants must be positive")
        if wall is not None and wall <= 0:
            raise SpecError("wall half-width must be positive")
        self.k = int(poles)
        self.dt = float(dt)
        self.g, self.m, self.M, self.l = float(g), float(m), float(M), float(l)
        self.wall = None if wall is None else float(wall)
        self.max_swing = np.deg2rad(max_swing_deg)
        self.state_dim = 2 + 2 * self.k
        if self.wall is not None:
            self.name = "cartpole-walls"

    def accelerations(self, x, force):
        """``(x_ddot, theta_ddot)`` for a batch of states and forces."""
        k = self.k
        th, w = x[:, 2:2 + k], x[:, 2 + k:]
        s, co = np.sin(th), np.cos(th)
        A = (force + self.m * self.l * w * w * s) / self.M
        B = self.l * (4.0 / 3.0 - self.m * co * co / self.M)
        th_dd = (self.g * s - A * co) / B
        C = np.sum(w * w * s - th_dd * co, axis=1, keepdims=True)
        x_dd = (force + self.m * self.l * C) / self.M
        return x_dd, th_dd, (s, co, A, B)

    def _step(self, x, c):
        k, dt = self.k, self.dt
        x_dd, th_dd, (s, co, A, B) = self.accelerations(x, c)
        w_new = x[:, 2 + k:] + dt * th_dd
        v_new = x[:, 1:2] + dt * x_dd
        out = np.empty_like(x)
        out[:, 0:1] = x[:, 0:1] + dt * v_new
        out[:, 1:2] = v_new
        out[:, 2:2 + k] = x[:, 2:2 + k] + dt * w_new
        out[:, 2 + k:] = w_new
        flip = None
        if self.wall is not None:
            out, flip = reflect(out, self.wall)
        data = {"w": x[:, 2 + k:], "s": s, "co": co, "A": A, "B": B, "th_dd": th_dd, "flip": flip}
        return out, data

    def _adjoint(self, cache, a):
        k, dt, m, l, M, g = self.k, self.dt, self.m, self.l, self.M, self.g
        w, s, co, A, B, th_dd = (cache[n] for n in ("w", "s", "co", "A", "B", "th_dd"))
        a = a.copy()
        if cache["flip"] is not None:
            a[:, 0:2] *= np.where(cache["flip"], -1.0, 1.0)[:, None]
        ax, av, ath, aw_new = a[:, 0:1], a[:, 1:2], a[:, 2:2 + k], a[:, 2 + k:]
        av_new = av + dt * ax
        aw_new = aw_new + dt * ath
        a_xdd = dt * av_new
        a_thdd = dt * aw_new

        aF = a_xdd / M
        aC = a_xdd * (m * l / M)
        aw = aw_new + aC * 2.0 * w * s
        a_s = aC * w * w
        a_thdd = a_thdd - aC * co
        a_co = -aC * th_dd

        q = a_thdd / B
        a_s = a_s + q * g
        aA = -q * co
        a_co = a_co - q * A
        aB = -q * th_dd
        a_co = a_co + aB * (-2.0 * l * m * co / M)

        aF = aF + np.sum(aA, axis=1, keepdims=True) / M
        aw = aw + aA * (m * l * 2.0 * w * s / M)
        a_s = a_s + aA * (m * l * w * w / M)

        out = np.empty_like(a)
        out[:, 0:1] = ax
        out[:, 1:2] = av_new
        out[:, 2:2 + k] = ath + a_s * co - a_co * s
        out[:, 2 + k:] = aw
        return out, aF

    def _vjp_x(self, cache, a):
        return self._adjoint(cache, a)[0]

    def _vjp_c(self, cache, a):
        return self._adjoint(cache, a)[1]

    def vjp(self, cache, a):
        ax, ac = self._adjoint(cache, self._check(cache, a, self.state_dim))
        return (ax[0], ac[0]) if cache.single else (ax, ac)

    def _sample(self, rng, count):
        x = np.zeros((count, self.state_dim))
        x[:, 2:2 + self.k] = np.pi + rng.uniform(-self.max_swing, self.max_swing, size=(count, self.k))
        return x


def reflect(x, wall):
    """Mirror cart positions beyond ``+-wall`` back inside and negate their velocity.

    Returns the new batch and the boolean mask of reflected samples.  A single
    reflection is applied, so overshoots larger than ``2 * wall`` stay outside.
    """
    x = x.copy()
    pos = x[:, 0]
    right, left = pos > wall, pos < -wall
    x[right, 0] = 2.0 * wall - pos[right]
    x[left, 0] = -2.0 * wall - pos[left]
    flip = right | left
    x[flip, 1] = -x[flip, 1]
    return x, flip
