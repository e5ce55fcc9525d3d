"""Guidance by repulsion: controllable drivers herding flocking evaders.

State layout (flat): driver positions, evader positions, driver velocities,
evader velocities, each agent a 2-vector.  Each driver takes two controls,
stored driver-major as ``(c1_0, c2_0, c1_1, c2_1, ...)``.
"""
from __future__ import annotations

import numpy as np

from ..errors import SingularityError, SpecError
from .base import Simulator

EPS = 1e-12


def flock_kernel(p):
    """Pairwise flocking weight ``1/(2p^2) - 1/p``; attractive beyond ``p = 0.5``."""
    p = np.asarray(p, dtype=np.float64)
    return 1.0 / (2.0 * p * p) - 1.0 / p


def _inv(s):
    return 1.0 / (s + EPS), -1.0 / (s + EPS) ** 2


def _flock(s):
    r = s + EPS
    return 0.5 / r - r ** -0.5, -0.5 / r ** 2 + 0.5 * r ** -1.5


def _rot_t(v):
    # R^T v with R = [[0, -1], [1, 0]]
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


class GuidanceSim(Simulator):
    name = "guidance"

    def __init__(self, drivers=2, evaders=4, horizon=4.0, steps=60, driver_friction=1.0,
                 evader_friction=4.0, spread=0.2, repulsion=15.0, flocking=0.2,
                 driver_radius=(3.0, 4.0), flock_radius=(1.0, 2.0), flock_side=1.0):
        if drivers < 1 or evaders < 1:
            raise SpecError("guidance needs at least one driver and one evader")
        if horizon <= 0 or steps < 1:
            raise SpecError("guidance horizon and step count must be positive")
        self.nd, self.ne = int(drivers), int(evaders)
        self.dt = float(horizon) / int(steps)
        self.fd, self.fe = float(driver_friction), float(evader_friction)
        self.c_sp, self.c_rep, self.c_fl = float(spread), float(repulsion), float(flocking)
        self.driver_radius = driver_radius
        self.flock_radius = flock_radius
        self.flock_side = float(flock_side)
        self.state_dim = 4 * (self.nd + self.ne)
        self.control_dim = 2 * self.nd

    def split(self, x):
        """``(driver_pos, evader_pos, driver_vel, evader_vel)`` views of a batch."""
        nb, nd, ne = x.shape[0], self.nd, self.ne
        n = nd + ne
        p = x[:, :2 * nd].reshape(nb, nd, 2)
        q = x[:, 2 * nd:2 * n].reshape(nb, ne, 2)
        vd = x[:, 2 * n:2 * n + 2 * nd].reshape(nb, nd, 2)
        ve = x[:, 2 * n + 2 * nd:].reshape(nb, ne, 2)
        return p, q, vd, ve

    def join(self, p, q, vd, ve):
        nb = p.shape[0]
        return np.concatenate([p.reshape(nb, -1), q.reshape(nb, -1), vd.reshape(nb, -1), ve.reshape(nb, -1)], axis=1)

    def _geometry(self, p, q):
        d_dd = p[:, None, :, :] - p[:, :, None, :]  # [b, i, k] = p_k - p_i
        d_de = p[:, :, None, :] - q[:, None, :, :]  # [b, k, j] = p_k - q_j
        d_ee = q[:, :, None, :] - q[:, None, :, :]  # [b, j, l] = q_j - q_l
        s_dd = np.sum(d_dd * d_dd, axis=-1)
        s_de = np.sum(d_de * d_de, axis=-1)
        s_ee = np.sum(d_ee * d_ee, axis=-1)
        off_d = ~np.eye(self.nd, dtype=bool)
        off_e = ~np.eye(self.ne, dtype=bool)
        if (s_de == 0).any() or (s_dd[:, off_d] == 0).any() or (s_ee[:, off_e] == 0).any():
            raise SingularityError(f"{self.name}: two agents share a position")
        return d_dd, d_de, d_ee, s_dd, s_de, s_ee, off_d, off_e

    def forces(self, x, c):
        """Per-term forces, keyed by name, for a batch of states and controls."""
        p, q, vd, ve = self.split(x)
        ctrl = c.reshape(x.shape[0], self.nd, 2)
        d_dd, d_de, d_ee, s_dd, s_de, s_ee, off_d, off_e = self._geometry(p, q)
        phi_dd = _inv(s_dd)[0] * off_d
        phi_de = _inv(s_de)[0]
        g_ee = _flock(s_ee)[0] * off_e
        bary = p.sum(axis=1, keepdims=True)
        perp = np.stack([-bary[..., 1], bary[..., 0]], axis=-1)
        return {
            "driver_friction": -self.fd * vd,
            "spread": self.c_sp * np.einsum("bik,bikx->bix", phi_dd, d_dd),
            "control": ctrl[..., 0:1] * (p - bary) + ctrl[..., 1:2] * (p - perp),
            "evader_friction": -self.fe * ve,
            "repulsion": -self.c_rep * np.einsum("bkj,bkjx->bjx", phi_de, d_de),
            "flocking": self.c_fl * np.einsum("bjl,bjlx->bjx", g_ee, d_ee),
        }

    def _step(self, x, c):
        p, q, vd, ve = self.split(x)
        f = self.forces(x, c)
        acc_d = f["driver_friction"] + f["spread"] + f["control"]
        acc_e = f["evader_friction"] + f["repulsion"] + f["flocking"]
        dt = self.dt
        out = self.join(p + dt * vd, q + dt * ve, vd + dt * acc_d, ve + dt * acc_e)
        return out, {"x": x, "c": c}

    def _adjoint(self, cache, a):
        x, c = cache["x"], cache["c"]
        nb, dt = x.shape[0], self.dt
        p, q, vd, ve = self.split(x)
        ctrl = c.reshape(nb, self.nd, 2)
        ap_out, aq_out, avd_out, ave_out = self.split(a)
        d_dd, d_de, d_ee, s_dd, s_de, s_ee, off_d, off_e = self._geometry(p, q)

        lam_d = dt * avd_out  # cotangent on driver accelerations
        lam_e = dt * ave_out
        ap = ap_out.copy()
        aq = aq_out.copy()
        avd = avd_out + dt * ap_out - self.fd * lam_d
        ave = ave_out + dt * aq_out - self.fe * lam_e

        # spreading: force on i along d_ik = p_k - p_i
        phi, dphi = _inv(s_dd)
        phi, dphi = phi * off_d, dphi * off_d
        proj = np.einsum("bix,bikx->bik", lam_d, d_dd)
        gam = self.c_sp * (phi[..., None] * lam_d[:, :, None, :] + 2.0 * (dphi * proj)[..., None] * d_dd)
        ap += gam.sum(axis=1) - gam.sum(axis=2)

        # repulsion: force on evader j along d_kj = p_k - q_j
        phi, dphi = _inv(s_de)
        proj = np.einsum("bjx,bkjx->bkj", lam_e, d_de)
        gam = -self.c_rep * (phi[..., None] * lam_e[:, None, :, :] + 2.0 * (dphi * proj)[..., None] * d_de)
        ap += gam.sum(axis=2)
        aq -= gam.sum(axis=1)

        # flocking: force on evader j along d_jl = q_j - q_l
        gk, dgk = _flock(s_ee)
        gk, dgk = gk * off_e, dgk * off_e
        proj = np.einsum("bjx,bjlx->bjl", lam_e, d_ee)
        gam = self.c_fl * (gk[..., None] * lam_e[:, :, None, :] + 2.0 * (dgk * proj)[..., None] * d_ee)
        aq += gam.sum(axis=2) - gam.sum(axis=1)

        # control: c1_i (p_i - sum_k p_k) + c2_i (p_i - R sum_k p_k)
        bary = p.sum(axis=1, keepdims=True)
        perp = np.stack([-bary[..., 1], bary[..., 0]], axis=-1)
        ac = np.empty_like(ctrl)
        ac[..., 0] = np.sum(lam_d * (p - bary), axis=-1)
        ac[..., 1] = np.sum(lam_d * (p - perp), axis=-1)
        w1 = ctrl[..., 0:1] * lam_d
        w2 = ctrl[..., 1:2] * lam_d
        ap += w1 + w2 - w1.sum(axis=1, keepdims=True) - _rot_t(w2.sum(axis=1, keepdims=True))

        return self.join(ap, aq, avd, ave), ac.reshape(nb, -1)

    def _vjp_x(self, cache, a):
        return self._adjoint(cache, a)[0]

    def _vjp_c(self, cache, a):
        return self._adjoint(cache, a)[1]

    def vjp(self, cache, a):
        ax, ac = self._adjoint(cache, self._check(cache, a, self.state_dim))
        return (ax[0], ac[0]) if cache.single else (ax, ac)

    def _sample(self, rng, count):
        r = rng.uniform(*self.driver_radius, size=(count, self.nd))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=(count, self.nd))
        p = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        rc = rng.uniform(*self.flock_radius, size=count)
        ac = rng.uniform(0.0, 2.0 * np.pi, size=count)
        centre = np.stack([rc * np.cos(ac), rc * np.sin(ac)], axis=-1)
        half = 0.5 * self.flock_side
        q = centre[:, None, :] + rng.uniform(-half, half, size=(count, self.ne, 2))
        zeros_d = np.zeros((count, self.nd, 2))
        zeros_e = np.zeros((count, self.ne, 2))
        return self.join(p, q, zeros_d, zeros_e)
