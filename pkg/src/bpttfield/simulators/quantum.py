"""1-D Schroedinger equation in an infinite well with a dipole control.

``i dpsi/dt = (-Lap + u x) psi`` on ``n`` interior points of ``[0, L]`` with
Dirichlet walls.  Each step uses the Cayley form of Crank-Nicolson with the
control held constant over the step::

    (I + i dt H/2) psi' = (I - i dt H/2) psi,   H = -Lap + u diag(x)

which is unitary, so the norm of ``psi`` is conserved.  States are stored as
interleaved real pairs ``(Re psi_0, Im psi_0, Re psi_1, ...)``, which is
also the ``(n, 2)`` channel layout the controller reads.

Cotangents of a pair-encoded state are handled as complex vectors
``g = g_re + i g_im``; for a complex-linear map ``M`` the pull-back is
``M^H g``.
"""
from __future__ import annotations

import numpy as np

from ..errors import SpecError
from .base import Simulator


def to_complex(x):
    return x[..., 0::2] + 1j * x[..., 1::2]


def to_pairs(z):
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def thomas_factor(diag, off):
    """Factor tridiagonal systems with per-row ``diag`` (B, n) and constant ``off``."""
    n = diag.shape[-1]
    denom = np.empty_like(diag)
    upper = np.empty_like(diag)
    denom[:, 0] = diag[:, 0]
    upper[:, 0] = off / denom[:, 0]
    for k in range(1, n):
        denom[:, k] = diag[:, k] - off * upper[:, k - 1]
        upper[:, k] = off / denom[:, k]
    return denom, upper


def thomas_solve(denom, upper, off, rhs):
    n = rhs.shape[-1]
    y = np.empty_like(rhs)
    y[:, 0] = rhs[:, 0] / denom[:, 0]
    for k in range(1, n):
        y[:, k] = (rhs[:, k] - off * y[:, k - 1]) / denom[:, k]
    for k in range(n - 2, -1, -1):
        y[:, k] -= upper[:, k] * y[:, k + 1]
    return y


class QuantumSim(Simulator):
    name = "quantum"
    control_dim = 1

    def __init__(self, grid=32, length=2.0, dt=1.0 / 128):
        if grid < 3:
            raise SpecError("quantum grid needs at least 3 points")
        if length <= 0 or dt <= 0:
            raise SpecError("quantum domain length and dt must be positive")
        self.n = int(grid)
        self.dt = float(dt)
        self.dx = float(length) / (self.n + 1)
        self.x = self.dx * np.arange(1, self.n + 1)
        self.state_dim = 2 * self.n
        self._eig = None

    def hamiltonian(self, u=0.0):
        """Dense real symmetric Hamiltonian for a scalar control ``u``."""
        n, inv = self.n, 1.0 / self.dx ** 2
        H = np.diag(np.full(n, 2.0 * inv) + u * self.x)
        H += np.diag(np.full(n - 1, -inv), 1) + np.diag(np.full(n - 1, -inv), -1)
        return H

    def eigenstates(self):
        """``(energies, vectors)`` of the uncontrolled Hamiltonian, columns normalised."""
        if self._eig is None:
            E, V = np.linalg.eigh(self.hamiltonian(0.0))
            # fix the sign so that each eigenvector starts positive
            V = V * np.sign(V[0])
            self._eig = (E, V)
        return self._eig

    def eigenstate(self, index):
        return to_pairs(self.eigenstates()[1][:, index].astype(complex))

    def _factors(self, u):
        half = 0.5j * self.dt
        inv = 1.0 / self.dx ** 2
        diag_h = 2.0 * inv + u * self.x  # (B, n)
        return 1.0 + half * diag_h, -half * inv  # diagonal of I + i dt H / 2 and its off-diagonal

    def _step(self, x, c):
        psi = to_complex(x)
        a_diag, a_off = self._factors(c)
        # right-hand side (I - i dt H/2) psi = 2 psi - (I + i dt H/2) psi
        rhs = (2.0 - a_diag) * psi
        rhs[:, 1:] -= a_off * psi[:, :-1]
        rhs[:, :-1] -= a_off * psi[:, 1:]
        denom, upper = thomas_factor(a_diag, a_off)
        psi_new = thomas_solve(denom, upper, a_off, rhs)
        data = {"psi": psi, "psi_new": psi_new, "a_diag": a_diag, "a_off": a_off,
                "denom": denom, "upper": upper}
        return to_pairs(psi_new), data

    def _adjoint(self, cache, a):
        g = to_complex(a)
        # z = A^{-H} g; A is complex symmetric so A^H = conj(A) and its
        # factorisation is the conjugate of the cached one.
        a_off = cache["a_off"]
        z = thomas_solve(np.conj(cache["denom"]), np.conj(cache["upper"]), np.conj(a_off), g)
        # pull back through B = I - i dt H/2: B^H z = A z
        gx = cache["a_diag"] * z
        gx[:, 1:] += a_off * z[:, :-1]
        gx[:, :-1] += a_off * z[:, 1:]
        # d psi'/du = A^{-1} (-i dt/2) x (psi + psi')
        w = (-0.5j * self.dt) * self.x * (cache["psi"] + cache["psi_new"])
        gu = np.real(np.sum(np.conj(z) * w, axis=1, keepdims=True))
        return to_pairs(gx), gu

    def _vjp_x(self, cache, a):
        return self._adjoint(cache, a)[0]

    def _vjp_c(self, cache, a):
        return self._adjoint(cache, a)[1]

    def vjp(self, cache, a):
        ax, ac = self._adjoint(cache, self._check(cache, a, self.state_dim))
        return (ax[0], ac[0]) if cache.single else (ax, ac)

    def _sample(self, rng, count):
        V = self.eigenstates()[1]
        alpha = rng.uniform(0.0, 2.0 * np.pi, size=(count, 1))
        psi = (V[:, 0][None, :] + np.exp(1j * alpha) * V[:, 1][None, :]) / np.sqrt(2.0)
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        return to_pairs(psi)
