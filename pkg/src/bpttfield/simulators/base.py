from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, NumericalError


@dataclass
class StepCache:
    """Intermediates of one batched step, enough for both adjoints."""

    system: str
    single: bool
    data: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]


class Simulator:
    """One-step map ``x_next = S(x, c)`` with its two adjoint contractions.

    Subclasses implement ``_step(x, c) -> (x_next, data)``, ``_vjp_x`` and
    ``_vjp_c`` on batches of shape ``(B, state_dim)`` / ``(B, control_dim)``.
    The public methods also accept single 1-D vectors.
    """

    name = "base"
    state_dim = 0
    control_dim = 0
    dt = 1.0

    def step(self, x, c):
        x = np.asarray(x, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        single = x.ndim == 1
        xb = x.reshape(1, -1) if single else x
        cb = c.reshape(xb.shape[0], -1)
        if xb.shape[1] != self.state_dim:
            raise InputError(f"{self.name}: state has {xb.shape[1]} values, expected {self.state_dim}")
        if cb.shape[1] != self.control_dim:
            raise InputError(f"{self.name}: control has {cb.shape[1]} values, expected {self.control_dim}")
        if not (np.isfinite(xb).all() and np.isfinite(cb).all()):
            raise NumericalError(f"{self.name}: non-finite state or control")
        x_next, data = self._step(xb, cb)
        cache = StepCache(self.name, single, data)
        return (x_next[0] if single else x_next), cache

    def _check(self, cache, a, dim):
        if not isinstance(cache, StepCache) or cache.system != self.name:
            raise InputError(f"{self.name}: cache from a different system")
        a = np.asarray(a, dtype=np.float64)
        ab = a.reshape(1, -1) if cache.single else a
        if ab.shape[-1] != dim:
            raise InputError(f"{self.name}: cotangent has {ab.shape[-1]} values, expected {dim}")
        return ab

    def vjp_x(self, cache, a):
        """``a . dS/dx`` for the step that produced ``cache``."""
        out = self._vjp_x(cache, self._check(cache, a, self.state_dim))
        return out[0] if cache.single else out

    def vjp_c(self, cache, a):
        """``a . dS/dc`` for the step that produced ``cache``."""
        out = self._vjp_c(cache, self._check(cache, a, self.state_dim))
        return out[0] if cache.single else out

    def vjp(self, cache, a):
        """Both contractions at once; systems with shared work override this."""
        return self.vjp_x(cache, a), self.vjp_c(cache, a)

    def sample_initial(self, seed, count):
        if count < 1:
            raise InputError("count must be at least 1")
        return self._sample(np.random.default_rng(seed), int(count))

    def _sample(self, rng, count):
        raise NotImplementedError
