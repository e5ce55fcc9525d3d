"""SGD, RMSprop and Adam on flat parameter vectors, plus update clipping.

``opt_step`` is pure: it returns a new state and new parameters and never
mutates its arguments.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "rmsprop", "adam")
CLIP_MODES = ("none", "value", "norm")


@dataclass(frozen=True)
class ClipSpec:
    mode: str = "none"
    threshold: float = 1.0

    def __post_init__(self):
        if self.mode not in CLIP_MODES:
            raise ConfigError(f"unknown clip mode {self.mode!r}", key="clip")
        if self.mode != "none" and not self.threshold > 0:
            raise ConfigError("clip threshold must be positive", key="clip_threshold")


def clip(update, spec):
    """Clamp components (``value``) or rescale to a maximum L2 norm (``norm``)."""
    update = np.asarray(update, dtype=np.float64)
    if spec.mode == "none":
        return update
    if spec.mode == "value":
        return np.clip(update, -spec.threshold, spec.threshold)
    norm = np.linalg.norm(update)
    if norm > spec.threshold:
        return update * (spec.threshold / norm)
    return update


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    lr: float
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9  # RMSprop
    eps: float = 1e-8
    skipped: int = 0


def make_optimizer(kind, lr, size):
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}", key="optimizer")
    if not lr > 0:
        raise ConfigError("learning rate must be positive", key="lr")
    zeros = np.zeros(size)
    return OptimizerState(kind, float(lr), m=zeros if kind == "adam" else None,
                          v=None if kind == "sgd" else zeros.copy())


def opt_step(state, params, update):
    """Descend along ``update``; returns ``(new_state, new_params)``.

    A non-finite update leaves the parameters and moments untouched but still
    advances the step counter.
    """
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(update, dtype=np.float64)
    t = state.t + 1
    if not np.isfinite(g).all():
        log.warning("non-finite update at optimizer step %d skipped", t)
        return replace(state, t=t, skipped=state.skipped + 1), params.copy()
    if state.kind == "sgd":
        return replace(state, t=t), params - state.lr * g
    if state.kind == "rmsprop":
        v = state.decay * state.v + (1.0 - state.decay) * g * g
        return replace(state, t=t, v=v), params - state.lr * g / (np.sqrt(v) + state.eps)
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return replace(state, t=t, m=m, v=v), params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
