"""Controller-simulator rollouts and the four backpropagation vectors.

For a rollout ``c_i = N(x_i, theta)``, ``x_{i+1} = S(x_i, c_i)`` the adjoint
state ``a_i`` (cotangent of ``x_i``) obeys

* regular:   ``a_i = a_{i+1} (dS/dx + dS/dc dN/dx) + dl_i/dx``
* modified:  ``a_i = a_{i+1} dS/dx + dl_i/dx``  (network input path cut)
* stopped:   each loss term is pulled back through its preceding step only

and in every case the parameter vector accumulates ``b_i dN/dtheta`` with
``b_i = a_{i+1} dS/dc + dr/dc_i`` (``r`` is the control penalty).  The
parameter contraction is done once for all steps as a single batched
network VJP, so the per-step loop only touches the simulator (and, for the
regular pass, the network input Jacobian).

All returned vectors are gradients of the batch-MEAN loss, in the
uphill convention.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .errors import InputError, NonFiniteWarning, NumericalError, SpecError
from .simulators.quantum import to_complex, to_pairs

METHODS = ("R", "M", "C", "S")
DISTANCES = ("quadratic", "pole-top", "quantum-overlap", "guidance-origin")


@dataclass(frozen=True)
class LossSpec:
    """What the rollout is compared against.

    ``quadratic``: ``1/2 |x - target|^2``; ``pole-top``: ``sum_i (1 - cos theta_i)``,
    i.e. half the squared distance of unit pole tips to the top;
    ``quantum-overlap``: ``1 - |<target, psi>|^2``; ``guidance-origin``: sum of
    squared evader distances to the origin, plus ``reg * |c|^2`` per step.
    """

    mode: str = "final"
    distance: str = "quadratic"
    target: tuple | None = None
    reg: float = 0.0

    def __post_init__(self):
        if self.mode not in ("final", "accumulated"):
            raise SpecError(f"unknown loss mode {self.mode!r}")
        if self.distance not in DISTANCES:
            raise SpecError(f"unknown distance {self.distance!r}")
        if self.reg < 0:
            raise SpecError("regularisation must be non-negative")
        if self.reg and self.distance != "guidance-origin":
            raise SpecError("control regularisation is only defined for guidance-origin")
        if self.distance in ("quadratic", "quantum-overlap") and self.target is None:
            raise SpecError(f"{self.distance} loss needs a target")


@dataclass
class Tape:
    net: nets.NetworkSpec
    sim: object
    params: np.ndarray
    states: list = field(default_factory=list)  # n + 1 arrays (B, state_dim)
    controls: list = field(default_factory=list)  # n arrays (B, control_dim)
    sim_caches: list = field(default_factory=list)
    net_caches: list = field(default_factory=list)

    @property
    def n_steps(self):
        return len(self.controls)

    @property
    def batch(self):
        return self.states[0].shape[0]


def rollout(net, sim, params, x0, n_steps):
    """Run ``n_steps`` of controller + simulator from a batch of start states."""
    if n_steps < 1:
        raise InputError("n_steps must be at least 1")
    params = np.asarray(params, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x.shape[1] != sim.state_dim:
        raise InputError(f"start state has {x.shape[1]} values, expected {sim.state_dim}")
    tape = Tape(net, sim, params, [x])
    for i in range(n_steps):
        c, ncache = nets.forward_batch(net, params, x)
        try:
            x, scache = sim.step(x, c)
        except NumericalError as exc:
            raise type(exc)(exc.detail, step=i) from exc
        tape.controls.append(c)
        tape.net_caches.append(ncache)
        tape.sim_caches.append(scache)
        tape.states.append(x)
    return tape


# -- losses -------------------------------------------------------------------

def _distance(sim, loss, x, want_grad):
    kind = loss.distance
    if kind == "quadratic":
        diff = x - np.asarray(loss.target, dtype=np.float64)
        return 0.5 * np.sum(diff * diff, axis=1), (diff if want_grad else None)
    if kind == "pole-top":
        k = (x.shape[1] - 2) // 2
        th = x[:, 2:2 + k]
        grad = None
        if want_grad:
            grad = np.zeros_like(x)
            grad[:, 2:2 + k] = np.sin(th)
        return np.sum(1.0 - np.cos(th), axis=1), grad
    if kind == "quantum-overlap":
        phi = to_complex(np.asarray(loss.target, dtype=np.float64))
        z = to_complex(x) @ np.conj(phi)
        value = 1.0 - np.abs(z) ** 2
        return value, (to_pairs(-2.0 * z[:, None] * phi[None, :]) if want_grad else None)
    # guidance-origin
    nd, ne = sim.nd, sim.ne
    q = x[:, 2 * nd:2 * (nd + ne)]
    grad = None
    if want_grad:
        grad = np.zeros_like(x)
        grad[:, 2 * nd:2 * (nd + ne)] = 2.0 * q
    return np.sum(q * q, axis=1), grad


def _loss_steps(loss, n):
    return range(1, n + 1) if loss.mode == "accumulated" else (n,)


def per_sample_loss(tape, loss):
    total = np.zeros(tape.batch)
    for i in _loss_steps(loss, tape.n_steps):
        total += _distance(tape.sim, loss, tape.states[i], False)[0]
    if loss.reg:
        for c in tape.controls:
            total += loss.reg * np.sum(c * c, axis=1)
    return total


def loss_eval(tape, loss):
    """Batch-mean loss of a recorded rollout."""
    return float(np.mean(per_sample_loss(tape, loss)))


def _state_cotangents(tape, loss):
    scale = 1.0 / tape.batch
    out = {}
    for i in _loss_steps(loss, tape.n_steps):
        out[i] = scale * _distance(tape.sim, loss, tape.states[i], True)[1]
    return out


def _control_cotangent(tape, loss, i):
    if not loss.reg:
        return None
    return (2.0 * loss.reg / tape.batch) * tape.controls[i]


# -- adjoint passes -----------------------------------------------------------

def _param_contraction(tape, steps, cots):
    """``sum_i cots_i . dN/dtheta (x_i)`` as one stacked network VJP."""
    if not steps:
        return np.zeros(len(tape.params))
    x = np.concatenate([tape.states[i] for i in steps], axis=0)
    b = np.concatenate(cots, axis=0)
    _, cache = nets.forward_batch(tape.net, tape.params, x)
    grad, _ = nets.vjp_batch(tape.net, tape.params, cache, b, need_input=False)
    return grad


def _report_nonfinite(kind, step):
    warnings.warn(NonFiniteWarning(f"{kind} adjoint became non-finite at step {step}"), stacklevel=3)


def _adjoint(tape, loss, kind):
    n, sim = tape.n_steps, tape.sim
    dl = _state_cotangents(tape, loss)
    steps, cots = [], []
    bad_step = None
    with np.errstate(over="ignore", invalid="ignore"):
        if kind == "stopped":
            for i in range(n - 1, -1, -1):
                b = None
                if i + 1 in dl:
                    b = sim.vjp_c(tape.sim_caches[i], dl[i + 1])
                rc = _control_cotangent(tape, loss, i)
                if rc is not None:
                    b = rc if b is None else b + rc
                if b is not None:
                    steps.append(i)
                    cots.append(b)
        else:
            a = dl[n]
            for i in range(n - 1, -1, -1):
                ax, b = sim.vjp(tape.sim_caches[i], a)
                rc = _control_cotangent(tape, loss, i)
                if rc is not None:
                    b = b + rc
                steps.append(i)
                cots.append(b)
                if kind == "regular":
                    _, gx = nets.vjp_batch(tape.net, tape.params, tape.net_caches[i], b,
                                           need_input=True, need_params=False)
                    ax = ax + gx
                if i in dl:
                    ax = ax + dl[i]
                a = ax
                if bad_step is None and not np.isfinite(a).all():
                    bad_step = i
        grad = _param_contraction(tape, steps, cots)
    if bad_step is not None or not np.isfinite(grad).all():
        _report_nonfinite(kind, bad_step if bad_step is not None else 0)
    return grad


def backward_regular(tape, loss):
    """Exact gradient of the batch-mean loss with respect to the parameters."""
    return _adjoint(tape, loss, "regular")


def backward_modified(tape, loss):
    """Backpropagation with the controller's input Jacobian set to zero."""
    return _adjoint(tape, loss, "modified")


def backward_stopped(tape, loss):
    """Every loss term backpropagated through its immediately preceding step only."""
    return _adjoint(tape, loss, "stopped")


def combine(regular, modified):
    """Keep modified components whose sign matches the regular gradient, zero the rest.

    ``sign(0) = 0`` and NaN never matches.
    """
    regular = np.asarray(regular, dtype=np.float64)
    modified = np.asarray(modified, dtype=np.float64)
    if regular.shape != modified.shape:
        raise InputError(f"cannot combine vectors of shapes {regular.shape} and {modified.shape}")
    with np.errstate(invalid="ignore"):
        agree = np.sign(regular) == np.sign(modified)
    return np.where(agree, modified, 0.0)


@dataclass
class UpdateBundle:
    loss: float
    regular: np.ndarray | None = None
    modified: np.ndarray | None = None
    combined: np.ndarray | None = None
    stopped: np.ndarray | None = None

    def get(self, method):
        return {"R": self.regular, "M": self.modified, "C": self.combined, "S": self.stopped}[method]


def compute_bundle(net, sim, params, x0, loss, n_steps, methods=METHODS):
    """Roll out a batch once and derive the requested update vectors from that tape."""
    methods = set(methods)
    unknown = methods - set(METHODS)
    if unknown:
        raise InputError(f"unknown methods {sorted(unknown)}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[0] < 1:
        raise InputError("empty batch")
    try:
        tape = rollout(net, sim, params, x0, n_steps)
    except NumericalError as exc:
        raise type(exc)(f"{exc.detail} in batch of {x0.shape[0]} samples", step=exc.step) from exc
    bundle = UpdateBundle(loss_eval(tape, loss))
    if methods & {"R", "C"}:
        bundle.regular = backward_regular(tape, loss)
    if methods & {"M", "C"}:
        bundle.modified = backward_modified(tape, loss)
    if "C" in methods:
        bundle.combined = combine(bundle.regular, bundle.modified)
    if "S" in methods:
        bundle.stopped = backward_stopped(tape, loss)
    return bundle
