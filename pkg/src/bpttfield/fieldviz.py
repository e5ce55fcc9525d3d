"""Loss landscapes and update-vector fields on 2-D parameter planes.

Fields are stored in the uphill convention used by ``unroll`` (method R is
the gradient); flow lines follow whatever field they are handed, so descent
lines are integrated on the negated field.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import optim, unroll
from .errors import InputError, NonFiniteWarning, NumericalError

TOY_RANGE = (-6.0, 6.0)
TOY_RESOLUTION = 241


@dataclass(frozen=True)
class PlaneSpec:
    """Points ``origin + p1 * e1 + p2 * e2`` for ``p1, p2`` on a regular lattice."""

    origin: tuple
    e1: tuple
    e2: tuple
    range1: tuple = TOY_RANGE
    range2: tuple = TOY_RANGE
    resolution: tuple = (TOY_RESOLUTION, TOY_RESOLUTION)

    def __post_init__(self):
        o, e1, e2 = (np.asarray(v, dtype=np.float64) for v in (self.origin, self.e1, self.e2))
        if not (o.shape == e1.shape == e2.shape) or o.ndim != 1:
            raise InputError("origin and directions must be vectors of one length")
        if np.linalg.matrix_rank(np.stack([e1, e2]), tol=1e-12) < 2:
            raise InputError("plane directions must be linearly independent")
        if min(self.resolution) < 1 or len(self.resolution) != 2:
            raise InputError("resolution must be two positive integers")

    @classmethod
    def canonical(cls, range1=TOY_RANGE, range2=TOY_RANGE, resolution=(TOY_RESOLUTION, TOY_RESOLUTION)):
        """The full 2-parameter space of the toy and LQR controllers."""
        return cls((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), tuple(range1), tuple(range2), tuple(resolution))

    def axes(self):
        (a1, b1), (a2, b2) = self.range1, self.range2
        n1, n2 = self.resolution
        return np.linspace(a1, b1, n1), np.linspace(a2, b2, n2)

    def point(self, p1, p2):
        return (np.asarray(self.origin, dtype=np.float64) + p1 * np.asarray(self.e1, dtype=np.float64)
                + p2 * np.asarray(self.e2, dtype=np.float64))

    def project(self, vector):
        return float(np.dot(vector, self.e1)), float(np.dot(vector, self.e2))


@dataclass
class FieldGrid:
    p1: np.ndarray  # (n1,)
    p2: np.ndarray  # (n2,)
    loss: np.ndarray  # (n1, n2), +inf where the rollout overflows
    f1: np.ndarray  # (n1, n2), NaN where the loss is not finite
    f2: np.ndarray
    method: str

    def rows(self):
        """Row-major lattice rows ``(p1, p2, loss, f1, f2)``."""
        for i, a in enumerate(self.p1):
            for j, b in enumerate(self.p2):
                yield a, b, self.loss[i, j], self.f1[i, j], self.f2[i, j]

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p1", "p2", "loss", "f1", "f2"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])

    def interpolate(self, p):
        """Bilinear interpolation of ``(f1, f2)``; ``None`` outside the lattice."""
        out = []
        for axis, v in ((self.p1, p[0]), (self.p2, p[1])):
            if len(axis) < 2 or not axis[0] <= v <= axis[-1]:
                return None
            k = min(int(np.searchsorted(axis, v, side="right")) - 1, len(axis) - 2)
            out.append((k, (v - axis[k]) / (axis[k + 1] - axis[k])))
        (i, s), (j, t) = out
        w = np.array([(1 - s) * (1 - t), (1 - s) * t, s * (1 - t), s * t])
        res = []
        for f in (self.f1, self.f2):
            corners = np.array([f[i, j], f[i, j + 1], f[i + 1, j], f[i + 1, j + 1]])
            res.append(float(w @ corners))
        return np.array(res)


# -- sampling -----------------------------------------------------------------

def evaluate_point(problem, theta, method, x0):
    """``(loss, update)`` at ``theta``; ``(inf, NaN...)`` if the rollout overflows."""
    theta = np.asarray(theta, dtype=np.float64)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonFiniteWarning)
            with np.errstate(over="ignore", invalid="ignore"):
                bundle = unroll.compute_bundle(problem.net, problem.sim, theta, x0,
                                               problem.loss, problem.n_steps, {method})
    except NumericalError:
        return np.inf, np.full(theta.shape, np.nan)
    if not np.isfinite(bundle.loss):
        return np.inf, np.full(theta.shape, np.nan)
    return bundle.loss, bundle.get(method)


def field_function(problem, method, plane, x0=None):
    """In-plane field ``(p1, p2) -> (f1, f2)`` of one method."""
    x0 = problem.sample(0, 1) if x0 is None else x0

    def f(p):
        _, u = evaluate_point(problem, plane.point(p[0], p[1]), method, x0)
        return np.array(plane.project(u))
    return f


def loss_function(problem, plane, x0=None):
    x0 = problem.sample(0, 1) if x0 is None else x0

    def f(p):
        return evaluate_point(problem, plane.point(p[0], p[1]), "M", x0)[0]
    return f


def sample_grid(problem, plane, method, x0=None):
    """Loss and projected update of ``method`` at every lattice point of ``plane``.

    ``x0`` defaults to the problem's deterministic first sample (the single
    start state of the toy and LQR tasks).
    """
    if method not in unroll.METHODS:
        raise InputError(f"unknown method {method!r}")
    x0 = problem.sample(0, 1) if x0 is None else x0
    a1, a2 = plane.axes()
    loss = np.empty((len(a1), len(a2)))
    f1 = np.empty_like(loss)
    f2 = np.empty_like(loss)
    for i, p in enumerate(a1):
        for j, q in enumerate(a2):
            value, u = evaluate_point(problem, plane.point(p, q), method, x0)
            loss[i, j] = value
            f1[i, j], f2[i, j] = plane.project(u)
    return FieldGrid(a1, a2, loss, f1, f2, method)


def random_plane(params, seed, span=1.0, resolution=(21, 21)):
    """Plane through ``params`` spanned by two seeded, orthonormalised directions."""
    params = np.asarray(params, dtype=np.float64)
    rng = np.random.default_rng(seed)
    e1 = rng.standard_normal(params.size)
    e1 /= np.linalg.norm(e1)
    e2 = rng.standard_normal(params.size)
    e2 -= np.dot(e2, e1) * e1
    e2 /= np.linalg.norm(e2)
    rng_ = (-span, span)
    return PlaneSpec(tuple(params), tuple(e1), tuple(e2), rng_, rng_, tuple(resolution))


def network_hyperplane(problem, params, data, method, seed=0, span=1.0, resolution=(21, 21)):
    """Field of a trained controller on a random plane through its parameters.

    ``data`` is the batch the loss is averaged over (the training set).
    """
    plane = random_plane(params, seed, span, resolution)
    return sample_grid(problem, plane, method, x0=data), plane


# -- flow lines ---------------------------------------------------------------

def integrate_flowlines(field, seeds, step=0.01, max_steps=10000, bounds=None, min_norm=1e-10):
    """Classic RK4 on the normalised field, i.e. fixed arc-length steps.

    ``field`` is a ``FieldGrid`` (integrated in the descent direction, with the
    lattice as domain) or a callable ``p -> vector`` followed as given, with
    optional ``bounds = ((lo1, hi1), (lo2, hi2))``.  A line stops when it leaves
    the domain, the field is not finite or its norm drops below ``min_norm``.
    """
    if isinstance(field, FieldGrid):
        grid = field

        def f(p):
            v = grid.interpolate(p)
            return None if v is None else -v
        bounds = ((grid.p1[0], grid.p1[-1]), (grid.p2[0], grid.p2[-1]))
    else:
        f = field

    def inside(p):
        return bounds is None or all(lo <= v <= hi for v, (lo, hi) in zip(p, bounds))

    def direction(p):
        if not inside(p):
            return None
        v = f(p)
        if v is None:
            return None
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n < min_norm:
            return None
        return v / n

    lines = []
    for seed in seeds:
        p = np.asarray(seed, dtype=np.float64)
        line = [p.copy()]
        for _ in range(max_steps):
            k1 = direction(p)
            if k1 is None:
                break
            k2 = direction(p + 0.5 * step * k1)
            k3 = None if k2 is None else direction(p + 0.5 * step * k2)
            k4 = None if k3 is None else direction(p + step * k3)
            if k4 is None:
                break
            p = p + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not inside(p):
                break
            line.append(p.copy())
        lines.append(np.array(line))
    return lines


def write_flowlines(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line_id", "step", "p1", "p2"])
        for k, line in enumerate(lines):
            for s, p in enumerate(line):
                w.writerow([k, s, repr(float(p[0])), repr(float(p[1]))])


# -- rotation -----------------------------------------------------------------

def descent_field(theta):
    return -np.asarray(theta, dtype=np.float64)


def rotation_field(theta):
    t = np.asarray(theta, dtype=np.float64)
    return np.array([-t[1], t[0]])


def demo_field(kind):
    """The fields of the rotation demo: ``D``, ``D+2R`` and ``combined``."""
    if kind == "D":
        return descent_field
    if kind == "D+2R":
        return lambda t: descent_field(t) + 2.0 * rotation_field(t)
    if kind == "combined":
        return lambda t: unroll.combine(descent_field(t), descent_field(t) + 2.0 * rotation_field(t))
    raise InputError(f"unknown demo field {kind!r}; expected D, D+2R or combined")


@dataclass
class DemoResult:
    field: str
    trajectory: np.ndarray  # (steps + 1, 2)
    loss: np.ndarray  # theta1^2 + theta2^2 along the trajectory

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "p1", "p2", "loss"])
            for s, (p, l) in enumerate(zip(self.trajectory, self.loss)):
                w.writerow([s, repr(float(p[0])), repr(float(p[1])), repr(float(l))])


def rotation_demo(field="D", start=(2.0, 0.0), optimizer="adam", lr=0.01, steps=2000):
    """Optimise on the quadratic bowl, feeding the NEGATED field as the gradient."""
    f = demo_field(field)
    theta = np.asarray(start, dtype=np.float64).copy()
    state = optim.make_optimizer(optimizer, lr, theta.size)
    traj = [theta]
    for _ in range(steps):
        state, theta = optim.opt_step(state, theta, -f(theta))
        traj.append(theta)
    traj = np.array(traj)
    return DemoResult(field, traj, np.sum(traj * traj, axis=1))


def rotation_measure(field, point, h=1e-5, eps=1e-6):
    """Relative size of the antisymmetric part of the field's Jacobian at ``point``.

    ``eps`` floors ``|J|``: smaller Jacobians are finite-difference noise and
    score near zero instead of an arbitrary ratio.
    """
    if not h > 0:
        raise InputError("h must be positive")
    p = np.asarray(point, dtype=np.float64)
    cols = []
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        cols.append((np.asarray(field(p + e)) - np.asarray(field(p - e))) / (2 * h))
    J = np.stack(cols, axis=1)
    anti = 0.5 * (J - J.T)
    return float(np.linalg.norm(anti) / max(np.linalg.norm(J), eps))
