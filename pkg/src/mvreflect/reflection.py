"""Projected Euler scheme for the oblique Skorokhod problem in a moving domain.

One step moves the state with the drift, the noise and an optional control,
then pushes it back into the section at the *new* time along the direction
field. The push records the arc length ``xi`` (increment of the local time
``|K|``) and the net displacement (increment of the reflector ``K``), so that
``X_t = X_0 + sum(b dt) + sum(sigma dW) + K_t`` holds exactly along the path.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .geometry import BuiltinDomain, ObliqueField, TimeDomain, DirectionField

MAX_PROJECT_ITERS = 200


class ProjectionError(RuntimeError):
    """Projection did not reach the section; usually gamma and the domain are incompatible."""

    def __init__(self, message, last_iterate=None, particle=None, step=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.particle = particle
        self.step = step


@dataclass(frozen=True)
class ReflectedState:
    x: np.ndarray
    local_time: float
    reflector: np.ndarray
    t: float


def _uses_kernel(domain, field):
    return (isinstance(domain, BuiltinDomain) and isinstance(field, ObliqueField)
            and field.domain is domain)


def advance_along(domain: TimeDomain, t, x, direction, max_iters=MAX_PROJECT_ITERS):
    """One frozen-direction sub-step: smallest step ``s`` with ``x + s direction`` in the section.

    Brackets by doubling from the current distance, then bisects to the
    boundary tolerance. Returns ``(s, iterations)``; ``s`` is ``None`` when no
    bracket was found within twice the bounding diameter.
    """
    dist = domain.distance
    tol = domain.tol_boundary
    s_in = dist(t, x)
    s_out = 0.0
    it = 0
    best = (0.0, s_in)
    while True:
        dd = dist(t, x + s_in * direction)
        it += 1
        if dd <= 0.0:
            break
        if dd < best[1]:
            best = (s_in, dd)
        s_out, s_in = s_in, 2.0 * s_in
        if s_in > 4.0 * domain.bounding_radius or it >= max_iters:
            return None, it, best[0]
    while s_in - s_out > tol and it < max_iters:
        mid = 0.5 * (s_in + s_out)
        it += 1
        if dist(t, x + mid * direction) <= 0.0:
            s_in = mid
        else:
            s_out = mid
    if s_in - s_out > tol:
        return None, it, 0.0
    return s_in, it, s_in


def _generic_project(domain, field, t, x, max_iters):
    cur = np.array(x, dtype=float)
    xi = 0.0
    disp = np.zeros_like(cur)
    it = 0
    while domain.distance(t, cur) > 0.0:
        if it >= max_iters:
            raise ProjectionError(f"projection exceeded {max_iters} iterations", cur)
        anchor = domain.nearest_boundary(t, cur)
        g = field(t, anchor.point)
        s, used, fallback = advance_along(domain, t, cur, g, max_iters - it)
        it += used
        if s is None:
            if fallback <= 0.0:
                raise ProjectionError("direction field does not lead back into the domain", cur)
            s = fallback
        cur = cur + s * g
        disp = disp + s * g
        xi += s * float(np.linalg.norm(g))
    return cur, xi, disp


def project_batch(domain: TimeDomain, field: DirectionField, t: float, Y, max_iters=MAX_PROJECT_ITERS):
    """Project every row of ``Y`` into the section at time ``t``.

    Returns ``(points, xi, displacement)``.
    """
    t = domain.check_time(t)
    Y = np.asarray(Y, dtype=float).reshape(-1, domain.dim)
    if _uses_kernel(domain, field):
        s = domain.section(t)
        P, xi, disp, _, status = kernels.project(
            s.kind, s.center, s.radius, s.half, s.corner, field.cos_a, field.sin_a, Y,
            domain.tol_boundary, 4.0 * domain.bounding_radius, max_iters)
        bad = np.nonzero(status)[0]
        if bad.size:
            i = int(bad[0])
            raise ProjectionError(f"projection failed (code {int(status[i])}) at time {t}",
                                  P[i], particle=i)
        return P, xi, disp
    P = Y.copy()
    xi = np.zeros(len(Y))
    disp = np.zeros_like(Y)
    for i in np.nonzero(domain.distance_batch(t, Y) > 0.0)[0]:
        try:
            P[i], xi[i], disp[i] = _generic_project(domain, field, t, Y[i], max_iters)
        except ProjectionError as exc:
            exc.particle = int(i)
            raise
    return P, xi, disp


def oblique_project(domain, field, t, x, max_iters=MAX_PROJECT_ITERS):
    """Return ``(point, xi, path_direction)``; a no-op with ``xi = 0`` inside the section."""
    P, xi, disp = project_batch(domain, field, t, np.atleast_1d(x).reshape(1, -1), max_iters)
    n = np.linalg.norm(disp[0])
    direction = disp[0] / n if n > 0 else np.zeros(domain.dim)
    return P[0], float(xi[0]), direction


def constrained_euler_step(domain, field, cs, state: ReflectedState, mu, dt, noise_increment,
                           noise_scale, control=None) -> ReflectedState:
    """Single-particle version of the scheme used by :func:`integrate`."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.atleast_1d(np.asarray(state.x, dtype=float))
    dW = np.asarray(noise_increment, dtype=float).reshape(1, cs.noise_dim)
    h = np.zeros((1, cs.noise_dim)) if control is None else np.asarray(control, float).reshape(1, -1)
    Y = _tentative(cs, state.t, x.reshape(1, -1), mu, dt, dW, noise_scale, h)
    P, xi, disp = project_batch(domain, field, state.t + dt, Y)
    return ReflectedState(P[0], state.local_time + float(xi[0]), state.reflector + disp[0], state.t + dt)


def _tentative(cs, t, X, mu, dt, dW, noise_scale, h):
    B = cs.drift_batch(t, X, mu)
    S = cs.diffusion_batch(t, X, mu)
    noise = np.einsum("ndm,nm->nd", S, dW)
    push = np.einsum("ndm,nm->nd", S, h)
    # every run goes through the same operations so zero noise/control is bit-neutral
    return X + B * dt + noise_scale * noise + push * dt


@dataclass
class PathBundle:
    grid: np.ndarray
    x: np.ndarray           # (n, K+1, d)
    local_time: np.ndarray  # (n, K+1)
    reflector: np.ndarray   # (n, K+1, d)
    xi: np.ndarray          # (n, K)


def integrate(domain: TimeDomain, field: DirectionField, cs, X0, grid, noise, noise_scale: float,
              law: Callable, control=None) -> PathBundle:
    """Advance a particle cloud over ``grid``.

    ``law(k, X)`` returns the measure used at step ``k`` (shared by all
    particles); ``noise`` has shape ``(n, K, m)`` or is ``None``; ``control``
    is ``(K, m)`` (shared) or ``(n, K, m)`` (per particle) or ``None``.
    """
    grid = np.asarray(grid, dtype=float)
    X0 = np.array(X0, dtype=float).reshape(-1, domain.dim)
    n, d = X0.shape
    K = grid.size - 1
    m = cs.noise_dim
    if K < 1:
        raise ValueError("grid needs at least two nodes")
    d0 = domain.distance_batch(grid[0], X0)
    if np.any(d0 > domain.tol_boundary):
        raise ValueError("initial points must lie in the closed section at the first grid time")
    if noise is not None and np.shape(noise) != (n, K, m):
        raise ValueError(f"noise of shape {np.shape(noise)}, expected {(n, K, m)}")
    if control is not None:
        control = np.asarray(control, dtype=float)
        if control.shape == (K, m):
            control = np.broadcast_to(control, (n, K, m))
        elif control.shape != (n, K, m):
            raise ValueError(f"control of shape {control.shape} does not match the grid")
    zeros = np.zeros((n, m))
    x = np.empty((n, K + 1, d))
    lt = np.zeros((n, K + 1))
    refl = np.zeros((n, K + 1, d))
    xi = np.zeros((n, K))
    x[:, 0] = X0
    for k in range(K):
        t, dt = grid[k], grid[k + 1] - grid[k]
        X = x[:, k]
        mu = law(k, X)
        dW = zeros if noise is None else noise[:, k]
        h = zeros if control is None else control[:, k]
        Y = _tentative(cs, t, X, mu, dt, dW, noise_scale, h)
        try:
            P, s, disp = project_batch(domain, field, grid[k + 1], Y)
        except ProjectionError as exc:
            exc.step = k
            raise
        x[:, k + 1] = P
        xi[:, k] = s
        lt[:, k + 1] = lt[:, k] + s
        refl[:, k + 1] = refl[:, k] + disp
    return PathBundle(grid, x, lt, refl, xi)


@dataclass
class ReflectedPath:
    grid: np.ndarray
    x: np.ndarray           # (K+1, d)
    local_time: np.ndarray  # (K+1,)
    reflector: np.ndarray   # (K+1, d)
    xi: np.ndarray          # (K,)

    @property
    def terminal(self):
        return self.x[-1]

    def state(self, k) -> ReflectedState:
        return ReflectedState(self.x[k], float(self.local_time[k]), self.reflector[k], float(self.grid[k]))

    @classmethod
    def from_bundle(cls, bundle: PathBundle, i: int = 0):
        return cls(bundle.grid, bundle.x[i], bundle.local_time[i], bundle.reflector[i], bundle.xi[i])


def drive_path(domain, field, cs, x0, measure_flow, grid, noise_path, noise_scale,
               control: Optional[np.ndarray] = None) -> ReflectedPath:
    """Reflected path of one particle with the measure frozen to ``measure_flow``."""
    grid = np.asarray(grid, dtype=float)
    noise = None if noise_path is None else np.asarray(noise_path, dtype=float)[None]
    bundle = integrate(domain, field, cs, np.atleast_1d(x0).reshape(1, -1), grid, noise, noise_scale,
                       lambda k, X: measure_flow[k], control)
    return ReflectedPath.from_bundle(bundle)


def boundary_gap(domain: TimeDomain, t, X) -> np.ndarray:
    """Distance from each row of ``X`` to the boundary of the section at ``t``."""
    X = np.asarray(X, dtype=float).reshape(-1, domain.dim)
    if isinstance(domain, BuiltinDomain):
        P, _ = domain.nearest_batch(t, X)
    else:
        P = np.array([domain.nearest_boundary(t, x).point for x in X])
    return np.linalg.norm(X - P, axis=1)


@dataclass
class PathInvariants:
    steps: int
    max_distance: float
    containment: bool
    support_steps: int
    max_support_gap: float
    support: bool
    reflector_consistent: bool
    local_time_monotone: bool

    @property
    def ok(self):
        return self.containment and self.support and self.reflector_consistent and self.local_time_monotone

    def as_dict(self):
        return {"containment": self.containment, "local_time_support": self.support,
                "reflector_consistency": self.reflector_consistent,
                "local_time_monotone": self.local_time_monotone}


def check_path_invariants(domain: TimeDomain, paths) -> PathInvariants:
    """Containment, local-time support and reflector bounds on every step of ``paths``.

    ``paths`` is anything with ``grid``, ``x`` ``(n, K+1, d)``, ``local_time``,
    ``reflector`` and ``xi`` (a :class:`PathBundle` or an ensemble).
    """
    tol = domain.tol_boundary
    grid = np.asarray(paths.grid)
    K = grid.size - 1
    worst_d = 0.0
    worst_gap = 0.0
    support_ok = True
    n_support = 0
    for k in range(K + 1):
        X = paths.x[:, k]
        worst_d = max(worst_d, float(np.max(domain.distance_batch(grid[k], X))))
        if k == 0:
            continue
        active = paths.xi[:, k - 1] > 0.0
        if np.any(active):
            n_support += int(np.count_nonzero(active))
            gap = float(np.max(boundary_gap(domain, grid[k], X[active])))
            worst_gap = max(worst_gap, gap)
            support_ok &= gap <= tol
    dK = np.linalg.norm(np.diff(paths.reflector, axis=1), axis=2)
    dL = np.diff(paths.local_time, axis=1)
    refl_ok = bool(np.all(dK <= dL * (1 + 1e-9) + 1e-15))
    return PathInvariants(paths.x.shape[0] * K, worst_d, worst_d <= tol, n_support, worst_gap,
                          bool(support_ok), refl_ok, bool(np.all(dL >= 0.0)))
