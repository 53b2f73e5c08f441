"""Time-dependent domains, their distance functions and oblique direction fields.

A domain is described by its horizon ``T``, the distance function
``dist(t, x)`` (zero exactly on the closed section at time ``t``), the spatial
dimension and the radius of a ball containing every section. User domains
only need the distance function; the three built-ins (moving interval, moving
disk/ball, moving box with rounded corners) expose their frozen section so the
compiled kernels can work on them directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels

TOL_REL = 1e-6


class GeometryError(RuntimeError):
    """A boundary search failed to bracket the boundary."""


class DomainRangeError(ValueError):
    """Time argument outside ``[0, T]``."""


@dataclass(frozen=True)
class BoundaryAnchor:
    point: np.ndarray
    time: float
    inward_hint: np.ndarray


@dataclass(frozen=True)
class Section:
    kind: int
    center: np.ndarray
    radius: float
    half: np.ndarray
    corner: float


class TimeDomain:
    """Region ``D_t`` given through its distance function.

    Parameters
    ----------
    dist : callable ``(t, x) -> float``
        Euclidean distance from ``x`` to the closed section at time ``t``.
    horizon : float
        Final time ``T``.
    dim : int
        Spatial dimension.
    bounding_radius : float
        Every section lies in the ball of this radius around the origin.
    time_lipschitz : float, optional
        Declared bound on ``|d/dt dist(t, x)|``, used by the regularity probe.
    """

    name = "custom"

    def __init__(self, dist: Callable, horizon: float, dim: int, bounding_radius: float,
                 time_lipschitz: Optional[float] = None, name: Optional[str] = None):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        if bounding_radius <= 0:
            raise ValueError("bounding_radius must be positive")
        self._dist = dist
        self.horizon = float(horizon)
        self.dim = int(dim)
        self.bounding_radius = float(bounding_radius)
        self.time_lipschitz = time_lipschitz
        if name is not None:
            self.name = name

    @property
    def tol_boundary(self) -> float:
        return 1e-9 * self.bounding_radius

    def check_time(self, t: float) -> float:
        t = float(t)
        slack = 1e-12 * self.horizon
        if not (-slack <= t <= self.horizon + slack):
            raise DomainRangeError(f"time {t} outside [0, {self.horizon}]")
        return t

    def section(self, t: float) -> Optional[Section]:
        """Frozen built-in section at time ``t``; ``None`` for user domains."""
        return None

    def distance(self, t: float, x) -> float:
        t = self.check_time(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self._dist(t, x))

    def distance_batch(self, t: float, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.array([self.distance(t, x) for x in X])

    def contains(self, t: float, x) -> bool:
        return self.distance(t, x) <= self.tol_boundary

    def nearest_boundary(self, t: float, x) -> BoundaryAnchor:
        """Closest boundary point found by search along rays.

        Exterior points walk down the numerical gradient of the distance and
        bisect on that segment; interior points try a fan of directions and
        keep the shortest exit.
        """
        t = self.check_time(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = self.distance(t, x)
        tol = self.tol_boundary
        if d > tol:
            u = self._descent_direction(t, x)
            s = _first_exit(lambda s: self.distance(t, x + s * u) <= 0.0, 2.0 * d, tol, inside_at_zero=False)
            if s is None:
                raise GeometryError(f"no boundary found below {x} at time {t}")
            p = x + s * u
            return BoundaryAnchor(p, t, u)
        best = None
        for u in _search_directions(self.dim):
            s = _first_exit(lambda s: self.distance(t, x + s * u) > 0.0, 2.0 * self.bounding_radius,
                            tol, inside_at_zero=True)
            if s is not None and (best is None or s < best[0]):
                best = (s, u)
        if best is None:
            raise GeometryError(f"no boundary found within the bounding radius from {x}")
        s, u = best
        return BoundaryAnchor(x + s * u, t, -u)

    def _descent_direction(self, t, x):
        h = 1e-6 * self.bounding_radius
        grad = np.empty(self.dim)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            grad[k] = (self.distance(t, x + e) - self.distance(t, x - e)) / (2 * h)
        n = np.linalg.norm(grad)
        if n == 0.0:
            raise GeometryError(f"flat distance function at {x}")
        return -grad / n

    def sample_boundary(self, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
        pts = rng.uniform(-self.bounding_radius, self.bounding_radius, size=(n, self.dim))
        return np.array([self.nearest_boundary(t, p).point for p in pts])

    def outward_normal(self, t: float, x) -> np.ndarray:
        a = self.nearest_boundary(t, x)
        return -a.inward_hint


def _first_exit(hit, s_max, tol, inside_at_zero, n_scan=64):
    """Smallest ``s`` in ``(0, s_max]`` where ``hit(s)`` first becomes true (scan + bisection)."""
    grid = np.linspace(0.0, s_max, n_scan + 1)
    lo = 0.0
    for s in grid[1:]:
        if hit(s):
            hi = s
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if hit(mid):
                    hi = mid
                else:
                    lo = mid
            # interior search reports the last point still inside
            return lo if inside_at_zero else hi
        lo = s
    return None


def _search_directions(dim):
    if dim == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, 361)[:-1]
        return list(np.column_stack([np.cos(ang), np.sin(ang)]))
    rng = np.random.default_rng(12345)
    dirs = list(np.eye(dim)) + list(-np.eye(dim))
    extra = rng.normal(size=(400, dim))
    dirs += list(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    return dirs


class BuiltinDomain(TimeDomain):
    """Domain whose sections are balls or rounded boxes with a closed form."""

    def __init__(self, horizon, dim, bounding_radius, time_lipschitz):
        super().__init__(self._builtin_dist, horizon, dim, bounding_radius, time_lipschitz)

    def _phase(self, t):
        return math.sin(2.0 * math.pi * t / self.horizon)

    def section(self, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _builtin_dist(self, t, x):
        s = self.section(t)
        return kernels.section_distance(s.kind, s.center, s.radius, s.half, s.corner,
                                        np.asarray(x, float).reshape(1, -1))[0]

    def distance_batch(self, t, X):
        s = self.section(self.check_time(t))
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return kernels.section_distance(s.kind, s.center, s.radius, s.half, s.corner, X)

    def nearest_boundary(self, t, x):
        t = self.check_time(t)
        s = self.section(t)
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
        p, n = kernels.section_nearest(s.kind, s.center, s.radius, s.half, s.corner, x)
        return BoundaryAnchor(p[0], t, -n[0])

    def nearest_batch(self, t, X):
        s = self.section(self.check_time(t))
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return kernels.section_nearest(s.kind, s.center, s.radius, s.half, s.corner, X)

    def sample_boundary(self, t, n, rng):
        s = self.section(t)
        if s.kind == kernels.BALL:
            u = rng.normal(size=(n, self.dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            return s.center + s.radius * u
        pts = s.center + rng.uniform(-1.5, 1.5, size=(n, self.dim)) * s.half
        return self.nearest_batch(t, pts)[0]

    def sample_interior(self, t, n, rng, shrink=0.9):
        s = self.section(t)
        if s.kind == kernels.BALL:
            u = rng.normal(size=(n, self.dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            r = s.radius * shrink * rng.uniform(size=(n, 1)) ** (1.0 / self.dim)
            return s.center + r * u
        inner = (s.half - s.corner) * shrink
        return s.center + rng.uniform(-1.0, 1.0, size=(n, self.dim)) * inner


class MovingInterval(BuiltinDomain):
    """``D_t = (c(t) - r(t), c(t) + r(t))`` with ``r(t) = radius + amplitude sin(2 pi t / T)``
    and ``c(t) = center + shift sin(2 pi t / T)``."""

    name = "moving_interval"

    def __init__(self, radius=1.0, amplitude=0.25, horizon=1.0, center=0.0, shift=0.0):
        if abs(amplitude) >= radius:
            raise ValueError("amplitude must be smaller than radius")
        self.radius, self.amplitude = float(radius), float(amplitude)
        self.center, self.shift = float(center), float(shift)
        omega = 2 * math.pi / horizon
        super().__init__(horizon, 1, abs(center) + abs(shift) + radius + abs(amplitude),
                         omega * (abs(amplitude) + abs(shift)))

    def section(self, t):
        ph = self._phase(t)
        return Section(kernels.BALL, np.array([self.center + self.shift * ph]),
                       self.radius + self.amplitude * ph, np.zeros(1), 0.0)


class MovingDisk(BuiltinDomain):
    """Ball with radius ``radius + amplitude sin(2 pi t/T)`` and centre ``center + shift sin(2 pi t/T)``.

    Any dimension; the name follows the 2-D default.
    """

    name = "moving_disk"

    def __init__(self, radius=1.0, amplitude=0.0, horizon=1.0, center=(0.0, 0.0), shift=None):
        self.center = np.asarray(center, dtype=float)
        self.shift = np.zeros_like(self.center) if shift is None else np.asarray(shift, dtype=float)
        if abs(amplitude) >= radius:
            raise ValueError("amplitude must be smaller than radius")
        self.radius, self.amplitude = float(radius), float(amplitude)
        omega = 2 * math.pi / horizon
        reach = np.linalg.norm(self.center) + np.linalg.norm(self.shift) + radius + abs(amplitude)
        super().__init__(horizon, self.center.size, reach,
                         omega * (abs(amplitude) + np.linalg.norm(self.shift)))

    def section(self, t):
        ph = self._phase(t)
        return Section(kernels.BALL, self.center + self.shift * ph,
                       self.radius + self.amplitude * ph, np.zeros_like(self.center), 0.0)


class MovingBox(BuiltinDomain):
    """Axis-aligned box with rounded corners.

    Half-widths scale as ``half * (1 + amplitude sin(2 pi t/T))``; the corner
    radius stays fixed and must be below every half-width.
    """

    name = "moving_box"

    def __init__(self, half=(1.0, 0.6), corner=0.2, amplitude=0.1, horizon=1.0, center=None, shift=None):
        self.half = np.asarray(half, dtype=float)
        self.center = np.zeros_like(self.half) if center is None else np.asarray(center, dtype=float)
        self.shift = np.zeros_like(self.half) if shift is None else np.asarray(shift, dtype=float)
        self.corner, self.amplitude = float(corner), float(amplitude)
        if not 0.0 < corner < np.min(self.half) * (1 - abs(amplitude)):
            raise ValueError("corner radius must be positive and below every half-width")
        omega = 2 * math.pi / horizon
        reach = (np.linalg.norm(self.center) + np.linalg.norm(self.shift)
                 + np.linalg.norm(self.half) * (1 + abs(amplitude)))
        speed = omega * (abs(amplitude) * np.linalg.norm(self.half) + np.linalg.norm(self.shift))
        super().__init__(horizon, self.half.size, reach, speed)

    def section(self, t):
        ph = self._phase(t)
        return Section(kernels.RBOX, self.center + self.shift * ph,
                       0.0, self.half * (1 + self.amplitude * ph), self.corner)


class DirectionField:
    """Reflection direction ``gamma(t, x)`` with cone aperture ``rho``.

    ``gamma`` must be defined on all of ``[0, T] x R^d`` with norm at most one,
    and unit norm on and outside the boundary.
    """

    def __init__(self, gamma: Callable, rho: float):
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        self._gamma = gamma
        self.rho = float(rho)

    def __call__(self, t, x):
        return np.asarray(self._gamma(t, np.asarray(x, dtype=float)), dtype=float)

    gamma = __call__


class ObliqueField(DirectionField):
    """Inward normal of a built-in domain, turned by ``angle`` (radians, 2-D only).

    At the boundary point ``(1, 0)`` of the unit disk an angle of ``pi/6``
    gives ``(-cos 30deg, sin 30deg)``.
    """

    def __init__(self, domain: BuiltinDomain, angle: float = 0.0, rho: float = 0.5):
        if angle != 0.0 and domain.dim != 2:
            raise ValueError("oblique rotation is only defined in two dimensions")
        if not abs(angle) < math.pi / 2:
            raise ValueError("angle must be below 90 degrees")
        self.domain = domain
        self.angle = float(angle)
        self.cos_a, self.sin_a = math.cos(angle), math.sin(angle)
        super().__init__(self._oblique, rho)

    def _oblique(self, t, x):
        _, n = self.domain.nearest_batch(t, np.asarray(x, float).reshape(1, -1))
        return kernels.oblique_direction(n, self.cos_a, self.sin_a)[0]

    def batch(self, t, X):
        _, n = self.domain.nearest_batch(t, X)
        return kernels.oblique_direction(n, self.cos_a, self.sin_a)


def normal_field(domain, rho=0.5):
    return ObliqueField(domain, 0.0, rho)


def rotated_field(domain, angle=math.pi / 6, rho=0.4):
    return ObliqueField(domain, angle, rho)


def distance(domain: TimeDomain, t, x) -> float:
    return domain.distance(t, x)


def nearest_boundary(domain: TimeDomain, t, x) -> BoundaryAnchor:
    return domain.nearest_boundary(t, x)


# ---------------------------------------------------------------- validators

@dataclass
class ConeViolation:
    time: float
    anchor: np.ndarray
    xi: float
    point: np.ndarray


@dataclass
class ConeReport:
    n_anchors: int
    n_checked: int
    rho: float
    violations: list = field(default_factory=list)
    n_violations: int = 0
    norm_defects: int = 0

    @property
    def ok(self) -> bool:
        return self.n_violations == 0 and self.norm_defects == 0

    def rows(self):
        for v in self.violations:
            yield [v.time, *v.anchor, v.xi, *v.point]


def _ball_offsets(dim):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.arange(8) * np.pi / 4
        return np.column_stack([np.cos(ang), np.sin(ang)])
    eye = np.eye(dim)
    diag = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim)).reshape(dim, -1).T / math.sqrt(dim)
    return np.vstack([eye, -eye, diag])


def validate_cone_condition(domain: TimeDomain, field: DirectionField, n_samples: int,
                            seed: int = 0, n_xi: int = 8, max_report: int = 50) -> ConeReport:
    """Sample boundary anchors and test that every sampled point of
    ``B(x - xi gamma, xi rho)`` for ``xi`` in ``(0, rho]`` lies outside the section."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    rho = field.rho
    xis = rho * np.arange(1, n_xi + 1) / n_xi
    offsets = np.vstack([np.zeros((1, domain.dim)), _ball_offsets(domain.dim)])
    fractions = np.array([0.5, 0.999])
    times = rng.uniform(0.0, domain.horizon, size=n_samples)
    report = ConeReport(n_samples, 0, rho)
    for t in times:
        x = domain.sample_boundary(t, 1, rng)[0]
        g = field(t, x)
        if abs(np.linalg.norm(g) - 1.0) > 1e-9:
            report.norm_defects += 1
        for xi in xis:
            c = x - xi * g
            pts = [c] + [c + f * xi * rho * o for f in fractions for o in offsets[1:]]
            dists = domain.distance_batch(t, np.array(pts))
            report.n_checked += len(pts)
            for p, dval in zip(pts, dists):
                if dval <= 0.0:
                    report.n_violations += 1
                    if len(report.violations) < max_report:
                        report.violations.append(ConeViolation(float(t), x, float(xi), p))
    return report


@dataclass
class RegularityReport:
    max_quotient: float
    bound: Optional[float]
    worst_time: float
    worst_point: np.ndarray

    @property
    def flagged(self) -> bool:
        return self.bound is not None and self.max_quotient > self.bound * (1 + 1e-6) + 1e-9


def validate_time_regularity(domain: TimeDomain, x_samples: int, dt_probe: float,
                             seed: int = 0, points=None, bound=None) -> RegularityReport:
    """Largest finite-difference quotient ``|d(t+dt, x) - d(t, x)| / dt`` over a time grid."""
    if dt_probe <= 0:
        raise ValueError("dt_probe must be positive")
    rng = np.random.default_rng(seed)
    if points is None:
        R = domain.bounding_radius
        points = rng.uniform(-1.5 * R, 1.5 * R, size=(x_samples, domain.dim))
    points = np.asarray(points, dtype=float).reshape(-1, domain.dim)
    ts = np.arange(0.0, domain.horizon - dt_probe * (1 - 1e-12), dt_probe)
    best = (0.0, 0.0, points[0])
    cur = domain.distance_batch(ts[0], points)
    for t in ts:
        nxt = domain.distance_batch(t + dt_probe, points)
        q = np.abs(nxt - cur) / dt_probe
        i = int(np.argmax(q))
        if q[i] > best[0]:
            best = (float(q[i]), float(t), points[i])
        cur = nxt
    if bound is None:
        bound = domain.time_lipschitz
    return RegularityReport(best[0], bound, best[1], best[2])
