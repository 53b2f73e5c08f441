"""Interacting particle systems, frozen-law copies and the Picard iteration on measure flows."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .coefficients import EmpiricalMeasure
from .reflection import PathBundle, ReflectedPath, integrate
from .transport import w2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(master_seed: int, purpose: str) -> int:
    """Sub-seed for a named purpose, e.g. ``"chaos/n=32/rep=3"``."""
    digest = hashlib.sha256(f"{int(master_seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def worker_count(default: int = 1) -> int:
    """Worker count from ``MVREFLECT_WORKERS``; results never depend on it."""
    try:
        return max(1, int(os.environ.get("MVREFLECT_WORKERS", default)))
    except ValueError:
        return default


class NoiseDriver:
    """Counter-based Gaussian increments.

    The increment of particle ``i`` at step ``k``, component ``j`` is a pure
    function of ``(master_seed, i, k, j)``: the ``(k m + j)``-th output of a
    SplitMix64 stream keyed by the seed and the particle, mapped to a normal
    through the inverse CDF and scaled by ``sqrt(dt_k)``. Evaluation order and
    worker count therefore cannot change the result.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        with np.errstate(over="ignore"):
            self._key = _mix(np.uint64(self.master_seed % 2**64) + _GOLDEN)

    def normals(self, particles, n_steps: int, m: int) -> np.ndarray:
        ids = np.asarray(particles, dtype=np.uint64).reshape(-1, 1)
        with np.errstate(over="ignore"):
            pk = _mix(self._key ^ _mix(ids * _GOLDEN + np.uint64(1)))
            counter = np.arange(1, n_steps * m + 1, dtype=np.uint64).reshape(1, -1)
            bits = _mix(pk + counter * _GOLDEN)
        u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(u).reshape(-1, n_steps, m)

    def increments(self, particles, grid, m: int) -> np.ndarray:
        """``(n, K, m)`` array of ``N(0, dt_k I_m)`` increments."""
        grid = np.asarray(grid, dtype=float)
        dt = np.diff(grid)
        return self.normals(particles, dt.size, m) * np.sqrt(dt)[None, :, None]

    def stream(self, i: int, grid, m: int) -> np.ndarray:
        return self.increments([i], grid, m)[0]


class MeasureFlow:
    """Time-indexed empirical measures on a grid (uniform weights)."""

    def __init__(self, grid, points):
        self.grid = np.asarray(grid, dtype=float)
        self.points = np.asarray(points, dtype=float)  # (K+1, n, d)
        if self.points.shape[0] != self.grid.size:
            raise ValueError("one measure per grid node is required")

    @classmethod
    def dirac(cls, path: ReflectedPath):
        return cls(path.grid, path.x[:, None, :])

    def __len__(self):
        return self.grid.size

    def __getitem__(self, k) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.points[k])

    def check_containment(self, domain) -> float:
        """Largest distance of any atom to its section."""
        return max(float(np.max(domain.distance_batch(t, pts))) for t, pts in zip(self.grid, self.points))

    def sup_w2(self, other: "MeasureFlow", **kw) -> float:
        if self.grid.size != other.grid.size:
            raise ValueError("flows on different grids")
        return max(w2(self[k], other[k], **kw) for k in range(self.grid.size))


@dataclass
class ParticleEnsemble:
    grid: np.ndarray
    x: np.ndarray           # (n, K+1, d)
    local_time: np.ndarray  # (n, K+1)
    reflector: np.ndarray   # (n, K+1, d)
    xi: np.ndarray          # (n, K)
    ids: np.ndarray
    noise_scale: float = 1.0

    @classmethod
    def from_bundle(cls, bundle: PathBundle, ids, noise_scale):
        return cls(bundle.grid, bundle.x, bundle.local_time, bundle.reflector, bundle.xi,
                   np.asarray(ids), float(noise_scale))

    @property
    def n(self):
        return self.x.shape[0]

    def flow(self) -> MeasureFlow:
        return MeasureFlow(self.grid, np.swapaxes(self.x, 0, 1))

    def measure(self, k) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.x[:, k])

    def path(self, i) -> ReflectedPath:
        return ReflectedPath(self.grid, self.x[i], self.local_time[i], self.reflector[i], self.xi[i])


def initial_points(x0, n: int, dim: int, rng_seed: int = 0) -> np.ndarray:
    """Starting cloud from a point, an ``(n, d)`` array or a sampler ``f(n, rng)``."""
    if callable(x0):
        pts = np.asarray(x0(n, np.random.default_rng(rng_seed)), dtype=float)
    else:
        pts = np.asarray(x0, dtype=float)
        if pts.size == dim:
            pts = np.broadcast_to(pts.reshape(1, dim), (n, dim))
    pts = pts.reshape(-1, dim)
    if pts.shape[0] != n:
        raise ValueError(f"expected {n} starting points, got {pts.shape[0]}")
    return np.array(pts)


def _ids(n, ids):
    return np.arange(n) if ids is None else np.asarray(ids)


def simulate_interacting(domain, field, cs, n: int, x0_sampler, grid, driver: NoiseDriver,
                         noise_scale: float = 1.0, ids=None) -> ParticleEnsemble:
    """n-particle system; each step uses the empirical measure of the current positions."""
    if n < 1:
        raise ValueError("n must be at least 1")
    ids = _ids(n, ids)
    X0 = initial_points(x0_sampler, n, domain.dim, derive_seed(driver.master_seed, "x0"))
    noise = driver.increments(ids, grid, cs.noise_dim)
    bundle = integrate(domain, field, cs, X0, grid, noise, noise_scale, lambda k, X: EmpiricalMeasure(X))
    return ParticleEnsemble.from_bundle(bundle, ids, noise_scale)


def simulate_frozen_law(domain, field, cs, x0, flow: MeasureFlow, grid, driver: NoiseDriver,
                        noise_scale: float, n_copies: int, ids=None) -> ParticleEnsemble:
    """Independent copies of the reflected SDE with the measure frozen to ``flow``."""
    grid = np.asarray(grid, dtype=float)
    if len(flow) != grid.size:
        raise ValueError("flow and grid sizes differ")
    ids = _ids(n_copies, ids)
    X0 = initial_points(x0, n_copies, domain.dim, derive_seed(driver.master_seed, "x0"))
    noise = driver.increments(ids, grid, cs.noise_dim)
    bundle = integrate(domain, field, cs, X0, grid, noise, noise_scale, lambda k, X: flow[k])
    return ParticleEnsemble.from_bundle(bundle, ids, noise_scale)


def drift_only_flow(domain, field, cs, x0, grid, n_copies, rng_seed=0) -> MeasureFlow:
    """Flow of the noise-free paths, each copy with its own running Dirac law."""
    X0 = initial_points(x0, n_copies, domain.dim, rng_seed)
    starts, inverse = np.unique(X0, axis=0, return_inverse=True)
    paths = []
    for s in starts:
        b = integrate(domain, field, cs, s[None], grid, None, 0.0, lambda k, X: EmpiricalMeasure(X))
        paths.append(b.x[0])
    paths = np.asarray(paths)[np.asarray(inverse).ravel()]
    return MeasureFlow(grid, np.swapaxes(paths, 0, 1))


@dataclass
class PicardHistory:
    distances: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.distances)

    def ratios(self):
        d = np.asarray(self.distances)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


class FixedPointError(RuntimeError):
    def __init__(self, message, history: PicardHistory, flow: MeasureFlow):
        super().__init__(message)
        self.history = history
        self.flow = flow


def picard_iterate(domain, field, cs, x0, grid, driver: NoiseDriver, noise_scale: float, n_copies: int,
                   max_iters: int = 20, tol: float = 1e-2):
    """Fixed point of ``mu -> law of the frozen-``mu`` solution`` by iteration.

    All iterations reuse the same noise streams, so successive flows differ
    only through the measure argument. Stops once the sup over the grid of
    ``W2(mu^k_t, mu^{k+1}_t)`` drops below ``tol``.
    """
    if max_iters < 1 or tol <= 0:
        raise ValueError("max_iters >= 1 and tol > 0 are required")
    grid = np.asarray(grid, dtype=float)
    flow = drift_only_flow(domain, field, cs, x0, grid, n_copies, derive_seed(driver.master_seed, "x0"))
    history = PicardHistory()
    for _ in range(max_iters):
        nxt = simulate_frozen_law(domain, field, cs, x0, flow, grid, driver, noise_scale, n_copies).flow()
        history.distances.append(flow.sup_w2(nxt))
        flow = nxt
        if history.distances[-1] < tol:
            history.converged = True
            return flow, history
    raise FixedPointError(f"no fixed point within {max_iters} iterations", history, flow)


@dataclass
class ChaosTable:
    n: list
    mean_sq_dist: list
    stderr: list
    samples: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.n, self.mean_sq_dist, self.stderr))


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chaos_experiment(domain, field, cs, x0_sampler, grid, n_list: Sequence[int], n_rep: int,
                     master_seed: int, noise_scale: float = 1.0, n_ref: Optional[int] = None,
                     reference: Optional[MeasureFlow] = None, workers: Optional[int] = None,
                     rep_offset: int = 0) -> ChaosTable:
    """Squared grid-sup W2 distance between n-particle empirical flows and a reference flow.

    The reference is an independent interacting run with ``4 max(n_list)``
    particles unless a flow is passed in.
    """
    n_list = list(n_list)
    if sorted(n_list) != n_list:
        raise ValueError("n_list must be ascending")
    workers = worker_count() if workers is None else workers
    if reference is None:
        n_ref = 4 * max(n_list) if n_ref is None else n_ref
        ref_driver = NoiseDriver(derive_seed(master_seed, "chaos/ref"))
        reference = simulate_interacting(domain, field, cs, n_ref, x0_sampler, grid, ref_driver,
                                         noise_scale).flow()

    def one(cell):
        n, r = cell
        drv = NoiseDriver(derive_seed(master_seed, f"chaos/n={n}/rep={r}"))
        flow = simulate_interacting(domain, field, cs, n, x0_sampler, grid, drv, noise_scale).flow()
        return flow.sup_w2(reference) ** 2

    cells = [(n, r) for n in n_list for r in range(rep_offset, rep_offset + n_rep)]
    values = _map(one, cells, workers)
    table = ChaosTable([], [], [])
    for i, n in enumerate(n_list):
        v = np.asarray(values[i * n_rep:(i + 1) * n_rep])
        table.n.append(n)
        table.mean_sq_dist.append(float(v.mean()))
        table.stderr.append(float(v.std(ddof=1) / np.sqrt(n_rep)) if n_rep > 1 else float("nan"))
        table.samples[n] = v
    return table
