"""Measure-dependent drift and diffusion coefficients.

Coefficients take ``(t, x, mu)`` with ``mu`` an :class:`EmpiricalMeasure`.
Built-in presets are interaction kernels,

    b(t, x, mu) = self_term(t, x) + sum_j w_j pair_term(t, x, y_j),

which keeps the Lipschitz condition in ``(x, W2)`` checkable. The batch
methods evaluate a whole particle cloud against one shared measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class ShapeError(ValueError):
    """Array shapes do not match the coefficient dimensions."""


class EmpiricalMeasure:
    """Weighted point cloud ``sum_j w_j delta_{y_j}`` in ``R^d``."""

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("an empirical measure needs at least one atom")
        if weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (pts.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per atom")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()}, not 1")
        self.points = pts
        self.weights = w

    @classmethod
    def dirac(cls, x):
        return cls(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self):
        """Weighted mean; exactly rounded sums make it independent of atom order."""
        if self.is_uniform:
            return np.array([math.fsum(col) for col in self.points.T]) / self.n
        wp = self.weights[:, None] * self.points
        return np.array([math.fsum(col) for col in wp.T])

    def std(self):
        """Root of the total variance (population convention)."""
        c = self.points - self.mean()
        return float(np.sqrt(math.fsum(self.weights * np.sum(c * c, axis=1))))

    def mixture(self, other, lam):
        pts = np.vstack([self.points, other.points])
        w = np.concatenate([lam * self.weights, (1 - lam) * other.weights])
        w = w / w.sum()
        return EmpiricalMeasure(pts, w)

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim})"


def _as_envelope(L):
    if L is None:
        return None
    if callable(L):
        return L
    value = float(L)
    return lambda t: value


class CoefficientSet:
    """Drift ``b(t, x, mu) -> R^d`` and diffusion ``sigma(t, x, mu) -> R^{d x m}``.

    Parameters
    ----------
    drift, diffusion : callable
        Pointwise coefficient functions.
    dim, noise_dim : int
        State and noise dimensions.
    lipschitz_envelope : float or callable, optional
        Declared ``L(t)``.
    growth_constant : float
        Declared ``C`` in ``|b| + |sigma| <= C (1 + L(t))`` on the domain.
    """

    name = "custom"

    def __init__(self, drift: Callable, diffusion: Callable, dim: int, noise_dim: int,
                 lipschitz_envelope=None, growth_constant: float = 10.0, name: Optional[str] = None):
        self._drift = drift
        self._diffusion = diffusion
        self.dim = int(dim)
        self.noise_dim = int(noise_dim)
        self.lipschitz_envelope = _as_envelope(lipschitz_envelope)
        self.growth_constant = float(growth_constant)
        if name is not None:
            self.name = name

    def _check(self, x, mu):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ShapeError(f"point of shape {x.shape}, expected ({self.dim},)")
        if mu.dim != self.dim:
            raise ShapeError(f"measure in dimension {mu.dim}, expected {self.dim}")
        return x

    def drift(self, t, x, mu):
        x = self._check(x, mu)
        return np.asarray(self._drift(t, x, mu), dtype=float).reshape(self.dim)

    def diffusion(self, t, x, mu):
        x = self._check(x, mu)
        return np.asarray(self._diffusion(t, x, mu), dtype=float).reshape(self.dim, self.noise_dim)

    def drift_batch(self, t, X, mu):
        return np.array([self.drift(t, x, mu) for x in X]).reshape(len(X), self.dim)

    def diffusion_batch(self, t, X, mu):
        return np.array([self.diffusion(t, x, mu) for x in X]).reshape(len(X), self.dim, self.noise_dim)

    @property
    def interacting(self):
        """False only when the coefficients are known not to depend on the measure."""
        return True


class InteractionKernel:
    """``self_term(t, x) + integral of pair_term(t, x, y) mu(dy)``."""

    def __init__(self, self_term: Callable, pair_term: Optional[Callable] = None):
        self.self_term = self_term
        self.pair_term = pair_term

    def __call__(self, t, x, mu):
        out = np.asarray(self.self_term(t, x), dtype=float)
        if self.pair_term is None:
            return out
        acc = np.zeros_like(out)
        for y, w in zip(mu.points, mu.weights):
            acc = acc + w * np.asarray(self.pair_term(t, x, y), dtype=float)
        return out + acc


class KernelCoefficients(CoefficientSet):
    def __init__(self, drift: InteractionKernel, diffusion: InteractionKernel, dim, noise_dim,
                 lipschitz_envelope=None, growth_constant=10.0, name=None):
        super().__init__(drift, diffusion, dim, noise_dim, lipschitz_envelope, growth_constant, name)
        self.drift_kernel = drift
        self.diffusion_kernel = diffusion

    @property
    def interacting(self):
        return self.drift_kernel.pair_term is not None or self.diffusion_kernel.pair_term is not None


# ------------------------------------------------------------------ presets

class ZeroCoefficients(CoefficientSet):
    """``b = 0``, ``sigma = 0``."""

    name = "zero"

    def __init__(self, dim=1, noise_dim=None):
        m = dim if noise_dim is None else noise_dim
        super().__init__(self._b, self._s, dim, m, 0.0, 1.0)

    def _b(self, t, x, mu):
        return np.zeros(self.dim)

    def _s(self, t, x, mu):
        return np.zeros((self.dim, self.noise_dim))

    def drift_batch(self, t, X, mu):
        return np.zeros((len(X), self.dim))

    def diffusion_batch(self, t, X, mu):
        return np.zeros((len(X), self.dim, self.noise_dim))

    @property
    def interacting(self):
        return False


class ConstantCoefficients(CoefficientSet):
    """Constant drift vector and diffusion matrix; ``drift=0, sigma=1`` is free Brownian motion."""

    name = "constant"

    def __init__(self, drift=0.0, sigma=1.0, dim=1):
        self.b0 = np.broadcast_to(np.asarray(drift, dtype=float), (dim,)).copy()
        s = np.asarray(sigma, dtype=float)
        self.s0 = s * np.eye(dim) if s.ndim == 0 else s.reshape(dim, -1)
        super().__init__(lambda t, x, mu: self.b0, lambda t, x, mu: self.s0, dim, self.s0.shape[1], 0.0,
                         growth_constant=float(np.linalg.norm(self.b0) + np.linalg.norm(self.s0)) + 1.0)

    def drift_batch(self, t, X, mu):
        return np.broadcast_to(self.b0, (len(X), self.dim)).copy()

    def diffusion_batch(self, t, X, mu):
        return np.broadcast_to(self.s0, (len(X), self.dim, self.noise_dim)).copy()

    @property
    def interacting(self):
        return False


class MeanReversion(CoefficientSet):
    """``b(t, x, mu) = rate (mean(mu) - x)``, ``sigma = sigma I``.

    Kernel form: ``self_term = -rate x``, ``pair_term = rate y``.
    """

    name = "mean_reversion"

    def __init__(self, dim=1, rate=1.0, sigma=1.0, envelope=2.0):
        self.rate, self.sigma = float(rate), float(sigma)
        super().__init__(self._b, self._s, dim, dim, envelope,
                         growth_constant=2.0 * abs(rate) * 10.0 + abs(sigma) * np.sqrt(dim))

    def _b(self, t, x, mu):
        return self.rate * (mu.mean() - x)

    def _s(self, t, x, mu):
        return self.sigma * np.eye(self.dim)

    def drift_batch(self, t, X, mu):
        return self.rate * (mu.mean() - X)

    def diffusion_batch(self, t, X, mu):
        return np.broadcast_to(self.sigma * np.eye(self.dim), (len(X), self.dim, self.dim)).copy()


class StdVol(CoefficientSet):
    """Mean reversion with volatility ``base (1 + std(mu))``."""

    name = "std_vol"

    def __init__(self, dim=1, rate=1.0, base=0.5, envelope=2.0):
        self.rate, self.base = float(rate), float(base)
        super().__init__(self._b, self._s, dim, dim, envelope, growth_constant=10.0)

    def _b(self, t, x, mu):
        return self.rate * (mu.mean() - x)

    def _s(self, t, x, mu):
        return self.base * (1.0 + mu.std()) * np.eye(self.dim)

    def drift_batch(self, t, X, mu):
        return self.rate * (mu.mean() - X)

    def diffusion_batch(self, t, X, mu):
        s = self.base * (1.0 + mu.std())
        return np.broadcast_to(s * np.eye(self.dim), (len(X), self.dim, self.dim)).copy()


PRESETS = {
    "zero": ZeroCoefficients,
    "constant": ConstantCoefficients,
    "brownian": lambda dim=1, sigma=1.0: ConstantCoefficients(0.0, sigma, dim),
    "mean_reversion": MeanReversion,
    "std_vol": StdVol,
}


def preset(name, **params) -> CoefficientSet:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown coefficient preset {name!r}") from None
    cs = factory(**params)
    cs.name = name
    return cs


def eval_drift(cs: CoefficientSet, t, x, mu: EmpiricalMeasure):
    return cs.drift(t, x, mu)


def eval_diffusion(cs: CoefficientSet, t, x, mu: EmpiricalMeasure):
    return cs.diffusion(t, x, mu)


# ------------------------------------------------------------------ probes

@dataclass
class LipschitzReport:
    scales: list
    max_quotient: list
    max_ratio: list       # quotient / L(t), per scale
    tol: float

    @property
    def worst_ratio(self):
        return max(self.max_ratio)

    @property
    def passed(self):
        return self.worst_ratio <= 1.0 + self.tol


def _sample_box(rng, domain, t, n, scale):
    if scale == 1.0 and hasattr(domain, "sample_interior"):
        return domain.sample_interior(t, n, rng, shrink=1.0)
    R = domain.bounding_radius * scale
    return rng.uniform(-R, R, size=(n, domain.dim))


def lipschitz_probe(cs: CoefficientSet, domain, n_pairs: int, rng_seed: int = 0,
                    scales=(1.0, 2.0, 4.0, 8.0), n_atoms: int = 8, tol: float = 1e-6) -> LipschitzReport:
    """Sampled ``(|db| + |dsigma|) / (|x - y| + W2(mu, nu))`` against ``L(t)``.

    The first scale samples inside the sections; the following ones widen the
    sampling box so that super-linear coefficients show growing quotients.
    """
    from .transport import wasserstein2

    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    if cs.lipschitz_envelope is None:
        raise ValueError("coefficient set declares no Lipschitz envelope")
    rng = np.random.default_rng(rng_seed)
    out_q, out_r = [], []
    for scale in scales:
        best_q = best_r = 0.0
        for _ in range(n_pairs):
            t = rng.uniform(0.0, domain.horizon)
            x, y = _sample_box(rng, domain, t, 2, scale)
            atoms = _sample_box(rng, domain, t, n_atoms, scale)
            mu = EmpiricalMeasure(atoms)
            mode = rng.integers(3)
            if mode == 0:
                nu = mu
            else:
                shift = rng.normal(scale=0.1 * domain.bounding_radius, size=atoms.shape)
                nu = EmpiricalMeasure(atoms + shift)
                if mode == 1:
                    y = x
            den = np.linalg.norm(x - y) + wasserstein2(mu, nu).distance
            if den == 0.0:
                continue
            num = (np.linalg.norm(cs.drift(t, x, mu) - cs.drift(t, y, nu))
                   + np.linalg.norm(cs.diffusion(t, x, mu) - cs.diffusion(t, y, nu)))
            q = num / den
            L = cs.lipschitz_envelope(t)
            r = q / L if L > 0 else (np.inf if q > 0 else 0.0)
            best_q, best_r = max(best_q, q), max(best_r, r)
        out_q.append(best_q)
        out_r.append(best_r)
    return LipschitzReport(list(scales), out_q, out_r, tol)


@dataclass
class GrowthReport:
    max_ratio: float
    constant: float

    @property
    def passed(self):
        return self.max_ratio <= self.constant


def growth_check(cs: CoefficientSet, domain, n_samples: int = 1000, rng_seed: int = 0,
                 n_atoms: int = 8) -> GrowthReport:
    """``(|b| + |sigma|) / (1 + L(t))`` over points and measures inside the sections."""
    rng = np.random.default_rng(rng_seed)
    L = cs.lipschitz_envelope or (lambda t: 0.0)
    worst = 0.0
    for _ in range(n_samples):
        t = rng.uniform(0.0, domain.horizon)
        pts = _sample_box(rng, domain, t, n_atoms + 1, 1.0)
        mu = EmpiricalMeasure(pts[1:])
        val = np.linalg.norm(cs.drift(t, pts[0], mu)) + np.linalg.norm(cs.diffusion(t, pts[0], mu))
        worst = max(worst, val / (1.0 + L(t)))
    return GrowthReport(worst, cs.growth_constant)
