"""Small-noise limit, skeleton equation, rate functional and large-deviation diagnostics.

Controls are piecewise constant on the simulation grid. The skeleton always
reads the coefficients against the Dirac flow of the zero-noise limit ``psi``;
the controlled small-noise process always reads them against a flow passed in
explicitly, never against its own empirical law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import beta

from .coefficients import EmpiricalMeasure
from .ensemble import (MeasureFlow, NoiseDriver, ParticleEnsemble, derive_seed, simulate_frozen_law,
                       simulate_interacting)
from .reflection import ReflectedPath, integrate


# ------------------------------------------------------------------ controls

@dataclass
class Control:
    grid: np.ndarray
    values: np.ndarray  # (K, m), value on [t_k, t_{k+1})

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size - 1, -1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @classmethod
    def zeros(cls, grid, m=1):
        return cls(grid, np.zeros((len(grid) - 1, m)))

    @classmethod
    def constant(cls, grid, value, m=None):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if m is not None and v.size == 1:
            v = np.full(m, v[0])
        return cls(grid, np.tile(v, (len(grid) - 1, 1)))

    @classmethod
    def from_function(cls, grid, f: Callable, m=1, nodes=8):
        """Cell averages of ``f(t)`` by Gauss-Legendre quadrature."""
        grid = np.asarray(grid, dtype=float)
        z, w = np.polynomial.legendre.leggauss(nodes)
        vals = np.empty((grid.size - 1, m))
        for k in range(grid.size - 1):
            a, b = grid[k], grid[k + 1]
            ts = 0.5 * (b - a) * z + 0.5 * (a + b)
            fs = np.array([np.atleast_1d(f(t)) for t in ts]).reshape(nodes, m)
            vals[k] = 0.5 * (w @ fs)
        return cls(grid, vals)

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def energy(self):
        return rate_functional(self)

    def __add__(self, other):
        return Control(self.grid, self.values + other.values)

    def scaled(self, c):
        return Control(self.grid, c * self.values)

    def split(self, k):
        """Controls on ``[t_0, t_k]`` and ``[t_k, t_K]``."""
        return Control(self.grid[:k + 1], self.values[:k]), Control(self.grid[k:], self.values[k:])


def rate_functional(h: Control) -> float:
    """``1/2 sum_k |h_k|^2 dt_k``."""
    dt = np.diff(h.grid)
    return 0.5 * math.fsum(np.sum(h.values * h.values, axis=1) * dt)


def oscillatory_sequence(h: Control, ns: Sequence[int], amplitude: float = 1.0):
    """``h + amplitude sin(2 pi n t)`` in every control component, as exact cell averages."""
    g = h.grid
    dt = np.diff(g)
    out = []
    for n in ns:
        w = 2 * np.pi * n
        avg = (np.cos(w * g[:-1]) - np.cos(w * g[1:])) / (w * dt)
        out.append(Control(g, h.values + amplitude * avg[:, None]))
    return out


# ------------------------------------------------------------------ deterministic paths

def _dirac_law(k, X):
    return EmpiricalMeasure(X)


def solve_limit_ode(domain, field, cs, x0, grid) -> ReflectedPath:
    """Zero-noise limit ``psi``: drift evaluated against the running Dirac ``delta_psi``."""
    bundle = integrate(domain, field, cs, np.atleast_1d(x0).reshape(1, -1), grid, None, 0.0, _dirac_law)
    return ReflectedPath.from_bundle(bundle)


def skeleton_batch(domain, field, cs, x0, psi: ReflectedPath, H) -> np.ndarray:
    """Skeleton paths for a stack of controls ``H`` of shape ``(P, K, m)``; returns ``(P, K+1, d)``."""
    H = np.asarray(H, dtype=float)
    X0 = np.broadcast_to(np.atleast_1d(x0).reshape(1, -1), (H.shape[0], domain.dim))
    frozen = psi.x
    bundle = integrate(domain, field, cs, X0, psi.grid, None, 0.0,
                       lambda k, X: EmpiricalMeasure(frozen[k:k + 1]), H)
    return bundle.x


def solve_skeleton(domain, field, cs, x0, psi: ReflectedPath, h: Control) -> ReflectedPath:
    """Controlled reflected ODE with the measure frozen at ``delta_{psi_t}``."""
    if h.grid.size != psi.grid.size or not np.allclose(h.grid, psi.grid, rtol=0, atol=1e-14):
        raise ValueError("control and limit path live on different grids")
    if h.m != cs.noise_dim:
        raise ValueError(f"control has {h.m} components, noise has {cs.noise_dim}")
    frozen = psi.x
    bundle = integrate(domain, field, cs, np.atleast_1d(x0).reshape(1, -1), psi.grid, None, 0.0,
                       lambda k, X: EmpiricalMeasure(frozen[k:k + 1]), h.values)
    return ReflectedPath.from_bundle(bundle)


# ------------------------------------------------------------------ rate of a path

@dataclass
class PathTarget:
    path: np.ndarray  # (K+1, d)

    def residuals(self, Y):
        dev = np.linalg.norm(Y - self.path[None], axis=2)
        return np.max(dev, axis=1), np.mean(dev[:, 1:] ** 2, axis=1)


@dataclass
class TerminalTarget:
    point: np.ndarray
    radius: float = 0.0

    def residuals(self, Y):
        gap = np.maximum(np.linalg.norm(Y[:, -1] - np.atleast_1d(self.point), axis=1) - self.radius, 0.0)
        return gap, gap ** 2


@dataclass
class RateConfig:
    penalties: tuple = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
    feas_tol: float = 1e-3
    energy_ceiling: float = 1e3
    maxiter: int = 300
    fd_step: float = 1e-6


@dataclass
class RateValue:
    value: float
    infinite: bool
    witness: Optional[Control]
    residual: float
    levels: list = field(default_factory=list)


class OptimizationError(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def rate_of_path(domain, field, cs, x0, psi: ReflectedPath, target, config: Optional[RateConfig] = None) -> RateValue:
    """Upper estimate of the rate ``I`` at a path or terminal set.

    Minimises ``energy(h) + lam * penalty(Y^h)`` over piecewise-constant
    controls for an increasing sequence of ``lam`` (warm-started), with
    central-difference gradients computed as one batched skeleton solve. The
    result is flagged infinite when the sup-norm residual cannot be brought
    below ``feas_tol``.
    """
    cfg = config or RateConfig()
    grid = psi.grid
    K, m = grid.size - 1, cs.noise_dim
    dt = np.diff(grid)
    n_par = K * m

    def solve(H):
        return skeleton_batch(domain, field, cs, x0, psi, H)

    h0 = np.zeros(n_par)
    sup0, _ = target.residuals(solve(h0.reshape(1, K, m)))
    if sup0[0] <= cfg.feas_tol:
        # zero control is feasible and has zero energy
        return RateValue(0.0, False, Control.zeros(grid, m), float(sup0[0]))

    eye = np.eye(n_par) * cfg.fd_step
    h = h0
    levels = []
    for lam in cfg.penalties:
        def objective(v, lam=lam):
            H = np.vstack([v, v + eye, v - eye]).reshape(-1, K, m)
            _, pen = target.residuals(solve(H))
            vv = v.reshape(K, m)
            energy = 0.5 * float(np.sum(np.sum(vv * vv, axis=1) * dt))
            grad_e = (vv * dt[:, None]).ravel()
            grad_p = (pen[1:n_par + 1] - pen[n_par + 1:]) / (2 * cfg.fd_step)
            return energy + lam * pen[0], grad_e + lam * grad_p

        res = minimize(objective, h, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.maxiter, "gtol": 1e-12, "ftol": 1e-15})
        h = res.x
        energy = rate_functional(Control(grid, h.reshape(K, m)))
        sup, _ = target.residuals(solve(h.reshape(1, K, m)))
        levels.append((lam, energy, float(sup[0])))
        if energy > cfg.energy_ceiling:
            raise OptimizationError(f"energy {energy:.3g} above ceiling at penalty {lam:g}", levels)
    residual = levels[-1][2]
    if residual > cfg.feas_tol:
        return RateValue(math.inf, True, None, residual, levels)
    witness = Control(grid, h.reshape(K, m))
    return RateValue(witness.energy, False, witness, residual, levels)


# ------------------------------------------------------------------ small noise

@dataclass
class SmallNoiseRun:
    ensemble: ParticleEnsemble
    flow: MeasureFlow
    epsilon: float
    noise_scale: float


def simulate_small_noise(domain, field, cs, x0, grid, driver: NoiseDriver, epsilon: float,
                         n_copies: int) -> SmallNoiseRun:
    """Mean-field system with noise ``sqrt(epsilon) sigma dW`` via ``n_copies`` interacting particles."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    scale = math.sqrt(epsilon)
    ens = simulate_interacting(domain, field, cs, n_copies, x0, grid, driver, scale)
    return SmallNoiseRun(ens, ens.flow(), float(epsilon), scale)


def simulate_controlled(domain, field, cs, x0, grid, driver: NoiseDriver, epsilon: float, h: Control,
                        mv_flow: MeasureFlow, n_copies: int, ids=None) -> ParticleEnsemble:
    """Controlled process: drift ``b + sigma h``, noise ``sqrt(eps) sigma dW``, law frozen to ``mv_flow``."""
    grid = np.asarray(grid, dtype=float)
    if len(mv_flow) != grid.size or not np.allclose(mv_flow.grid, grid, rtol=0, atol=1e-14):
        raise ValueError("flow and grid do not match")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    scale = math.sqrt(epsilon)
    ids = np.arange(n_copies) if ids is None else np.asarray(ids)
    from .ensemble import initial_points
    X0 = initial_points(x0, n_copies, domain.dim, derive_seed(driver.master_seed, "x0"))
    noise = driver.increments(ids, grid, cs.noise_dim)
    bundle = integrate(domain, field, cs, X0, grid, noise, scale, lambda k, X: mv_flow[k], h.values)
    return ParticleEnsemble.from_bundle(bundle, ids, scale)


# ------------------------------------------------------------------ reports

def _sup_dev(x, path):
    return np.max(np.linalg.norm(x - path[None], axis=2), axis=1)


def _nonincreasing(values, errors, k=2.0):
    ok = True
    for i in range(len(values) - 1):
        slack = k * math.hypot(errors[i], errors[i + 1])
        ok &= values[i + 1] <= values[i] + slack
    return bool(ok)


@dataclass
class LDP1Report:
    distances: list
    tol: float

    @property
    def decreasing(self):
        d = self.distances
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def converged(self):
        return self.decreasing and self.distances[-1] < self.tol


def check_ldp1(domain, field, cs, x0, psi, h_sequence: Sequence[Control], h_limit: Control,
               tol: float = 1e-2) -> LDP1Report:
    """Sup-norm distances between skeletons of ``h_sequence`` and of ``h_limit``."""
    ref = solve_skeleton(domain, field, cs, x0, psi, h_limit).x
    H = np.stack([h.values for h in h_sequence])
    Y = skeleton_batch(domain, field, cs, x0, psi, H)
    return LDP1Report([float(v) for v in _sup_dev(Y, ref)], tol)


@dataclass
class LDP2Report:
    epsilons: list
    probabilities: list
    stderr: list

    @property
    def nonincreasing(self):
        return _nonincreasing(self.probabilities, self.stderr)


def check_ldp2(domain, field, cs, x0, grid, driver, epsilon_list, h: Control, theta: float,
               n_copies: int) -> LDP2Report:
    """Empirical ``P(sup_t |Z^eps - Y^h| > theta)`` along a decreasing list of epsilons."""
    eps = list(epsilon_list)
    if sorted(eps, reverse=True) != eps:
        raise ValueError("epsilon_list must be descending")
    psi = solve_limit_ode(domain, field, cs, x0, grid)
    Y = solve_skeleton(domain, field, cs, x0, psi, h).x
    rep = LDP2Report([], [], [])
    for e in eps:
        run = simulate_small_noise(domain, field, cs, x0, grid, driver, e, n_copies)
        Z = simulate_controlled(domain, field, cs, x0, grid, driver, e, h, run.flow, n_copies)
        p = float(np.mean(_sup_dev(Z.x, Y) > theta))
        rep.epsilons.append(e)
        rep.probabilities.append(p)
        rep.stderr.append(math.sqrt(p * (1 - p) / n_copies))
    return rep


@dataclass
class LimitLawReport:
    epsilons: list
    statistic: list
    stderr: list

    @property
    def nonincreasing(self):
        return _nonincreasing(self.statistic, self.stderr)

    @property
    def decreasing(self):
        s = self.statistic
        return all(b < a for a, b in zip(s, s[1:]))


def _sup_w2_to_path(x, path):
    """``sup_t W2(empirical law at t, delta_{path_t})`` for an ``(n, K+1, d)`` cloud."""
    sq = np.sum((x - path[None]) ** 2, axis=2)
    return float(np.sqrt(np.max(np.mean(sq, axis=0))))


def check_limit_law(domain, field, cs, x0, grid, driver, epsilon_list, n_copies: int,
                    n_boot: int = 200) -> LimitLawReport:
    """``sup_t W2(mu^eps_t, delta_{psi_t})`` per epsilon, with bootstrap standard errors."""
    eps = list(epsilon_list)
    if sorted(eps, reverse=True) != eps:
        raise ValueError("epsilon_list must be descending")
    psi = solve_limit_ode(domain, field, cs, x0, grid)
    rep = LimitLawReport([], [], [])
    rng = np.random.default_rng(derive_seed(driver.master_seed, "limit-law/bootstrap"))
    for e in eps:
        x = simulate_small_noise(domain, field, cs, x0, grid, driver, e, n_copies).ensemble.x
        stat = _sup_w2_to_path(x, psi.x)
        boots = [_sup_w2_to_path(x[rng.integers(0, x.shape[0], x.shape[0])], psi.x) for _ in range(n_boot)]
        rep.epsilons.append(e)
        rep.statistic.append(stat)
        rep.stderr.append(float(np.std(boots, ddof=1)))
    return rep


# ------------------------------------------------------------------ rare events

@dataclass
class Event:
    """``functional(x, grid) > threshold`` with ``x`` of shape ``(n, K+1, d)``."""

    functional: Callable
    threshold: float

    def hits(self, x, grid):
        return np.asarray(self.functional(x, grid)) > self.threshold


def terminal_displacement(x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return lambda x, grid: np.linalg.norm(x[:, -1] - x0, axis=1)


def sup_deviation(path):
    path = np.asarray(path, dtype=float)
    return lambda x, grid: _sup_dev(x, path)


@dataclass
class RareEventRow:
    epsilon: float
    hits: int
    n: int
    p_hat: float
    ci_low: float
    ci_high: float

    @property
    def one_sided(self):
        return self.hits == 0

    @property
    def exponent(self):
        """``-eps log p_hat``; ``inf`` without hits."""
        return -self.epsilon * math.log(self.p_hat) if self.hits else math.inf

    @property
    def exponent_bounds(self):
        lo = -self.epsilon * math.log(self.ci_high) if self.ci_high > 0 else math.inf
        hi = -self.epsilon * math.log(self.ci_low) if self.ci_low > 0 else math.inf
        return lo, hi


def clopper_pearson(hits, n, confidence=0.95):
    a = 1 - confidence
    lo = 0.0 if hits == 0 else float(beta.ppf(a / 2, hits, n - hits + 1))
    hi = 1.0 if hits == n else float(beta.ppf(1 - a / 2, hits + 1, n - hits))
    return lo, hi


def estimate_rare_event(domain, field, cs, x0, grid, driver: NoiseDriver, epsilon_list, event: Event,
                        n_copies: int, flow_copies: int = 2048, chunk: int = 100_000,
                        confidence: float = 0.95) -> list:
    """Crude Monte Carlo of ``P(event)`` per epsilon with exact binomial intervals.

    The mean-field flow at each epsilon comes from an interacting run with
    ``flow_copies`` particles; the ``n_copies`` event samples are independent
    copies driven by that frozen flow, processed in chunks.
    """
    grid = np.asarray(grid, dtype=float)
    rows = []
    for e in epsilon_list:
        scale = math.sqrt(e)
        if cs.interacting:
            flow_drv = NoiseDriver(derive_seed(driver.master_seed, f"rare/flow/eps={e!r}"))
            flow = simulate_small_noise(domain, field, cs, x0, grid, flow_drv, e,
                                        min(n_copies, flow_copies)).flow
        else:
            flow = MeasureFlow.dirac(solve_limit_ode(domain, field, cs, x0, grid))
        hits = 0
        for start in range(0, n_copies, chunk):
            ids = np.arange(start, min(start + chunk, n_copies))
            ens = simulate_frozen_law(domain, field, cs, x0, flow, grid, driver, scale, ids.size, ids=ids)
            hits += int(np.count_nonzero(event.hits(ens.x, grid)))
        lo, hi = clopper_pearson(hits, n_copies, confidence)
        rows.append(RareEventRow(float(e), hits, n_copies, hits / n_copies, lo, hi))
    return rows
