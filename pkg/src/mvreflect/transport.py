"""Wasserstein-2 distances between empirical measures and between path ensembles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from . import kernels
from .coefficients import EmpiricalMeasure

EXACT_CAP = 1024
N_PROJECTIONS = 256


@dataclass
class CouplingPlan:
    matrix: np.ndarray
    cost: float

    def marginals(self):
        return self.matrix.sum(axis=1), self.matrix.sum(axis=0)


@dataclass
class W2Result:
    distance: float
    plan: Optional[CouplingPlan]
    exact: bool
    method: str

    def __iter__(self):
        yield self.distance
        yield self.plan


def _monotone_plan(mu, nu):
    """North-west corner coupling of the sorted atoms (optimal on the line)."""
    ix = np.argsort(mu.points[:, 0], kind="stable")
    iy = np.argsort(nu.points[:, 0], kind="stable")
    P = np.zeros((mu.n, nu.n))
    a, b = mu.weights[ix].copy(), nu.weights[iy].copy()
    i = j = 0
    while i < mu.n and j < nu.n:
        w = min(a[i], b[j])
        P[ix[i], iy[j]] += w
        a[i] -= w
        b[j] -= w
        if a[i] <= 1e-15:
            i += 1
        if b[j] <= 1e-15:
            j += 1
    return P


def _transport_lp(C, a, b):
    n, m = C.shape
    rows = np.zeros((n, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    cols = np.zeros((m, n * m))
    for j in range(m):
        cols[j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return res.x.reshape(n, m)


def sliced_w2(mu, nu, n_projections=N_PROJECTIONS, seed=0):
    """Root of the average of squared 1-D distances along random directions."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_projections, mu.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    acc = 0.0
    for u in dirs:
        acc += kernels.w2_sq_1d(mu.points @ u, mu.weights, nu.points @ u, nu.weights)
    return float(np.sqrt(acc / n_projections))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, exact_cap: int = EXACT_CAP,
                 n_projections: int = N_PROJECTIONS, seed: int = 0, with_plan: bool = True) -> W2Result:
    """W2 distance and an optimal coupling.

    Exact for Dirac measures, on the line, and whenever the combined atom
    count is at most ``exact_cap``; otherwise the sliced estimate is returned
    with ``exact=False``.
    """
    if mu is None or nu is None:
        raise ValueError("both measures are required")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch {mu.dim} vs {nu.dim}")
    if nu.n == 1 or mu.n == 1:
        cloud, atom = (mu, nu) if nu.n == 1 else (nu, mu)
        diff = cloud.points - atom.points[0]
        cost = float(cloud.weights @ np.sum(diff * diff, axis=1))
        plan = None
        if with_plan:
            col = cloud.weights.reshape(-1, 1)
            plan = CouplingPlan(col if cloud is mu else col.T, cost)
        return W2Result(float(np.sqrt(cost)), plan, True, "dirac")
    if mu.dim == 1:
        cost = max(kernels.w2_sq_1d(mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights), 0.0)
        plan = None
        if with_plan and mu.n * nu.n <= 4_000_000:
            plan = CouplingPlan(_monotone_plan(mu, nu), cost)
        return W2Result(float(np.sqrt(cost)), plan, True, "sorted")
    if mu.n + nu.n > exact_cap:
        return W2Result(sliced_w2(mu, nu, n_projections, seed), None, False, "sliced")
    C = cdist(mu.points, nu.points, "sqeuclidean")
    if mu.n == nu.n and mu.is_uniform and nu.is_uniform:
        r, c = linear_sum_assignment(C)
        cost = float(C[r, c].sum() / mu.n)
        P = None
        if with_plan:
            P = np.zeros_like(C)
            P[r, c] = 1.0 / mu.n
        return W2Result(float(np.sqrt(cost)), CouplingPlan(P, cost) if with_plan else None, True, "assignment")
    P = _transport_lp(C, mu.weights, nu.weights)
    cost = max(float(np.sum(P * C)), 0.0)
    return W2Result(float(np.sqrt(cost)), CouplingPlan(P, cost) if with_plan else None, True, "lp")


def w2(mu, nu, **kw) -> float:
    return wasserstein2(mu, nu, with_plan=False, **kw).distance


# ---------------------------------------------------------------- path space

def _cut_index(grid, t_cut):
    grid = np.asarray(grid)
    return int(np.searchsorted(grid, t_cut * (1 + 1e-12) + 1e-15, side="right"))


def truncated_path_distance(a, b, t_cut: float, mode: str = "coupling", **w2_kw) -> float:
    """Distance between two path ensembles on ``[0, t_cut]``.

    ``mode="coupling"`` pairs particle ``i`` with particle ``i`` (same noise)
    and returns ``(mean_i sup_t |x_i - y_i|^2)^(1/2)``, an upper bound for the
    truncated path-space W2. ``mode="proxy"`` returns
    ``sup_t W2(a_t, b_t)`` over grid nodes, which never exceeds it.
    """
    if a.x.shape[1] != b.x.shape[1] or not np.allclose(a.grid, b.grid, rtol=0, atol=1e-14):
        raise ValueError("ensembles live on different grids")
    k = _cut_index(a.grid, t_cut)
    if mode == "coupling":
        if a.x.shape[0] != b.x.shape[0]:
            raise ValueError("identity coupling needs equal particle counts")
        diff = a.x[:, :k] - b.x[:, :k]
        sup_sq = np.max(np.sum(diff * diff, axis=2), axis=1)
        return float(np.sqrt(np.mean(sup_sq)))
    if mode == "proxy":
        return max(w2(EmpiricalMeasure(a.x[:, j]), EmpiricalMeasure(b.x[:, j]), **w2_kw) for j in range(k))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class PushforwardReport:
    proxy: list
    coupling: list

    @property
    def margins(self):
        return [c - p for p, c in zip(self.proxy, self.coupling)]

    @property
    def holds(self):
        return all(m >= -1e-12 for m in self.margins)

    @property
    def fraction_holding(self):
        return float(np.mean([m >= -1e-12 for m in self.margins]))


class _Slice:
    def __init__(self, grid, x):
        self.grid, self.x = grid, x


def pushforward_check(a, b=None, n_pairs: int = 100, seed: int = 0) -> PushforwardReport:
    """Compare the grid proxy with the identity-coupling path distance.

    With two ensembles the pair ``(a, b)`` is checked once. With a single
    ensemble, ``n_pairs`` random half/half splits of it are compared.
    """
    if b is not None:
        T = a.grid[-1]
        return PushforwardReport([truncated_path_distance(a, b, T, "proxy")],
                                 [truncated_path_distance(a, b, T, "coupling")])
    rng = np.random.default_rng(seed)
    n = a.x.shape[0] // 2
    if n == 0:
        raise ValueError("need at least two paths to form pairs")
    T = a.grid[-1]
    proxy, coup = [], []
    for _ in range(n_pairs):
        perm = rng.permutation(a.x.shape[0])
        u, v = _Slice(a.grid, a.x[perm[:n]]), _Slice(a.grid, a.x[perm[n:2 * n]])
        proxy.append(truncated_path_distance(u, v, T, "proxy"))
        coup.append(truncated_path_distance(u, v, T, "coupling"))
    return PushforwardReport(proxy, coup)
