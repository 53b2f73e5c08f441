import math

import numpy as np
import pytest
from scipy import stats

from mvreflect.coefficients import ConstantCoefficients, EmpiricalMeasure, MeanReversion, ZeroCoefficients
from mvreflect.ensemble import (FixedPointError, MeasureFlow, NoiseDriver, chaos_experiment, derive_seed,
                                drift_only_flow, initial_points, picard_iterate, simulate_frozen_law,
                                simulate_interacting, worker_count)
from mvreflect.geometry import MovingDisk, MovingInterval, normal_field, rotated_field
from mvreflect.ldp import Control, solve_limit_ode, solve_skeleton
from mvreflect.reflection import check_path_invariants, drive_path

GRID = np.linspace(0, 1, 21)


def setup(dom=None):
    dom = dom or MovingInterval()
    return dom, normal_field(dom)


# ------------------------------------------------------------------ noise

def test_noise_reproducible_and_order_free():
    drv = NoiseDriver(11)
    a = drv.increments([0, 1, 2, 3], GRID, 2)
    b = drv.increments([3, 1], GRID, 2)
    assert np.array_equal(a[3], b[0]) and np.array_equal(a[1], b[1])
    assert np.array_equal(drv.stream(2, GRID, 2), a[2])
    assert not np.array_equal(NoiseDriver(12).stream(2, GRID, 2), a[2])


def test_noise_distribution():
    grid = np.linspace(0, 2, 5)
    inc = NoiseDriver(7).increments(np.arange(20000), grid, 1)[..., 0]
    z = (inc / np.sqrt(0.5)).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    # distinct streams are uncorrelated
    r = np.corrcoef(inc[::2, 0], inc[1::2, 0])[0, 1]
    assert abs(r) < 4 / math.sqrt(10000)


def test_derive_seed_is_purpose_keyed():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert len({derive_seed(1, "a"), derive_seed(1, "b"), derive_seed(2, "a")}) == 3


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("MVREFLECT_WORKERS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("MVREFLECT_WORKERS", "junk")
    assert worker_count() == 1


def test_initial_points_forms(rng):
    assert initial_points([0.5], 3, 1).shape == (3, 1)
    sampler = lambda n, r: r.uniform(-0.5, 0.5, size=(n, 1))
    assert np.array_equal(initial_points(sampler, 4, 1, 9), initial_points(sampler, 4, 1, 9))
    with pytest.raises(ValueError):
        initial_points(np.zeros((5, 1)), 4, 1)


# ------------------------------------------------------------------ interacting system

def test_single_particle_matches_drive_path():
    dom, fld = setup()
    cs = ConstantCoefficients(0.5, 1.0, 1)
    drv = NoiseDriver(3)
    ens = simulate_interacting(dom, fld, cs, 1, [0.2], GRID, drv)
    flow = MeasureFlow(GRID, ens.x.swapaxes(0, 1))
    p = drive_path(dom, fld, cs, [0.2], flow, GRID, drv.stream(0, GRID, 1), 1.0)
    assert np.array_equal(p.x, ens.x[0])


def test_two_body_symmetry():
    dom = MovingInterval(radius=10.0, amplitude=0.0, horizon=3.0)
    grid = np.linspace(0, 3, 301)
    ens = simulate_interacting(dom, normal_field(dom), MeanReversion(1, sigma=0.0), 2, np.array([[0.0], [2.0]]),
                               grid, NoiseDriver(0))
    x = ens.x[..., 0]
    np.testing.assert_allclose(x[0] + x[1], 2.0, atol=1e-14)
    np.testing.assert_allclose(x[0], 1 - np.exp(-grid), atol=2e-2 * grid.max())
    assert abs(x[0, -1] - 1) < abs(x[0, 0] - 1)


def test_exchangeability_is_bit_exact(rng):
    dom = MovingDisk(radius=1.0, amplitude=0.2)
    fld = rotated_field(dom)
    X0 = dom.sample_interior(0.0, 24, rng)
    perm = rng.permutation(24)
    drv = NoiseDriver(5)
    cs = MeanReversion(2, sigma=1.5)
    a = simulate_interacting(dom, fld, cs, 24, X0, GRID, drv)
    b = simulate_interacting(dom, fld, cs, 24, X0[perm], GRID, drv, ids=perm)
    assert np.array_equal(a.x[perm], b.x)
    assert np.array_equal(a.local_time[perm], b.local_time)


def test_ensemble_invariants_and_flow_shape(rng):
    dom = MovingDisk(radius=1.0, amplitude=0.3)
    ens = simulate_interacting(dom, rotated_field(dom), MeanReversion(2, sigma=2.0), 40,
                               lambda n, r: dom.sample_interior(0.0, n, r), GRID, NoiseDriver(6))
    assert check_path_invariants(dom, ens).ok
    flow = ens.flow()
    assert len(flow) == GRID.size and flow[5].n == 40
    assert flow.check_containment(dom) <= dom.tol_boundary
    with pytest.raises(ValueError):
        simulate_interacting(dom, rotated_field(dom), MeanReversion(2), 0, [0.0, 0.0], GRID, NoiseDriver(0))


def test_measure_flow_validation():
    with pytest.raises(ValueError):
        MeasureFlow(GRID, np.zeros((3, 2, 1)))


# ------------------------------------------------------------------ frozen law

def test_frozen_dirac_flow_without_noise_is_the_skeleton():
    dom, fld = setup()
    cs = MeanReversion(1, sigma=0.0)
    psi = solve_limit_ode(dom, fld, cs, [0.3], GRID)
    ens = simulate_frozen_law(dom, fld, cs, [0.3], MeasureFlow.dirac(psi), GRID, NoiseDriver(1), 1.0, 5)
    y = solve_skeleton(dom, fld, cs, [0.3], psi, Control.zeros(GRID)).x
    for i in range(5):
        assert np.array_equal(ens.x[i], y)


def test_noninteracting_output_ignores_flow():
    dom, fld = setup()
    cs = ConstantCoefficients(0.2, 1.0, 1)
    f1 = MeasureFlow(GRID, np.zeros((21, 3, 1)))
    f2 = MeasureFlow(GRID, np.full((21, 3, 1), 0.7))
    a = simulate_frozen_law(dom, fld, cs, [0.0], f1, GRID, NoiseDriver(2), 1.0, 50)
    b = simulate_frozen_law(dom, fld, cs, [0.0], f2, GRID, NoiseDriver(2), 1.0, 50)
    assert np.array_equal(a.x, b.x)


def test_frozen_law_self_consistency():
    dom, fld = setup()
    cs = MeanReversion(1)
    start = lambda n, r: r.uniform(-0.8, 0.8, size=(n, 1))
    inter = simulate_interacting(dom, fld, cs, 512, start, GRID, NoiseDriver(8))
    froz = simulate_frozen_law(dom, fld, cs, start, inter.flow(), GRID, NoiseDriver(9), 1.0, 512)
    diff = froz.x[..., 0].mean(axis=0) - inter.x[..., 0].mean(axis=0)
    se = np.sqrt(froz.x[..., 0].var(axis=0) / 512 + inter.x[..., 0].var(axis=0) / 512) + 1e-12
    assert np.all(np.abs(diff) <= 4 * se)


def test_frozen_copies_are_uncorrelated():
    dom, fld = setup()
    cs = MeanReversion(1)
    flow = simulate_interacting(dom, fld, cs, 256, [0.0], GRID, NoiseDriver(1)).flow()
    ens = simulate_frozen_law(dom, fld, cs, [0.0], flow, GRID, NoiseDriver(2), 1.0, 4000)
    xT = ens.x[:, -1, 0]
    r = np.corrcoef(xT[0::2], xT[1::2])[0, 1]
    assert abs(r) < 4 / math.sqrt(2000)


def test_frozen_law_grid_mismatch():
    dom, fld = setup()
    with pytest.raises(ValueError):
        simulate_frozen_law(dom, fld, MeanReversion(1), [0.0], MeasureFlow(GRID[:5], np.zeros((5, 1, 1))),
                            GRID, NoiseDriver(0), 1.0, 3)


# ------------------------------------------------------------------ picard

def test_picard_noninteracting_converges_immediately():
    dom, fld = setup()
    flow, hist = picard_iterate(dom, fld, ConstantCoefficients(0.3, 1.0, 1), [0.0], GRID, NoiseDriver(4), 1.0,
                                64, tol=1e-12)
    assert hist.distances[1] == 0.0 and hist.converged and hist.iterations == 2


def test_picard_mean_reversion_contracts():
    dom, fld = setup()
    start = lambda n, r: r.uniform(-0.8, 0.8, size=(n, 1))
    flow, hist = picard_iterate(dom, fld, MeanReversion(1), start, GRID, NoiseDriver(4), 1.0, 256,
                                max_iters=15, tol=1e-6)
    d = hist.distances
    assert hist.converged
    assert all(b < a for a, b in zip(d[1:], d[2:]))
    assert np.all(hist.ratios()[1:] < 1)


def test_picard_failure_carries_history():
    dom, fld = setup()
    with pytest.raises(FixedPointError) as info:
        picard_iterate(dom, fld, MeanReversion(1), [0.0], GRID, NoiseDriver(4), 1.0, 64, max_iters=1, tol=1e-12)
    assert len(info.value.history.distances) == 1 and not info.value.history.converged
    with pytest.raises(ValueError):
        picard_iterate(dom, fld, MeanReversion(1), [0.0], GRID, NoiseDriver(4), 1.0, 64, max_iters=0)


def test_picard_agrees_with_large_interacting_system():
    dom, fld = setup()
    cs = MeanReversion(1)
    flow, _ = picard_iterate(dom, fld, cs, [0.0], GRID, NoiseDriver(4), 1.0, 512)
    inter = simulate_interacting(dom, fld, cs, 1024, [0.0], GRID, NoiseDriver(5)).flow()
    # chaos error for these sizes is around 0.05 in sup-grid W2
    assert flow.sup_w2(inter) < 0.12


def test_drift_only_flow_is_deterministic():
    dom, fld = setup()
    f = drift_only_flow(dom, fld, MeanReversion(1), [0.4], GRID, 5)
    assert np.all(f.points == f.points[:, :1])


# ------------------------------------------------------------------ chaos

def test_chaos_deterministic_case_is_zero():
    dom, fld = setup()
    t = chaos_experiment(dom, fld, ZeroCoefficients(1), [0.1], GRID, [2, 4, 8], 3, master_seed=1)
    assert t.mean_sq_dist == [0.0, 0.0, 0.0]


def test_chaos_decreases():
    dom, fld = setup()
    t = chaos_experiment(dom, fld, MeanReversion(1), [0.0], GRID, [8, 32, 128], 8, master_seed=2)
    m = t.mean_sq_dist
    assert m[0] > m[1] > m[2]
    assert [r[0] for r in t.rows()] == [8, 32, 128]


def test_chaos_standard_error_scaling():
    # quadrupling n_rep halves the standard error; disjoint repetitions keep the samples independent
    dom, fld = setup()
    cs = MeanReversion(1)
    ref = simulate_interacting(dom, fld, cs, 512, [0.0], GRID, NoiseDriver(99)).flow()
    small = chaos_experiment(dom, fld, cs, [0.0], GRID, [16], 64, 3, reference=ref)
    big = chaos_experiment(dom, fld, cs, [0.0], GRID, [16], 256, 3, reference=ref, rep_offset=64)
    assert big.stderr[0] / small.stderr[0] == pytest.approx(0.5, rel=0.3)


def test_chaos_independent_of_worker_count():
    dom, fld = setup()
    args = (dom, fld, MeanReversion(1), [0.0], GRID, [4, 16], 6, 7)
    a = chaos_experiment(*args, workers=1)
    b = chaos_experiment(*args, workers=4)
    assert a.mean_sq_dist == b.mean_sq_dist and a.stderr == b.stderr


def test_chaos_rejects_unsorted_sizes():
    dom, fld = setup()
    with pytest.raises(ValueError):
        chaos_experiment(dom, fld, MeanReversion(1), [0.0], GRID, [32, 8], 2, 0)
