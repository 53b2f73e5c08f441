import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import binomtest

from mvreflect.coefficients import ConstantCoefficients, MeanReversion, StdVol, ZeroCoefficients, preset
from mvreflect.ensemble import MeasureFlow, NoiseDriver, simulate_interacting
from mvreflect.geometry import MovingBox, MovingDisk, MovingInterval, normal_field, rotated_field
from mvreflect.ldp import (Control, Event, OptimizationError, PathTarget, RateConfig, TerminalTarget,
                           check_ldp1, check_ldp2, check_limit_law, clopper_pearson, estimate_rare_event,
                           oscillatory_sequence, rate_functional, rate_of_path, simulate_controlled,
                           simulate_small_noise, skeleton_batch, solve_limit_ode, solve_skeleton,
                           sup_deviation, terminal_displacement)

GRID = np.linspace(0, 1, 51)


def free():
    dom = MovingInterval(radius=10.0, amplitude=0.0)
    return dom, normal_field(dom), ConstantCoefficients(0.0, 1.0, 1)


def builtin_cases():
    for dom in (MovingInterval(), MovingDisk(radius=1.0, amplitude=0.2), MovingBox()):
        fields = [normal_field(dom)] + ([rotated_field(dom)] if dom.dim == 2 else [])
        for fld in fields:
            for name in ("zero", "constant", "brownian", "mean_reversion", "std_vol"):
                yield dom, fld, preset(name, dim=dom.dim)


# ------------------------------------------------------------------ controls and energy

def test_control_constructors():
    h = Control.constant(GRID, 2.0, m=2)
    assert h.values.shape == (50, 2) and h.m == 2
    with pytest.raises(ValueError):
        Control(GRID, np.full(50, np.nan))
    g = Control.from_function(GRID, lambda t: math.sin(2 * math.pi * 3 * t))
    exact = oscillatory_sequence(Control.zeros(GRID), [3])[0]
    np.testing.assert_allclose(g.values, exact.values, atol=1e-12)


def test_rate_functional_examples():
    assert rate_functional(Control.zeros(GRID)) == 0.0
    grid = np.linspace(0, 2.0, 41)
    assert rate_functional(Control.constant(grid, 1.5)) == pytest.approx(0.5 * 1.5 ** 2 * 2.0, rel=1e-14)
    h = Control(GRID, np.sin(np.arange(50.0))[:, None])
    a, b = h.split(25)
    assert h.energy == pytest.approx(a.energy + b.energy, rel=1e-14)


# magnitudes below 1e-100 would underflow once squared
SIGNIFICANT = st.one_of(st.just(0.0), st.floats(1e-100, 10), st.floats(-10, -1e-100))


@given(arrays(float, (50, 2), elements=SIGNIFICANT), st.floats(-4, 4))
def test_rate_homogeneity(v, c):
    h = Control(GRID, v)
    assert rate_functional(h.scaled(2.0)) == 4.0 * rate_functional(h)
    assert rate_functional(h.scaled(c)) == pytest.approx(c * c * rate_functional(h), rel=1e-12, abs=1e-300)
    assert rate_functional(h) >= 0.0
    assert (rate_functional(h) == 0.0) == (not np.any(v))


# ------------------------------------------------------------------ limit path and skeleton

def test_limit_ode_examples():
    dom = MovingDisk(radius=1.0)
    psi = solve_limit_ode(dom, normal_field(dom), ZeroCoefficients(2), [0.3, 0.1], GRID)
    assert np.all(psi.x == psi.x[0])
    # the self-Dirac makes mean(mu) - x vanish along the path
    psi = solve_limit_ode(MovingInterval(), normal_field(MovingInterval()), MeanReversion(1), [0.4], GRID)
    assert np.all(psi.x == 0.4)


def test_limit_ode_first_order():
    dom = MovingInterval()
    fld = normal_field(dom)
    cs = ConstantCoefficients(0.8, 0.0, 1)
    paths = {K: solve_limit_ode(dom, fld, cs, [0.0], np.linspace(0, 1, K + 1)).x[:, 0] for K in (25, 50, 100, 200)}
    errs = [np.max(np.abs(paths[K] - paths[2 * K][::2])) for K in (25, 50, 100)]
    assert all(1.5 < a / b < 2.5 for a, b in zip(errs, errs[1:]))


def test_skeleton_zero_control_is_bit_identical_to_limit():
    for dom, fld, cs in builtin_cases():
        x0 = dom.section(0.0).center + 0.3
        psi = solve_limit_ode(dom, fld, cs, x0, GRID)
        y = solve_skeleton(dom, fld, cs, x0, psi, Control.zeros(GRID, cs.noise_dim))
        assert np.array_equal(psi.x, y.x) and np.array_equal(psi.local_time, y.local_time)


def test_skeleton_ignores_control_without_noise():
    dom = MovingInterval()
    cs = MeanReversion(1, sigma=0.0)
    psi = solve_limit_ode(dom, normal_field(dom), cs, [0.2], GRID)
    y = solve_skeleton(dom, normal_field(dom), cs, [0.2], psi, Control.constant(GRID, 3.0))
    assert np.array_equal(y.x, psi.x)


def test_skeleton_constant_control_integrates_linearly():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.1], GRID)
    y = solve_skeleton(dom, fld, cs, [0.1], psi, Control.constant(GRID, 0.7))
    np.testing.assert_allclose(y.x[:, 0], 0.1 + 0.7 * GRID, atol=1e-12)


def test_skeleton_batch_matches_single_solves():
    dom, fld, cs = MovingInterval(), normal_field(MovingInterval()), MeanReversion(1)
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    hs = [Control.constant(GRID, c) for c in (0.0, 1.0, 3.0)]
    Y = skeleton_batch(dom, fld, cs, [0.0], psi, np.stack([h.values for h in hs]))
    for i, h in enumerate(hs):
        assert np.array_equal(Y[i], solve_skeleton(dom, fld, cs, [0.0], psi, h).x)


def test_skeleton_input_checks():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    with pytest.raises(ValueError):
        solve_skeleton(dom, fld, cs, [0.0], psi, Control.zeros(GRID[:11]))
    with pytest.raises(ValueError):
        solve_skeleton(dom, fld, cs, [0.0], psi, Control.zeros(GRID, 2))


# ------------------------------------------------------------------ rate of a path

def test_rate_at_psi_is_zero_for_every_preset():
    for dom, fld, cs in builtin_cases():
        x0 = dom.section(0.0).center
        psi = solve_limit_ode(dom, fld, cs, x0, GRID)
        rv = rate_of_path(dom, fld, cs, x0, psi, PathTarget(psi.x))
        assert rv.value == 0.0 and not rv.infinite
        assert not np.any(rv.witness.values)


def test_rate_infinite_without_noise():
    dom = MovingInterval()
    fld = normal_field(dom)
    for cs in (ZeroCoefficients(1), MeanReversion(1, sigma=0.0)):
        psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
        rv = rate_of_path(dom, fld, cs, [0.0], psi, TerminalTarget([0.5]))
        assert rv.infinite and math.isinf(rv.value) and rv.witness is None


@pytest.mark.parametrize("a,T", [(1.0, 1.0), (0.6, 2.0)])
def test_rate_free_brownian_closed_form(a, T):
    dom = MovingInterval(radius=10.0, amplitude=0.0, horizon=T)
    fld, cs = normal_field(dom), ConstantCoefficients(0.0, 1.0, 1)
    grid = np.linspace(0, T, 41)
    psi = solve_limit_ode(dom, fld, cs, [0.0], grid)
    rv = rate_of_path(dom, fld, cs, [0.0], psi, TerminalTarget([a]))
    assert rv.value == pytest.approx(a * a / (2 * T), rel=1e-3)
    assert rv.value == rv.witness.energy
    # the continuation tightens the residual level by level
    res = [lv[2] for lv in rv.levels]
    assert all(b < a for a, b in zip(res, res[1:]))


def test_rate_energy_ceiling():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    with pytest.raises(OptimizationError):
        rate_of_path(dom, fld, cs, [0.0], psi, TerminalTarget([5.0]), RateConfig(energy_ceiling=1.0))


def test_rate_terminal_ball_target():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    rv = rate_of_path(dom, fld, cs, [0.0], psi, TerminalTarget([1.0], radius=0.5))
    assert rv.value == pytest.approx(0.125, rel=1e-3)


# ------------------------------------------------------------------ small noise and controlled process

def test_small_noise_scale_and_base_case():
    dom, fld = MovingInterval(), normal_field(MovingInterval())
    cs = MeanReversion(1)
    run = simulate_small_noise(dom, fld, cs, [0.0], GRID, NoiseDriver(1), 0.25, 64)
    assert run.noise_scale == 0.5
    one = simulate_small_noise(dom, fld, cs, [0.0], GRID, NoiseDriver(1), 1.0, 64)
    base = simulate_interacting(dom, fld, cs, 64, [0.0], GRID, NoiseDriver(1))
    assert np.array_equal(one.ensemble.x, base.x)
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            simulate_small_noise(dom, fld, cs, [0.0], GRID, NoiseDriver(1), bad, 4)


def test_small_noise_terminal_variance():
    dom, fld, cs = free()
    eps = 0.2
    x = simulate_small_noise(dom, fld, cs, [0.0], GRID, NoiseDriver(2), eps, 4000).ensemble.x[:, -1, 0]
    assert x.var() == pytest.approx(eps * 1.0, rel=0.1)


def test_controlled_zero_control_is_bit_identical():
    dom, fld = MovingBox(), rotated_field(MovingBox())
    cs = StdVol(2, base=1.0)
    drv = NoiseDriver(3)
    run = simulate_small_noise(dom, fld, cs, [0.0, 0.0], GRID, drv, 0.3, 128)
    z = simulate_controlled(dom, fld, cs, [0.0, 0.0], GRID, drv, 0.3, Control.zeros(GRID, 2), run.flow, 128)
    assert np.array_equal(z.x, run.ensemble.x)


def test_controlled_degenerate_noise_is_the_skeleton():
    dom = MovingInterval()
    fld, cs = normal_field(dom), MeanReversion(1)
    psi = solve_limit_ode(dom, fld, cs, [0.2], GRID)
    h = Control.from_function(GRID, lambda t: 2 * math.cos(3 * t))
    z = simulate_controlled(dom, fld, cs, [0.2], GRID, NoiseDriver(0), 0.0, h, MeasureFlow.dirac(psi), 3)
    y = solve_skeleton(dom, fld, cs, [0.2], psi, h)
    for i in range(3):
        assert np.array_equal(z.x[i], y.x)


def test_controlled_rejects_mismatched_flow():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID[:11])
    with pytest.raises(ValueError):
        simulate_controlled(dom, fld, cs, [0.0], GRID, NoiseDriver(0), 0.1, Control.zeros(GRID),
                            MeasureFlow.dirac(psi), 4)


def test_witness_control_steers_rare_paths():
    dom = MovingInterval(radius=2.0, amplitude=0.0)
    fld, cs = normal_field(dom), MeanReversion(1)
    eps, target = 0.05, 0.8
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    rv = rate_of_path(dom, fld, cs, [0.0], psi, TerminalTarget([target]))
    drv = NoiseDriver(4)
    run = simulate_small_noise(dom, fld, cs, [0.0], GRID, drv, eps, 1024)
    z = simulate_controlled(dom, fld, cs, [0.0], GRID, drv, eps, rv.witness, run.flow, 1024)
    hit = lambda x: np.mean(np.abs(x[:, -1, 0] - target) < 0.2)
    assert hit(z.x) > 0.5 and hit(run.ensemble.x) < 0.05


# ------------------------------------------------------------------ LDP1 / LDP2 / limit law

def test_ldp1_constant_sequence():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    h = Control.constant(GRID, 0.3)
    assert check_ldp1(dom, fld, cs, [0.0], psi, [h] * 3, h).distances == [0.0, 0.0, 0.0]


def test_ldp1_oscillation_matches_averaging_bound():
    dom, fld, cs = free()
    grid = np.linspace(0, 1, 401)
    psi = solve_limit_ode(dom, fld, cs, [0.0], grid)
    h = Control.zeros(grid)
    ns = [1, 2, 4, 8]
    rep = check_ldp1(dom, fld, cs, [0.0], psi, oscillatory_sequence(h, ns), h)
    assert rep.decreasing
    # for the free benchmark the skeleton gap is (1 - cos(2 pi n t)) / (2 pi n), whose sup is 1 / (pi n)
    np.testing.assert_allclose(rep.distances, [1 / (math.pi * n) for n in ns], rtol=1e-3)


def test_ldp1_divergent_sequence_is_flagged():
    dom, fld, cs = free()
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    h = Control.zeros(GRID)
    rep = check_ldp1(dom, fld, cs, [0.0], psi, [Control.constant(GRID, float(n)) for n in (1, 2, 4)], h)
    assert not rep.decreasing and not rep.converged


def test_ldp2_degenerate_cases():
    dom = MovingInterval()
    fld = normal_field(dom)
    rep = check_ldp2(dom, fld, MeanReversion(1, sigma=0.0), [0.2], GRID, NoiseDriver(1), [0.4, 0.1],
                     Control.zeros(GRID), 0.01, 64)
    assert rep.probabilities == [0.0, 0.0]
    rep = check_ldp2(dom, fld, MeanReversion(1), [0.0], GRID, NoiseDriver(1), [0.4, 0.1],
                     Control.constant(GRID, 1.0), 2 * dom.bounding_radius + 1, 64)
    assert rep.probabilities == [0.0, 0.0] and rep.nonincreasing
    with pytest.raises(ValueError):
        check_ldp2(dom, fld, MeanReversion(1), [0.0], GRID, NoiseDriver(1), [0.1, 0.4], Control.zeros(GRID), 0.2, 8)


def test_limit_law_degenerate_case():
    dom = MovingInterval()
    rep = check_limit_law(dom, normal_field(dom), ConstantCoefficients(0.5, 0.0, 1), [0.0], GRID, NoiseDriver(1),
                          [0.4, 0.1], 32)
    assert max(rep.statistic) <= 1.0 / 50


def test_limit_law_brownian_scaling():
    dom, fld, cs = free()
    rep = check_limit_law(dom, fld, cs, [0.0], GRID, NoiseDriver(2), [0.4, 0.1, 0.025], 4000, n_boot=50)
    for e, s in zip(rep.epsilons, rep.statistic):
        assert s == pytest.approx(math.sqrt(e), rel=0.1)
    assert rep.decreasing and rep.nonincreasing
    assert rep.statistic[0] / rep.statistic[1] == pytest.approx(2.0, rel=0.1)


# ------------------------------------------------------------------ rare events

def test_clopper_pearson_matches_scipy():
    for k, n in [(0, 100), (3, 100), (100, 100), (17, 250)]:
        ci = binomtest(k, n).proportion_ci(0.95, method="exact")
        assert clopper_pearson(k, n) == pytest.approx((ci.low, ci.high), abs=1e-12)


def test_rare_event_trivial_events():
    dom, fld, cs = free()
    always = Event(lambda x, g: np.ones(x.shape[0]), 0.0)
    rows = estimate_rare_event(dom, fld, cs, [0.0], GRID, NoiseDriver(1), [0.4, 0.1], always, 200)
    assert all(r.p_hat == 1.0 and r.exponent == 0.0 for r in rows)
    never = Event(terminal_displacement([0.0]), 2 * dom.bounding_radius + 1)
    rows = estimate_rare_event(dom, fld, cs, [0.0], GRID, NoiseDriver(1), [0.4], never, 200)
    r = rows[0]
    assert r.hits == 0 and r.one_sided and math.isinf(r.exponent)
    assert r.exponent_bounds[0] == pytest.approx(-0.4 * math.log(r.ci_high)) and math.isinf(r.exponent_bounds[1])


def test_rare_event_exponent_trend():
    dom, fld, cs = free()
    a = 1.0
    grid = np.linspace(0, 1, 11)
    rows = estimate_rare_event(dom, fld, cs, [0.0], grid, NoiseDriver(5), [0.4, 0.2, 0.1],
                               Event(terminal_displacement([0.0]), a), 100_000, chunk=50_000)
    ex = [r.exponent for r in rows]
    assert ex[0] > ex[1] > ex[2] > a * a / 2
    for r in rows:
        exact = 2 * 0.5 * math.erfc(a / math.sqrt(2 * r.epsilon))
        assert r.ci_low <= exact <= r.ci_high


def test_sup_deviation_event_interacting_flow():
    dom = MovingInterval()
    fld, cs = normal_field(dom), MeanReversion(1)
    psi = solve_limit_ode(dom, fld, cs, [0.0], GRID)
    ev = Event(sup_deviation(psi.x), 0.5)
    rows = estimate_rare_event(dom, fld, cs, [0.0], GRID, NoiseDriver(6), [0.4, 0.1], ev, 5000, flow_copies=256)
    assert rows[0].p_hat > rows[1].p_hat
