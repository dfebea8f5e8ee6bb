"""
模拟实验的端到端检验（线性合成曲线，运行时间较长，默认不执行：pytest -m slow）
"""

import time

import numpy as np
import pytest

from app.logic import posterior
from app.logic.calibration import CalendarGrid, DensityGrid, load_curve
from app.logic.ppmodel import EventSet, default_prior
from app.logic.sampler import ChainOptions, run_chain
from app.logic.sim import ForwardModelSpec, forward_model, preset
from app.logic.spd import l1_distance, spd

from conftest import write_curve

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def curve(tmp_path_factory):
    cal = np.arange(0, 8001, 5)
    path = tmp_path_factory.mktemp("curve") / "linear.14c"
    return load_curve(write_curve(path, cal, cal.astype(float), np.full(cal.size, 15.0)))


def _fit(curve, name, seed, iterations=100000, burn_in=50000, **params):
    result = preset(name, seed, **params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    dets = forward_model(result.events, curve, ForwardModelSpec(sigma_obs=25.0), rng)
    t_a, t_b = result.bounds
    grid = CalendarGrid(start=t_a, end=t_b)
    options = ChainOptions(iterations=iterations, burn_in=burn_in, thin=10, seed=seed, grid=grid,
                           prior=default_prior(len(dets), t_a, t_b))
    return result, dets, grid, run_chain(dets, curve, options)


@pytest.fixture(scope="module")
def phase_fit(curve):
    return _fit(curve, "uniform-phase", seed=11)


@pytest.fixture(scope="module")
def four_changepoint_fit(curve):
    return _fit(curve, "four-changepoint", seed=12)


def test_uniform_phase_recovers_two_changes(phase_fit):
    result, _, grid, samples = phase_fit
    histogram = posterior.changepoint_count_histogram(samples)
    assert posterior.posterior_mode(histogram) == 2
    assert histogram.get(3, 0.0) > 0.0

    first = posterior.changepoint_locations(samples, 2, bin_width=5)[0]
    centres = 0.5 * (first.edges[:-1] + first.edges[1:])
    assert first.mass[(centres >= 2080) & (centres <= 2120)].sum() >= 0.5

    summary = posterior.mean_rate(samples, grid)
    truth = result.true_rate_at(grid.centres)
    inside = (summary.lower <= truth + 1e-12) & (truth <= summary.upper + 1e-12)
    assert inside.mean() >= 0.9


def test_posterior_mean_beats_spd(curve, phase_fit):
    result, dets, grid, samples = phase_fit
    truth = DensityGrid(grid, result.true_rate_at(grid.centres) / len(result.events))
    summed = spd(dets, curve, grid)
    fitted = posterior.mean_rate(samples, grid).to_density()
    assert l1_distance(summed, truth) > l1_distance(fitted, truth)


def test_four_changepoint_rate(four_changepoint_fit):
    result, _, grid, samples = four_changepoint_fit
    histogram = posterior.changepoint_count_histogram(samples)
    assert posterior.posterior_mode(histogram) in (4, 5)

    summary = posterior.mean_rate(samples, grid)
    truth = result.true_rate_at(grid.centres)
    inside = (summary.lower <= truth + 1e-12) & (truth <= summary.upper + 1e-12)
    assert inside.mean() >= 0.9

    # 序号3为2700-2300 cal BP区间，真实高度0.28
    third = posterior.conditional_heights(samples, 4)[2]
    cdf = np.concatenate([[0.0], np.cumsum(third.mass)])
    position = np.interp(0.28, third.edges, cdf)
    assert 0.025 <= position <= 0.975


def test_exponential_growth_and_collapse(curve):
    result, _, grid, samples = _fit(curve, "exp-growth", seed=13)
    summary = posterior.mean_rate(samples, grid)
    truth = result.true_rate_at(grid.centres)
    covered = (summary.lower <= truth + 1e-12) & (truth <= summary.upper + 1e-12)
    assert covered.mean() >= 0.85

    before = summary.mean[(grid.centres > 4000) & (grid.centres < 4100)].mean()
    after = summary.mean[(grid.centres > 3945) & (grid.centres < 3950)]
    assert np.all(after < 0.1 * before)


def test_fits_are_reproducible(curve):
    first = _fit(curve, "uniform-phase", seed=21, iterations=20000, burn_in=10000)[3]
    second = _fit(curve, "uniform-phase", seed=21, iterations=20000, burn_in=10000)[3]
    assert np.array_equal(first.k_values, second.k_values)
    assert np.array_equal(first.ages, second.ages)
    for a, b in zip(first.rates, second.rates):
        assert np.array_equal(a.changepoints, b.changepoints)
        assert np.array_equal(a.heights, b.heights)


def test_full_length_chain_finishes_within_five_minutes(curve):
    # 171个数据、1550年的1年网格、100k次迭代，单线程
    rng = np.random.default_rng(31)
    events = EventSet(np.sort(rng.uniform(1950.0, 3100.0, size=171)), 1750.0, 3300.0)
    dets = forward_model(events, curve, ForwardModelSpec(sigma_obs=25.0), rng)
    grid = CalendarGrid(start=1750, end=3300)
    options = ChainOptions(seed=31, grid=grid, prior=default_prior(len(dets), 1750.0, 3300.0))
    started = time.perf_counter()
    samples = run_chain(dets, curve, options)
    assert time.perf_counter() - started < 300.0
    assert len(samples) == options.expected_samples == 5000
