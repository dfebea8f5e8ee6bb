import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.logic import posterior
from app.logic.calibration import CalendarGrid
from app.logic.ppmodel import RateFunction, rate_at
from app.logic.sampler import AcceptanceStats, PosteriorSamples
from app.utils.errors import DataError, NoRealisationsError

T_A, T_B = 1750.0, 3300.0
GRID = CalendarGrid(start=T_A, end=T_B, step=5)
EXAMPLE_RATE = RateFunction(T_A, T_B, [1950.0, 2300.0, 2700.0, 3100.0], [0.0, 0.06, 0.28, 0.08, 0.0])


@pytest.fixture
def make_samples(make_options):
    def _make(rates, ages=None):
        options = make_options(start=T_A, end=T_B, step=5, iterations=len(rates) + 1, burn_in=0)
        if ages is None:
            ages = np.full((len(rates), 2), 2000.0)
        return PosteriorSamples(list(range(1, len(rates) + 1)), list(rates), np.asarray(ages, dtype=float),
                                options, AcceptanceStats(), ["a", "b"])
    return _make


def test_mean_rate_of_one_realisation(make_samples):
    summary = posterior.mean_rate(make_samples([EXAMPLE_RATE]), GRID)
    expected = rate_at(EXAMPLE_RATE, GRID.centres)
    assert_allclose(summary.mean, expected)
    assert_allclose(summary.lower, expected)
    assert_allclose(summary.upper, expected)
    assert summary.n_samples == 1


def test_mean_rate_averages_pointwise(make_samples):
    low = RateFunction.constant(T_A, T_B, 0.1)
    high = RateFunction.constant(T_A, T_B, 0.3)
    summary = posterior.mean_rate(make_samples([low, high]), GRID)
    assert_allclose(summary.mean, 0.2)
    frame = summary.to_frame()
    assert list(frame.columns) == ["cal_age", "mean", "lower", "upper"]
    assert summary.to_density().total() == pytest.approx(1.0)


def test_interval_matches_direct_quantiles(make_samples):
    rng = np.random.default_rng(0)
    rates = []
    for _ in range(100):
        s = np.sort(rng.uniform(T_A + 1, T_B - 1, size=2))
        rates.append(RateFunction(T_A, T_B, s, rng.gamma(2.0, 0.05, size=3)))
    summary = posterior.mean_rate(make_samples(rates), GRID, level=0.9)
    for j in rng.integers(GRID.n_cells, size=10):
        values = np.sort([rate_at(rate, GRID.centres[j]) for rate in rates])
        assert summary.lower[j] == pytest.approx(np.quantile(values, 0.05))
        assert summary.upper[j] == pytest.approx(np.quantile(values, 0.95))
        assert summary.mean[j] == pytest.approx(values.mean())


def test_count_histogram(make_samples):
    rates = [EXAMPLE_RATE] * 3 + [RateFunction.constant(T_A, T_B, 0.1)]
    histogram = posterior.changepoint_count_histogram(make_samples(rates))
    assert histogram == {0: 0.25, 4: 0.75}
    assert sum(histogram.values()) == pytest.approx(1.0)
    assert posterior.posterior_mode(histogram) == 4
    assert posterior.posterior_mode({}) is None
    assert list(posterior.count_histogram_frame(histogram)["k"]) == [0, 4]


def test_changepoint_locations_are_indexed_oldest_first(make_samples):
    histograms = posterior.changepoint_locations(make_samples([EXAMPLE_RATE]), 4, bin_width=10)
    assert [h.index for h in histograms] == [1, 2, 3, 4]
    for histogram, location in zip(histograms, [3100.0, 2700.0, 2300.0, 1950.0]):
        assert histogram.mass.sum() == pytest.approx(1.0)
        peak = int(np.argmax(histogram.mass))
        assert histogram.edges[peak] <= location < histogram.edges[peak + 1]
    frame = posterior.histograms_frame(histograms)
    assert list(frame.columns) == ["index", "bin_start", "bin_end", "density"]


def test_conditioning_on_missing_k(make_samples):
    samples = make_samples([EXAMPLE_RATE])
    with pytest.raises(NoRealisationsError):
        posterior.changepoint_locations(samples, 2)
    with pytest.raises(NoRealisationsError):
        posterior.conditional_heights(samples, 0)
    with pytest.raises(NoRealisationsError):
        posterior.conditional_mean_rate(samples, GRID, 3)


def test_conditional_heights_index(make_samples):
    histograms = posterior.conditional_heights(make_samples([EXAMPLE_RATE, EXAMPLE_RATE]), 4, bins=56)
    assert len(histograms) == 5
    third = histograms[2]
    peak = int(np.argmax(third.mass))
    assert third.mass[peak] == pytest.approx(1.0)
    assert third.edges[peak] <= 0.28 <= third.edges[peak + 1]
    assert histograms[0].mass[0] == pytest.approx(1.0)


def test_conditional_mean_rate(make_samples):
    other = RateFunction(T_A, T_B, [2500.0], [0.1, 0.2])
    samples = make_samples([EXAMPLE_RATE, other, other])
    conditional = posterior.conditional_mean_rate(samples, GRID, 1)
    assert_allclose(conditional.mean, rate_at(other, GRID.centres))
    overall = posterior.mean_rate(samples, GRID)
    histogram = posterior.changepoint_count_histogram(samples)
    mixed = histogram[1] * conditional.mean + histogram[4] * posterior.conditional_mean_rate(samples, GRID, 4).mean
    assert_allclose(overall.mean, mixed)


def test_export_realisations(make_samples):
    rates = [RateFunction.constant(T_A, T_B, 0.01 * (i + 1)) for i in range(10)]
    samples = make_samples(rates)
    last = posterior.export_realisations(samples, 1, GRID)
    assert len(last) == 1
    assert last[0].iteration == 10
    assert_allclose(last[0].values, 0.1)
    every = posterior.export_realisations(samples, 10, GRID)
    assert [t.iteration for t in every] == list(range(1, 11))
    frame = posterior.realisations_frame(posterior.export_realisations(samples, 3, GRID), GRID)
    assert list(frame.columns) == ["cal_age", "iter_1", "iter_5", "iter_10"]
    with pytest.raises(ValueError):
        posterior.export_realisations(samples, 11, GRID)


def test_calendar_age_densities(make_samples):
    ages = np.array([[2002.5, 3000.0], [2002.5, 3010.0], [2007.5, 3000.0], [2002.5, 3000.0]])
    rate = RateFunction.constant(T_A, T_B, 0.1)
    densities = posterior.calendar_age_densities(make_samples([rate] * 4, ages), GRID)
    assert len(densities) == 2
    first = densities[0]
    assert first.total() == pytest.approx(1.0)
    assert first.probabilities()[GRID.cell_of(2002.5)] == pytest.approx(0.75)
    assert densities[1].probabilities()[GRID.cell_of(3010.0)] == pytest.approx(0.25)


def test_compare_chains(make_samples):
    first = make_samples([RateFunction.constant(T_A, T_B, 0.1)])
    second = make_samples([RateFunction.constant(T_A, T_B, 0.12)])
    same = posterior.compare_chains([first, first], GRID)
    assert same.max_abs_difference == 0.0
    different = posterior.compare_chains([first, second], GRID)
    assert different.max_abs_difference == pytest.approx(0.02)
    assert different.relative_difference == pytest.approx(0.02 / 0.11)
    assert list(different.to_frame().columns) == ["cal_age", "chain1", "chain2"]
    with pytest.raises(ValueError):
        posterior.compare_chains([first], GRID)


def test_rate_diagnostics(make_samples):
    summary = posterior.mean_rate(make_samples([EXAMPLE_RATE]), GRID)
    diagnostics = posterior.rate_diagnostics(summary, 165)
    assert diagnostics["integral"] == pytest.approx(165.0)
    assert diagnostics["ratio"] == pytest.approx(1.0)


def test_empty_samples_are_rejected(make_samples):
    empty = make_samples([], ages=np.empty((0, 2)))
    for call in (lambda: posterior.mean_rate(empty, GRID),
                 lambda: posterior.changepoint_count_histogram(empty),
                 lambda: posterior.export_realisations(empty, 1, GRID),
                 lambda: posterior.calendar_age_densities(empty, GRID)):
        with pytest.raises(DataError):
            call()
