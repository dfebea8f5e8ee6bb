import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError
from scipy.stats import norm

from app.logic.calibration import (CalendarGrid, CalibrationCurve, DensityGrid, Determination, calibrate_many,
                                   calibrate_one, curve_at, likelihood_matrix, load_curve, load_determinations)
from app.logic.spd import local_maxima, spd
from app.utils.errors import CurveRangeError, DataError

from conftest import write_curve


def _write(path, text):
    path.write_text(text, encoding="latin1")
    return str(path)


# --- load_curve ---
def test_load_curve_three_records(tmp_path):
    curve = load_curve(_write(tmp_path / "c.14c", "0,100,5\n10,110,5\n20,105,6\n"))
    assert_allclose(curve.cal_age, [0, 10, 20])
    assert_allclose(curve.c14_age, [100, 110, 105])
    assert_allclose(curve.c14_sigma, [5, 5, 6])
    assert curve.name == "c"


def test_load_curve_reverse_order_and_comments(tmp_path):
    plain = load_curve(_write(tmp_path / "a.14c", "0,100,5\n10,110,5\n20,105,6\n"))
    commented = load_curve(_write(tmp_path / "b.14c",
                                  "#header\n##another header\n20,105,6,1.0,2.0\n\n10,110,5\n0,100,5\n"))
    assert plain.records == commented.records


@pytest.mark.parametrize("text, line", [
    ("0,100,5\n10,abc,5\n", 2),
    ("#c\n0,100,5\n10,110\n", 3),
])
def test_load_curve_malformed_line(tmp_path, text, line):
    with pytest.raises(DataError) as info:
        load_curve(_write(tmp_path / "bad.14c", text))
    assert info.value.line == line


def test_load_curve_rejects_duplicates_and_short_files(tmp_path):
    with pytest.raises(DataError, match="重复"):
        load_curve(_write(tmp_path / "dup.14c", "0,100,5\n10,110,5\n10,111,5\n"))
    with pytest.raises(DataError):
        load_curve(_write(tmp_path / "one.14c", "0,100,5\n"))
    with pytest.raises(DataError):
        load_curve(str(tmp_path / "missing.14c"))


def test_curve_rejects_non_positive_error():
    with pytest.raises(DataError):
        CalibrationCurve.from_records([(0, 100, 5), (10, 110, 0)])


# --- curve_at ---
def test_curve_at_knots_and_midpoint():
    curve = CalibrationCurve.from_records([(0, 100, 5), (10, 110, 5), (20, 105, 6)])
    mu, tau = curve_at(curve, [0, 10, 20])
    assert_allclose(mu, [100, 110, 105])
    assert_allclose(tau, [5, 5, 6])
    mu, tau = curve_at(curve, 5)
    assert_allclose([mu, tau], [105, 5])


def test_curve_at_matches_independent_interpolator(wiggly_curve):
    rng = np.random.default_rng(3)
    theta = rng.uniform(wiggly_curve.min_cal_age, wiggly_curve.max_cal_age, size=200)
    mu, tau = curve_at(wiggly_curve, theta)
    for t, m, s in zip(theta, mu, tau):
        i = int(np.searchsorted(wiggly_curve.cal_age, t, side="right")) - 1
        i = min(i, wiggly_curve.cal_age.size - 2)
        x0, x1 = wiggly_curve.cal_age[i], wiggly_curve.cal_age[i + 1]
        w = (t - x0) / (x1 - x0)
        assert m == pytest.approx((1 - w) * wiggly_curve.c14_age[i] + w * wiggly_curve.c14_age[i + 1])
        assert s == pytest.approx((1 - w) * wiggly_curve.c14_sigma[i] + w * wiggly_curve.c14_sigma[i + 1])


def test_curve_at_out_of_range():
    curve = CalibrationCurve.from_records([(0, 100, 5), (10, 110, 5)])
    with pytest.raises(CurveRangeError):
        curve_at(curve, 10.5)
    with pytest.raises(CurveRangeError):
        curve_at(curve, [-1, 5])


# --- grids and densities ---
@pytest.mark.parametrize("start, end, step", [(10, 10, 1), (20, 10, 1), (0, 10, 0), (0, 10, 3)])
def test_calendar_grid_invalid(start, end, step):
    with pytest.raises(ValidationError):
        CalendarGrid(start=start, end=end, step=step)


def test_calendar_grid_cells():
    grid = CalendarGrid(start=100, end=110, step=2)
    assert grid.n_cells == 5
    assert_allclose(grid.centres, [101, 103, 105, 107, 109])
    assert_allclose(grid.edges, [100, 102, 104, 106, 108, 110])
    assert grid.cell_of([100, 101.9, 102, 110]).tolist() == [0, 0, 1, 4]


def test_calendar_grid_covering():
    grid = CalendarGrid.covering(1901, 2000, step=7)
    assert grid.start == 1901 and grid.end == 2006
    assert grid.n_cells == 15
    newer = CalendarGrid.covering(1901, 2000, step=7, anchor="end")
    assert newer.end == 2000 and newer.start == 1895
    exact = CalendarGrid.covering(1900, 2000, step=5)
    assert (exact.start, exact.end) == (1900, 2000)
    with pytest.raises(ValueError):
        CalendarGrid.covering(1900, 2000, step=0)
    with pytest.raises(ValueError):
        CalendarGrid.covering(2000, 1900, step=5)


def test_density_quantile_uniform():
    grid = CalendarGrid(start=0, end=10)
    density = DensityGrid(grid, np.full(10, 0.1))
    assert density.total() == pytest.approx(1.0)
    assert density.quantile(0.5) == pytest.approx(5.0)
    assert density.quantile(0.25) == pytest.approx(2.5)
    assert density.quantile(0.0) == pytest.approx(0.0)
    assert density.quantile(1.0) == pytest.approx(10.0)


def test_density_rejects_negative_values():
    grid = CalendarGrid(start=0, end=3)
    with pytest.raises(ValueError):
        DensityGrid(grid, [0.5, -0.1, 0.6])
    with pytest.raises(ValueError):
        DensityGrid(grid, [0.5, 0.5])


# --- calibrate_one ---
def test_calibrate_one_matches_normal_density(linear_curve):
    grid = CalendarGrid(start=1800, end=2300, step=1)
    det = Determination(id="x", c14_age=2050.0, sigma=30.0)
    density = calibrate_one(det, linear_curve, grid)
    expected = norm.pdf(2050.0, loc=grid.centres, scale=np.hypot(30.0, 15.0))
    assert_allclose(density.values, expected / expected.sum(), rtol=1e-10)
    assert density.total() == pytest.approx(1.0, abs=1e-9)


def test_calibration_is_translation_invariant(wiggly_curve):
    det = Determination(id="x", c14_age=2200.0, sigma=25.0)
    grid = CalendarGrid(start=1500, end=3000, step=1)
    base = calibrate_one(det, wiggly_curve, grid).values
    shifted_cal = CalibrationCurve(wiggly_curve.cal_age + 100.0, wiggly_curve.c14_age, wiggly_curve.c14_sigma)
    moved = calibrate_one(det, shifted_cal, CalendarGrid(start=1600, end=3100, step=1)).values
    assert_allclose(moved, base, rtol=1e-9, atol=1e-15)
    shifted_c14 = CalibrationCurve(wiggly_curve.cal_age, wiggly_curve.c14_age + 300.0, wiggly_curve.c14_sigma)
    later = Determination(id="x", c14_age=2500.0, sigma=25.0)
    assert_allclose(calibrate_one(later, shifted_c14, grid).values, base, rtol=1e-9, atol=1e-15)


def test_calibration_grid_refinement_is_consistent(wiggly_curve):
    det = Determination(id="x", c14_age=2200.0, sigma=25.0)
    coarse = calibrate_one(det, wiggly_curve, CalendarGrid(start=1500, end=3000, step=1)).probabilities()
    fine = calibrate_one(det, wiggly_curve, CalendarGrid(start=1500, end=3000, step=0.5)).probabilities()
    # 每10年一段的概率质量
    assert_allclose(fine.reshape(-1, 20).sum(axis=1), coarse.reshape(-1, 10).sum(axis=1), atol=1e-3)
    assert np.max(np.abs(np.cumsum(fine)[1::2] - np.cumsum(coarse))) < 1e-3


def test_calibrate_one_sharp_limit(sharp_curve):
    grid = CalendarGrid(start=1900, end=2100, step=1)
    det = Determination(id="x", c14_age=2000.5, sigma=0.01)
    density = calibrate_one(det, sharp_curve, grid)
    assert density.values.argmax() == grid.cell_of(2000.5)
    assert density.probabilities().max() == pytest.approx(1.0)


def test_calibrate_one_grid_errors(linear_curve):
    det = Determination(id="far", c14_age=100.0, sigma=10.0)
    with pytest.raises(DataError, match="far"):
        calibrate_one(det, linear_curve, CalendarGrid(start=5000, end=5100))
    with pytest.raises(CurveRangeError):
        calibrate_one(det, linear_curve, CalendarGrid(start=7900, end=8100))


def test_calibrate_many_rows_match_calibrate_one(linear_curve, phase_dets):
    grid = CalendarGrid(start=1900, end=2300, step=2)
    matrix = calibrate_many(phase_dets, linear_curve, grid)
    for row, det in zip(matrix, phase_dets):
        assert_allclose(row, calibrate_one(det, linear_curve, grid).values)


def test_likelihood_matrix_shape(linear_curve):
    grid = CalendarGrid(start=1000, end=1010)
    phi = likelihood_matrix([1005.0, 1002.0, 1008.0], [10.0, 20.0, 30.0], linear_curve, grid)
    assert phi.shape == (3, 10)
    assert np.all(phi > 0)


def test_wiggly_curve_gives_multimodal_calibration(wiggly_curve):
    grid = CalendarGrid(start=1900, end=2500)
    density = spd([Determination(id="w", c14_age=2200.0, sigma=20.0)], wiggly_curve, grid)
    peaks = local_maxima(density, min_relative_height=0.05)
    assert len(peaks) >= 2
    assert max(peaks) - min(peaks) > 100


# --- determinations ---
def test_load_determinations(tmp_path):
    path = _write(tmp_path / "dets.csv", "# comment\nid,c14_age,sigma,site\nA1,2141,30,x\n007,1900,25,y\n")
    dets = load_determinations(path)
    assert [d.id for d in dets] == ["A1", "007"]
    assert dets[0].c14_age == 2141.0
    assert dets[1].sigma == 25.0


def test_load_determinations_errors(tmp_path):
    with pytest.raises(DataError, match="c14_age"):
        load_determinations(_write(tmp_path / "a.csv", "id,age,sigma\nA,1,2\n"))
    with pytest.raises(DataError) as info:
        load_determinations(_write(tmp_path / "b.csv", "id,c14_age,sigma\nA,2000,30\nB,2100,-1\n"))
    assert info.value.line == 3
    with pytest.raises(DataError):
        load_determinations(str(tmp_path / "missing.csv"))


# --- IntCal20 ---
def test_intcal20_single_determination_is_multimodal(intcal20):
    grid = CalendarGrid(start=1800, end=2500)
    density = calibrate_one(Determination(id="x", c14_age=2141.0, sigma=30.0), intcal20, grid)
    peaks = local_maxima(density, min_relative_height=0.2)
    assert max(peaks) - min(peaks) > 100
    assert any(abs(p - 2280) < 40 for p in peaks)
    assert any(abs(p - 2100) < 40 for p in peaks)


def test_write_curve_helper_round_trip(tmp_path):
    cal = np.array([0.0, 10.0, 20.0])
    curve = load_curve(write_curve(tmp_path / "h.14c", cal, cal + 100, np.full(3, 5.0)))
    assert_allclose(curve.c14_age, [100, 110, 120])
