import os

import numpy as np
import pytest

from app.logic.calibration import CalendarGrid, Determination, load_curve
from app.logic.ppmodel import default_prior
from app.logic.sampler import ChainOptions


def write_curve(path, cal_ages, mu, tau, header=True):
    with open(path, "w", encoding="latin1") as f:
        if header:
            f.write("##synthetic calibration curve\n#CAL BP,14C age,Error,Delta 14C,Sigma\n")
        for theta, m, t in zip(cal_ages, mu, tau):
            f.write(f"{theta:g},{m:.6f},{t:g},0.0,0.0\n")
    return str(path)


def write_dets(path, dets):
    with open(path, "w", encoding="utf-8") as f:
        f.write("id,c14_age,sigma\n")
        for det in dets:
            f.write(f"{det.id},{det.c14_age!r},{det.sigma!r}\n")
    return str(path)


@pytest.fixture
def linear_curve_path(tmp_path):
    """μ(θ) = θ, τ = 15"""
    cal = np.arange(0, 8001, 5)
    return write_curve(tmp_path / "linear.14c", cal, cal.astype(float), np.full(cal.size, 15.0))


@pytest.fixture
def linear_curve(linear_curve_path):
    return load_curve(linear_curve_path)


@pytest.fixture
def sharp_curve(tmp_path):
    """μ(θ) = θ with negligible curve error"""
    cal = np.arange(0, 5001, 10)
    return load_curve(write_curve(tmp_path / "sharp.14c", cal, cal.astype(float), np.full(cal.size, 1e-6)))


@pytest.fixture
def wiggly_curve(tmp_path):
    """μ(θ) = θ + 150·sin(πθ/200): non-monotone, 14C age 2200 maps to three calendar ages"""
    cal = np.arange(1000, 3501, 5)
    mu = cal + 150.0 * np.sin(np.pi * cal / 200.0)
    return load_curve(write_curve(tmp_path / "wiggly.14c", cal, mu, np.full(cal.size, 10.0)))


@pytest.fixture
def intcal20():
    curve_dir = os.environ.get("DATESKIT_CURVE_DIR")
    path = os.path.join(curve_dir, "intcal20.14c") if curve_dir else None
    if not path or not os.path.exists(path):
        pytest.skip("需要 DATESKIT_CURVE_DIR/intcal20.14c")
    return load_curve(path)


@pytest.fixture
def phase_dets():
    """五个落在2050-2100 cal BP附近的测年数据（线性曲线下 14C年龄 = 日历年龄）"""
    return [Determination(id=f"d{i}", c14_age=age, sigma=20.0)
            for i, age in enumerate([2055.0, 2068.0, 2074.0, 2086.0, 2097.0], start=1)]


@pytest.fixture
def dets_path(tmp_path, phase_dets):
    return write_dets(tmp_path / "dets.csv", phase_dets)


@pytest.fixture
def make_options():
    def _make(start=1900.0, end=2300.0, n=5, seed=1, step=1.0, **kwargs):
        grid = CalendarGrid(start=start, end=end, step=step)
        prior = kwargs.pop("prior", None) or default_prior(n, start, end)
        return ChainOptions(seed=seed, grid=grid, prior=prior, **kwargs)
    return _make
