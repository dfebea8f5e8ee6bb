"""
SPD基线 - 独立校准密度的平均、bootstrap分位数带、零模型的蒙特卡洛包络
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from tqdm import tqdm

from .calibration import CalendarGrid, CalibrationCurve, DensityGrid, Determination, curve_at, likelihood_matrix
from ..utils.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_REPLICATES = 500
DEFAULT_LEVEL = 0.95
DEFAULT_SIGMA_OBS = 25.0


@dataclass(frozen=True, eq=False)
class QuantileBand:
    """
    逐点分位数带

    Attributes:
        grid: 日历网格
        lower: (1−level)/2 分位数
        upper: 1−(1−level)/2 分位数
        level: 概率水平
        replicates: 重复次数
        exit_fraction: 观测SPD落在带外的格点比例（只在给出观测SPD时计算）
    """
    grid: CalendarGrid
    lower: np.ndarray
    upper: np.ndarray
    level: float
    replicates: int
    exit_fraction: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError(f"概率水平必须在(0, 1)内: {self.level}")
        if np.any(self.lower > self.upper):
            raise ValueError("分位数带下界大于上界")

    def contains(self, values: np.ndarray) -> np.ndarray:
        return (values >= self.lower) & (values <= self.upper)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"cal_age": self.grid.centres, "lower": self.lower, "upper": self.upper})


def _check_level(level: float, replicates: int):
    if replicates < 2:
        raise ValueError(f"重复次数必须≥2: {replicates}")
    if not 0 < level < 1:
        raise ValueError(f"概率水平必须在(0, 1)内: {level}")


def _mean_density(c14_ages: np.ndarray, sigmas: np.ndarray, curve: CalibrationCurve, grid: CalendarGrid) -> np.ndarray:
    weights = likelihood_matrix(c14_ages, sigmas, curve, grid)
    totals = weights.sum(axis=1)
    if np.any(totals <= 0):
        bad = int(np.flatnonzero(totals <= 0)[0])
        raise DataError(f"14C年龄 {c14_ages[bad]:g}±{sigmas[bad]:g} 在网格 [{grid.start:g}, {grid.end:g}] 上权重全部为0")
    return np.mean(weights / (totals[:, None] * grid.step), axis=0)


def spd(dets: Sequence[Determination], curve: CalibrationCurve, grid: CalendarGrid) -> DensityGrid:
    """
    SPD：n个独立校准密度的逐点平均

    Args:
        dets: 测年数据
        curve: 校准曲线
        grid: 日历网格

    Returns:
        归一化的DensityGrid
    """
    if not dets:
        raise DataError("SPD至少需要一个测年数据")
    values = _mean_density(np.array([d.c14_age for d in dets]), np.array([d.sigma for d in dets]), curve, grid)
    return DensityGrid(grid, values)


def band_from_replicates(grid: CalendarGrid, replicates: np.ndarray, level: float = DEFAULT_LEVEL,
                         observed: Optional[DensityGrid] = None) -> QuantileBand:
    """由重复SPD矩阵 (B, n_cells) 计算逐点分位数带"""
    _check_level(level, replicates.shape[0])
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(replicates, [tail, 1.0 - tail], axis=0)
    exit_fraction = None
    if observed is not None:
        if observed.grid != grid:
            raise DataError("观测SPD与包络的网格不一致")
        outside = (observed.values < lower) | (observed.values > upper)
        exit_fraction = float(np.mean(outside))
    return QuantileBand(grid, lower, upper, level, int(replicates.shape[0]), exit_fraction)


def _replicate_rngs(seed: int, replicates: int) -> List[np.random.Generator]:
    # 每个重复使用独立子流，结果只取决于 (seed, 重复序号)
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(replicates)]


def _simulate_spd(cell_ages: np.ndarray, sigmas: np.ndarray, curve: CalibrationCurve, grid: CalendarGrid,
                  rng: np.random.Generator) -> np.ndarray:
    mu, tau = curve_at(curve, cell_ages)
    c14_ages = rng.normal(mu, np.sqrt(sigmas ** 2 + tau ** 2))
    return _mean_density(c14_ages, sigmas, curve, grid)


def bootstrap_replicates(dets: Sequence[Determination], curve: CalibrationCurve, grid: CalendarGrid,
                         replicates: int = DEFAULT_REPLICATES, seed: int = 0, progress: bool = False) -> np.ndarray:
    """
    bootstrap重复SPD矩阵：从初始SPD的格点分布中抽n个日历年龄，沿用各数据原有的σ_i模拟14C年龄，重新求SPD

    Returns:
        形状 (replicates, n_cells) 的数组
    """
    if replicates < 2:
        raise ValueError(f"重复次数必须≥2: {replicates}")
    initial = spd(dets, curve, grid)
    probabilities = initial.probabilities()
    sigmas = np.array([d.sigma for d in dets])
    centres = grid.centres
    matrix = np.empty((replicates, grid.n_cells))
    for b, rng in enumerate(tqdm(_replicate_rngs(seed, replicates), disable=not progress, desc="SPD bootstrap")):
        cells = rng.choice(grid.n_cells, size=len(dets), p=probabilities)
        matrix[b] = _simulate_spd(centres[cells], sigmas, curve, grid, rng)
    return matrix


def spd_bootstrap(dets: Sequence[Determination], curve: CalibrationCurve, grid: CalendarGrid,
                  replicates: int = DEFAULT_REPLICATES, level: float = DEFAULT_LEVEL, seed: int = 0,
                  progress: bool = False) -> QuantileBand:
    """
    SPD的bootstrap分位数带

    Args:
        dets: 测年数据
        curve: 校准曲线
        grid: 日历网格
        replicates: 重复次数（≥2）
        level: 概率水平
        seed: 随机种子

    Returns:
        QuantileBand
    """
    _check_level(level, replicates)
    matrix = bootstrap_replicates(dets, curve, grid, replicates, seed, progress)
    band = band_from_replicates(grid, matrix, level)
    logger.info(f"SPD bootstrap完成: {replicates}次重复, 水平{level}")
    return band


def mc_replicates(null_model: DensityGrid, n: int, curve: CalibrationCurve, grid: CalendarGrid,
                  replicates: int = DEFAULT_REPLICATES, seed: int = 0, sigma_obs: float = DEFAULT_SIGMA_OBS,
                  progress: bool = False) -> np.ndarray:
    """零模型下模拟n个测年数据并求SPD，返回 (replicates, n_cells) 矩阵"""
    if n < 1:
        raise ValueError(f"模拟数据个数必须≥1: {n}")
    if replicates < 2:
        raise ValueError(f"重复次数必须≥2: {replicates}")
    if sigma_obs <= 0:
        raise ValueError(f"观测误差必须为正: {sigma_obs}")
    probabilities = null_model.probabilities()
    centres = null_model.grid.centres
    sigmas = np.full(n, float(sigma_obs))
    matrix = np.empty((replicates, grid.n_cells))
    for b, rng in enumerate(tqdm(_replicate_rngs(seed, replicates), disable=not progress, desc="SPD MC")):
        cells = rng.choice(null_model.grid.n_cells, size=n, p=probabilities)
        matrix[b] = _simulate_spd(centres[cells], sigmas, curve, grid, rng)
    return matrix


def spd_mc_envelope(null_model: DensityGrid, n: int, curve: CalibrationCurve, grid: CalendarGrid,
                    replicates: int = DEFAULT_REPLICATES, level: float = DEFAULT_LEVEL, seed: int = 0,
                    sigma_obs: float = DEFAULT_SIGMA_OBS, observed: Optional[DensityGrid] = None,
                    progress: bool = False) -> QuantileBand:
    """
    零模型的蒙特卡洛SPD包络

    给出observed时同时计算其落在包络外的格点比例，仅用于整体模型检验
    """
    _check_level(level, replicates)
    matrix = mc_replicates(null_model, n, curve, grid, replicates, seed, sigma_obs, progress)
    band = band_from_replicates(grid, matrix, level, observed)
    if band.exit_fraction is not None:
        logger.info(f"观测SPD在 {band.exit_fraction:.1%} 的格点上超出{level:.0%}包络")
    return band


def density_from_frame(df: pd.DataFrame, column: str = "density") -> DensityGrid:
    """把 cal_age,density 表（等间距格点中心）还原为归一化的DensityGrid"""
    if "cal_age" not in df.columns or column not in df.columns:
        raise DataError(f"密度表需要列 cal_age 和 {column}，可用列名: {list(df.columns)}")
    centres = df["cal_age"].to_numpy(dtype=float)
    values = df[column].to_numpy(dtype=float)
    if centres.size < 2:
        raise DataError("密度表至少需要2行")
    steps = np.diff(centres)
    if not np.allclose(steps, steps[0]) or steps[0] <= 0:
        raise DataError("密度表的cal_age必须等间距递增")
    step = float(steps[0])
    grid = CalendarGrid(start=centres[0] - step / 2, end=centres[-1] + step / 2, step=step)
    total = values.sum() * step
    if not total > 0:
        raise DataError("密度表的总质量为0")
    return DensityGrid(grid, values / total)


def l1_distance(a: DensityGrid, b: DensityGrid) -> float:
    """Σ|a−b|·step，两者须在同一网格上"""
    if a.grid != b.grid:
        raise ValueError("两个密度的网格不一致")
    return float(np.sum(np.abs(a.values - b.values)) * a.grid.step)


def local_maxima(density: DensityGrid, min_relative_height: float = 0.0) -> List[float]:
    """
    密度的局部极大值所在的日历年龄（平台取中点）

    Args:
        density: 密度
        min_relative_height: 只保留高于 最大值×该比例 的峰
    """
    height = min_relative_height * float(density.values.max()) if min_relative_height > 0 else None
    peaks, _ = find_peaks(density.values, height=height)
    return [float(age) for age in density.cal_ages[peaks]]
