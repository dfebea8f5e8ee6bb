"""
后验汇总 - 后验平均速率及逐点区间、变点个数直方图、按k条件的变点位置/高度分布、速率实现导出
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from .calibration import CalendarGrid, DensityGrid
from .ppmodel import RateFunction, rate_at
from .sampler import PosteriorSamples
from ..utils.errors import DataError, NoRealisationsError

logger = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.95
DEFAULT_BIN_WIDTH = 5.0
DEFAULT_HEIGHT_BINS = 50


# --- Result Types ---
@dataclass(frozen=True, eq=False)
class RateSummary:
    """
    网格上的后验速率汇总

    Attributes:
        grid: 日历网格
        mean: 逐点后验平均速率
        lower: 逐点 (1−level)/2 分位数
        upper: 逐点 1−(1−level)/2 分位数
        level: 概率水平
        n_samples: 参与汇总的实现个数
    """
    grid: CalendarGrid
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_samples: int

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise ValueError("区间下界大于上界")
        if np.any(self.mean < 0) or np.any(self.lower < 0):
            raise ValueError("速率汇总出现负值")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"cal_age": self.grid.centres, "mean": self.mean,
                             "lower": self.lower, "upper": self.upper})

    def to_density(self) -> DensityGrid:
        """把后验平均速率归一化为日历年龄密度"""
        total = float(np.sum(self.mean) * self.grid.step)
        if not total > 0:
            raise DataError("后验平均速率在网格上全部为0，无法归一化")
        return DensityGrid(self.grid, self.mean / total)


@dataclass(frozen=True, eq=False)
class IndexedHistogram:
    """
    按序号的归一化直方图（序号1为最老的变点或最老的区间）

    Attributes:
        index: 序号（从1开始）
        edges: 分箱边界
        mass: 每个分箱的概率，和为1
    """
    index: int
    edges: np.ndarray
    mass: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"index": self.index, "bin_start": self.edges[:-1],
                             "bin_end": self.edges[1:], "density": self.density})


class RealisationTrace(NamedTuple):
    iteration: int
    k: int
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ChainComparison:
    """多条链后验平均速率的比较"""
    summaries: List[RateSummary]
    max_abs_difference: float
    relative_difference: float

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"cal_age": self.summaries[0].grid.centres})
        for c, summary in enumerate(self.summaries, start=1):
            df[f"chain{c}"] = summary.mean
        return df


# --- Helpers ---
def _require_samples(samples: PosteriorSamples):
    if samples.is_empty:
        raise DataError("后验样本为空（burn-in和抽稀之后没有保留任何状态）")


def _conditional_rates(samples: PosteriorSamples, k_cond: int) -> List[RateFunction]:
    _require_samples(samples)
    rates = [rate for rate in samples.rates if rate.k == k_cond]
    if not rates:
        observed = sorted(set(samples.k_values.tolist()))
        raise NoRealisationsError(f"没有k={k_cond}的后验实现（出现过的k: {observed}）")
    return rates


def rate_matrix(rates: Sequence[RateFunction], grid: CalendarGrid) -> np.ndarray:
    """每个实现在格点中心处的速率，形状 (S, n_cells)"""
    centres = grid.centres
    return np.array([rate_at(rate, centres) for rate in rates]).reshape(len(rates), grid.n_cells)


def summarise_rates(rates: Sequence[RateFunction], grid: CalendarGrid, level: float = DEFAULT_LEVEL) -> RateSummary:
    if not 0 < level < 1:
        raise ValueError(f"概率水平必须在(0, 1)内: {level}")
    matrix = rate_matrix(rates, grid)
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(matrix, [tail, 1.0 - tail], axis=0)
    return RateSummary(grid, matrix.mean(axis=0), lower, upper, level, len(rates))


# --- Operations ---
def mean_rate(samples: PosteriorSamples, grid: CalendarGrid, level: float = DEFAULT_LEVEL) -> RateSummary:
    """
    逐点后验平均速率及分位数区间

    Args:
        samples: 后验样本（非空）
        grid: 汇总网格
        level: 概率水平

    Returns:
        RateSummary
    """
    _require_samples(samples)
    summary = summarise_rates(samples.rates, grid, level)
    logger.info(f"后验平均速率: {summary.n_samples}个实现, 峰值 {summary.mean.max():.4f} 事件/年")
    return summary


def changepoint_count_histogram(samples: PosteriorSamples) -> Dict[int, float]:
    """变点个数k的后验频率（按k升序）"""
    _require_samples(samples)
    values, counts = np.unique(samples.k_values, return_counts=True)
    return {int(k): float(c) / len(samples) for k, c in zip(values, counts)}


def changepoint_locations(samples: PosteriorSamples, k_cond: int,
                          bin_width: float = DEFAULT_BIN_WIDTH) -> List[IndexedHistogram]:
    """
    给定k=k_cond时每个变点位置的归一化直方图，序号1为最老（cal BP最大）的变点

    Args:
        samples: 后验样本
        k_cond: 条件变点个数（≥1）
        bin_width: 分箱宽度（日历年）

    Raises:
        NoRealisationsError: 没有k=k_cond的实现
    """
    if k_cond < 1:
        raise ValueError(f"条件变点个数必须≥1: {k_cond}")
    if bin_width <= 0:
        raise ValueError(f"分箱宽度必须为正: {bin_width}")
    rates = _conditional_rates(samples, k_cond)
    t_a, t_b = rates[0].t_a, rates[0].t_b
    edges = np.arange(t_a, t_b, bin_width)
    edges = np.append(edges, t_b)
    # 最老的在前
    locations = np.array([rate.changepoints[::-1] for rate in rates])
    histograms = []
    for i in range(k_cond):
        counts, _ = np.histogram(locations[:, i], bins=edges)
        histograms.append(IndexedHistogram(i + 1, edges, counts / counts.sum()))
    return histograms


def conditional_heights(samples: PosteriorSamples, k_cond: int,
                        bins: int = DEFAULT_HEIGHT_BINS) -> List[IndexedHistogram]:
    """
    给定k=k_cond时每个区间高度的归一化直方图，序号1为最老的区间

    分箱在 [0, 子集最大高度] 上均分
    """
    if k_cond < 0:
        raise ValueError(f"条件变点个数必须≥0: {k_cond}")
    if bins < 1:
        raise ValueError(f"分箱数必须≥1: {bins}")
    rates = _conditional_rates(samples, k_cond)
    heights = np.array([rate.heights[::-1] for rate in rates])
    top = float(heights.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    histograms = []
    for i in range(k_cond + 1):
        counts, _ = np.histogram(heights[:, i], bins=edges)
        histograms.append(IndexedHistogram(i + 1, edges, counts / counts.sum()))
    return histograms


def conditional_mean_rate(samples: PosteriorSamples, grid: CalendarGrid, k_cond: int,
                          level: float = DEFAULT_LEVEL) -> RateSummary:
    """只对k=k_cond的实现求后验平均速率"""
    rates = _conditional_rates(samples, k_cond)
    logger.info(f"k={k_cond}的条件平均速率: {len(rates)}/{len(samples)}个实现")
    return summarise_rates(rates, grid, level)


def export_realisations(samples: PosteriorSamples, count: int, grid: CalendarGrid) -> List[RealisationTrace]:
    """
    均匀抽取count个实现并在网格上求值，按迭代序号升序返回；count=1时取最后一个保留的状态

    Raises:
        ValueError: count超过保留的样本数
    """
    _require_samples(samples)
    if count < 1 or count > len(samples):
        raise ValueError(f"导出个数必须在 [1, {len(samples)}] 内: {count}")
    indices = np.unique(np.round(np.linspace(len(samples) - 1, 0, count)).astype(int))
    centres = grid.centres
    return [RealisationTrace(samples.iterations[i], samples.rates[i].k, rate_at(samples.rates[i], centres))
            for i in indices]


def realisations_frame(traces: Sequence[RealisationTrace], grid: CalendarGrid) -> pd.DataFrame:
    """宽表：cal_age列加每个实现一列 iter_<迭代序号>"""
    df = pd.DataFrame({"cal_age": grid.centres})
    for trace in traces:
        df[f"iter_{trace.iteration}"] = trace.values
    return df


def calendar_age_densities(samples: PosteriorSamples, grid: CalendarGrid) -> List[DensityGrid]:
    """每个测年数据的后验日历年龄直方图（归一化为密度）"""
    _require_samples(samples)
    densities = []
    for i, det_id in enumerate(samples.determination_ids):
        ages = samples.ages[:, i]
        inside = (ages >= grid.start) & (ages <= grid.end)
        if not np.any(inside):
            raise DataError(f"测年数据{det_id}的后验日历年龄全部落在网格 [{grid.start:g}, {grid.end:g}] 之外")
        counts = np.bincount(grid.cell_of(ages[inside]), minlength=grid.n_cells)
        densities.append(DensityGrid(grid, counts / (counts.sum() * grid.step)))
    return densities


def compare_chains(chains: Sequence[PosteriorSamples], grid: CalendarGrid,
                   level: float = DEFAULT_LEVEL) -> ChainComparison:
    """
    多次运行的收敛检查：各链后验平均速率的最大逐点差，及其相对合并峰值的比例
    """
    if len(chains) < 2:
        raise ValueError(f"比较至少需要2条链: {len(chains)}")
    summaries = [mean_rate(chain, grid, level) for chain in chains]
    means = np.array([s.mean for s in summaries])
    max_diff = float(np.max(means.max(axis=0) - means.min(axis=0)))
    peak = float(means.mean(axis=0).max())
    relative = max_diff / peak if peak > 0 else 0.0
    logger.info(f"{len(chains)}条链的平均速率最大差 {max_diff:.4g} (相对峰值 {relative:.1%})")
    return ChainComparison(summaries, max_diff, relative)


def rate_diagnostics(summary: RateSummary, n_determinations: int) -> Dict[str, Any]:
    """后验平均速率的积分及其与数据个数之比（只报告，不作断言）"""
    integral = float(np.sum(summary.mean) * summary.grid.step)
    return {"integral": integral, "n_determinations": int(n_determinations),
            "ratio": integral / n_determinations if n_determinations else None}


def count_histogram_frame(histogram: Dict[int, float]) -> pd.DataFrame:
    return pd.DataFrame({"k": list(histogram.keys()), "probability": list(histogram.values())})


def histograms_frame(histograms: Sequence[IndexedHistogram]) -> pd.DataFrame:
    return pd.concat([h.to_frame() for h in histograms], ignore_index=True)


def posterior_mode(histogram: Dict[int, float]) -> Optional[int]:
    if not histogram:
        return None
    return max(histogram, key=lambda k: (histogram[k], -k))
