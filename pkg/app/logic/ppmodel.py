"""
泊松过程模型 - 分段常数速率λ(θ)、先验（截断泊松/次序统计量/Gamma）、事件似然与默认超参数

区间约定：在cal BP数值坐标上左闭右开，第j段为 [s_j, s_{j+1})，s_0 = t_a，s_{k+1} = t_b
"""

import math
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln
from scipy.stats import gamma, poisson

from .calibration import CalibrationCurve, Determination, calibrate_one
from ..utils.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_N_LAMBDA = 3.0
DEFAULT_K_MAX = 30
DEFAULT_ALPHA = 1.0
DEFAULT_TAIL = 0.0005


# --- Domain Types ---
@dataclass(frozen=True, eq=False)
class RateFunction:
    """
    分段常数速率函数

    Attributes:
        t_a: 较新的边界（cal BP）
        t_b: 较老的边界（cal BP）
        changepoints: 严格递增的变点 s_1..s_k，位于 (t_a, t_b) 内
        heights: 各段速率 h_0..h_k（事件/日历年），heights[j] 作用于 [s_j, s_{j+1})
    """
    t_a: float
    t_b: float
    changepoints: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        s = np.array(self.changepoints, dtype=float).reshape(-1)
        h = np.array(self.heights, dtype=float).reshape(-1)
        t_a, t_b = float(self.t_a), float(self.t_b)
        if not t_a < t_b:
            raise ValueError(f"速率边界必须满足 t_a < t_b: {t_a}, {t_b}")
        if h.size != s.size + 1:
            raise ValueError(f"高度个数({h.size})必须等于变点个数({s.size})+1")
        edges = np.concatenate([[t_a], s, [t_b]])
        if np.any(np.diff(edges) <= 0):
            raise ValueError(f"变点必须严格递增且位于 ({t_a:g}, {t_b:g}) 内: {s.tolist()}")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError(f"速率高度必须为非负有限数: {h.tolist()}")
        s.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "t_a", t_a)
        object.__setattr__(self, "t_b", t_b)
        object.__setattr__(self, "changepoints", s)
        object.__setattr__(self, "heights", h)

    @property
    def k(self) -> int:
        return int(self.changepoints.size)

    @property
    def span(self) -> float:
        return self.t_b - self.t_a

    @property
    def edges(self) -> np.ndarray:
        """s_0..s_{k+1}"""
        return np.concatenate([[self.t_a], self.changepoints, [self.t_b]])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def piece_index(self, theta: Union[float, np.ndarray]) -> np.ndarray:
        """θ所在段的下标（不检查边界；恰好等于t_b的归入最后一段）"""
        idx = np.searchsorted(self.changepoints, np.asarray(theta, dtype=float), side="right")
        return np.minimum(idx, self.k)

    def to_record(self) -> Dict[str, Any]:
        return {"t_a": self.t_a, "t_b": self.t_b,
                "s": self.changepoints.tolist(), "h": self.heights.tolist()}

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "RateFunction":
        try:
            return cls(record["t_a"], record["t_b"], record.get("s", []), record["h"])
        except KeyError as e:
            raise DataError(f"速率记录缺少字段: {e}")

    @classmethod
    def constant(cls, t_a: float, t_b: float, height: float) -> "RateFunction":
        return cls(t_a, t_b, [], [height])


class PriorSpec(BaseModel):
    """
    先验超参数

    Attributes:
        n_lambda: 变点个数的泊松均值
        k_max: 变点个数上限
        alpha: Gamma形状参数
        beta: Gamma速率参数（单位：日历年，使高度单位为 事件/年）
    """
    model_config = ConfigDict(frozen=True)

    n_lambda: float = Field(default=DEFAULT_N_LAMBDA, gt=0)
    k_max: int = Field(default=DEFAULT_K_MAX, ge=1)
    alpha: float = Field(default=DEFAULT_ALPHA, gt=0)
    beta: float = Field(gt=0)

    def k_pmf(self) -> np.ndarray:
        """截断到 0..k_max 并重新归一化的泊松概率"""
        pmf = poisson.pmf(np.arange(self.k_max + 1), self.n_lambda)
        return pmf / pmf.sum()

    def log_k_pmf(self, k: int) -> float:
        if k < 0 or k > self.k_max:
            return -math.inf
        return float(poisson.logpmf(k, self.n_lambda) - poisson.logcdf(self.k_max, self.n_lambda))


@dataclass(frozen=True, eq=False)
class EventSet:
    """[t_a, t_b] 内的事件日历年龄 θ_1..θ_n"""
    ages: np.ndarray
    t_a: float
    t_b: float

    def __post_init__(self):
        ages = np.array(self.ages, dtype=float).reshape(-1)
        if np.any(ages < self.t_a) or np.any(ages > self.t_b):
            raise ValueError(f"事件年龄必须位于 [{self.t_a:g}, {self.t_b:g}] 内")
        ages.setflags(write=False)
        object.__setattr__(self, "ages", ages)

    def __len__(self) -> int:
        return int(self.ages.size)

    def sorted_ages(self) -> np.ndarray:
        return np.sort(self.ages)


# --- Operations ---
def rate_at(rate: RateFunction, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    λ(θ)：θ ∈ [s_j, s_{j+1}) 时为 heights[j]，[t_a, t_b) 之外为0

    Args:
        rate: 速率函数
        theta: 日历年龄（标量或数组）

    Returns:
        与theta形状一致的速率值
    """
    theta_arr = np.asarray(theta, dtype=float)
    inside = (theta_arr >= rate.t_a) & (theta_arr < rate.t_b)
    values = np.where(inside, rate.heights[rate.piece_index(theta_arr)], 0.0)
    return float(values) if values.ndim == 0 else values


def rate_integral(rate: RateFunction, lower: Optional[float] = None, upper: Optional[float] = None) -> float:
    """
    ∫λ 的闭式解 Σ heights[j]·(s_{j+1} − s_j)

    给出 lower/upper 时只在 [lower, upper] 上积分（超出 [t_a, t_b] 的部分速率为0）
    """
    if lower is None and upper is None:
        return float(np.dot(rate.heights, rate.widths))
    lo = rate.t_a if lower is None else float(lower)
    hi = rate.t_b if upper is None else float(upper)
    if lo > hi:
        raise ValueError(f"积分区间必须满足 lower ≤ upper: {lo}, {hi}")
    clipped = np.clip(rate.edges, lo, hi)
    return float(np.dot(rate.heights, np.diff(clipped)))


def piece_counts(rate: RateFunction, ages: np.ndarray) -> np.ndarray:
    """每段内的事件数（t_b处的事件计入最后一段）"""
    return np.bincount(rate.piece_index(ages), minlength=rate.k + 1)


def log_likelihood(rate: RateFunction, events: Union[EventSet, np.ndarray]) -> float:
    """
    事件的泊松过程对数似然 Σ log λ(θ_i) − ∫λ

    Args:
        rate: 速率函数
        events: 事件（须位于 [t_a, t_b] 内）

    Returns:
        对数似然；若有事件落在高度为0的段内返回 -inf
    """
    ages = events.ages if isinstance(events, EventSet) else np.asarray(events, dtype=float)
    if np.any(ages < rate.t_a) or np.any(ages > rate.t_b):
        raise DataError(f"事件超出速率边界 [{rate.t_a:g}, {rate.t_b:g}]")
    counts = piece_counts(rate, ages)
    occupied = counts > 0
    if np.any(rate.heights[occupied] <= 0):
        return -math.inf
    return float(np.dot(counts[occupied], np.log(rate.heights[occupied])) - rate_integral(rate))


def log_location_prior(rate: RateFunction) -> float:
    """变点位置先验：2k+1个均匀点的偶数位次序统计量"""
    k = rate.k
    return float(gammaln(2 * k + 2) - (2 * k + 1) * math.log(rate.span) + np.sum(np.log(rate.widths)))


def log_height_prior(heights: np.ndarray, prior: PriorSpec) -> float:
    heights = np.asarray(heights, dtype=float)
    if np.any(heights <= 0):
        return -math.inf
    return float(np.sum(gamma.logpdf(heights, a=prior.alpha, scale=1.0 / prior.beta)))


def log_prior(rate: RateFunction, prior: PriorSpec) -> float:
    """
    log p(k) + log[(2k+1)!/L^{2k+1} · Π(s_{j+1}−s_j)] + Σ log Γ(h_j; α, β)

    Args:
        rate: 速率函数
        prior: 先验超参数

    Returns:
        对数先验密度
    """
    if rate.k > prior.k_max:
        raise ValueError(f"变点个数{rate.k}超过上限k_max={prior.k_max}")
    return prior.log_k_pmf(rate.k) + log_location_prior(rate) + log_height_prior(rate.heights, prior)


def default_prior(n: int, t_a: float, t_b: float, n_lambda: float = DEFAULT_N_LAMBDA,
                  k_max: int = DEFAULT_K_MAX) -> PriorSpec:
    """
    默认先验：n_λ=3，α=1，β=(t_b−t_a)/n，即高度先验为均值 n/(t_b−t_a) 的指数分布

    Args:
        n: 测年数据个数
        t_a, t_b: 分析窗口

    Returns:
        PriorSpec
    """
    if n < 1:
        raise ValueError(f"数据个数必须≥1: {n}")
    if not t_a < t_b:
        raise ValueError(f"必须满足 t_a < t_b: {t_a}, {t_b}")
    return PriorSpec(n_lambda=n_lambda, k_max=k_max, alpha=DEFAULT_ALPHA, beta=(t_b - t_a) / n)


def default_bounds(dets: Sequence[Determination], curve: CalibrationCurve, step: float = 1.0,
                   tail: float = DEFAULT_TAIL, grid_step: float = 1.0) -> Tuple[float, float]:
    """
    由独立校准密度的远端尾部确定分析窗口

    t_a 取各数据 tail 分位数的最小值，t_b 取 1−tail 分位数的最大值，
    向外取整到 grid_step 的整数倍（不超出曲线范围），使窗口可以直接按 grid_step 划分

    Args:
        dets: 测年数据
        curve: 校准曲线
        step: 校准网格步长
        tail: 尾部概率
        grid_step: 分析网格步长

    Returns:
        (t_a, t_b)
    """
    if not dets:
        raise DataError("至少需要一个测年数据才能确定边界")
    if not grid_step > 0:
        raise ValueError(f"网格步长必须为正: {grid_step}")
    grid = curve.full_grid(step)
    lows, highs = [], []
    for det in dets:
        density = calibrate_one(det, curve, grid)
        lows.append(density.quantile(tail))
        highs.append(density.quantile(1.0 - tail))
    n_lo = max(math.floor(min(lows) / grid_step), math.ceil(curve.min_cal_age / grid_step))
    n_hi = min(math.ceil(max(highs) / grid_step), math.floor(curve.max_cal_age / grid_step))
    if not n_lo < n_hi:
        raise DataError(f"曲线范围内放不下步长为{grid_step:g}的分析窗口")
    t_a, t_b = n_lo * grid_step, n_hi * grid_step
    logger.info(f"默认分析窗口: T_A={t_a} cal BP, T_B={t_b} cal BP ({len(dets)}个数据)")
    return float(t_a), float(t_b)


def count_events(events: Union[EventSet, np.ndarray], s: float, t: float) -> int:
    """N(s, t]：落在 (s, t] 内的事件数"""
    if s > t:
        raise ValueError(f"区间必须满足 s ≤ t: {s}, {t}")
    ages = events.ages if isinstance(events, EventSet) else np.asarray(events, dtype=float)
    return int(np.count_nonzero((ages > s) & (ages <= t)))
