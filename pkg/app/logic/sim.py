"""
模拟数据 - 从速率函数抽取泊松过程事件，正向模拟14C测年数据，以及内置的模拟实验预设
"""

import json
import math
import os
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .calibration import CalibrationCurve, Determination, curve_at
from .ppmodel import EventSet, RateFunction, rate_at
from ..utils.errors import DataError

logger = logging.getLogger(__name__)

PRESET_NAMES = ("uniform-phase", "spd-spread", "two-phase", "four-changepoint", "exp-growth", "megafauna-config")

UNIFORM_PHASE_WINDOW = (1850.0, 2350.0)
UNIFORM_PHASE_INTERVAL = (2050.0, 2100.0)
FOUR_CHANGEPOINT_WINDOW = (1750.0, 3300.0)
FOUR_CHANGEPOINT_RATE = ([1950.0, 2300.0, 2700.0, 3100.0], [0.0, 0.06, 0.28, 0.08, 0.0])
EXP_GROWTH_WINDOW = (3800.0, 6200.0)
TWO_PHASE_WINDOW = (2500.0, 6000.0)
TWO_PHASE_CENTRES = (5000.0, 3500.0)
TWO_PHASE_SPREAD = 200.0
ENVELOPE_PIECES = 50


# --- Specs ---
class ForwardModelSpec(BaseModel):
    """正向模型：观测误差σ_obs，是否叠加校准曲线误差τ"""
    model_config = ConfigDict(frozen=True)

    sigma_obs: float = Field(default=25.0, ge=0)
    include_curve_error: bool = True


class PresetSpec(BaseModel):
    """
    模拟实验预设

    Attributes:
        name: 预设名称
        n_events: uniform-phase / two-phase的事件个数（默认40，spd-spread和two-phase为50）
        growth_rate: 指数增长率r（每日历年）
        start: 增长开始的日历年龄a（cal BP）
        end: 增长结束的日历年龄b（cal BP）
        expected_count: 指数增长预设的期望事件数N
    """
    model_config = ConfigDict(frozen=True)

    name: Literal["uniform-phase", "spd-spread", "two-phase", "four-changepoint", "exp-growth", "megafauna-config"]
    n_events: Optional[int] = Field(default=None, ge=1)
    growth_rate: float = Field(default=0.003, gt=0)
    start: float = 6000.0
    end: float = 4000.0
    expected_count: float = Field(default=500.0, gt=0)

    @model_validator(mode="after")
    def _check_growth(self):
        if not self.end < self.start:
            raise ValueError(f"指数增长区间必须满足 b < a: a={self.start}, b={self.end}")
        return self

    @property
    def phase_events(self) -> int:
        if self.n_events is not None:
            return self.n_events
        return 50 if self.name in ("spd-spread", "two-phase") else 40


@dataclass(frozen=True)
class ExponentialRate:
    """λ(θ) = c·e^{r(a−θ)}，θ ∈ (b, a]，其余为0"""
    c: float
    r: float
    a: float
    b: float

    @classmethod
    def with_expected_count(cls, count: float, r: float, a: float, b: float) -> "ExponentialRate":
        """由期望事件数约束求c：c = N·r/(e^{r(a−b)} − 1)"""
        return cls(count * r / math.expm1(r * (a - b)), r, a, b)

    def __call__(self, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        theta_arr = np.asarray(theta, dtype=float)
        inside = (theta_arr > self.b) & (theta_arr <= self.a)
        values = np.where(inside, self.c * np.exp(self.r * (self.a - np.clip(theta_arr, self.b, self.a))), 0.0)
        return float(values) if values.ndim == 0 else values

    def integral(self) -> float:
        return self.c * math.expm1(self.r * (self.a - self.b)) / self.r

    def envelope(self, t_a: float, t_b: float, pieces: int = ENVELOPE_PIECES) -> RateFunction:
        """分段常数上包络；速率随θ递减，每段取其较新端点处的值"""
        inner = np.linspace(self.b, self.a, pieces + 1)
        changepoints = [x for x in [self.b, *inner[1:-1], self.a] if t_a < x < t_b]
        edges = np.concatenate([[t_a], changepoints, [t_b]])
        heights = []
        for lower, upper in zip(edges[:-1], edges[1:]):
            if upper <= self.b or lower >= self.a:
                heights.append(0.0)
            else:
                heights.append(self.c * math.exp(self.r * (self.a - max(lower, self.b))))
        return RateFunction(t_a, t_b, changepoints, heights)

    def to_record(self) -> Dict[str, Any]:
        return {"type": "exponential", "c": self.c, "r": self.r, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class NormalMixtureRate:
    """λ(θ) = n·Σ w_i·φ(θ; m_i, sd_i)：平滑正态阶段的混合，全实轴上积分为n"""
    count: float
    centres: Tuple[float, ...]
    spreads: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if not len(self.centres) == len(self.spreads) == len(self.weights) > 0:
            raise ValueError("正态混合的中心、标准差和权重个数必须一致")
        if min(self.spreads) <= 0 or min(self.weights) < 0 or not math.isclose(sum(self.weights), 1.0):
            raise ValueError(f"标准差必须为正且权重之和为1: {self.spreads}, {self.weights}")

    def __call__(self, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        theta_arr = np.asarray(theta, dtype=float)
        values = self.count * sum(w * norm.pdf(theta_arr, m, s)
                                  for m, s, w in zip(self.centres, self.spreads, self.weights))
        return float(values) if values.ndim == 0 else values

    def cdf(self, theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """混合分布函数（不含count）"""
        return sum(w * norm.cdf(theta, m, s) for m, s, w in zip(self.centres, self.spreads, self.weights))

    def sample(self, n: int, rng: np.random.Generator, t_a: float, t_b: float) -> np.ndarray:
        """恰好n个落在 [t_a, t_b] 内的日历年龄，窗口外的抽样丢弃重抽"""
        ages = np.empty(0)
        while ages.size < n:
            component = rng.choice(len(self.weights), size=n, p=self.weights)
            draws = rng.normal(np.take(self.centres, component), np.take(self.spreads, component))
            ages = np.concatenate([ages, draws[(draws >= t_a) & (draws <= t_b)]])
        return np.sort(ages[:n])

    def to_record(self) -> Dict[str, Any]:
        return {"type": "normal-mixture", "count": self.count, "centres": list(self.centres),
                "spreads": list(self.spreads), "weights": list(self.weights)}


@dataclass(frozen=True, eq=False)
class PresetResult:
    """
    预设实验的输出

    Attributes:
        spec: 预设参数
        bounds: 分析窗口 (t_a, t_b)
        events: 真实日历年龄（megafauna-config为None）
        rate: 分段常数的真实速率（exp-growth为None）
        truth: 非分段常数的真实速率（exp-growth为指数速率，two-phase为正态混合）
        record: 说明记录（写入真值JSON）
    """
    spec: PresetSpec
    bounds: Tuple[float, float]
    events: Optional[EventSet]
    rate: Optional[RateFunction] = None
    truth: Optional[Union[ExponentialRate, NormalMixtureRate]] = None
    record: Dict[str, Any] = field(default_factory=dict)

    def true_rate_at(self, theta: np.ndarray) -> np.ndarray:
        if self.rate is not None:
            return rate_at(self.rate, theta)
        if self.truth is not None:
            return self.truth(theta)
        raise DataError(f"预设{self.spec.name}没有真实速率")


# --- Event Sampling ---
def sample_pp_events(rate: RateFunction, rng: np.random.Generator) -> EventSet:
    """
    分段常数速率的泊松过程：每段抽 Poisson(h_j·Δ_j) 个事件，段内均匀分布

    Returns:
        按时间排序的EventSet
    """
    edges = rate.edges
    counts = rng.poisson(rate.heights * rate.widths)
    ages = [rng.uniform(lower, upper, size=count)
            for lower, upper, count in zip(edges[:-1], edges[1:], counts) if count > 0]
    values = np.sort(np.concatenate(ages)) if ages else np.empty(0)
    logger.debug(f"泊松过程抽样: 各段事件数 {counts.tolist()}")
    return EventSet(values, rate.t_a, rate.t_b)


def sample_thinned_events(rate_fn: Callable[[np.ndarray], np.ndarray], envelope: RateFunction,
                          rng: np.random.Generator) -> EventSet:
    """
    对任意非负速率函数做thinning抽样：先从分段常数包络抽候选点，再以 λ(θ)/包络(θ) 的概率保留

    Raises:
        ValueError: 速率函数超过包络
    """
    candidates = sample_pp_events(envelope, rng)
    if len(candidates) == 0:
        return candidates
    ages = candidates.ages
    target = np.asarray(rate_fn(ages), dtype=float)
    bound = rate_at(envelope, ages)
    if np.any(target > bound * (1 + 1e-12)):
        raise ValueError("速率函数超过了thinning包络")
    keep = rng.random(ages.size) * bound < target
    return EventSet(ages[keep], envelope.t_a, envelope.t_b)


def forward_model(events: EventSet, curve: CalibrationCurve, spec: ForwardModelSpec,
                  rng: np.random.Generator, prefix: str = "sim") -> List[Determination]:
    """
    X_i ~ N(μ(θ_i), σ_obs² + τ(θ_i)²)，σ_i记为σ_obs

    σ_obs = 0 时记录的σ_i取一个极小的正数（Determination要求σ>0）
    """
    mu, tau = curve_at(curve, events.ages)
    variance = spec.sigma_obs ** 2 + (tau ** 2 if spec.include_curve_error else 0.0)
    c14_ages = mu + np.sqrt(variance) * rng.standard_normal(len(events))
    sigma = spec.sigma_obs if spec.sigma_obs > 0 else 1e-9
    width = max(3, len(str(len(events))))
    return [Determination(id=f"{prefix}{i + 1:0{width}d}", c14_age=float(x), sigma=sigma)
            for i, x in enumerate(c14_ages)]


# --- Presets ---
def preset(name: str, seed: int, **params) -> PresetResult:
    """
    生成内置模拟实验

    Args:
        name: uniform-phase / spd-spread / two-phase / four-changepoint / exp-growth / megafauna-config
        seed: 随机种子
        **params: PresetSpec的其他字段

    Returns:
        PresetResult
    """
    if name not in PRESET_NAMES:
        raise DataError(f"未知预设: {name}，可选: {', '.join(PRESET_NAMES)}")
    spec = PresetSpec(name=name, **params)
    rng = np.random.default_rng(seed)

    if name in ("uniform-phase", "spd-spread"):
        n = spec.phase_events
        low, high = UNIFORM_PHASE_INTERVAL
        t_a, t_b = UNIFORM_PHASE_WINDOW
        # 以事件数n为条件：恰好n个均匀分布的日历年龄
        ages = np.sort(rng.uniform(low, high, size=n))
        rate = RateFunction(t_a, t_b, [low, high], [0.0, n / (high - low), 0.0])
        record = {"preset": name, "n_events": n, "interval": [low, high], "seed": seed}
        result = PresetResult(spec, (t_a, t_b), EventSet(ages, t_a, t_b), rate=rate, record=record)
    elif name == "two-phase":
        n = spec.phase_events
        t_a, t_b = TWO_PHASE_WINDOW
        truth = NormalMixtureRate(n, TWO_PHASE_CENTRES, (TWO_PHASE_SPREAD, TWO_PHASE_SPREAD), (0.5, 0.5))
        ages = truth.sample(n, rng, t_a, t_b)
        record = {"preset": name, "n_events": n, "centres": list(TWO_PHASE_CENTRES), "spread": TWO_PHASE_SPREAD,
                  "seed": seed}
        result = PresetResult(spec, (t_a, t_b), EventSet(ages, t_a, t_b), truth=truth, record=record)
    elif name == "four-changepoint":
        t_a, t_b = FOUR_CHANGEPOINT_WINDOW
        rate = RateFunction(t_a, t_b, *FOUR_CHANGEPOINT_RATE)
        events = sample_pp_events(rate, rng)
        record = {"preset": name, "expected_count": float(np.dot(rate.heights, rate.widths)), "seed": seed}
        result = PresetResult(spec, (t_a, t_b), events, rate=rate, record=record)
    elif name == "exp-growth":
        t_a, t_b = EXP_GROWTH_WINDOW
        truth = ExponentialRate.with_expected_count(spec.expected_count, spec.growth_rate, spec.start, spec.end)
        events = sample_thinned_events(truth, truth.envelope(t_a, t_b), rng)
        record = {"preset": name, "expected_count": spec.expected_count, "seed": seed}
        result = PresetResult(spec, (t_a, t_b), events, truth=truth, record=record)
    else:
        record = {"preset": name, "n_lambda": 6.0, "c14_window": [6000.0, 25000.0],
                  "bounds": [6565.0, 29430.0]}
        result = PresetResult(spec, (6565.0, 29430.0), None, record=record)

    if result.events is not None:
        logger.info(f"预设{name}: {len(result.events)}个事件, 窗口 {result.bounds}")
    return result


def select_c14_window(dets: Sequence[Determination], low: float, high: float) -> List[Determination]:
    """只保留14C年龄在 [low, high] 内的测年数据"""
    return [d for d in dets if low <= d.c14_age <= high]


# --- Rate Files ---
def rate_to_record(rate: RateFunction) -> Dict[str, Any]:
    return rate.to_record()


def load_rate_file(path: str) -> RateFunction:
    """读取 {t_a, t_b, s, h} 格式的速率JSON"""
    if not os.path.exists(path):
        raise DataError(f"速率文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"速率文件不是有效的JSON: {e}", line=e.lineno, path=path)
    try:
        return RateFunction.from_record(record)
    except ValueError as e:
        raise DataError(f"速率文件无效: {e}", path=path)
