"""
可逆跳转MCMC采样器 - Metropolis-within-Gibbs

每次迭代两步：
1. 给定λ，在网格上对每个测年数据的日历年龄做精确的离散抽样（权重 φ_i(θ)·λ(θ)）
2. 给定日历年龄，对λ做一次可逆跳转更新（高度 / 位置 / 新增变点 / 删除变点）
"""

import math
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import gammaln
from tqdm import tqdm

from .calibration import CalendarGrid, CalibrationCurve, Determination, likelihood_matrix
from .ppmodel import EventSet, PriorSpec, RateFunction
from ..utils.errors import DataError, NumericalError

logger = logging.getLogger(__name__)

MOVES = ("height", "position", "birth", "death")

# 超出该范围的高度提议直接拒绝（事件/年）
MIN_HEIGHT = 1e-12
MAX_HEIGHT = 1e12


# --- Options ---
class ChainOptions(BaseModel):
    """
    单条链的运行参数

    Attributes:
        iterations: 总迭代次数
        burn_in: 丢弃的前期迭代数
        thin: 抽稀步长
        seed: 随机种子
        grid: 日历网格，同时给出分析窗口 [t_a, t_b]
        prior: 先验超参数
        move_constant: 新增/删除变点的概率尺度c
        height_step: 高度对数随机游走的半宽
        sample_from_prior: 关闭似然（只从先验抽样）
        progress: 显示进度条
    """
    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=100000, ge=1)
    burn_in: int = Field(default=50000, ge=0)
    thin: int = Field(default=10, ge=1)
    seed: int = Field(ge=0)
    grid: CalendarGrid
    prior: PriorSpec
    move_constant: float = Field(default=0.4, gt=0, le=0.45)
    height_step: float = Field(default=0.5, gt=0)
    sample_from_prior: bool = False
    progress: bool = False

    @model_validator(mode="after")
    def _check_schedule(self):
        if not self.burn_in < self.iterations:
            raise ValueError(f"burn_in({self.burn_in})必须小于iterations({self.iterations})")
        return self

    @property
    def expected_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


# --- Chain Types ---
@dataclass(frozen=True, eq=False)
class CalibrationCache:
    """
    网格上缓存的 φ(X_i; μ(θ_j), σ_i² + τ(θ_j)²)，整条链生命周期内不变

    cumulative 为逐行归一化后的累积和（首列为0），用于分段求质量与逐格抽样
    """
    grid: CalendarGrid
    phi: np.ndarray
    cumulative: np.ndarray
    _flat: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, dets: Sequence[Determination], curve: CalibrationCurve, grid: CalendarGrid) -> "CalibrationCache":
        phi = likelihood_matrix([d.c14_age for d in dets], [d.sigma for d in dets], curve, grid)
        totals = phi.sum(axis=1)
        if np.any(totals <= 0):
            det = dets[int(np.flatnonzero(totals <= 0)[0])]
            raise DataError(
                f"测年数据{det.id} ({det.c14_age:g}±{det.sigma:g}) 在分析窗口 "
                f"[{grid.start:g}, {grid.end:g}] 内权重全部为0，请放宽边界")
        cumulative = np.zeros((phi.shape[0], phi.shape[1] + 1))
        np.cumsum(phi / totals[:, None], axis=1, out=cumulative[:, 1:])
        cumulative[:, -1] = 1.0
        # 每行加 2i 后展平仍单调，可一次searchsorted完成所有行的逐格抽样
        flat = (cumulative + 2.0 * np.arange(phi.shape[0])[:, None]).ravel()
        for array in (phi, cumulative, flat):
            array.setflags(write=False)
        return cls(grid, phi, cumulative, flat)

    @property
    def n_determinations(self) -> int:
        return int(self.phi.shape[0])


@dataclass(frozen=True, eq=False)
class ChainState:
    """链的当前状态：速率函数、每个测年数据的日历年龄、校准缓存"""
    rate: RateFunction
    ages: EventSet
    cache: CalibrationCache
    sorted_ages: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.ages) != self.cache.n_determinations:
            raise ValueError(f"日历年龄个数({len(self.ages)})与测年数据个数({self.cache.n_determinations})不一致")
        object.__setattr__(self, "sorted_ages", self.ages.sorted_ages())

    def with_rate(self, rate: RateFunction) -> "ChainState":
        return ChainState(rate, self.ages, self.cache)

    def describe(self) -> Dict[str, Any]:
        """用于数值错误的诊断信息"""
        return {"k": self.rate.k, "s": self.rate.changepoints.tolist(), "h": self.rate.heights.tolist(),
                "theta_min": float(self.ages.ages.min()), "theta_max": float(self.ages.ages.max())}


class MoveProbabilities(NamedTuple):
    height: float
    position: float
    birth: float
    death: float


class MoveResult(NamedTuple):
    move: str
    accepted: bool
    log_ratio: float


@dataclass
class AcceptanceStats:
    """每类移动的提议数与接受数"""
    proposed: Dict[str, int] = field(default_factory=lambda: {move: 0 for move in MOVES})
    accepted: Dict[str, int] = field(default_factory=lambda: {move: 0 for move in MOVES})

    def record(self, result: MoveResult):
        self.proposed[result.move] += 1
        if result.accepted:
            self.accepted[result.move] += 1

    def rate(self, move: str) -> float:
        return self.accepted[move] / self.proposed[move] if self.proposed[move] else 0.0

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {move: {"proposed": self.proposed[move], "accepted": self.accepted[move],
                       "rate": round(self.rate(move), 6)} for move in MOVES}

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, float]]) -> "AcceptanceStats":
        stats = cls()
        for move in MOVES:
            stats.proposed[move] = int(data.get(move, {}).get("proposed", 0))
            stats.accepted[move] = int(data.get(move, {}).get("accepted", 0))
        return stats


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """
    抽稀后的后验样本

    Attributes:
        iterations: 每个样本对应的迭代序号
        rates: 速率函数实现
        ages: 形状 (S, n) 的日历年龄
        options: 运行参数
        acceptance_stats: 各类移动的接受统计
        determination_ids: 测年数据编号（与ages列对应）
    """
    iterations: List[int]
    rates: List[RateFunction]
    ages: np.ndarray
    options: ChainOptions
    acceptance_stats: AcceptanceStats
    determination_ids: List[str]

    def __len__(self) -> int:
        return len(self.rates)

    @property
    def is_empty(self) -> bool:
        return len(self.rates) == 0

    @property
    def k_values(self) -> np.ndarray:
        return np.array([rate.k for rate in self.rates], dtype=int)

    @property
    def states(self) -> Iterator[Tuple[RateFunction, np.ndarray]]:
        return zip(self.rates, self.ages)


# --- Move Probabilities ---
def move_probabilities(k: int, prior: PriorSpec, move_constant: float = 0.4) -> MoveProbabilities:
    """
    b_k = c·min(1, p(k+1)/p(k))，d_k = c·min(1, p(k−1)/p(k))，其余在高度和位置移动间平分；
    k=0 时没有可移动的变点，位置份额并入高度移动
    """
    if k < 0 or k > prior.k_max:
        raise ValueError(f"变点个数{k}不在 [0, {prior.k_max}] 内")
    birth = move_constant * min(1.0, prior.n_lambda / (k + 1)) if k < prior.k_max else 0.0
    death = move_constant * min(1.0, k / prior.n_lambda) if k > 0 else 0.0
    rest = 1.0 - birth - death
    if k == 0:
        return MoveProbabilities(rest, 0.0, birth, death)
    return MoveProbabilities(rest / 2, rest / 2, birth, death)


# --- Likelihood Pieces ---
def segment_log_likelihood(height: float, lower: float, upper: float, sorted_ages: np.ndarray) -> float:
    """单段 [lower, upper) 的对数似然贡献 n·log h − h·(upper − lower)"""
    lo, hi = np.searchsorted(sorted_ages, (lower, upper), side="left")
    n = int(hi - lo)
    if n == 0:
        return -height * (upper - lower)
    if height <= 0:
        return -math.inf
    return n * math.log(height) - height * (upper - lower)


def _delta(new: float, old: float) -> float:
    if new == -math.inf:
        return -math.inf
    return new - old


def _accept(log_ratio: float, rng: np.random.Generator, state: ChainState, move: str) -> bool:
    if math.isnan(log_ratio):
        raise NumericalError(f"{move}移动的接受率为NaN", state=state.describe())
    if log_ratio >= 0:
        return True
    return bool(rng.random() < math.exp(log_ratio))


def _height_ok(*heights: float) -> bool:
    return all(MIN_HEIGHT < h < MAX_HEIGHT for h in heights)


# --- Step 1: calendar ages ---
def update_calendar_ages(state: ChainState, rng: np.random.Generator) -> ChainState:
    """
    给定速率，对每个日历年龄θ_i在网格格点上做精确的离散抽样，权重 φ_i(c_j)·λ(c_j)

    先按速率分段计算每段的质量并抽出段，再在段内按φ_i的累积分布抽出格点

    Raises:
        NumericalError: 某个测年数据在速率非零处没有任何权重
    """
    cache = state.cache
    rate = state.rate
    centres = cache.grid.centres
    n = cache.n_determinations
    n_cells = cache.grid.n_cells

    bounds = np.searchsorted(centres, rate.edges, side="left")
    bounds[0], bounds[-1] = 0, n_cells
    segment_mass = np.diff(cache.cumulative[:, bounds], axis=1) * rate.heights[None, :]
    cum_mass = np.cumsum(segment_mass, axis=1)
    totals = cum_mass[:, -1]
    if np.any(totals <= 0) or not np.all(np.isfinite(totals)):
        bad = int(np.flatnonzero(~(totals > 0))[0])
        raise NumericalError(f"第{bad + 1}个测年数据在速率非零处权重为0，分析窗口与数据不兼容",
                             state=state.describe())

    target = rng.random(n) * totals
    segment = np.minimum(np.sum(cum_mass <= target[:, None], axis=1), rate.k)
    lo = bounds[segment]
    hi = bounds[segment + 1]

    rows = np.arange(n)
    cum_lo = cache.cumulative[rows, lo]
    cum_hi = cache.cumulative[rows, hi]
    value = cum_lo + rng.random(n) * (cum_hi - cum_lo)
    cells = np.searchsorted(cache._flat, value + 2.0 * rows, side="right") - 1 - rows * (n_cells + 1)
    cells = np.clip(np.clip(cells, lo, np.maximum(hi - 1, lo)), 0, n_cells - 1)

    ages = EventSet(centres[cells], rate.t_a, rate.t_b)
    return ChainState(rate, ages, cache)


# --- Step 2: reversible-jump moves ---
def move_height(state: ChainState, prior: PriorSpec, rng: np.random.Generator, height_step: float = 0.5,
                use_likelihood: bool = True) -> Tuple[ChainState, MoveResult]:
    """
    随机选一段j，提议 h' = h_j·e^u，u ~ U(−height_step, height_step)，
    接受率 min(1, LR·(h'/h_j)^α·e^{−β(h'−h_j)})
    """
    rate = state.rate
    j = int(rng.integers(rate.k + 1))
    u = rng.uniform(-height_step, height_step)
    h_old = float(rate.heights[j])
    h_new = h_old * math.exp(u)
    if not _height_ok(h_new):
        return state, MoveResult("height", False, -math.inf)

    delta_ll = 0.0
    if use_likelihood:
        lower, upper = rate.edges[j], rate.edges[j + 1]
        delta_ll = _delta(segment_log_likelihood(h_new, lower, upper, state.sorted_ages),
                          segment_log_likelihood(h_old, lower, upper, state.sorted_ages))
    log_ratio = height_log_ratio(h_old, h_new, prior, delta_ll)
    if not _accept(log_ratio, rng, state, "height"):
        return state, MoveResult("height", False, log_ratio)
    heights = rate.heights.copy()
    heights[j] = h_new
    return state.with_rate(RateFunction(rate.t_a, rate.t_b, rate.changepoints, heights)), \
        MoveResult("height", True, log_ratio)


def height_log_ratio(h_old: float, h_new: float, prior: PriorSpec, delta_ll: float) -> float:
    return delta_ll + prior.alpha * math.log(h_new / h_old) - prior.beta * (h_new - h_old)


def move_position(state: ChainState, prior: PriorSpec, rng: np.random.Generator,
                  use_likelihood: bool = True) -> Tuple[ChainState, MoveResult]:
    """
    随机选一个变点s_j，提议 s' ~ U(s_{j−1}, s_{j+1})，
    接受率 min(1, LR·[(s'−s_{j−1})(s_{j+1}−s')]/[(s_j−s_{j−1})(s_{j+1}−s_j)])
    """
    rate = state.rate
    if rate.k < 1:
        raise ValueError("没有变点时不能做位置移动")
    edges = rate.edges
    j = int(rng.integers(1, rate.k + 1))
    left, old, right = edges[j - 1], edges[j], edges[j + 1]
    new = rng.uniform(left, right)
    if not left < new < right:
        return state, MoveResult("position", False, -math.inf)

    delta_ll = 0.0
    if use_likelihood:
        h_left, h_right = float(rate.heights[j - 1]), float(rate.heights[j])
        ages = state.sorted_ages
        delta_ll = _delta(segment_log_likelihood(h_left, left, new, ages) + segment_log_likelihood(h_right, new, right, ages),
                          segment_log_likelihood(h_left, left, old, ages) + segment_log_likelihood(h_right, old, right, ages))
    log_ratio = position_log_ratio(left, old, new, right, delta_ll)
    if not _accept(log_ratio, rng, state, "position"):
        return state, MoveResult("position", False, log_ratio)
    changepoints = rate.changepoints.copy()
    changepoints[j - 1] = new
    return state.with_rate(RateFunction(rate.t_a, rate.t_b, changepoints, rate.heights)), \
        MoveResult("position", True, log_ratio)


def position_log_ratio(left: float, old: float, new: float, right: float, delta_ll: float) -> float:
    return delta_ll + math.log((new - left) * (right - new)) - math.log((old - left) * (right - old))


def split_heights(height: float, w1: float, w2: float, u: float) -> Tuple[float, float]:
    """
    把高度h拆成 (h', h'')，分别作用于宽度w1（较新一侧）和w2的两段，保持加权几何平均：
    h' = h·R^{−w2/W}，h'' = h·R^{w1/W}，R = (1−u)/u
    """
    total = w1 + w2
    log_r = math.log((1.0 - u) / u)
    return height * math.exp(-w2 / total * log_r), height * math.exp(w1 / total * log_r)


def merge_heights(h_lo: float, h_hi: float, w1: float, w2: float) -> Tuple[float, float]:
    """split_heights 的逆变换，返回 (h, u)"""
    total = w1 + w2
    height = math.exp((w1 * math.log(h_lo) + w2 * math.log(h_hi)) / total)
    return height, h_lo / (h_lo + h_hi)


def birth_log_ratio(k: int, w1: float, w2: float, height: float, h_lo: float, h_hi: float,
                    prior: PriorSpec, span: float, delta_ll: float, move_constant: float = 0.4) -> float:
    """
    从k个变点新增到k+1个的 log A：
    似然比 × 先验比（k、位置、高度）× 提议比 d_{k+1}·L/(b_k·(k+1)) × 雅可比 (h'+h'')²/h
    """
    alpha, beta = prior.alpha, prior.beta
    total = w1 + w2
    b_k = move_probabilities(k, prior, move_constant).birth
    d_next = move_probabilities(k + 1, prior, move_constant).death
    return (delta_ll
            + math.log(prior.n_lambda / (k + 1))
            + math.log((2 * k + 3) * (2 * k + 2)) - 2.0 * math.log(span)
            + math.log(w1 * w2 / total)
            + alpha * math.log(beta) - gammaln(alpha)
            + (alpha - 1.0) * math.log(h_lo * h_hi / height)
            - beta * (h_lo + h_hi - height)
            + math.log(d_next * span / (b_k * (k + 1)))
            + 2.0 * math.log(h_lo + h_hi) - math.log(height))


def propose_birth(rate: RateFunction, s_star: float, u: float) -> Tuple[RateFunction, int]:
    """
    在 s* 处新增变点并按u拆分所在段的高度（确定性变换）

    Returns:
        (新速率函数, 被拆分的段下标j)
    """
    edges = rate.edges
    j = int(rate.piece_index(s_star))
    w1, w2 = s_star - edges[j], edges[j + 1] - s_star
    if w1 <= 0 or w2 <= 0:
        raise ValueError(f"新变点{s_star}与已有边界重合")
    h_lo, h_hi = split_heights(float(rate.heights[j]), w1, w2, u)
    changepoints = np.insert(rate.changepoints, j, s_star)
    heights = np.concatenate([rate.heights[:j], [h_lo, h_hi], rate.heights[j + 1:]])
    return RateFunction(rate.t_a, rate.t_b, changepoints, heights), j


def propose_death(rate: RateFunction, j: int) -> Tuple[RateFunction, float, float]:
    """
    删除第j个变点（1..k），把两侧高度按加权几何平均合并

    Returns:
        (新速率函数, 被删除的变点位置, 对应的u)
    """
    edges = rate.edges
    w1, w2 = edges[j] - edges[j - 1], edges[j + 1] - edges[j]
    height, u = merge_heights(float(rate.heights[j - 1]), float(rate.heights[j]), w1, w2)
    changepoints = np.delete(rate.changepoints, j - 1)
    heights = np.concatenate([rate.heights[:j - 1], [height], rate.heights[j + 1:]])
    return RateFunction(rate.t_a, rate.t_b, changepoints, heights), float(edges[j]), u


def move_birth(state: ChainState, prior: PriorSpec, rng: np.random.Generator, move_constant: float = 0.4,
               use_likelihood: bool = True) -> Tuple[ChainState, MoveResult]:
    """s* ~ U(t_a, t_b)，u ~ U(0, 1)，拆分s*所在段的高度"""
    rate = state.rate
    if rate.k >= prior.k_max:
        raise ValueError(f"变点个数已达上限k_max={prior.k_max}")
    s_star = rng.uniform(rate.t_a, rate.t_b)
    u = rng.random()
    edges = rate.edges
    j = int(rate.piece_index(s_star))
    w1, w2 = s_star - edges[j], edges[j + 1] - s_star
    if u <= 0 or w1 <= 0 or w2 <= 0:
        return state, MoveResult("birth", False, -math.inf)
    height = float(rate.heights[j])
    h_lo, h_hi = split_heights(height, w1, w2, u)
    if not _height_ok(h_lo, h_hi):
        return state, MoveResult("birth", False, -math.inf)

    delta_ll = 0.0
    if use_likelihood:
        ages = state.sorted_ages
        delta_ll = _delta(segment_log_likelihood(h_lo, edges[j], s_star, ages)
                          + segment_log_likelihood(h_hi, s_star, edges[j + 1], ages),
                          segment_log_likelihood(height, edges[j], edges[j + 1], ages))
    log_ratio = birth_log_ratio(rate.k, w1, w2, height, h_lo, h_hi, prior, rate.span, delta_ll, move_constant)
    if not _accept(log_ratio, rng, state, "birth"):
        return state, MoveResult("birth", False, log_ratio)
    new_rate, _ = propose_birth(rate, s_star, u)
    return state.with_rate(new_rate), MoveResult("birth", True, log_ratio)


def move_death(state: ChainState, prior: PriorSpec, rng: np.random.Generator, move_constant: float = 0.4,
               use_likelihood: bool = True) -> Tuple[ChainState, MoveResult]:
    """随机删除一个变点，接受率为对应新增移动的 min(1, 1/A)"""
    rate = state.rate
    if rate.k < 1:
        raise ValueError("没有变点时不能删除")
    j = int(rng.integers(1, rate.k + 1))
    edges = rate.edges
    w1, w2 = edges[j] - edges[j - 1], edges[j + 1] - edges[j]
    h_lo, h_hi = float(rate.heights[j - 1]), float(rate.heights[j])
    height, _ = merge_heights(h_lo, h_hi, w1, w2)
    if not _height_ok(height):
        return state, MoveResult("death", False, -math.inf)

    delta_ll = 0.0
    if use_likelihood:
        ages = state.sorted_ages
        # 新增方向的似然差；合并后高度为正，因此只有拆分侧可能为 -inf
        split_ll = (segment_log_likelihood(h_lo, edges[j - 1], edges[j], ages)
                    + segment_log_likelihood(h_hi, edges[j], edges[j + 1], ages))
        merged_ll = segment_log_likelihood(height, edges[j - 1], edges[j + 1], ages)
        delta_ll = split_ll - merged_ll
    log_ratio = -birth_log_ratio(rate.k - 1, w1, w2, height, h_lo, h_hi, prior, rate.span, delta_ll, move_constant)
    if not _accept(log_ratio, rng, state, "death"):
        return state, MoveResult("death", False, log_ratio)
    new_rate, _, _ = propose_death(rate, j)
    return state.with_rate(new_rate), MoveResult("death", True, log_ratio)


def update_rate(state: ChainState, prior: PriorSpec, options: ChainOptions, rng: np.random.Generator,
                stats: Optional[AcceptanceStats] = None) -> ChainState:
    """按 (η_k, π_k, b_k, d_k) 选择一种移动并执行，结果计入stats"""
    probs = move_probabilities(state.rate.k, prior, options.move_constant)
    use_likelihood = not options.sample_from_prior
    r = rng.random()
    if r < probs.height:
        state, result = move_height(state, prior, rng, options.height_step, use_likelihood)
    elif r < probs.height + probs.position:
        state, result = move_position(state, prior, rng, use_likelihood)
    elif r < probs.height + probs.position + probs.birth:
        state, result = move_birth(state, prior, rng, options.move_constant, use_likelihood)
    else:
        state, result = move_death(state, prior, rng, options.move_constant, use_likelihood)
    logger.debug(f"{result.move}移动: accepted={result.accepted}, log_ratio={result.log_ratio:.4f}, k={state.rate.k}")
    if stats is not None:
        stats.record(result)
    return state


# --- Initialisation ---
def initial_rate(prior: PriorSpec, t_a: float, t_b: float, rng: np.random.Generator) -> RateFunction:
    """k取自截断泊松先验，位置取2k+1个均匀数的偶数位次序统计量，高度取自Gamma(α, β)"""
    k = int(rng.choice(prior.k_max + 1, p=prior.k_pmf()))
    uniforms = np.sort(rng.uniform(t_a, t_b, size=2 * k + 1))
    changepoints = uniforms[1::2]
    heights = rng.gamma(prior.alpha, 1.0 / prior.beta, size=k + 1)
    heights = np.clip(heights, 2 * MIN_HEIGHT, None)
    return RateFunction(t_a, t_b, changepoints, heights)


def initial_state(cache: CalibrationCache, prior: PriorSpec, rng: np.random.Generator) -> ChainState:
    grid = cache.grid
    rate = initial_rate(prior, grid.start, grid.end, rng)
    # 独立校准：常数速率下的一次离散抽样
    flat = RateFunction.constant(grid.start, grid.end, 1.0)
    placeholder = EventSet(np.full(cache.n_determinations, grid.start), grid.start, grid.end)
    ages = update_calendar_ages(ChainState(flat, placeholder, cache), rng).ages
    return ChainState(rate, ages, cache)


# --- Sampler ---
class RJSampler:
    """
    单条链的采样器：持有校准缓存、先验和接受统计

    Example:
        sampler = create_sampler(dets, curve, options)
        samples = sampler.run()
        sampler.print_statistics()
    """

    def __init__(self, dets: Sequence[Determination], curve: CalibrationCurve, options: ChainOptions):
        if not dets:
            raise DataError("没有测年数据")
        self.dets = list(dets)
        self.options = options
        self.prior = options.prior
        self.cache = CalibrationCache.build(self.dets, curve, options.grid)
        self.stats = AcceptanceStats()

    def run(self) -> PosteriorSamples:
        options = self.options
        rng = np.random.default_rng(options.seed)
        state = initial_state(self.cache, self.prior, rng)
        logger.info(f"开始采样: {len(self.dets)}个数据, 窗口 [{options.grid.start:g}, {options.grid.end:g}], "
                    f"{options.iterations}次迭代 (burn-in {options.burn_in}, thin {options.thin}), seed={options.seed}"
                    + (", 仅先验" if options.sample_from_prior else ""))

        kept_iterations: List[int] = []
        kept_rates: List[RateFunction] = []
        kept_ages: List[np.ndarray] = []
        for t in tqdm(range(1, options.iterations + 1), disable=not options.progress, desc="RJ-MCMC"):
            if not options.sample_from_prior:
                state = update_calendar_ages(state, rng)
            state = update_rate(state, self.prior, options, rng, self.stats)
            if t > options.burn_in and (t - options.burn_in) % options.thin == 0:
                kept_iterations.append(t)
                kept_rates.append(state.rate)
                kept_ages.append(state.ages.ages)

        ages = np.array(kept_ages) if kept_ages else np.empty((0, len(self.dets)))
        samples = PosteriorSamples(kept_iterations, kept_rates, ages, options, self.stats,
                                   [d.id for d in self.dets])
        if samples.is_empty:
            logger.warning("burn-in和抽稀之后没有保留任何样本")
        else:
            logger.info(f"采样完成，保留{len(samples)}个样本")
        return samples

    def print_statistics(self):
        """
        输出各类移动的接受率
        """
        logger.info(f"\n=== 移动接受统计 ===")
        for move in MOVES:
            proposed = self.stats.proposed[move]
            accepted = self.stats.accepted[move]
            logger.info(f"{move}: 提议 {proposed:,}, 接受 {accepted:,} ({self.stats.rate(move):.1%})")


def create_sampler(dets: Sequence[Determination], curve: CalibrationCurve, options: ChainOptions) -> RJSampler:
    return RJSampler(dets, curve, options)


def run_chain(dets: Sequence[Determination], curve: CalibrationCurve, options: ChainOptions) -> PosteriorSamples:
    """运行一条链，给定种子时结果完全确定"""
    sampler = create_sampler(dets, curve, options)
    samples = sampler.run()
    sampler.print_statistics()
    return samples


# --- Multiple Chains ---
def chain_seed(seed: int, chain: int) -> int:
    return int(np.random.SeedSequence([seed, chain]).generate_state(1)[0])


async def run_chains_async(dets: Sequence[Determination], curve: CalibrationCurve, options: ChainOptions,
                           n_chains: int, concurrent_limit: int = 4) -> List[PosteriorSamples]:
    """
    在进程池中并发运行多条独立的链，第c条链的种子由 (seed, c) 导出

    Returns:
        按链序号排列的结果（与调度顺序无关）
    """
    if n_chains < 1:
        raise ValueError(f"链数必须≥1: {n_chains}")
    chain_options = [options.model_copy(update={"seed": chain_seed(options.seed, c), "progress": False})
                     for c in range(n_chains)]
    semaphore = asyncio.Semaphore(concurrent_limit)
    loop = asyncio.get_running_loop()

    with ProcessPoolExecutor(max_workers=min(concurrent_limit, n_chains)) as executor:
        async def run_with_semaphore(c: int):
            async with semaphore:
                logger.info(f"链{c + 1}/{n_chains}启动 (seed={chain_options[c].seed})")
                samples = await loop.run_in_executor(executor, run_chain, dets, curve, chain_options[c])
                logger.info(f"链{c + 1}/{n_chains}完成，保留{len(samples)}个样本")
                return samples

        return list(await asyncio.gather(*(run_with_semaphore(c) for c in range(n_chains))))


def run_chains(dets: Sequence[Determination], curve: CalibrationCurve, options: ChainOptions,
               n_chains: int, concurrent_limit: int = 4) -> List[PosteriorSamples]:
    """run_chains_async 的同步包装器"""
    return asyncio.run(run_chains_async(dets, curve, options, n_chains, concurrent_limit))
