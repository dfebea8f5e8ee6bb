"""
校准模块 - 读取IntCal格式校准曲线，在日历网格上计算单个测年数据的校准密度
曲线的均值和误差都按线性插值，超出曲线范围直接报错而不是外推
"""

import math
import os
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import norm

from ..utils.errors import CurveRangeError, DataError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


# --- Domain Types ---
class Determination(BaseModel):
    """单个14C测年数据：X_i ± σ_i"""
    model_config = ConfigDict(frozen=True)

    id: str
    c14_age: float
    sigma: float = Field(gt=0)


class CalendarGrid(BaseModel):
    """
    日历年龄网格 [start, end]，步长step，格点中心位于 start + (j+½)·step
    """
    model_config = ConfigDict(frozen=True)

    start: float
    end: float
    step: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_cover(self):
        if not self.start < self.end:
            raise ValueError(f"网格起点必须小于终点: start={self.start}, end={self.end}")
        cells = (self.end - self.start) / self.step
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValueError(f"网格长度{self.end - self.start}不是步长{self.step}的整数倍")
        return self

    @classmethod
    def covering(cls, start: float, end: float, step: float = 1.0, anchor: str = "start") -> "CalendarGrid":
        """包含 [start, end] 的最小网格：anchor 一端固定，另一端向外延伸到步长的整数倍"""
        if not step > 0:
            raise ValueError(f"网格步长必须为正: {step}")
        if not start < end:
            raise ValueError(f"网格起点必须小于终点: start={start}, end={end}")
        cells = max(1, math.ceil((end - start) / step - 1e-9))
        if anchor == "end":
            return cls(start=end - cells * step, end=end, step=step)
        return cls(start=start, end=start + cells * step, step=step)

    @property
    def n_cells(self) -> int:
        return int(round((self.end - self.start) / self.step))

    @property
    def centres(self) -> np.ndarray:
        return self.start + (np.arange(self.n_cells) + 0.5) * self.step

    @property
    def edges(self) -> np.ndarray:
        return self.start + np.arange(self.n_cells + 1) * self.step

    def cell_of(self, theta: ArrayLike) -> np.ndarray:
        """日历年龄所在格点的下标；恰好落在end上的归入最后一格"""
        idx = np.floor((np.asarray(theta, dtype=float) - self.start) / self.step).astype(int)
        return np.clip(idx, 0, self.n_cells - 1)


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """网格上的密度（每日历年），normalised为True时 Σ values·step = 1"""
    grid: CalendarGrid
    values: np.ndarray
    normalised: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(f"密度长度{values.shape}与网格格点数{self.grid.n_cells}不一致")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("密度值必须为非负有限数")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def cal_ages(self) -> np.ndarray:
        return self.grid.centres

    def total(self) -> float:
        return float(np.sum(self.values) * self.grid.step)

    def probabilities(self) -> np.ndarray:
        """每个格点的概率质量（和为1）"""
        mass = self.values * self.grid.step
        return mass / mass.sum()

    def quantile(self, q: float) -> float:
        """按格内线性插值的分位数"""
        mass = self.probabilities()
        cdf = np.concatenate([[0.0], np.cumsum(mass)])
        j = int(np.searchsorted(cdf, q, side="left"))
        j = min(max(j, 1), self.grid.n_cells)
        cell_mass = mass[j - 1]
        frac = 0.0 if cell_mass <= 0 else (q - cdf[j - 1]) / cell_mass
        return float(self.grid.edges[j - 1] + np.clip(frac, 0.0, 1.0) * self.grid.step)

    def to_frame(self, column: str = "density") -> pd.DataFrame:
        return pd.DataFrame({"cal_age": self.cal_ages, column: self.values})


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    """
    校准曲线：cal_age（cal yr BP）→ (μ, τ)，按cal_age严格递增存储
    """
    cal_age: np.ndarray
    c14_age: np.ndarray
    c14_sigma: np.ndarray
    name: str = "curve"

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float).copy() for a in (self.cal_age, self.c14_age, self.c14_sigma)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise DataError("校准曲线各列长度不一致")
        if arrays[0].size < 2:
            raise DataError(f"校准曲线至少需要2条记录，实际{arrays[0].size}条")
        order = np.argsort(arrays[0], kind="stable")
        arrays = [a[order] for a in arrays]
        if np.any(np.diff(arrays[0]) == 0):
            dup = arrays[0][np.flatnonzero(np.diff(arrays[0]) == 0)[0]]
            raise DataError(f"校准曲线存在重复的cal_age: {dup:g}")
        if np.any(arrays[2] <= 0):
            raise DataError("校准曲线的误差列必须全部大于0")
        for name, arr in zip(("cal_age", "c14_age", "c14_sigma"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, records: Iterable[Tuple[float, float, float]], name: str = "curve") -> "CalibrationCurve":
        rows = np.asarray(list(records), dtype=float)
        if rows.size == 0:
            raise DataError("校准曲线至少需要2条记录，实际0条")
        if rows.ndim != 2 or rows.shape[1] < 3:
            raise DataError("校准曲线记录必须为 (cal_age, c14_age, c14_sigma) 三元组")
        return cls(rows[:, 0], rows[:, 1], rows[:, 2], name=name)

    @property
    def records(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.cal_age.tolist(), self.c14_age.tolist(), self.c14_sigma.tolist()))

    @property
    def min_cal_age(self) -> float:
        return float(self.cal_age[0])

    @property
    def max_cal_age(self) -> float:
        return float(self.cal_age[-1])

    def covers(self, start: float, end: float) -> bool:
        return self.min_cal_age <= start and end <= self.max_cal_age

    def full_grid(self, step: float = 1.0) -> CalendarGrid:
        """覆盖整条曲线的网格（起止点向内取整到步长的整数倍）"""
        start = np.ceil(self.min_cal_age / step) * step
        end = np.floor(self.max_cal_age / step) * step
        return CalendarGrid(start=float(start), end=float(end), step=step)


# --- Curve I/O ---
def load_curve(path: str, name: Optional[str] = None) -> CalibrationCurve:
    """
    读取IntCal格式(.14c)校准曲线

    Args:
        path: 曲线文件路径，'#'开头为注释，数据行为逗号分隔的 calBP,c14age,error[,...]
        name: 曲线名称（默认取文件名）

    Returns:
        CalibrationCurve，按cal_age升序
    """
    if not os.path.exists(path):
        raise DataError(f"校准曲线文件不存在: {path}")

    records = []
    with open(path, "r", encoding="latin1") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [value.strip() for value in line.split(",")]
            if len(fields) < 3:
                raise DataError("数据行至少需要3列 (calBP, c14age, error)", line=line_number, path=path)
            try:
                # 多余的列（Δ14C及其误差）读取后忽略
                records.append(tuple(float(value) for value in fields[:3]))
            except ValueError:
                raise DataError(f"无法解析的数值字段: {line!r}", line=line_number, path=path)

    curve = CalibrationCurve.from_records(records, name=name or os.path.splitext(os.path.basename(path))[0])
    logger.info(f"读取校准曲线 {curve.name}: {len(records)}条记录, 范围 {curve.min_cal_age:g}-{curve.max_cal_age:g} cal BP")
    return curve


def load_determinations(path: str) -> List[Determination]:
    """
    读取测年数据表，CSV表头为 id,c14_age,sigma

    Args:
        path: CSV文件路径（'#'开头的行视为注释）

    Returns:
        Determination列表，顺序与文件一致
    """
    if not os.path.exists(path):
        raise DataError(f"测年数据文件不存在: {path}")
    try:
        df = pd.read_csv(path, comment="#", dtype={"id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"测年数据文件解析失败: {e}", path=path)

    missing = {"id", "c14_age", "sigma"} - set(df.columns)
    if missing:
        raise DataError(f"测年数据缺少列: {sorted(missing)}，可用列名: {list(df.columns)}", path=path)

    dets = []
    for index, row in df.iterrows():
        try:
            dets.append(Determination(id=str(row["id"]), c14_age=float(row["c14_age"]), sigma=float(row["sigma"])))
        except (ValueError, TypeError) as e:
            # 表头占第1行，数据行号从2开始
            raise DataError(f"测年数据无效: {e}", line=int(index) + 2, path=path)
    if not dets:
        raise DataError("测年数据为空", path=path)
    logger.info(f"读取测年数据 {len(dets)} 条: {path}")
    return dets


def determinations_frame(dets: Sequence[Determination]) -> pd.DataFrame:
    return pd.DataFrame({"id": [d.id for d in dets],
                         "c14_age": [d.c14_age for d in dets],
                         "sigma": [d.sigma for d in dets]})


# --- Operations ---
def curve_at(curve: CalibrationCurve, theta: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    在日历年龄theta处线性插值曲线的 (μ, τ)；节点处精确返回记录值

    Args:
        curve: 校准曲线
        theta: 日历年龄（标量或数组）

    Returns:
        (mu, tau)，形状与theta一致
    """
    theta_arr = np.asarray(theta, dtype=float)
    if np.any(theta_arr < curve.min_cal_age) or np.any(theta_arr > curve.max_cal_age):
        bad = theta_arr[(theta_arr < curve.min_cal_age) | (theta_arr > curve.max_cal_age)].ravel()[0]
        raise CurveRangeError(
            f"日历年龄{bad:g}超出曲线{curve.name}范围 [{curve.min_cal_age:g}, {curve.max_cal_age:g}]")
    mu = np.interp(theta_arr, curve.cal_age, curve.c14_age)
    tau = np.interp(theta_arr, curve.cal_age, curve.c14_sigma)
    return mu, tau


def _check_grid(curve: CalibrationCurve, grid: CalendarGrid):
    if not curve.covers(grid.start, grid.end):
        raise CurveRangeError(
            f"网格 [{grid.start:g}, {grid.end:g}] 超出曲线{curve.name}范围 "
            f"[{curve.min_cal_age:g}, {curve.max_cal_age:g}]")


def likelihood_matrix(c14_ages: ArrayLike, sigmas: ArrayLike, curve: CalibrationCurve,
                      grid: CalendarGrid) -> np.ndarray:
    """
    未归一化的校准权重 φ(X_i; μ(θ_j), σ_i² + τ(θ_j)²)，行=测年数据，列=格点

    Returns:
        形状 (n, n_cells) 的数组
    """
    _check_grid(curve, grid)
    mu, tau = curve_at(curve, grid.centres)
    x = np.atleast_1d(np.asarray(c14_ages, dtype=float))[:, None]
    sigma = np.atleast_1d(np.asarray(sigmas, dtype=float))[:, None]
    return norm.pdf(x, loc=mu[None, :], scale=np.sqrt(sigma ** 2 + tau[None, :] ** 2))


def calibrate_one(det: Determination, curve: CalibrationCurve, grid: CalendarGrid) -> DensityGrid:
    """
    独立校准单个测年数据（均匀先验），返回归一化密度

    Args:
        det: 测年数据
        curve: 校准曲线
        grid: 日历网格（必须在曲线范围内）

    Returns:
        DensityGrid，Σ values·step = 1
    """
    weights = likelihood_matrix(det.c14_age, det.sigma, curve, grid)[0]
    total = weights.sum()
    if not total > 0:
        raise DataError(
            f"测年数据{det.id} ({det.c14_age:g}±{det.sigma:g}) 在网格 [{grid.start:g}, {grid.end:g}] 上权重全部为0，"
            "网格未覆盖该数据")
    return DensityGrid(grid, weights / (total * grid.step))


def calibrate_many(dets: Sequence[Determination], curve: CalibrationCurve, grid: CalendarGrid) -> np.ndarray:
    """批量校准，返回每行归一化的密度矩阵 (n, n_cells)"""
    weights = likelihood_matrix([d.c14_age for d in dets], [d.sigma for d in dets], curve, grid)
    totals = weights.sum(axis=1)
    if np.any(totals <= 0):
        det = dets[int(np.flatnonzero(totals <= 0)[0])]
        raise DataError(f"测年数据{det.id} ({det.c14_age:g}±{det.sigma:g}) 在网格上权重全部为0，网格未覆盖该数据")
    return weights / (totals[:, None] * grid.step)
