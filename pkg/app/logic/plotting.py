#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SVG绘图
A面板：后验平均速率及区间（可叠加SPD），右轴为校准曲线 μ±2τ 与14C数据短刻度
B面板：变点个数后验直方图
"""

import logging
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .calibration import CalibrationCurve, DensityGrid, Determination, curve_at
from .posterior import RateSummary

logger = logging.getLogger(__name__)

# 固定SVG内部id，使输出可复现
matplotlib.rcParams["svg.hashsalt"] = "datesdata"


def plot_summary(summary: RateSummary, path: str, curve: Optional[CalibrationCurve] = None,
                 dets: Sequence[Determination] = (), spd_density: Optional[DensityGrid] = None,
                 k_histogram: Optional[Dict[int, float]] = None, title: Optional[str] = None) -> str:
    """
    绘制后验速率汇总并保存为SVG

    Args:
        summary: 后验速率汇总
        path: 输出路径
        curve: 校准曲线（右轴叠加）
        dets: 测年数据（右轴短刻度）
        spd_density: SPD（浅灰色，按平均速率的积分缩放到速率单位）
        k_histogram: 变点个数后验（给出时绘制B面板）
        title: 图标题
    """
    centres = summary.grid.centres
    if k_histogram:
        fig, (ax, ax_k) = plt.subplots(2, 1, figsize=(9, 8), gridspec_kw={"height_ratios": [3, 1.3]})
    else:
        fig, ax = plt.subplots(figsize=(9, 5.5))
        ax_k = None

    if spd_density is not None:
        scale = float(np.sum(summary.mean) * summary.grid.step)
        ax.fill_between(spd_density.cal_ages, 0, spd_density.values * scale, color="lightgrey", alpha=0.8,
                        label="SPD", step="mid")
    ax.plot(centres, summary.mean, color="purple", lw=1.6, label="posterior mean")
    ax.plot(centres, summary.lower, color="purple", lw=1.0, ls="--",
            label=f"{summary.level:.0%} interval")
    ax.plot(centres, summary.upper, color="purple", lw=1.0, ls="--")
    ax.set_xlim(summary.grid.end, summary.grid.start)
    ax.set_ylim(bottom=0)
    ax.set_xlabel("Calendar age (cal yr BP)")
    ax.set_ylabel("Occurrence rate (events / cal yr)")

    if curve is not None or dets:
        ax_c = ax.twinx()
        if curve is not None:
            in_range = (centres >= curve.min_cal_age) & (centres <= curve.max_cal_age)
            mu, tau = curve_at(curve, centres[in_range])
            ax_c.fill_between(centres[in_range], mu - 2 * tau, mu + 2 * tau, color="tab:blue", alpha=0.25, lw=0)
            ax_c.plot(centres[in_range], mu, color="tab:blue", lw=0.8)
        else:
            logger.warning("未提供校准曲线，右轴只绘制14C数据短刻度")
        if dets:
            c14 = np.array([d.c14_age for d in dets])
            ax_c.plot(np.full(c14.size, summary.grid.start), c14, ls="none", marker="_", ms=12, color="black")
        ax_c.set_ylabel("Radiocarbon age (14C yr BP)")
        ax_c.set_xlim(summary.grid.end, summary.grid.start)

    ax.legend(loc="upper left", frameon=False, fontsize=9)
    if title:
        ax.set_title(title)

    if ax_k is not None:
        ks = sorted(k_histogram)
        ax_k.bar(ks, [k_histogram[k] for k in ks], color="purple", alpha=0.7)
        ax_k.set_xlabel("Number of internal changepoints")
        ax_k.set_ylabel("Posterior probability")
        ax_k.set_xticks(ks)

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"图已保存到: {path}")
    return path
