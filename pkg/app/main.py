#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口
子命令：calibrate / spd / pp-fit / summarize / simulate
退出码：0 成功，2 参数错误，3 数据错误，4 数值错误
"""

import os
import sys
import logging
import argparse
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app import __version__
from app.logic.calibration import (CalendarGrid, DensityGrid, calibrate_one, determinations_frame, load_curve,
                                   load_determinations)
from app.logic.ppmodel import PriorSpec, default_bounds, default_prior, rate_at
from app.logic.sampler import ChainOptions, run_chain, run_chains
from app.logic import posterior
from app.logic.spd import density_from_frame, spd, spd_bootstrap, spd_mc_envelope
from app.logic.sim import ForwardModelSpec, PRESET_NAMES, forward_model, load_rate_file, preset, sample_pp_events
from app.utils.errors import DataError, NumericalError, EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL
from app.utils.run_config import RunConfig, create_run_config, load_config_file
from app.logic.samples_store import load_samples, read_csv, save_samples, write_csv, write_json

logger = logging.getLogger(__name__)

STOCHASTIC = {"pp-fit", "simulate"}
NEEDS_DETS = {"calibrate", "spd", "pp-fit"}


# --- Parser ---
def build_parser(defaults: Optional[Dict[str, Any]] = None) -> argparse.ArgumentParser:
    """defaults来自配置文件，作为每个子命令的默认值"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--curve', help='校准曲线(.14c)路径（默认 $DATESKIT_CURVE_DIR/intcal20.14c）')
    common.add_argument('--outdir', default='.', help='输出目录')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='日志级别')
    common.add_argument('--config', help='JSON配置文件，键名与命令行参数一致，命令行参数优先')
    common.add_argument('--seed', type=int, help='随机种子（随机命令必填）')

    window = argparse.ArgumentParser(add_help=False)
    window.add_argument('--ta', type=float, help='分析窗口较新端 T_A (cal BP)，默认由数据确定')
    window.add_argument('--tb', type=float, help='分析窗口较老端 T_B (cal BP)，默认由数据确定')
    window.add_argument('--grid-step', type=float, default=1.0, help='日历网格步长（年）')

    parser = argparse.ArgumentParser(prog='datesdata', description='放射性碳测年数据的泊松过程速率估计与SPD基线')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('calibrate', parents=[common, window], help='独立校准每个测年数据')
    p.add_argument('--dets', help='测年数据CSV (id,c14_age,sigma)')

    p = sub.add_parser('spd', parents=[common, window], help='SPD及其bootstrap带 / 蒙特卡洛包络')
    p.add_argument('--dets', help='测年数据CSV')
    p.add_argument('--bootstrap', type=int, help='bootstrap重复次数')
    p.add_argument('--mc-null', help='零模型：密度CSV (cal_age,density) 或速率JSON {t_a,t_b,s,h}')
    p.add_argument('--mc-n', type=int, help='零模型下每次模拟的数据个数（默认与数据个数相同）')
    p.add_argument('--replicates', type=int, default=500, help='蒙特卡洛重复次数')
    p.add_argument('--sigma-obs', type=float, default=25.0, help='模拟数据的观测误差')
    p.add_argument('--level', type=float, default=0.95, help='概率水平')

    p = sub.add_parser('pp-fit', parents=[common, window], help='可逆跳转MCMC拟合泊松过程速率')
    p.add_argument('--dets', help='测年数据CSV')
    p.add_argument('--n-lambda', type=float, default=3.0, help='变点个数的先验均值')
    p.add_argument('--k-max', type=int, default=30, help='变点个数上限')
    p.add_argument('--alpha', type=float, default=1.0, help='高度Gamma先验的形状参数')
    p.add_argument('--beta', type=float, help='高度Gamma先验的速率参数（默认 (T_B−T_A)/n）')
    p.add_argument('--iters', type=int, default=100000, help='迭代次数')
    p.add_argument('--burn', type=int, default=50000, help='burn-in')
    p.add_argument('--thin', type=int, default=10, help='抽稀步长')
    p.add_argument('--move-constant', type=float, default=0.4, help='新增/删除变点的概率尺度')
    p.add_argument('--height-step', type=float, default=0.5, help='高度对数随机游走半宽')
    p.add_argument('--prior-only', action='store_true', help='关闭似然，只从先验抽样')
    p.add_argument('--chains', type=int, default=1, help='独立链数')
    p.add_argument('--concurrent-limit', type=int, default=4, help='并发进程数')
    p.add_argument('--progress', action='store_true', help='显示进度条')
    p.add_argument('--out', default='samples.jsonl', help='样本文件名（位于outdir下）')

    p = sub.add_parser('summarize', parents=[common], help='汇总后验样本')
    p.add_argument('--samples', required=True, nargs='+', help='样本文件；给出多个时额外输出链间比较')
    p.add_argument('--dets', help='测年数据CSV（用于SPD叠加与短刻度）')
    p.add_argument('--grid-step', type=float, help='汇总网格步长（默认与采样网格相同）')
    p.add_argument('--level', type=float, default=0.95, help='概率水平')
    p.add_argument('--cond-k', type=int, help='按变点个数条件汇总')
    p.add_argument('--bin-width', type=float, default=5.0, help='变点位置直方图分箱宽度（年）')
    p.add_argument('--realisations', type=int, help='导出的速率实现个数')
    p.add_argument('--calendar-ages', action='store_true', help='输出每个测年数据的后验日历年龄密度')
    p.add_argument('--plot', action='store_true', help='输出SVG图')

    p = sub.add_parser('simulate', parents=[common], help='生成模拟数据')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--preset', choices=PRESET_NAMES, help='内置实验')
    source.add_argument('--rate', help='速率JSON {t_a,t_b,s,h}')
    p.add_argument('--n', type=int, help='uniform-phase / spd-spread / two-phase的事件个数')
    p.add_argument('--growth-rate', type=float, default=0.003, help='exp-growth的增长率r')
    p.add_argument('--sigma-obs', type=float, default=25.0, help='观测误差')
    p.add_argument('--no-curve-error', action='store_true', help='模拟时不叠加校准曲线误差')
    p.add_argument('--prefix', default='sim', help='测年数据编号前缀')

    if defaults:
        for subparser in sub.choices.values():
            subparser.set_defaults(**defaults)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """配置文件的值作为默认值，命令行参数覆盖它们"""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config')
    known, _ = pre.parse_known_args(argv)
    defaults = None
    if known.config:
        try:
            defaults = load_config_file(known.config)
        except DataError as e:
            build_parser().error(str(e))
    parser = build_parser(defaults)
    args = parser.parse_args(argv)
    if args.command in STOCHASTIC or getattr(args, 'bootstrap', None) or getattr(args, 'mc_null', None):
        if args.seed is None:
            parser.error(f"{args.command} 需要 --seed")
    if args.command in NEEDS_DETS and not args.dets:
        parser.error(f"{args.command} 需要 --dets")
    return args


# --- Helpers ---
def _config(args: argparse.Namespace) -> RunConfig:
    return create_run_config(curve=args.curve, outdir=args.outdir, log_level=args.log_level, seed=args.seed)


def _echo(args: argparse.Namespace, **extra) -> Dict[str, Any]:
    """写入输出文件头的配置回显（不含日志级别和输出目录）"""
    echo = {key: value for key, value in vars(args).items() if key not in ('log_level', 'config', 'outdir') and value is not None}
    echo.update(extra)
    return echo


def _analysis_grid(args: argparse.Namespace, dets, curve) -> CalendarGrid:
    """
    分析网格：两端都给出时原样使用；由数据推出的一端向外延伸到步长的整数倍
    """
    step = args.grid_step
    if args.ta is not None and args.tb is not None:
        try:
            return CalendarGrid(start=args.ta, end=args.tb, step=step)
        except ValidationError:
            if not args.ta < args.tb:
                raise
            raise ValueError(f"--grid-step {step:g} 不能整除窗口 [{args.ta:g}, {args.tb:g}]"
                             f"（宽度 {args.tb - args.ta:g} 年）")
    t_a, t_b = default_bounds(dets, curve, grid_step=step)
    if args.tb is not None:
        return CalendarGrid.covering(t_a, args.tb, step, anchor="end")
    return CalendarGrid.covering(args.ta if args.ta is not None else t_a, t_b, step, anchor="start")


def _summary_grid(sampling_grid: CalendarGrid, step: Optional[float]) -> CalendarGrid:
    """汇总网格与采样窗口相同，步长必须整除窗口宽度（窗口外速率为0，不能向外延伸）"""
    if not step:
        return sampling_grid
    try:
        return CalendarGrid(start=sampling_grid.start, end=sampling_grid.end, step=step)
    except ValidationError:
        width = sampling_grid.end - sampling_grid.start
        raise ValueError(f"--grid-step {step:g} 不能整除采样窗口 [{sampling_grid.start:g}, {sampling_grid.end:g}]"
                         f"（宽度 {width:g} 年）")


def _load_null_model(path: str, grid: CalendarGrid) -> DensityGrid:
    if path.lower().endswith('.json'):
        rate = load_rate_file(path)
        values = np.asarray(rate_at(rate, grid.centres), dtype=float)
        total = values.sum() * grid.step
        if not total > 0:
            raise DataError(f"零模型速率在网格 [{grid.start:g}, {grid.end:g}] 上全部为0", path=path)
        return DensityGrid(grid, values / total)
    return density_from_frame(read_csv(path))


# --- Commands ---
def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _config(args)
    curve = load_curve(config.resolve_curve())
    dets = load_determinations(args.dets)
    grid = _analysis_grid(args, dets, curve)
    for det in dets:
        density = calibrate_one(det, curve, grid)
        path = config.output_path(f"calibrated_{det.id}.csv")
        write_csv(density.to_frame("density"), path,
                  header=_echo(args, determination=det.model_dump(), curve_name=curve.name))
    print(f"✅ 已校准 {len(dets)} 个测年数据，结果位于 {config.outdir}")
    return EXIT_OK


def cmd_spd(args: argparse.Namespace) -> int:
    config = _config(args)
    curve = load_curve(config.resolve_curve())
    dets = load_determinations(args.dets)
    grid = _analysis_grid(args, dets, curve)
    summed = spd(dets, curve, grid)
    df = summed.to_frame("spd")
    extra: Dict[str, Any] = {"curve_name": curve.name}

    if args.bootstrap:
        band = spd_bootstrap(dets, curve, grid, args.bootstrap, args.level, config.require_seed())
        df["lower"], df["upper"] = band.lower, band.upper
    write_csv(df, config.output_path("spd.csv"), header=_echo(args, **extra))

    if args.mc_null:
        null_model = _load_null_model(args.mc_null, grid)
        envelope = spd_mc_envelope(null_model, args.mc_n or len(dets), curve, grid, args.replicates, args.level,
                                   config.require_seed(), args.sigma_obs, observed=summed)
        env_df = envelope.to_frame()
        env_df.insert(1, "spd", summed.values)
        extra["exit_fraction"] = envelope.exit_fraction
        write_csv(env_df, config.output_path("spd_envelope.csv"), header=_echo(args, **extra))
        print(f"📊 观测SPD超出{args.level:.0%}包络的格点比例: {envelope.exit_fraction:.1%}")
    print(f"✅ SPD已完成 ({len(dets)}个数据, 网格 [{grid.start:g}, {grid.end:g}])")
    return EXIT_OK


def cmd_pp_fit(args: argparse.Namespace) -> int:
    config = _config(args)
    curve = load_curve(config.resolve_curve())
    dets = load_determinations(args.dets)
    grid = _analysis_grid(args, dets, curve)
    prior = default_prior(len(dets), grid.start, grid.end, n_lambda=args.n_lambda, k_max=args.k_max)
    prior = PriorSpec(n_lambda=prior.n_lambda, k_max=prior.k_max, alpha=args.alpha,
                      beta=args.beta if args.beta is not None else prior.beta)
    options = ChainOptions(iterations=args.iters, burn_in=args.burn, thin=args.thin, seed=config.require_seed(),
                           grid=grid, prior=prior, move_constant=args.move_constant, height_step=args.height_step,
                           sample_from_prior=args.prior_only, progress=args.progress)
    print(f"🚀 RJ-MCMC: {len(dets)}个数据, 窗口 [{grid.start:g}, {grid.end:g}] cal BP, "
          f"n_λ={prior.n_lambda:g}, β={prior.beta:.4g}, seed={options.seed}")

    if args.chains > 1:
        chains = run_chains(dets, curve, options, args.chains, args.concurrent_limit)
        root, ext = os.path.splitext(args.out)
        for c, samples in enumerate(chains, start=1):
            save_samples(samples, config.output_path(f"{root}_c{c}{ext}"))
    else:
        samples = run_chain(dets, curve, options)
        save_samples(samples, config.output_path(args.out))
        chains = [samples]

    if any(chain.is_empty for chain in chains):
        print("⚠️ burn-in和抽稀之后没有保留任何样本")
    else:
        histogram = posterior.changepoint_count_histogram(chains[0])
        print(f"✅ 完成，后验变点个数众数 k={posterior.posterior_mode(histogram)}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    config = _config(args)
    chains = [load_samples(path) for path in args.samples]
    samples = chains[0]
    sampling_grid = samples.options.grid
    grid = _summary_grid(sampling_grid, args.grid_step)
    header = _echo(args)

    summary = posterior.mean_rate(samples, grid, args.level)
    write_csv(summary.to_frame(), config.output_path("rate_summary.csv"), header=header)
    histogram = posterior.changepoint_count_histogram(samples)
    write_csv(posterior.count_histogram_frame(histogram), config.output_path("k_histogram.csv"), header=header)
    diagnostics = posterior.rate_diagnostics(summary, len(samples.determination_ids))
    logger.info(f"后验平均速率积分 {diagnostics['integral']:.1f}，数据个数 {diagnostics['n_determinations']}")

    if args.cond_k is not None:
        k = args.cond_k
        if k >= 1:
            locations = posterior.changepoint_locations(samples, k, args.bin_width)
            write_csv(posterior.histograms_frame(locations), config.output_path(f"locations_k{k}.csv"), header=header)
        heights = posterior.conditional_heights(samples, k)
        write_csv(posterior.histograms_frame(heights), config.output_path(f"heights_k{k}.csv"), header=header)
        conditional = posterior.conditional_mean_rate(samples, grid, k, args.level)
        write_csv(conditional.to_frame(), config.output_path(f"rate_summary_k{k}.csv"), header=header)

    if args.realisations:
        traces = posterior.export_realisations(samples, args.realisations, grid)
        write_csv(posterior.realisations_frame(traces, grid), config.output_path("realisations.csv"), header=header)

    if args.calendar_ages:
        densities = posterior.calendar_age_densities(samples, sampling_grid)
        frames = []
        for det_id, density in zip(samples.determination_ids, densities):
            df = density.to_frame("density")
            df.insert(0, "id", det_id)
            frames.append(df)
        write_csv(pd.concat(frames, ignore_index=True), config.output_path("calendar_ages.csv"), header=header)

    if len(chains) > 1:
        comparison = posterior.compare_chains(chains, grid, args.level)
        write_csv(comparison.to_frame(), config.output_path("chain_comparison.csv"),
                  header={**header, "max_abs_difference": comparison.max_abs_difference,
                          "relative_difference": comparison.relative_difference})
        print(f"📊 链间平均速率最大差 {comparison.max_abs_difference:.4g} (相对峰值 {comparison.relative_difference:.1%})")

    if args.plot:
        from app.logic.plotting import plot_summary
        curve, dets, spd_density = None, [], None
        try:
            curve = load_curve(config.resolve_curve())
        except DataError as e:
            logger.warning(f"绘图时不叠加校准曲线: {e}")
        if args.dets:
            dets = load_determinations(args.dets)
            if curve is not None:
                spd_density = spd(dets, curve, grid)
        plot_summary(summary, config.output_path("summary.svg"), curve=curve, dets=dets,
                     spd_density=spd_density, k_histogram=histogram)

    print(f"✅ 汇总完成: {len(samples)}个后验实现，后验变点个数众数 k={posterior.posterior_mode(histogram)}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)
    seed = config.require_seed()
    if args.preset == "megafauna-config":
        result = preset(args.preset, seed)
        write_json(result.record, config.output_path("megafauna_config.json"))
        print(f"✅ 已写出配置: {config.output_path('megafauna_config.json')}")
        return EXIT_OK

    curve = load_curve(config.resolve_curve())
    rng = np.random.default_rng(seed)
    if args.preset:
        params = {"growth_rate": args.growth_rate}
        if args.n is not None:
            params["n_events"] = args.n
        result = preset(args.preset, seed, **params)
        events, bounds = result.events, result.bounds
        truth: Dict[str, Any] = dict(result.record)
        if result.rate is not None:
            truth["rate"] = result.rate.to_record()
        if result.truth is not None:
            truth["rate"] = result.truth.to_record()
        # 预设已用掉seed对应的流，正向模拟使用独立子流
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    else:
        rate = load_rate_file(args.rate)
        events = sample_pp_events(rate, rng)
        bounds = (rate.t_a, rate.t_b)
        truth = {"rate": rate.to_record(), "seed": seed}

    spec = ForwardModelSpec(sigma_obs=args.sigma_obs, include_curve_error=not args.no_curve_error)
    dets = forward_model(events, curve, spec, rng, prefix=args.prefix)
    header = _echo(args, curve_name=curve.name)
    write_csv(determinations_frame(dets), config.output_path("determinations.csv"), header=header)
    truth.update({"bounds": list(bounds), "ages": events.ages.tolist(), "ids": [d.id for d in dets]})
    write_json(truth, config.output_path("truth.json"))
    print(f"✅ 已模拟 {len(dets)} 个测年数据，窗口 {bounds[0]:g}-{bounds[1]:g} cal BP")
    return EXIT_OK


COMMANDS = {
    'calibrate': cmd_calibrate,
    'spd': cmd_spd,
    'pp-fit': cmd_pp_fit,
    'summarize': cmd_summarize,
    'simulate': cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    主函数
    """
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level), format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return COMMANDS[args.command](args)
    except NumericalError as e:
        logger.error(f"数值错误: {e}")
        if e.state:
            logger.error(f"链状态: {e.state}")
        print(f"❌ 数值错误: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        logger.error(f"数据错误: {e}")
        print(f"❌ 数据错误: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, ValueError) as e:
        logger.error(f"参数错误: {e}")
        print(f"❌ 参数错误: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
