"""Command-line entry point: ``gpfeed <command> [flags]``."""
from __future__ import annotations

import argparse
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path

import numpy as np

from gpfeed._log import close_run_logging, log, setup_run_logging
from gpfeed.config import ExperimentConfig, load_config
from gpfeed.errors import GpfeedError
from gpfeed.gp import fit, predict
from gpfeed.hyperopt import optimize
from gpfeed.kernels import isotropic, profile
from gpfeed.nfir import reference_to_query_windows
from gpfeed.pipeline import (
    STREAM_OPTIMIZER,
    DensityLevel,
    build_training_set,
    convergence_study,
    derive_seed,
    evaluate_log,
    resolve_kernel,
    run_experiments,
    run_procedure,
)
from gpfeed.report import render_table, write_convergence, write_report
from gpfeed.storage import (
    load_model,
    read_log,
    read_logs,
    read_trajectory,
    save_model,
    write_csv,
    write_feedforward,
    write_logs,
    write_trace,
    write_trajectory,
)

Handler = Callable[[argparse.Namespace], None]

# Registry: command name -> (handler, help, argument adder)
_registry: dict[str, tuple[Handler, str, Callable[[argparse.ArgumentParser], None] | None]] = {}


def register(
    name: str,
    help_text: str,
    arguments: Callable[[argparse.ArgumentParser], None] | None = None,
) -> Callable[[Handler], Handler]:
    """Decorator to register a subcommand handler."""
    def decorator(fn: Handler) -> Handler:
        _registry[name] = (fn, help_text, arguments)
        return fn
    return decorator


def _config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config and start the run log in its output directory."""
    path = args.config or os.environ.get("GPFEED_CONFIG")
    cfg = load_config(Path(path) if path else None, {
        "seed": args.seed,
        "output_dir": args.out,
        "workers": args.workers,
        "stride": args.stride,
        "kernel": args.kernel,
        "friction_on": args.friction_on,
    })
    setup_run_logging(cfg.output_dir)
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get("GPFEED_OUT_DIR") or "out")
    setup_run_logging(out)
    return out


# ── Commands ─────────────────────────────────────────────────────────────────


def _gen_ref_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale", type=float, default=1.0, help="multiply the position profile")


@register("gen-ref", "write the configured reference trajectory as CSV", _gen_ref_args)
def _do_gen_ref(args: argparse.Namespace) -> None:
    cfg = _config(args)
    traj = cfg.reference
    if args.scale != 1.0:
        traj = traj.scaled(args.scale)
    path = cfg.output_dir / "reference.csv"
    write_trajectory(path, traj)
    print(f"📈 reference {traj.reference_id}: {traj.N} samples → {path}")


def _simulate_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--feedforward", choices=("baseline", "inverse", "none"), default=None,
                   help="feedforward active during the experiments (default: from config)")


@register("simulate", "run the training experiments and write log CSVs", _simulate_args)
def _do_simulate(args: argparse.Namespace) -> None:
    cfg = _config(args)
    plan = cfg.plan
    refs = plan.training_references()
    logs = run_experiments(
        plan.loop, refs, repetitions=plan.repetitions, noise_std=plan.noise_std,
        seed=plan.seed, training_feedforward=args.feedforward or plan.training_feedforward,
        workers=plan.workers,
    )
    scales = {ref.reference_id: a for ref, a in zip(refs, plan.scale_factors)}
    log_dir = cfg.output_dir / "logs"
    write_logs(log_dir, logs, scales)
    print(f"🧪 {len(logs)} log(s) → {log_dir}")


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--logs", type=Path, default=None, help="log directory (default: <out>/logs)")
    p.add_argument("--no-optimize", action="store_true", help="keep the kernel template fixed")


@register("train", "fit the GP inverse model on logged experiments", _train_args)
def _do_train(args: argparse.Namespace) -> None:
    cfg = _config(args)
    plan = cfg.plan
    logs = read_logs(args.logs or cfg.output_dir / "logs")
    dataset = build_training_set(logs, plan.window, plan.average_repetitions)
    template = resolve_kernel(plan.kernel, dataset)
    print(f"📦 dataset: M={dataset.M}, n_theta={dataset.n_theta}")
    gp = None
    if plan.optimizer is not None and not args.no_optimize:
        config = replace(plan.optimizer, seed=derive_seed(plan.seed, STREAM_OPTIMIZER))
        try:
            result = optimize(dataset, template, config)
        except GpfeedError as e:
            print(f"⚠️  optimization failed, using initial hyperparameters: {e}", file=sys.stderr)
        else:
            write_trace(cfg.output_dir / "trace.csv", result.kernel, result.trace)
            gp = fit(dataset, result.kernel, result.sigma_n)
            print(f"🎯 LML {result.lml:.6g} (sigma_n={result.sigma_n:.4g})")
    if gp is None:
        gp = fit(dataset, template, plan.noise_std)
    dataset.to_csv(cfg.output_dir / "dataset.csv")
    save_model(cfg.output_dir / "model.json", gp)
    print(f"💾 model → {cfg.output_dir / 'model.json'}")


def _predict_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", type=Path, default=None,
                   help="model file (default: <out>/model.json)")
    p.add_argument("--reference", type=Path, default=None,
                   help="reference CSV (default: <out>/reference.csv)")
    p.add_argument("--variance", action="store_true", help="add a variance column")


@register("predict", "compute the GP feedforward for a reference", _predict_args)
def _do_predict(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    gp = load_model(args.model or out / "model.json")
    traj = read_trajectory(args.reference or out / "reference.csv")
    R = reference_to_query_windows(traj.samples, gp.dataset.window)
    post = predict(gp, R, "diag" if args.variance else False)
    path = out / "feedforward.csv"
    write_feedforward(path, traj.Ts, post.mean, post.var if args.variance else None)
    print(f"🎛️  feedforward ({traj.N} samples) → {path}")


def _evaluate_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("logs", nargs="+", type=Path, help="log CSV files")


@register("evaluate", "print tracking error norms of log CSVs", _evaluate_args)
def _do_evaluate(args: argparse.Namespace) -> None:
    print(f"{'log':<32}{'‖e‖₂':>14}{'‖e‖∞':>14}")
    for path in args.logs:
        l2, linf = evaluate_log(read_log(path))
        print(f"{path.name:<32}{l2:>14.6g}{linf:>14.6g}")


@register("reproduce-paper", "run the full procedure and write the evaluation report")
def _do_reproduce(args: argparse.Namespace) -> None:
    cfg = _config(args)
    out = cfg.output_dir
    result = run_procedure(cfg.plan, cfg.eval_references())
    write_report(out, result.report)
    save_model(out / "model.json", result.gp)
    if result.optimization is not None:
        write_trace(out / "trace.csv", result.optimization.kernel, result.optimization.trace)
    for ref_id, post in result.feedforward.items():
        write_feedforward(out / f"feedforward_{ref_id}.csv", cfg.reference.Ts, post.mean, post.var)
    print(render_table(result.report), end="")
    print(f"📄 report → {out / 'report.txt'}")


@register("convergence-study", "prediction error against the exact inverse per data density")
def _do_convergence(args: argparse.Namespace) -> None:
    cfg = _config(args)
    conv = cfg.convergence
    eval_ref = cfg.eval_references((conv.eval_scale,))[0]
    levels = [DensityLevel(s) for s in conv.strides]
    rows = convergence_study(cfg.convergence_plan(), levels, eval_ref,
                             include_eval=conv.include_eval, max_rows=conv.max_rows)
    path = cfg.output_dir / "convergence.csv"
    write_convergence(path, rows)
    print(f"{'stride':>8}{'M':>8}{'rms':>14}")
    for r in rows:
        print(f"{r.stride:>8}{r.M:>8}{r.rms_error:>14.6g}")
    print(f"📉 convergence → {path}")


def _profile_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-offset", type=float, default=3.0)
    p.add_argument("--points", type=int, default=121)
    p.add_argument("--lengthscale", type=float, default=1.0)
    p.add_argument("--period", type=float, default=2.0)


@register("kernel-profile", "covariance versus offset for each kernel variant", _profile_args)
def _do_kernel_profile(args: argparse.Namespace) -> None:
    out = _out_dir(args)
    offsets = np.linspace(-args.max_offset, args.max_offset, args.points)
    names = ["se", "matern32", "periodic"]
    columns = [profile(isotropic(n, 1, 1.0, args.lengthscale, args.period), offsets)
               for n in names]
    path = out / "kernel_profile.csv"
    write_csv(path, ["offset", *names], np.column_stack([offsets, *columns]))
    print(f"📐 kernel profile → {path}")


@register("version", "print version")
def _do_version(args: argparse.Namespace) -> None:
    from gpfeed import __version__
    print(f"🎛️  gpfeed {__version__}")


# ── Dispatch ─────────────────────────────────────────────────────────────────


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--stride", type=int, default=None)
    common.add_argument("--kernel", default=None, help="kernel name, e.g. matern32 or se+periodic")
    common.add_argument("--friction-on", choices=("velocity_sign", "output_sign"), default=None)
    common.add_argument("--workers", type=int, default=None)

    parser = argparse.ArgumentParser(prog="gpfeed", description="GP-based feedforward")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, arguments) in _registry.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        if arguments is not None:
            arguments(p)
    return parser


def dispatch(argv: Sequence[str]) -> int:
    """Run one command; returns the process exit code."""
    args = _build_parser().parse_args(list(argv))
    handler = _registry[args.command][0]
    try:
        handler(args)
    except GpfeedError as e:
        log(f"{args.command} failed: [{e.category}] {e}")
        print(f"❌ gpfeed {args.command}: [{e.category}] {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ gpfeed {args.command}: [io] {e}", file=sys.stderr)
        return 1
    finally:
        close_run_logging()
    return 0


def cli_main() -> None:
    """Console-script entry point."""
    sys.exit(dispatch(sys.argv[1:]))
