"""End-to-end GP feedforward procedure on the simulated plant.

Steps, in the order they are recorded in every report::

    kernel → window → experiments → dataset → hyperopt → prediction → evaluation

Training experiments run with the feedback controller and a training
feedforward (the baseline F(q) by default). At evaluation the GP signal
replaces F(q) while the feedback controller stays active.
"""
from __future__ import annotations

import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

import numpy as np

from gpfeed._log import log
from gpfeed._types import ReportMetadata
from gpfeed.errors import ConfigError, GpfeedError, InvalidInputError
from gpfeed.gp import Posterior, TrainedGP, fit, predict
from gpfeed.hyperopt import OptimizationResult, OptimizerConfig, optimize
from gpfeed.kernels import KernelSpec, Variant, kernel_from_name, spec_to_dict
from gpfeed.nfir import (
    Dataset,
    WindowConfig,
    assemble_dataset,
    average_repetitions,
    group_by_reference,
    reference_to_query_windows,
)
from gpfeed.plantsim import (
    ClosedLoopLog,
    DiscreteTF,
    FrictionPlant,
    baseline_feedforward,
    inverse_feedforward,
    pd_controller,
    simulate_closed_loop,
)
from gpfeed.trajectory import Trajectory

STEPS = ("kernel", "window", "experiments", "dataset", "hyperopt", "prediction", "evaluation")
DEFAULT_SCALES = tuple(round(0.90 + 0.02 * k, 2) for k in range(11))
TRAINING_FEEDFORWARDS = ("baseline", "inverse", "none")

# Seed streams
STREAM_EXPERIMENTS = 0
STREAM_OPTIMIZER = 1
STREAM_EVALUATION = 2
STREAM_CONVERGENCE = 3

BASELINE = "F(q)"
GP = "GP"


def derive_seed(root: int, stream: int, i: int = 0, j: int = 0) -> int:
    """Child seed of ``root`` for (stream, i, j); stable across runs and platforms."""
    seq = np.random.SeedSequence(root, spawn_key=(stream, i, j))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class LoopSetup:
    """Plant, feedback controller C(q) and baseline feedforward F(q)."""

    plant: FrictionPlant = field(default_factory=lambda: FrictionPlant(viscous_coeff=2.8531))
    controller: DiscreteTF = field(default_factory=lambda: pd_controller(1300.0, 12.0, 1e-3))
    feedforward: DiscreteTF = field(default_factory=lambda: baseline_feedforward(1e-3))


@dataclass(frozen=True)
class ExperimentPlan:
    """Training experiment design plus the GP settings used on its data.

    ``kernel`` is the hyperparameter template: a :class:`KernelSpec`, or a
    variant name (``None``: ``"matern32"``) scaled to the training data.
    ``optimizer=None`` keeps the template fixed and uses ``noise_std`` as sigma_n.
    """

    base_reference: Trajectory
    scale_factors: tuple[float, ...] = DEFAULT_SCALES
    repetitions: int = 1
    window: WindowConfig = field(default_factory=lambda: WindowConfig(20, 40, 30))
    kernel: KernelSpec | str | None = None
    optimizer: OptimizerConfig | None = field(default_factory=OptimizerConfig)
    noise_std: float = 0.0
    seed: int = 0
    loop: LoopSetup = field(default_factory=LoopSetup)
    training_feedforward: str = "baseline"
    average_repetitions: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_factors", tuple(float(a) for a in self.scale_factors))
        if not self.scale_factors:
            raise InvalidInputError("scale_factors must not be empty")
        if self.repetitions < 1:
            raise InvalidInputError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.noise_std < 0:
            raise InvalidInputError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.training_feedforward not in TRAINING_FEEDFORWARDS:
            raise InvalidInputError(
                f"training_feedforward must be one of {', '.join(TRAINING_FEEDFORWARDS)}",
            )
        if self.workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {self.workers}")
        if isinstance(self.kernel, KernelSpec):
            if self.kernel.dim != self.window.n_theta:
                raise InvalidInputError(
                    f"kernel dim {self.kernel.dim} != window n_theta {self.window.n_theta}",
                )
        elif self.kernel is not None:
            kernel_from_name(self.kernel, self.window.n_theta)

    def training_references(self) -> list[Trajectory]:
        base = self.base_reference
        return [base.scaled(a, reference_id=f"{base.reference_id}x{a:g}")
                for a in self.scale_factors]


@dataclass(frozen=True)
class ReportRow:
    reference_id: str
    controller: str
    l2_error: float
    linf_error: float
    in_training: bool


@dataclass
class EvaluationReport:
    """Error norms per (reference, controller) plus run metadata.

    ``timings`` (seconds per step) is kept apart from ``metadata`` so two runs
    with the same inputs produce identical report files.
    """

    rows: list[ReportRow] = field(default_factory=list)
    metadata: ReportMetadata = field(default_factory=lambda: ReportMetadata())
    timings: dict[str, float] = field(default_factory=dict)

    def row(self, reference_id: str, controller: str) -> ReportRow:
        for r in self.rows:
            if r.reference_id == reference_id and r.controller == controller:
                return r
        raise KeyError(f"no row for {reference_id}/{controller}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [
                {"reference_id": r.reference_id, "controller": r.controller,
                 "l2_error": r.l2_error, "linf_error": r.linf_error,
                 "in_training": r.in_training}
                for r in self.rows
            ],
            "metadata": dict(self.metadata),
        }


class ProcedureResult(NamedTuple):
    gp: TrainedGP
    feedforward: dict[str, Posterior]
    report: EvaluationReport
    logs: list[ClosedLoopLog]
    optimization: OptimizationResult | None


# ── Evaluation helpers ───────────────────────────────────────────────────────


def evaluate_log(entry: ClosedLoopLog) -> tuple[float, float]:
    """(‖e‖₂, ‖e‖∞) of a closed-loop log."""
    e = np.asarray(entry.e, dtype=float)
    if e.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(e)), float(np.max(np.abs(e)))


def _training_signal(loop: LoopSetup, kind: str, r: Trajectory) -> DiscreteTF | np.ndarray:
    if kind == "baseline":
        return loop.feedforward
    if kind == "inverse":
        return inverse_feedforward(loop.plant, r.samples)
    return np.zeros(r.N)


def _experiment(job: tuple[LoopSetup, str, Trajectory, float, int, int]) -> ClosedLoopLog:
    loop, kind, ref, noise_std, seed, repetition = job
    ff = _training_signal(loop, kind, ref)
    return simulate_closed_loop(loop.plant, loop.controller, ff, ref, noise_std, seed,
                                repetition=repetition)


def run_experiments(
    loop: LoopSetup,
    references: Sequence[Trajectory],
    *,
    repetitions: int = 1,
    noise_std: float = 0.0,
    seed: int = 0,
    stream: int = STREAM_EXPERIMENTS,
    training_feedforward: str = "baseline",
    workers: int = 1,
) -> list[ClosedLoopLog]:
    """One closed-loop log per (reference, repetition), seeded per pair."""
    jobs = [
        (loop, training_feedforward, ref, noise_std, derive_seed(seed, stream, i, j), j)
        for i, ref in enumerate(references)
        for j in range(repetitions)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_experiment, jobs))
    else:
        logs = [_experiment(job) for job in jobs]
    log(f"Experiments: {len(logs)} run(s) over {len(references)} reference(s)")
    return logs


def build_training_set(logs: Sequence[ClosedLoopLog], window: WindowConfig,
                       average: bool = True) -> Dataset:
    groups = group_by_reference(logs)
    source = average_repetitions(groups) if average else list(logs)
    return assemble_dataset(source, window)


def data_scaled_kernel(dataset: Dataset, name: str = "matern32") -> KernelSpec:
    """ARD kernel whose sigma_f and lengthscales follow the spread of the data.

    ``name`` is a variant or a ``+``-joined sum of variants; the prior variance
    is split evenly over the leaves.
    """
    parts = [p.strip().lower() for p in name.split("+") if p.strip()]
    if not parts:
        raise InvalidInputError(f"unknown kernel name {name!r}")
    spread_u = float(np.std(dataset.u))
    sigma_f = (spread_u if spread_u > 0 else 1.0) / math.sqrt(len(parts))
    spread_y = np.std(dataset.Y, axis=0)
    positive = spread_y[spread_y > 0]
    fallback = float(np.median(positive)) if positive.size else 1.0
    lengthscales = list(np.where(spread_y > 0, spread_y, fallback))
    leaves = []
    for part in parts:
        try:
            variant = Variant(part)
        except ValueError as e:
            raise InvalidInputError(f"unknown kernel name {name!r}") from e
        periods = [4.0 * ell for ell in lengthscales] if variant is Variant.PERIODIC else None
        leaves.append(KernelSpec.leaf(variant, sigma_f, lengthscales, periods))
    return leaves[0] if len(leaves) == 1 else KernelSpec.sum_of(*leaves)


def resolve_kernel(template: KernelSpec | str | None, dataset: Dataset) -> KernelSpec:
    """Kernel template for ``dataset``: given as is, or data-scaled from a name."""
    if isinstance(template, KernelSpec):
        if template.dim != dataset.n_theta:
            raise InvalidInputError(
                f"kernel dim {template.dim} != dataset n_theta {dataset.n_theta}",
            )
        return template
    return data_scaled_kernel(dataset, template or "matern32")


def _is_training_reference(ref: Trajectory, training: Sequence[Trajectory]) -> bool:
    return any(ref.N == t.N and np.allclose(ref.samples, t.samples, rtol=0.0, atol=1e-12)
               for t in training)


def _fit_gp(dataset: Dataset, template: KernelSpec, plan: ExperimentPlan,
            warnings: list[str]) -> tuple[TrainedGP, OptimizationResult | None]:
    if plan.optimizer is None:
        return fit(dataset, template, plan.noise_std), None
    config = replace(plan.optimizer, seed=derive_seed(plan.seed, STREAM_OPTIMIZER))
    try:
        result = optimize(dataset, template, config)
    except GpfeedError as e:
        warning = f"hyperparameter optimization failed, using initial values: {e}"
        log(warning)
        warnings.append(warning)
        return fit(dataset, template, plan.noise_std), None
    return fit(dataset, result.kernel, result.sigma_n), result


# ── Procedure ────────────────────────────────────────────────────────────────


def run_procedure(plan: ExperimentPlan,
                  eval_references: Sequence[Trajectory] = ()) -> ProcedureResult:
    """Collect data, tune, predict and evaluate GP feedforward against F(q)."""
    steps: list[str] = []
    timings: dict[str, float] = {}
    warnings: list[str] = []
    clock = time.perf_counter()

    def done(step: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timings[step] = now - clock
        clock = now
        steps.append(step)

    kernel_choice = plan.kernel or "matern32"
    done("kernel")

    window = plan.window
    done("window")

    training = plan.training_references()
    logs = run_experiments(
        plan.loop, training, repetitions=plan.repetitions, noise_std=plan.noise_std,
        seed=plan.seed, training_feedforward=plan.training_feedforward, workers=plan.workers,
    )
    done("experiments")

    dataset = build_training_set(logs, window, plan.average_repetitions)
    template = resolve_kernel(kernel_choice, dataset)
    done("dataset")

    gp, opt = _fit_gp(dataset, template, plan, warnings)
    done("hyperopt")

    feedforward: dict[str, Posterior] = {}
    for ref in eval_references:
        R = reference_to_query_windows(ref.samples, window)
        feedforward[ref.reference_id] = predict(gp, R, "diag", workers=plan.workers)
    done("prediction")

    rows: list[ReportRow] = []
    for k, ref in enumerate(eval_references):
        seen = _is_training_reference(ref, training)
        seed = derive_seed(plan.seed, STREAM_EVALUATION, k)
        for controller, ff in ((BASELINE, plan.loop.feedforward),
                               (GP, feedforward[ref.reference_id].mean)):
            result = simulate_closed_loop(plan.loop.plant, plan.loop.controller, ff, ref,
                                          plan.noise_std, seed)
            l2, linf = evaluate_log(result)
            rows.append(ReportRow(ref.reference_id, controller, l2, linf, seen))
            log(f"Evaluation {ref.reference_id} [{controller}]: ‖e‖₂={l2:.4g} ‖e‖∞={linf:.4g}")
    done("evaluation")

    metadata: ReportMetadata = {
        "M": dataset.M,
        "n_theta": dataset.n_theta,
        "kernel": spec_to_dict(gp.kernel),
        "sigma_n": gp.sigma_n,
        "lml": opt.lml if opt is not None else None,
        "applied_jitter": gp.applied_jitter,
        "steps": steps,
        "warnings": warnings,
        "references": [ref.reference_id for ref in eval_references],
    }
    report = EvaluationReport(rows, metadata, timings)
    return ProcedureResult(gp, feedforward, report, logs, opt)


# ── Convergence study ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class DensityLevel:
    """Training data density: dataset stride and optional scale factor override."""

    stride: int
    scale_factors: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ConvergenceRow:
    stride: int
    n_references: int
    M: int
    rms_error: float
    max_abs_u: float


def convergence_study(
    plan: ExperimentPlan,
    levels: Sequence[DensityLevel],
    eval_reference: Trajectory | None = None,
    *,
    include_eval: bool = True,
    max_rows: int | None = None,
) -> list[ConvergenceRow]:
    """RMS of E[f(r_t)] - f(r_t) per density level, f being the exact plant inverse.

    With ``include_eval`` the evaluation reference is one of the training
    experiments at every level. A level whose training set exceeds ``max_rows``
    rows raises :class:`ConfigError` before the Gram matrix is built.
    """
    if not levels:
        raise InvalidInputError("convergence_study needs at least one density level")
    eval_ref = eval_reference or plan.base_reference
    truth = inverse_feedforward(plan.loop.plant, eval_ref.samples)
    max_abs_u = float(np.max(np.abs(truth)))
    cache: dict[tuple[float, ...], list[ClosedLoopLog]] = {}
    rows: list[ConvergenceRow] = []
    for level in levels:
        scales = level.scale_factors or plan.scale_factors
        if scales not in cache:
            refs = replace(plan, scale_factors=scales).training_references()
            if include_eval and not _is_training_reference(eval_ref, refs):
                refs.append(eval_ref)
            cache[scales] = run_experiments(
                plan.loop, refs, repetitions=plan.repetitions, noise_std=plan.noise_std,
                seed=plan.seed, stream=STREAM_CONVERGENCE,
                training_feedforward=plan.training_feedforward, workers=plan.workers,
            )
        logs = cache[scales]
        window = replace(plan.window, stride=level.stride)
        dataset = build_training_set(logs, window, plan.average_repetitions)
        if max_rows is not None and dataset.M > max_rows:
            raise ConfigError(
                f"convergence stride {level.stride} gives M={dataset.M} training rows, "
                f"above max_rows={max_rows}; use fewer scales or a coarser stride",
            )
        template = resolve_kernel(plan.kernel, dataset)
        level_plan = replace(plan, window=window, kernel=template)
        gp, _ = _fit_gp(dataset, template, level_plan, [])
        mean = predict(gp, reference_to_query_windows(eval_ref.samples, window)).mean
        rms = math.sqrt(float(np.mean((mean - truth) ** 2)))
        log(f"Convergence: stride {level.stride}, M={dataset.M}, RMS {rms:.4g}")
        rows.append(ConvergenceRow(level.stride, len(group_by_reference(logs)), dataset.M, rms,
                                   max_abs_u))
    return rows
