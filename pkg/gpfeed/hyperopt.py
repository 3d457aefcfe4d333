"""Type-II maximum likelihood: local maximization of the log-marginal likelihood.

The search runs in log space over ``[sigma_n, kernel parameters...]`` (order of
:func:`gpfeed.kernels.param_names`) with bound-constrained L-BFGS-B. Run 0
starts at the configured initial parameters; runs 1..restarts start at points
drawn log-uniformly from the bounds box. All start points are drawn up front,
so a configuration with more restarts evaluates a superset of the runs of one
with fewer.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import minimize

from gpfeed._log import log
from gpfeed._types import TraceRow
from gpfeed.errors import GpfeedError, InvalidInputError, OptimizationFailedError
from gpfeed.gp import log_marginal_likelihood
from gpfeed.kernels import HyperParams, KernelSpec, Variant, pack, param_names, unpack
from gpfeed.nfir import Dataset

DEFAULT_BOUNDS = (-6.0, 6.0)
SIGMA_N_START_FRACTION = 1e-2

Bounds = tuple[float, float] | Mapping[str, tuple[float, float]]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`optimize`.

    ``bounds`` is one (low, high) pair in natural-log space applied to every
    parameter, or a mapping from parameter name to pair (missing names use
    ``(-6, 6)``). ``initial_params`` replaces the kernel template's values for
    a leaf kernel; for a sum kernel only its ``sigma_n`` is used.
    """

    max_iterations: int = 100
    gradient_tolerance: float = 1e-5
    initial_params: HyperParams | None = None
    bounds: Bounds = DEFAULT_BOUNDS
    restarts: int = 4
    seed: int = 0
    workers: int = 1
    function_tolerance: float = 1e-12

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidInputError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.gradient_tolerance > 0:
            raise InvalidInputError(
                f"gradient_tolerance must be > 0, got {self.gradient_tolerance}",
            )
        if self.restarts < 0:
            raise InvalidInputError(f"restarts must be >= 0, got {self.restarts}")
        if self.workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {self.workers}")
        pairs = self.bounds.values() if isinstance(self.bounds, Mapping) else [self.bounds]
        for pair in pairs:
            lo, hi = (float(v) for v in pair)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidInputError(f"log-space bounds must be finite and ordered, got {pair}")

    def box(self, names: list[str]) -> np.ndarray:
        """(n, 2) array of log-space bounds in ``names`` order."""
        if isinstance(self.bounds, Mapping):
            unknown = set(self.bounds) - set(names)
            if unknown:
                raise InvalidInputError(f"bounds for unknown parameters: {sorted(unknown)}")
            return np.array([self.bounds.get(n, DEFAULT_BOUNDS) for n in names], dtype=float)
        return np.tile(np.asarray(self.bounds, dtype=float), (len(names), 1))


@dataclass(frozen=True, eq=False)
class RestartResult:
    restart: int
    start: np.ndarray
    x: np.ndarray
    lml: float
    start_lml: float
    iterations: int
    message: str
    failed: bool = False


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    """Best kernel and noise level found, its LML, and the full trace."""

    kernel: KernelSpec
    sigma_n: float
    lml: float
    trace: list[TraceRow] = field(default_factory=list)
    runs: list[RestartResult] = field(default_factory=list)

    @property
    def hyperparams(self) -> HyperParams:
        """Leaf parameters with ``sigma_n`` filled in (leaf kernels only)."""
        if self.kernel.variant is Variant.SUM or self.kernel.params is None:
            raise InvalidInputError("hyperparams is only defined for a single-leaf kernel")
        return replace(self.kernel.params, sigma_n=self.sigma_n)

    @property
    def theta(self) -> np.ndarray:
        return pack(self.kernel, self.sigma_n)


def _start_point(dataset: Dataset, kernel: KernelSpec, config: OptimizerConfig) -> np.ndarray:
    """Natural-space start of run 0."""
    spread = float(np.std(dataset.u))
    sigma_n = SIGMA_N_START_FRACTION * (spread if spread > 0 else 1.0)
    p = config.initial_params
    if p is not None:
        if p.sigma_n > 0:
            sigma_n = p.sigma_n
        if kernel.variant is not Variant.SUM:
            kernel = replace(kernel, params=replace(p, sigma_n=0.0))
    return pack(kernel, sigma_n)


class _Objective:
    """Negative LML and its log-space gradient, remembering the last evaluation."""

    def __init__(self, dataset: Dataset, template: KernelSpec) -> None:
        self.dataset = dataset
        self.template = template
        self._last: tuple[bytes, float, np.ndarray] | None = None
        self.best: tuple[float, np.ndarray] | None = None

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        key = x.tobytes()
        if self._last is not None and self._last[0] == key:
            return self._last[1], self._last[2]
        theta = np.exp(x)
        kernel, sigma_n = unpack(self.template, theta)
        lml, grad = log_marginal_likelihood(self.dataset, kernel, sigma_n)
        if not (math.isfinite(lml) and np.all(np.isfinite(grad))):
            raise InvalidInputError(f"non-finite log-marginal likelihood at θ={theta}")
        value, g = -lml, -grad * theta
        self._last = (key, value, g)
        if self.best is None or lml > self.best[0]:
            self.best = (lml, x.copy())
        return value, g

    __call__ = evaluate


def _projected_grad_norm(x: np.ndarray, g: np.ndarray, box: np.ndarray) -> float:
    pg = x - np.clip(x - g, box[:, 0], box[:, 1])
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def _run(
    restart: int,
    x0: np.ndarray,
    dataset: Dataset,
    template: KernelSpec,
    box: np.ndarray,
    config: OptimizerConfig,
) -> tuple[RestartResult, list[TraceRow]]:
    objective = _Objective(dataset, template)
    trace: list[TraceRow] = []

    def record(x: np.ndarray) -> None:
        value, g = objective(x)
        trace.append({
            "restart": restart,
            "iteration": len(trace),
            "lml": -value,
            "grad_norm": _projected_grad_norm(x, g, box),
            "params": [float(v) for v in np.exp(x)],
        })

    try:
        record(x0)
    except GpfeedError as e:
        log(f"Restart {restart}: start point rejected ({e})")
        return RestartResult(restart, x0, x0, -math.inf, -math.inf, 0, str(e), True), trace
    start_lml = trace[0]["lml"]

    message = ""
    iterations = 0
    try:
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=[tuple(b) for b in box],
            callback=record,
            options={
                "maxiter": config.max_iterations,
                "gtol": config.gradient_tolerance,
                "ftol": config.function_tolerance,
            },
        )
        message = str(res.message)
        iterations = int(res.nit)
    except GpfeedError as e:
        message = f"stopped early: {e}"
        log(f"Restart {restart}: {message}")

    assert objective.best is not None
    lml, x = objective.best
    return RestartResult(restart, x0, x, lml, start_lml, iterations, message), trace


def optimize(dataset: Dataset, kernel_template: KernelSpec,
             config: OptimizerConfig | None = None) -> OptimizationResult:
    """Best-of-restarts local maximizer of the log-marginal likelihood.

    Raises :class:`OptimizationFailedError` when no restart could evaluate
    its start point.
    """
    config = config or OptimizerConfig()
    names = param_names(kernel_template)
    box = config.box(names)

    start = _start_point(dataset, kernel_template, config)
    x0 = np.log(start)
    if config.initial_params is not None and np.any((x0 < box[:, 0]) | (x0 > box[:, 1])):
        outside = [n for n, v, b in zip(names, x0, box) if not b[0] <= v <= b[1]]
        raise InvalidInputError(f"initial parameters outside bounds: {', '.join(outside)}")
    x0 = np.clip(x0, box[:, 0], box[:, 1])

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    draws = rng.uniform(box[:, 0], box[:, 1], size=(config.restarts, len(names)))
    starts = [x0, *draws]

    def job(k: int) -> tuple[RestartResult, list[TraceRow]]:
        return _run(k, starts[k], dataset, kernel_template, box, config)

    if config.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(job, range(len(starts))))
    else:
        outcomes = [job(k) for k in range(len(starts))]

    runs = [r for r, _ in outcomes]
    trace = [row for _, rows in outcomes for row in rows]
    usable = [r for r in runs if not r.failed]
    if not usable:
        raise OptimizationFailedError(
            f"all {len(runs)} optimizer run(s) failed to evaluate their start point",
            [dict(row) for row in trace],
        )
    best = max(usable, key=lambda r: (r.lml, -r.restart))
    for r in runs:
        if not r.failed:
            log(f"Restart {r.restart}: LML {r.start_lml:.6g} → {r.lml:.6g} "
                f"({r.iterations} it, {r.message})")
    kernel, sigma_n = unpack(kernel_template, np.exp(best.x))
    log(f"Hyperparameters: best LML {best.lml:.6g} from restart {best.restart}")
    return OptimizationResult(kernel, sigma_n, best.lml, trace, runs)


def trace_columns(kernel: KernelSpec) -> list[str]:
    """Header of the optimizer trace CSV."""
    return ["restart", "iteration", "lml", "grad_norm", *param_names(kernel)]


def trace_table(trace: list[TraceRow]) -> list[list[Any]]:
    return [[row["restart"], row["iteration"], row["lml"], row["grad_norm"], *row["params"]]
            for row in trace]
