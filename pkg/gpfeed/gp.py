"""Exact Gaussian Process regression with a zero-mean prior.

All linear algebra goes through the Cholesky factor of
``K(Y, Y) + sigma_n² I``. When the factorization fails (or its smallest pivot
is numerically zero) a diagonal jitter of ``1e-10 … 1e-4 × mean(diag)`` is
tried in decades; the level that worked is kept on the model.
"""
from __future__ import annotations

import math
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from gpfeed._log import log
from gpfeed.errors import IllConditionedError, InvalidInputError
from gpfeed.kernels import KernelSpec, contract_grad_hyper, gram
from gpfeed.nfir import Dataset

__all__ = [
    "Dataset",
    "Posterior",
    "TrainedGP",
    "fit",
    "log_marginal_likelihood",
    "predict",
]

JITTER_DECADES = range(-10, -3)
VARIANCE_FLOOR = 1e-8
DEFAULT_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class TrainedGP:
    """Dataset, kernel and the cached factor / weights of the posterior mean."""

    dataset: Dataset
    kernel: KernelSpec
    sigma_n: float
    chol: np.ndarray
    alpha: np.ndarray
    applied_jitter: float = 0.0

    @property
    def window(self) -> Any:
        return self.dataset.window


@dataclass(frozen=True, eq=False)
class Posterior:
    """Predictive mean with optional variances (``var``) or full covariance (``cov``)."""

    mean: np.ndarray
    var: np.ndarray | None = None
    cov: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray | None:
        return None if self.var is None else np.sqrt(self.var)

    def bounds(self, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
        """mean ± k·std."""
        if self.var is None:
            raise InvalidInputError("posterior was computed without variances")
        s = np.sqrt(self.var)
        return self.mean - k * s, self.mean + k * s


def _jitter_levels(K: np.ndarray, jitter: bool) -> list[float]:
    levels = [0.0]
    if jitter:
        scale = float(np.mean(np.diag(K)))
        levels.extend(10.0 ** d * scale for d in JITTER_DECADES)
    return levels


def _cholesky(K: np.ndarray, jitter: bool = True) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K (+ jitter) and the jitter that was applied."""
    n = K.shape[0]
    tol = n * np.finfo(float).eps * float(np.max(np.diag(K)))
    levels = _jitter_levels(K, jitter)
    eye = np.eye(n)
    for level in levels:
        try:
            L = cholesky(K + level * eye, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if float(np.min(np.diag(L))) ** 2 > tol:
            return L, level
    raise IllConditionedError(f"K(Y,Y)+σ_n²I ({n}×{n}) is not numerically positive definite",
                              levels)


def _noisy_gram(dataset: Dataset, kernel: KernelSpec, sigma_n: float) -> np.ndarray:
    if kernel.dim != dataset.n_theta:
        raise InvalidInputError(
            f"kernel dim {kernel.dim} does not match dataset n_theta {dataset.n_theta}",
        )
    if not (math.isfinite(sigma_n) and sigma_n >= 0):
        raise InvalidInputError(f"sigma_n must be finite and >= 0, got {sigma_n}")
    K = gram(kernel, dataset.Y)
    K[np.diag_indices_from(K)] += sigma_n ** 2
    return K


def fit(dataset: Dataset, kernel: KernelSpec, sigma_n: float, *, jitter: bool = True) -> TrainedGP:
    """Factor the training covariance and solve for the weights α."""
    K = _noisy_gram(dataset, kernel, sigma_n)
    L, applied = _cholesky(K, jitter)
    if applied > 0:
        log(f"Cholesky needed jitter {applied:.3g} (M={dataset.M})")
    alpha = cho_solve((L, True), dataset.u, check_finite=False)
    return TrainedGP(dataset, kernel, float(sigma_n), L, alpha, applied)


def _chunks(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def predict(
    gp: TrainedGP,
    R: Any,
    want_cov: bool | str = False,
    *,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> Posterior:
    """Posterior of f at the query windows R.

    ``want_cov``: False for the mean only, ``"diag"`` for variances, True or
    ``"full"`` for the full covariance (variances included).
    """
    if isinstance(want_cov, bool):
        mode = "full" if want_cov else "none"
    else:
        mode = str(want_cov)
    if mode not in ("none", "diag", "full"):
        raise InvalidInputError(f"want_cov must be False, True, 'diag' or 'full', got {want_cov!r}")
    Rq = np.asarray(R, dtype=float)
    if Rq.ndim == 1:
        Rq = Rq[None, :]
    if Rq.ndim != 2 or Rq.shape[1] != gp.kernel.dim:
        raise InvalidInputError(
            f"query windows must have length {gp.kernel.dim}, got shape {Rq.shape}",
        )
    Y = gp.dataset.Y
    prior = gp.kernel.prior_variance
    floor = VARIANCE_FLOOR * prior

    def block(sl: slice) -> tuple[np.ndarray, np.ndarray | None]:
        Ks = gram(gp.kernel, Rq[sl], Y)
        mean = Ks @ gp.alpha
        if mode == "none":
            return mean, None
        V = solve_triangular(gp.chol, Ks.T, lower=True, check_finite=False)
        return mean, prior - np.einsum("ij,ij->j", V, V)

    slices = list(_chunks(Rq.shape[0], max(1, chunk_size)))
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, slices))
    else:
        parts = [block(sl) for sl in slices]
    mean = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    if mode == "none":
        return Posterior(mean)

    var = np.concatenate([p[1] for p in parts if p[1] is not None])
    if np.any(var < -floor):
        log(f"Posterior variance below floor: min {float(np.min(var)):.3g}")
    var = np.maximum(var, 0.0)
    if mode == "diag":
        return Posterior(mean, var)

    Ks = gram(gp.kernel, Rq, Y)
    V = solve_triangular(gp.chol, Ks.T, lower=True, check_finite=False)
    cov = gram(gp.kernel, Rq) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] = var
    return Posterior(mean, var, cov)


def log_marginal_likelihood(
    dataset: Dataset, kernel: KernelSpec, sigma_n: float, *, jitter: bool = True,
) -> tuple[float, np.ndarray]:
    """log p(u | Y, θ) and its gradient in :func:`gpfeed.kernels.param_names` order.

    The gradient uses ½ tr((ααᵀ - K_n⁻¹) ∂K_n/∂θ).
    """
    K = _noisy_gram(dataset, kernel, sigma_n)
    L, _ = _cholesky(K, jitter)
    u = dataset.u
    alpha = cho_solve((L, True), u, check_finite=False)
    M = dataset.M
    value = -0.5 * float(u @ alpha) - float(np.sum(np.log(np.diag(L)))) \
        - 0.5 * M * math.log(2.0 * math.pi)
    Q = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(M), check_finite=False)
    grad = 0.5 * contract_grad_hyper(kernel, dataset.Y, Q)
    return value, np.concatenate([[float(sigma_n) * float(np.trace(Q))], grad])
