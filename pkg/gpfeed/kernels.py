"""Stationary covariance functions, Gram matrices and hyperparameter gradients.

A kernel is described declaratively by a :class:`KernelSpec`: a leaf variant
(squared-exponential, Matérn-3/2, periodic) carrying its own
:class:`HyperParams`, or a sum of two or more leaves. Specs are immutable and
safe to share between threads; every function here is pure.

Lengthscales are true ARD length-scales, i.e. the scaled squared distance is
``rho = sum(((a_i - b_i) / l_i) ** 2)``. The Matérn-3/2 kernel uses the
distance ``sqrt(rho)`` (standard, positive semi-definite form).

Hyperparameter order, shared with :mod:`gpfeed.gp` and :mod:`gpfeed.hyperopt`:
``sigma_n`` first, then per leaf ``sigma_f``, lengthscales, periods.
"""
from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from gpfeed._types import KernelSpecDict
from gpfeed.errors import InvalidInputError

_SQRT3 = math.sqrt(3.0)


class Variant(str, Enum):
    SE = "se"
    MATERN32 = "matern32"
    PERIODIC = "periodic"
    SUM = "sum"


def _positive_tuple(values: Sequence[float], name: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not out:
        raise InvalidInputError(f"{name}: at least one value required")
    if not all(math.isfinite(v) and v > 0 for v in out):
        raise InvalidInputError(f"{name}: every value must be finite and > 0, got {out}")
    return out


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters of one kernel leaf.

    ``sigma_n`` is the observation noise std. It never enters a kernel
    evaluation; it is carried here so an :class:`~gpfeed.hyperopt.OptimizerConfig`
    can seed the noise level together with the kernel parameters.
    """

    sigma_f: float
    lengthscales: tuple[float, ...]
    periods: tuple[float, ...] | None = None
    sigma_n: float = 0.0

    def __post_init__(self) -> None:
        sigma_f = float(self.sigma_f)
        sigma_n = float(self.sigma_n)
        if not (math.isfinite(sigma_f) and sigma_f > 0):
            raise InvalidInputError(f"sigma_f must be finite and > 0, got {sigma_f}")
        if not (math.isfinite(sigma_n) and sigma_n >= 0):
            raise InvalidInputError(f"sigma_n must be finite and >= 0, got {sigma_n}")
        object.__setattr__(self, "sigma_f", sigma_f)
        object.__setattr__(self, "sigma_n", sigma_n)
        object.__setattr__(self, "lengthscales", _positive_tuple(self.lengthscales, "lengthscales"))
        if self.periods is not None:
            object.__setattr__(self, "periods", _positive_tuple(self.periods, "periods"))


@dataclass(frozen=True)
class KernelSpec:
    """Declarative covariance function over ``dim``-dimensional windows."""

    variant: Variant
    dim: int
    params: HyperParams | None = None
    terms: tuple[KernelSpec, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.dim < 1:
            raise InvalidInputError(f"kernel dim must be >= 1, got {self.dim}")
        if self.variant is Variant.SUM:
            if self.params is not None:
                raise InvalidInputError("a sum kernel carries no parameters of its own")
            if len(self.terms) < 2:
                raise InvalidInputError("a sum kernel needs at least 2 terms")
            for term in self.terms:
                if term.dim != self.dim:
                    raise InvalidInputError(
                        f"sum kernel terms must share dim {self.dim}, got {term.dim}",
                    )
            return
        if self.terms:
            raise InvalidInputError(f"{self.variant.value} kernel cannot have terms")
        if self.params is None:
            raise InvalidInputError(f"{self.variant.value} kernel requires params")
        if len(self.params.lengthscales) != self.dim:
            raise InvalidInputError(
                f"expected {self.dim} lengthscales, got {len(self.params.lengthscales)}",
            )
        if self.variant is Variant.PERIODIC:
            if self.params.periods is None or len(self.params.periods) != self.dim:
                raise InvalidInputError(f"periodic kernel requires {self.dim} periods")
        elif self.params.periods is not None:
            raise InvalidInputError(f"{self.variant.value} kernel takes no periods")

    @classmethod
    def leaf(
        cls,
        variant: Variant | str,
        sigma_f: float,
        lengthscales: Sequence[float],
        periods: Sequence[float] | None = None,
    ) -> KernelSpec:
        params = HyperParams(
            sigma_f=sigma_f,
            lengthscales=tuple(lengthscales),
            periods=tuple(periods) if periods is not None else None,
        )
        return cls(Variant(variant), len(params.lengthscales), params)

    @classmethod
    def sum_of(cls, *terms: KernelSpec) -> KernelSpec:
        if not terms:
            raise InvalidInputError("a sum kernel needs at least 2 terms")
        return cls(Variant.SUM, terms[0].dim, None, tuple(terms))

    def leaves(self) -> list[KernelSpec]:
        if self.variant is Variant.SUM:
            return [leaf for term in self.terms for leaf in term.leaves()]
        return [self]

    @property
    def prior_variance(self) -> float:
        """k(a, a) for any a: the sum of sigma_f² over the leaves."""
        return sum(leaf.params.sigma_f ** 2 for leaf in self.leaves())  # type: ignore[union-attr]


def isotropic(variant: Variant | str, dim: int, sigma_f: float = 1.0, lengthscale: float = 1.0,
              period: float = 1.0) -> KernelSpec:
    """Leaf kernel with a single lengthscale (and period) repeated over every axis."""
    v = Variant(variant)
    periods = [period] * dim if v is Variant.PERIODIC else None
    return KernelSpec.leaf(v, sigma_f, [lengthscale] * dim, periods)


def kernel_from_name(name: str, dim: int, sigma_f: float = 1.0, lengthscale: float = 1.0,
                     period: float = 1.0) -> KernelSpec:
    """Build a kernel from a short name such as ``matern32`` or ``se+periodic``."""
    parts = [p.strip().lower() for p in name.split("+") if p.strip()]
    try:
        leaves = [isotropic(p, dim, sigma_f, lengthscale, period) for p in parts]
    except ValueError as e:
        raise InvalidInputError(f"unknown kernel name {name!r}: {e}") from e
    if not leaves:
        raise InvalidInputError(f"unknown kernel name {name!r}")
    if len(leaves) == 1:
        return leaves[0]
    return KernelSpec.sum_of(*leaves)


# ── Input validation ─────────────────────────────────────────────────────────


def _as_windows(A: Any, dim: int) -> np.ndarray:
    arr = np.asarray(A, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidInputError(f"windows must have length {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("windows contain non-finite values")
    return arr


# ── Evaluation ───────────────────────────────────────────────────────────────


def _leaf_gram(leaf: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    p = leaf.params
    assert p is not None
    sf2 = p.sigma_f ** 2
    ell = np.asarray(p.lengthscales)
    if leaf.variant is Variant.SE:
        rho = cdist(A / ell, B / ell, "sqeuclidean")
        return sf2 * np.exp(-0.5 * rho)
    if leaf.variant is Variant.MATERN32:
        s = _SQRT3 * cdist(A / ell, B / ell, "euclidean")
        return sf2 * (1.0 + s) * np.exp(-s)
    acc = np.zeros((A.shape[0], B.shape[0]))
    periods = p.periods
    assert periods is not None
    for i in range(leaf.dim):
        s = np.sin(np.pi * (A[:, i, None] - B[None, :, i]) / periods[i]) / ell[i]
        acc += s * s
    return sf2 * np.exp(-0.5 * acc)


def gram(spec: KernelSpec, A: Any, B: Any | None = None) -> np.ndarray:
    """Covariance matrix with element (i, j) = k(A_i, B_j); ``B`` defaults to ``A``."""
    A_ = _as_windows(A, spec.dim)
    B_ = A_ if B is None else _as_windows(B, spec.dim)
    K = np.zeros((A_.shape[0], B_.shape[0]))
    for leaf in spec.leaves():
        K += _leaf_gram(leaf, A_, B_)
    return K


def evaluate(spec: KernelSpec, a: Any, b: Any) -> float:
    """k(a, b) for two single windows."""
    a_ = np.asarray(a, dtype=float)
    b_ = np.asarray(b, dtype=float)
    if a_.ndim != 1 or b_.ndim != 1:
        raise InvalidInputError("evaluate expects two single windows")
    return float(gram(spec, a_, b_)[0, 0])


def diag(spec: KernelSpec, A: Any) -> np.ndarray:
    """Prior variances k(A_i, A_i)."""
    A_ = _as_windows(A, spec.dim)
    return np.full(A_.shape[0], spec.prior_variance)


def profile(spec: KernelSpec, offsets: Any, axis: int = 0) -> np.ndarray:
    """Covariance between the origin and points offset along one axis."""
    if not 0 <= axis < spec.dim:
        raise InvalidInputError(f"axis {axis} out of range for dim {spec.dim}")
    off = np.asarray(offsets, dtype=float).ravel()
    points = np.zeros((off.size, spec.dim))
    points[:, axis] = off
    return gram(spec, np.zeros(spec.dim), points)[0]


# ── Gradients ────────────────────────────────────────────────────────────────


def _leaf_grads(leaf: KernelSpec, A: np.ndarray) -> Iterator[np.ndarray]:
    p = leaf.params
    assert p is not None
    sf = p.sigma_f
    ell = np.asarray(p.lengthscales)
    if leaf.variant is Variant.SE:
        K = sf ** 2 * np.exp(-0.5 * cdist(A / ell, A / ell, "sqeuclidean"))
        yield 2.0 * K / sf
        for i in range(leaf.dim):
            d2 = (A[:, i, None] - A[None, :, i]) ** 2
            yield K * d2 / ell[i] ** 3
        return
    if leaf.variant is Variant.MATERN32:
        s = _SQRT3 * cdist(A / ell, A / ell, "euclidean")
        e = np.exp(-s)
        yield 2.0 * sf * (1.0 + s) * e
        common = 3.0 * sf ** 2 * e
        for i in range(leaf.dim):
            d2 = (A[:, i, None] - A[None, :, i]) ** 2
            yield common * d2 / ell[i] ** 3
        return
    periods = np.asarray(p.periods)
    acc = np.zeros((A.shape[0], A.shape[0]))
    for i in range(leaf.dim):
        s = np.sin(np.pi * (A[:, i, None] - A[None, :, i]) / periods[i]) / ell[i]
        acc += s * s
    K = sf ** 2 * np.exp(-0.5 * acc)
    yield 2.0 * K / sf
    for i in range(leaf.dim):
        sin = np.sin(np.pi * (A[:, i, None] - A[None, :, i]) / periods[i])
        yield K * sin * sin / ell[i] ** 3
    for i in range(leaf.dim):
        diff = A[:, i, None] - A[None, :, i]
        arg = np.pi * diff / periods[i]
        yield K * np.sin(arg) * np.cos(arg) * np.pi * diff / (ell[i] ** 2 * periods[i] ** 2)


def iter_grad_hyper(spec: KernelSpec, A: Any) -> Iterator[np.ndarray]:
    """Yield dK/dθ one matrix at a time, in :func:`param_names` order minus sigma_n."""
    A_ = _as_windows(A, spec.dim)
    for leaf in spec.leaves():
        yield from _leaf_grads(leaf, A_)


def grad_hyper(spec: KernelSpec, A: Any) -> list[np.ndarray]:
    """Entry-wise derivatives of ``gram(spec, A, A)``: sigma_f, lengthscales, periods per leaf."""
    return list(iter_grad_hyper(spec, A))


def _axis_weighted_sq_dist(V: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per axis i: sum over (j, k) of V[j, k] * (A[j, i] - A[k, i]) ** 2."""
    C = A - A.mean(axis=0)
    sq = C * C
    return V.sum(axis=1) @ sq + V.sum(axis=0) @ sq - 2.0 * np.sum(C * (V @ C), axis=0)


def contract_grad_hyper(spec: KernelSpec, A: Any, W: Any) -> np.ndarray:
    """sum(W * dK/dθ) for every kernel parameter, in :func:`iter_grad_hyper` order.

    SE and Matérn-3/2 lengthscales are contracted with one matrix product
    instead of one M×M derivative matrix per axis.
    """
    A_ = _as_windows(A, spec.dim)
    W_ = np.asarray(W, dtype=float)
    if W_.shape != (A_.shape[0], A_.shape[0]):
        raise InvalidInputError(f"weights must be {A_.shape[0]}x{A_.shape[0]}, got {W_.shape}")
    out: list[float] = []
    for leaf in spec.leaves():
        p = leaf.params
        assert p is not None
        ell = np.asarray(p.lengthscales)
        if leaf.variant is Variant.SE:
            K = p.sigma_f ** 2 * np.exp(-0.5 * cdist(A_ / ell, A_ / ell, "sqeuclidean"))
            V = W_ * K
            out.append(2.0 * float(np.sum(V)) / p.sigma_f)
            out.extend(_axis_weighted_sq_dist(V, A_) / ell ** 3)
        elif leaf.variant is Variant.MATERN32:
            s = _SQRT3 * cdist(A_ / ell, A_ / ell, "euclidean")
            e = np.exp(-s)
            out.append(float(np.sum(W_ * (2.0 * p.sigma_f * (1.0 + s) * e))))
            V = W_ * (3.0 * p.sigma_f ** 2 * e)
            out.extend(_axis_weighted_sq_dist(V, A_) / ell ** 3)
        else:
            out.extend(float(np.sum(W_ * dK)) for dK in _leaf_grads(leaf, A_))
    return np.asarray(out, dtype=float)


# ── Parameter vectors ────────────────────────────────────────────────────────


def param_names(spec: KernelSpec) -> list[str]:
    leaves = spec.leaves()
    names = ["sigma_n"]
    for n, leaf in enumerate(leaves):
        prefix = f"t{n}." if len(leaves) > 1 else ""
        names.append(f"{prefix}sigma_f")
        names.extend(f"{prefix}lengthscale[{i}]" for i in range(leaf.dim))
        if leaf.variant is Variant.PERIODIC:
            names.extend(f"{prefix}period[{i}]" for i in range(leaf.dim))
    return names


def pack(spec: KernelSpec, sigma_n: float) -> np.ndarray:
    """Flatten (sigma_n, kernel parameters) into a natural-space vector."""
    values = [float(sigma_n)]
    for leaf in spec.leaves():
        p = leaf.params
        assert p is not None
        values.append(p.sigma_f)
        values.extend(p.lengthscales)
        if leaf.variant is Variant.PERIODIC:
            values.extend(p.periods or ())
    return np.asarray(values)


def unpack(spec: KernelSpec, theta: Any) -> tuple[KernelSpec, float]:
    """Inverse of :func:`pack`: returns a spec with the same structure and new values."""
    values = np.asarray(theta, dtype=float).ravel()
    expected = len(param_names(spec))
    if values.size != expected:
        raise InvalidInputError(f"expected {expected} hyperparameters, got {values.size}")
    pos = 1

    def take(n: int) -> tuple[float, ...]:
        nonlocal pos
        out = tuple(float(v) for v in values[pos:pos + n])
        pos += n
        return out

    def rebuild(node: KernelSpec) -> KernelSpec:
        if node.variant is Variant.SUM:
            return replace(node, terms=tuple(rebuild(t) for t in node.terms))
        (sigma_f,) = take(1)
        lengthscales = take(node.dim)
        periods = take(node.dim) if node.variant is Variant.PERIODIC else None
        params = HyperParams(sigma_f=sigma_f, lengthscales=lengthscales, periods=periods)
        return replace(node, params=params)

    return rebuild(spec), float(values[0])


# ── JSON schema ──────────────────────────────────────────────────────────────

_LEAF_KEYS = {"variant", "sigma_f", "lengthscales", "periods"}
_SUM_KEYS = {"variant", "terms"}


def spec_to_dict(spec: KernelSpec) -> KernelSpecDict:
    if spec.variant is Variant.SUM:
        return {"variant": "sum", "terms": [spec_to_dict(t) for t in spec.terms]}
    p = spec.params
    assert p is not None
    out: KernelSpecDict = {
        "variant": spec.variant.value,
        "sigma_f": p.sigma_f,
        "lengthscales": list(p.lengthscales),
    }
    if p.periods is not None:
        out["periods"] = list(p.periods)
    return out


def spec_from_dict(data: Any) -> KernelSpec:
    if not isinstance(data, dict):
        raise InvalidInputError(f"kernel spec must be an object, got {type(data).__name__}")
    try:
        variant = Variant(data.get("variant"))
    except ValueError as e:
        raise InvalidInputError(f"unknown kernel variant {data.get('variant')!r}") from e
    allowed = _SUM_KEYS if variant is Variant.SUM else _LEAF_KEYS
    unknown = set(data) - allowed
    if unknown:
        raise InvalidInputError(f"unknown kernel keys: {', '.join(sorted(unknown))}")
    if variant is Variant.SUM:
        terms = data.get("terms")
        if not isinstance(terms, list):
            raise InvalidInputError("sum kernel requires a 'terms' list")
        return KernelSpec.sum_of(*(spec_from_dict(t) for t in terms))
    if "sigma_f" not in data or "lengthscales" not in data:
        raise InvalidInputError(f"{variant.value} kernel requires sigma_f and lengthscales")
    return KernelSpec.leaf(variant, data["sigma_f"], data["lengthscales"], data.get("periods"))
