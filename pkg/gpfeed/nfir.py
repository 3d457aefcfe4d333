"""Noncausal NFIR regressor windows and dataset assembly.

A window at time t collects ``n_ac`` future samples, the current sample and
``n_c`` past samples in descending-time order::

    [s(t + n_ac), ..., s(t), ..., s(t - n_c)]

Samples outside the recorded series are literal zeros. Stacking the windows
of a series gives a Toeplitz matrix, which is how they are built here.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.linalg import toeplitz

from gpfeed._log import log
from gpfeed.errors import InvalidInputError

if TYPE_CHECKING:
    from gpfeed.plantsim import ClosedLoopLog


@dataclass(frozen=True)
class WindowConfig:
    """History ``n_c``, preview ``n_ac`` and dataset decimation ``stride``."""

    n_c: int = 20
    n_ac: int = 40
    stride: int = 1

    def __post_init__(self) -> None:
        if self.n_c < 0 or self.n_ac < 0:
            raise InvalidInputError(f"n_c and n_ac must be >= 0, got {self.n_c}, {self.n_ac}")
        if self.stride < 1:
            raise InvalidInputError(f"stride must be >= 1, got {self.stride}")

    @property
    def n_theta(self) -> int:
        return self.n_c + self.n_ac + 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Regressor windows ``Y`` (M × n_theta) paired with control efforts ``u``.

    ``origin`` records, per row, the index of the source log and the sample
    index within it.
    """

    Y: np.ndarray
    u: np.ndarray
    window: WindowConfig
    origin: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __post_init__(self) -> None:
        Y = _frozen(self.Y)
        u = _frozen(np.asarray(self.u).ravel())
        if Y.ndim != 2:
            raise InvalidInputError(f"Y must be a matrix, got shape {Y.shape}")
        if Y.shape[0] != u.shape[0]:
            raise InvalidInputError(f"Y has {Y.shape[0]} rows but u has {u.shape[0]} entries")
        if Y.shape[1] != self.window.n_theta:
            raise InvalidInputError(
                f"Y has {Y.shape[1]} columns, window needs n_theta={self.window.n_theta}",
            )
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(u))):
            raise InvalidInputError("dataset contains non-finite values")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "u", u)
        origin = np.array(self.origin, dtype=int)
        if origin.size and origin.shape != (Y.shape[0], 2):
            raise InvalidInputError(f"origin must have shape ({Y.shape[0]}, 2)")
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)

    @property
    def M(self) -> int:
        return int(self.Y.shape[0])

    @property
    def n_theta(self) -> int:
        return self.window.n_theta

    def to_csv(self, path: Path) -> None:
        from gpfeed.storage import write_dataset

        write_dataset(path, self)


def build_windows(signal: Any, cfg: WindowConfig) -> np.ndarray:
    """One window per sample of ``signal`` (N × n_theta), zero-padded at both ends."""
    s = np.asarray(signal, dtype=float).ravel()
    if s.size == 0:
        raise InvalidInputError("cannot build windows from an empty signal")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("signal contains non-finite values")
    n = s.size

    def sample(idx: np.ndarray) -> np.ndarray:
        inside = (idx >= 0) & (idx < n)
        out = np.zeros(idx.shape)
        out[inside] = s[idx[inside]]
        return out

    # R[t, j] = s[t + n_ac - j]
    first_col = sample(np.arange(n) + cfg.n_ac)
    first_row = sample(cfg.n_ac - np.arange(cfg.n_theta))
    return toeplitz(first_col, first_row)


def reference_to_query_windows(r: Any, cfg: WindowConfig) -> np.ndarray:
    """Query matrix R for a reference; same mechanics as :func:`build_windows`."""
    return build_windows(r, cfg)


def assemble_dataset(logs: Sequence[ClosedLoopLog], cfg: WindowConfig) -> Dataset:
    """Stack decimated (window of y, u) rows of every log into one dataset.

    Each log is windowed on its own, rows with index ≡ 0 (mod stride) are kept
    (the first sample of every log is always kept), then logs are concatenated.
    """
    if not logs:
        raise InvalidInputError("assemble_dataset needs at least one log")
    blocks_Y: list[np.ndarray] = []
    blocks_u: list[np.ndarray] = []
    blocks_origin: list[np.ndarray] = []
    for n, entry in enumerate(logs):
        y = np.asarray(entry.y, dtype=float)
        u = np.asarray(entry.u, dtype=float)
        if y.shape != u.shape:
            raise InvalidInputError(
                f"log {n}: y has {y.size} samples but u has {u.size}",
            )
        W = build_windows(y, cfg)
        keep = np.arange(0, y.size, cfg.stride)
        blocks_Y.append(W[keep])
        blocks_u.append(u[keep])
        blocks_origin.append(np.column_stack([np.full(keep.size, n), keep]))
    widths = {b.shape[1] for b in blocks_Y}
    if len(widths) != 1:
        raise InvalidInputError(f"inconsistent n_theta across logs: {sorted(widths)}")
    dataset = Dataset(
        Y=np.vstack(blocks_Y),
        u=np.concatenate(blocks_u),
        window=cfg,
        origin=np.vstack(blocks_origin),
    )
    log(f"Dataset: {len(logs)} log(s), stride {cfg.stride} → M={dataset.M}, "
        f"n_theta={dataset.n_theta}")
    return dataset


def group_by_reference(logs: Sequence[ClosedLoopLog]) -> list[list[ClosedLoopLog]]:
    """Group logs sharing a reference id, keeping first-seen order."""
    groups: dict[str, list[ClosedLoopLog]] = {}
    for entry in logs:
        groups.setdefault(entry.reference_id, []).append(entry)
    return list(groups.values())


def average_repetitions(groups: Sequence[Sequence[ClosedLoopLog]]) -> list[ClosedLoopLog]:
    """Sample-wise mean of u and y over repeated experiments of one reference."""
    from gpfeed.plantsim import ClosedLoopLog

    averaged: list[ClosedLoopLog] = []
    for group in groups:
        if not group:
            continue
        if len(group) == 1:
            averaged.append(group[0])
            continue
        first = group[0]
        for other in group[1:]:
            if other.y.size != first.y.size:
                raise InvalidInputError(
                    f"reference {first.reference_id}: repetitions differ in length "
                    f"({first.y.size} vs {other.y.size})",
                )
            if not np.array_equal(other.r, first.r):
                raise InvalidInputError(
                    f"reference {first.reference_id}: repetitions do not share a reference",
                )
        y = np.mean([g.y for g in group], axis=0)
        u = np.mean([g.u for g in group], axis=0)
        averaged.append(ClosedLoopLog(
            r=first.r, y=y, u=u, e=first.r - y, Ts=first.Ts, seed=first.seed,
            reference_id=first.reference_id, repetition=-1,
        ))
    return averaged
