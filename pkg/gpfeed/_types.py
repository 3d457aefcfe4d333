"""Type definitions for gpfeed's JSON file structures."""
from __future__ import annotations

from typing import TypedDict


class KernelSpecDict(TypedDict, total=False):
    variant: str
    sigma_f: float
    lengthscales: list[float]
    periods: list[float]
    terms: list[KernelSpecDict]


class WindowDict(TypedDict):
    n_c: int
    n_ac: int
    stride: int


class ModelHeader(TypedDict):
    format: str
    version: int
    kernel: KernelSpecDict
    window: WindowDict
    sigma_n: float
    applied_jitter: float
    M: int
    n_theta: int


class ManifestEntry(TypedDict):
    file: str
    reference_id: str
    scale: float
    repetition: int
    seed: int


class ReportMetadata(TypedDict, total=False):
    M: int
    n_theta: int
    kernel: KernelSpecDict
    sigma_n: float
    lml: float | None
    applied_jitter: float
    steps: list[str]
    warnings: list[str]
    references: list[str]


class TraceRow(TypedDict):
    restart: int
    iteration: int
    lml: float
    grad_norm: float
    params: list[float]
