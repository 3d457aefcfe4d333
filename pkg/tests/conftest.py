"""Shared fixtures for gpfeed tests."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from gpfeed.kernels import KernelSpec, Variant
from gpfeed.nfir import Dataset, WindowConfig
from gpfeed.plantsim import FrictionPlant
from gpfeed.trajectory import Trajectory, gen_third_order_reference


@pytest.fixture(autouse=True)
def _quiet_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """No stderr chatter and no leaking environment overrides."""
    monkeypatch.setenv("GPFEED_QUIET", "1")
    for key in ("GPFEED_SEED", "GPFEED_OUT_DIR", "GPFEED_WORKERS", "GPFEED_CONFIG"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_leaf(rng: np.random.Generator, variant: Variant | str, dim: int) -> KernelSpec:
    """Leaf kernel with log-uniform hyperparameters."""
    variant = Variant(variant)
    sigma_f = float(np.exp(rng.uniform(-1.0, 1.0)))
    lengthscales = list(np.exp(rng.uniform(-0.5, 1.0, dim)))
    periods = list(np.exp(rng.uniform(0.0, 1.5, dim))) if variant is Variant.PERIODIC else None
    return KernelSpec.leaf(variant, sigma_f, lengthscales, periods)


def random_kernel(rng: np.random.Generator, variant: str, dim: int) -> KernelSpec:
    if variant == "sum":
        return KernelSpec.sum_of(random_leaf(rng, "se", dim), random_leaf(rng, "periodic", dim))
    return random_leaf(rng, variant, dim)


def wide_leaf(rng: np.random.Generator, variant: Variant | str, dim: int) -> KernelSpec:
    """Leaf kernel with every hyperparameter log-uniform in [1e-2, 1e2]."""
    variant = Variant(variant)
    lo, hi = math.log(1e-2), math.log(1e2)
    sigma_f = float(np.exp(rng.uniform(lo, hi)))
    lengthscales = list(np.exp(rng.uniform(lo, hi, dim)))
    periods = list(np.exp(rng.uniform(lo, hi, dim))) if variant is Variant.PERIODIC else None
    return KernelSpec.leaf(variant, sigma_f, lengthscales, periods)


def wide_kernel(rng: np.random.Generator, variant: str, dim: int) -> KernelSpec:
    if variant == "sum":
        return KernelSpec.sum_of(wide_leaf(rng, "se", dim), wide_leaf(rng, "periodic", dim))
    return wide_leaf(rng, variant, dim)


ALL_VARIANTS = ["se", "matern32", "periodic", "sum"]


@pytest.fixture()
def small_window() -> WindowConfig:
    return WindowConfig(n_c=2, n_ac=2, stride=1)


@pytest.fixture()
def small_dataset(rng: np.random.Generator, small_window: WindowConfig) -> Dataset:
    Y = rng.normal(size=(20, small_window.n_theta))
    u = np.sin(Y[:, 0]) + 0.5 * Y[:, 1]
    return Dataset(Y=Y, u=u, window=small_window)


@pytest.fixture()
def plant() -> FrictionPlant:
    return FrictionPlant(viscous_coeff=2.8531)


@pytest.fixture()
def frictionless_plant() -> FrictionPlant:
    return FrictionPlant(coulomb_level=0.0, viscous_coeff=2.8531)


@pytest.fixture()
def short_reference() -> Trajectory:
    """Out-and-back move of 2 cm, 821 samples at 1 kHz."""
    return gen_third_order_reference(
        0.02, 0.1, 1.0, 20.0, 1e-3, 0.05, lead=0.02, return_move=True, reference_id="r1",
    )


def small_config_document(**plan: Any) -> dict[str, Any]:
    """A config that runs in seconds: short move, tiny window, few iterations."""
    doc: dict[str, Any] = {
        "schema_version": 1,
        "seed": 7,
        "plant": {"m": 0.083, "coulomb_level": 0.3, "viscous_coeff": 2.8531, "Ts": 0.001},
        "controller": {"kp": 1300.0, "kd": 12.0},
        "trajectory": {
            "displacement": 0.02, "v_max": 0.1, "a_max": 1.0, "j_max": 20.0,
            "dwell": 0.05, "lead": 0.02, "return_move": True, "n_samples": None,
            "reference_id": "r1",
        },
        "plan": {
            "scale_factors": [0.95, 1.0, 1.05],
            "window": {"n_c": 2, "n_ac": 4, "stride": 10},
            "kernel": "matern32",
            "optimizer": {"max_iterations": 5, "restarts": 0},
            **plan,
        },
        "evaluation": {"scales": [1.0, 1.02]},
    }
    return doc


@pytest.fixture()
def small_config(tmp_path: Path) -> Path:
    path = tmp_path / "gpfeed.json"
    path.write_text(json.dumps(small_config_document()))
    return path
