"""Discrete-time closed-loop simulation of a mass with Coulomb friction.

Loop per sample t (feedback C, feedforward ff, plant input noise ε)::

    e(t) = r(t) - y(t)
    u(t) = C(e)(t) + ff(t)
    (y, v)(t+1) = plant_step((y, v)(t), u(t) + ε(t))

The plant is integrated with semi-implicit Euler. Friction acts on the
velocity sign by default; ``friction_on="output_sign"`` uses the sign of the
position instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple

import numpy as np
from scipy.signal import lfilter

from gpfeed.errors import DivergenceError, InvalidInputError
from gpfeed.trajectory import Trajectory

DIVERGENCE_FACTOR = 1e6


class FrictionOn(str, Enum):
    VELOCITY_SIGN = "velocity_sign"
    OUTPUT_SIGN = "output_sign"


@dataclass(frozen=True)
class FrictionPlant:
    """Mass ``m`` with Coulomb level ``Fc`` and viscous coefficient, sampled at ``Ts``."""

    m: float = 0.083
    coulomb_level: float = 0.3
    viscous_coeff: float = 0.0
    Ts: float = 1e-3
    friction_on: FrictionOn = FrictionOn.VELOCITY_SIGN

    def __post_init__(self) -> None:
        object.__setattr__(self, "friction_on", FrictionOn(self.friction_on))
        if not self.m > 0:
            raise InvalidInputError(f"mass must be > 0, got {self.m}")
        if not self.coulomb_level >= 0:
            raise InvalidInputError(f"coulomb_level must be >= 0, got {self.coulomb_level}")
        if not self.viscous_coeff >= 0:
            raise InvalidInputError(f"viscous_coeff must be >= 0, got {self.viscous_coeff}")
        if not self.Ts > 0:
            raise InvalidInputError(f"Ts must be > 0, got {self.Ts}")


@dataclass(frozen=True)
class DiscreteTF:
    """Transfer function in q⁻¹: ``num[0] + num[1] q⁻¹ + ...`` over ``den``."""

    num: tuple[float, ...]
    den: tuple[float, ...] = (1.0,)
    Ts: float = 1e-3

    def __post_init__(self) -> None:
        num = tuple(float(c) for c in self.num)
        den = tuple(float(c) for c in self.den)
        if not num or not den or den[0] == 0.0:
            raise InvalidInputError("transfer function needs a nonzero leading denominator")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def unstable(self) -> bool:
        if len(self.den) < 2:
            return False
        return bool(np.any(np.abs(np.roots(self.den)) >= 1.0))


class Filtered(NamedTuple):
    output: np.ndarray
    unstable: bool


@dataclass(frozen=True, eq=False)
class ClosedLoopLog:
    """Aligned r, y, u, e series of one experiment; e = r - y sample-wise."""

    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    e: np.ndarray
    Ts: float
    seed: int = 0
    reference_id: str = "r1"
    repetition: int = 0

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("r", "y", "u", "e"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        sizes = {a.size for a in arrays.values()}
        if len(sizes) != 1:
            raise InvalidInputError(f"log series lengths differ: {sorted(sizes)}")

    @property
    def N(self) -> int:
        return int(self.r.size)


# ── Controllers ──────────────────────────────────────────────────────────────


def pd_controller(kp: float, kd: float, Ts: float) -> DiscreteTF:
    """C(q) = kp + kd (1 - q⁻¹) / Ts."""
    return DiscreteTF((kp + kd / Ts, -kd / Ts), (1.0,), Ts)


def baseline_feedforward(Ts: float, velocity_gain: float = 2.8531,
                         acceleration_gain: float = 0.083) -> DiscreteTF:
    """Velocity plus acceleration feedforward on backward differences of r."""
    vel = np.array([1.0, -1.0, 0.0]) * velocity_gain / Ts
    acc = np.array([1.0, -2.0, 1.0]) * acceleration_gain / Ts ** 2
    return DiscreteTF(tuple(vel + acc), (1.0,), Ts)


def filter(tf: DiscreteTF, x: Any) -> Filtered:  # noqa: A001
    """Direct-form difference equation from zero initial conditions."""
    series = np.asarray(x, dtype=float).ravel()
    out = lfilter(np.asarray(tf.num), np.asarray(tf.den), series)
    return Filtered(np.asarray(out, dtype=float), tf.unstable)


class _StreamingFilter:
    """Sample-by-sample direct-form filter state for use inside the loop."""

    def __init__(self, tf: DiscreteTF) -> None:
        self._b = np.asarray(tf.num) / tf.den[0]
        self._a = np.asarray(tf.den) / tf.den[0]
        n = max(len(self._a), len(self._b))
        self._b = np.pad(self._b, (0, n - len(self._b)))
        self._a = np.pad(self._a, (0, n - len(self._a)))
        self._x = np.zeros(n)
        self._y = np.zeros(n)

    def step(self, x: float) -> float:
        self._x = np.roll(self._x, 1)
        self._x[0] = x
        y = float(self._b @ self._x - self._a[1:] @ self._y[:-1])
        self._y = np.roll(self._y, 1)
        self._y[0] = y
        return y


# ── Plant ────────────────────────────────────────────────────────────────────


def plant_step(plant: FrictionPlant, state: tuple[float, float], u: float) -> tuple[float, float]:
    """Advance (position, velocity) by one sample under input ``u``.

    With the input inside the friction band (|u| <= Fc), a mass at rest stays
    at rest, and a mass slower than Ts·Fc/m or one that friction would stop
    within this step stops.
    """
    y, v = state
    if not (math.isfinite(y) and math.isfinite(v) and math.isfinite(u)):
        raise InvalidInputError(f"non-finite plant state or input: y={y}, v={v}, u={u}")
    gain = plant.Ts / plant.m
    fc = plant.coulomb_level
    c = plant.viscous_coeff
    if fc == 0.0:
        v_next = v + gain * (u - c * v)
    elif plant.friction_on is FrictionOn.OUTPUT_SIGN:
        v_next = v + gain * (u - fc * float(np.sign(y)) - c * v)
    elif v == 0.0:
        v_next = 0.0 if abs(u) <= fc else gain * (u - fc * math.copysign(1.0, u))
    else:
        v_next = v + gain * (u - fc * math.copysign(1.0, v) - c * v)
        if abs(u) <= fc and (abs(v) < gain * fc or v_next * v <= 0.0):
            v_next = 0.0
    return y + plant.Ts * v_next, v_next


def inverse_feedforward(plant: FrictionPlant, r: Any) -> np.ndarray:
    """Input sequence that makes the plant reproduce ``r`` exactly, starting at rest at 0.

    u(t) = m (v(t+1) - v(t)) / Ts + friction + viscous·v(t), with
    v(t) = (r(t) - r(t-1)) / Ts, v(0) = 0 and r held after its last sample.
    Friction at rest uses the sign of the upcoming motion.
    """
    ref = np.asarray(r, dtype=float).ravel()
    if ref.size == 0:
        raise InvalidInputError("cannot invert an empty reference")
    extended = np.concatenate([[ref[0]], ref, [ref[-1]]])
    v = np.diff(extended) / plant.Ts
    v[0] = 0.0
    v_now, v_next = v[:-1], v[1:]
    u = plant.m * (v_next - v_now) / plant.Ts + plant.viscous_coeff * v_now
    fc = plant.coulomb_level
    if fc > 0.0:
        if plant.friction_on is FrictionOn.OUTPUT_SIGN:
            u = u + fc * np.sign(ref)
        else:
            moving = np.where(v_now != 0.0, v_now, v_next)
            u = u + fc * np.sign(moving)
    return u


# ── Closed loop ──────────────────────────────────────────────────────────────


def simulate_closed_loop(
    plant: FrictionPlant,
    C: DiscreteTF,
    ff: DiscreteTF | Any,
    r: Trajectory | Any,
    noise_std: float = 0.0,
    seed: int = 0,
    *,
    reference_id: str | None = None,
    repetition: int = 0,
) -> ClosedLoopLog:
    """Run the feedback/feedforward loop once; identical arguments give identical logs."""
    if isinstance(r, Trajectory):
        ref = r.samples
        reference_id = reference_id or r.reference_id
    else:
        ref = np.asarray(r, dtype=float).ravel()
    n = ref.size
    if n == 0:
        raise InvalidInputError("reference is empty")
    if isinstance(ff, DiscreteTF):
        u_ff = filter(ff, ref).output
    else:
        u_ff = np.asarray(ff, dtype=float).ravel()
        if u_ff.size != n:
            raise InvalidInputError(f"feedforward has {u_ff.size} samples, reference has {n}")
    if noise_std < 0:
        raise InvalidInputError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_std, n) if noise_std > 0 else np.zeros(n)

    limit = DIVERGENCE_FACTOR * max(float(np.max(np.abs(ref))), 1.0)
    controller = _StreamingFilter(C)
    y = np.zeros(n)
    e = np.zeros(n)
    u = np.zeros(n)
    state = (0.0, 0.0)
    for t in range(n):
        y[t] = state[0]
        e[t] = ref[t] - y[t]
        u[t] = controller.step(e[t]) + u_ff[t]
        state = plant_step(plant, state, u[t] + eps[t])
        if abs(state[0]) > limit:
            raise DivergenceError(
                f"closed loop diverged at sample {t}: |y| = {abs(state[0]):.3g} > {limit:.3g}",
            )
    return ClosedLoopLog(
        r=ref, y=y, u=u, e=e, Ts=plant.Ts, seed=seed,
        reference_id=reference_id or "r", repetition=repetition,
    )


def check_stability(plant: FrictionPlant, C: DiscreteTF, n: int = 2000) -> bool:
    """Empirical check that C stabilizes the loop: bounded error on a unit step."""
    ref = np.ones(n)
    try:
        result = simulate_closed_loop(plant, C, np.zeros(n), ref)
    except DivergenceError:
        return False
    tail = np.abs(result.e[-n // 4:])
    return bool(np.all(np.isfinite(tail)) and np.max(tail) < 1.0)
