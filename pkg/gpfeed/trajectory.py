"""Jerk-limited (third-order) point-to-point reference trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gpfeed.errors import InfeasibleTrajectoryError


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled position reference with the derivative bounds it was built for."""

    samples: np.ndarray
    Ts: float
    v_max: float
    a_max: float
    j_max: float
    reference_id: str = "r1"

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=float).ravel()
        if samples.size == 0 or not np.all(np.isfinite(samples)):
            raise InfeasibleTrajectoryError("trajectory samples must be finite and non-empty")
        if not self.Ts > 0:
            raise InfeasibleTrajectoryError(f"Ts must be > 0, got {self.Ts}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def N(self) -> int:
        return int(self.samples.size)

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.N) * self.Ts

    def scaled(self, factor: float, reference_id: str | None = None) -> Trajectory:
        """Position profile multiplied by ``factor``; bounds scale along."""
        f = abs(float(factor))
        return Trajectory(
            samples=self.samples * float(factor),
            Ts=self.Ts,
            v_max=self.v_max * f,
            a_max=self.a_max * f,
            j_max=self.j_max * f,
            reference_id=reference_id or f"{self.reference_id}x{factor:g}",
        )


def derivative_peaks(traj: Trajectory) -> tuple[float, float, float]:
    """Largest |first|, |second| and |third| backward difference, divided by Ts^k."""
    peaks = []
    d = traj.samples
    for k in range(1, 4):
        d = np.diff(d)
        peaks.append(float(np.max(np.abs(d))) / traj.Ts ** k if d.size else 0.0)
    return peaks[0], peaks[1], peaks[2]


def _move_segments(distance: float, v_max: float, a_max: float,
                   j_max: float) -> list[tuple[float, float]]:
    """(duration, jerk) pieces of a rest-to-rest move over ``distance`` >= 0."""

    def ramp(v: float) -> tuple[float, float]:
        if v * j_max >= a_max ** 2:
            tj = a_max / j_max
            return tj, v / a_max - tj
        return math.sqrt(v / j_max), 0.0

    def ramps_distance(v: float) -> float:
        tj, ta = ramp(v)
        return v * (2.0 * tj + ta)

    v = v_max
    if ramps_distance(v) > distance:
        lo, hi = 0.0, v_max
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ramps_distance(mid) > distance:
                hi = mid
            else:
                lo = mid
        v = lo
    if v <= 0.0:
        return []
    tj, ta = ramp(v)
    tv = max(0.0, (distance - ramps_distance(v)) / v)
    j = j_max
    return [(tj, j), (ta, 0.0), (tj, -j), (tv, 0.0), (tj, -j), (ta, 0.0), (tj, j)]


def _integrate(segments: list[tuple[float, float]], tau: np.ndarray) -> np.ndarray:
    """Position of a jerk-piecewise-constant profile starting at rest, at times ``tau``."""
    pos = np.zeros(tau.shape)
    p = v = a = 0.0
    t0 = 0.0
    for k, (dur, jerk) in enumerate(segments):
        last = k == len(segments) - 1
        mask = (tau >= t0) & ((tau < t0 + dur) | last)
        s = np.minimum(tau[mask] - t0, dur) if last else tau[mask] - t0
        pos[mask] = p + v * s + a * s ** 2 / 2.0 + jerk * s ** 3 / 6.0
        p += v * dur + a * dur ** 2 / 2.0 + jerk * dur ** 3 / 6.0
        v += a * dur + jerk * dur ** 2 / 2.0
        a += jerk * dur
        t0 += dur
    return pos


def gen_third_order_reference(
    displacement: float,
    v_max: float,
    a_max: float,
    j_max: float,
    Ts: float,
    dwell: float = 0.0,
    *,
    lead: float = 0.0,
    return_move: bool = False,
    n_samples: int | None = None,
    reference_id: str = "r1",
) -> Trajectory:
    """Symmetric 7-phase move (degenerating when bounds do not saturate).

    Timeline: ``lead`` seconds at rest, the move, ``dwell`` seconds at the
    target, and with ``return_move`` the move back followed by another dwell.
    ``n_samples`` pads the end by holding the last value.
    """
    for name, value in (("v_max", v_max), ("a_max", a_max), ("j_max", j_max), ("Ts", Ts)):
        if not (math.isfinite(value) and value > 0):
            raise InfeasibleTrajectoryError(f"{name} must be finite and > 0, got {value}")
    if not math.isfinite(displacement):
        raise InfeasibleTrajectoryError(f"displacement must be finite, got {displacement}")
    if dwell < 0 or lead < 0:
        raise InfeasibleTrajectoryError("dwell and lead must be >= 0")

    distance = abs(displacement)
    segments = _move_segments(distance, v_max, a_max, j_max) if distance > 0 else []
    move_time = sum(d for d, _ in segments)
    starts = [lead]
    total = lead + move_time + dwell
    if return_move:
        starts.append(total)
        total += move_time + dwell

    needed = int(math.ceil(total / Ts - 1e-9)) + 1
    if n_samples is None:
        n_samples = needed
    elif n_samples < needed:
        raise InfeasibleTrajectoryError(
            f"trajectory needs {needed} samples, only {n_samples} requested",
        )

    t = np.arange(n_samples) * Ts
    samples = np.zeros(n_samples)
    if segments:
        sign = math.copysign(1.0, displacement)
        for k, start in enumerate(starts):
            tau = t - start
            contribution = np.where(tau >= 0, _integrate(segments, np.maximum(tau, 0.0)), 0.0)
            contribution = np.where(tau >= move_time, distance, contribution)
            samples += (sign if k == 0 else -sign) * contribution
    return Trajectory(samples, Ts, v_max, a_max, j_max, reference_id)
