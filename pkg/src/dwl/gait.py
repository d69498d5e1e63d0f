"""Gait clock, periodic stance mask and the quintic swing-height profile."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class GaitConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GaitClock:
    cycle_time: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.cycle_time > 0:
            raise GaitConfigError(f"cycle_time must be positive, got {self.cycle_time}")

    @property
    def clock_signal(self) -> tuple[float, float]:
        angle = 2.0 * math.pi * self.phase
        return math.sin(angle), math.cos(angle)


@dataclass(frozen=True)
class StanceMask:
    left: int
    right: int

    def as_array(self) -> np.ndarray:
        return np.array([self.left, self.right], dtype=float)


@dataclass(frozen=True)
class QuinticConstraints:
    h0: float = 0.0
    v0: float = 0.1
    acc0: float = 10.0
    h_max: float = 0.1
    h_swing: float = 0.0
    v_swing: float = 0.0
    T: float = 0.5


@dataclass(frozen=True)
class QuinticCoeffs:
    a0: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2, self.a3, self.a4, self.a5])

    @classmethod
    def zeros(cls) -> "QuinticCoeffs":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def phase_advance(clock: GaitClock, dt: float) -> GaitClock:
    if dt < 0:
        raise GaitConfigError(f"dt must be non-negative, got {dt}")
    return replace(clock, phase=(clock.phase + dt / clock.cycle_time) % 1.0)


def stance_mask(clock: GaitClock, standing: bool = False) -> StanceMask:
    """Left foot is planned in contact on [0, 0.5), right on [0.5, 1).

    ``standing`` marks both feet as stance (no swing foot at all).
    """
    if standing:
        return StanceMask(1, 1)
    left = 1 if clock.phase < 0.5 else 0
    return StanceMask(left, 1 - left)


def stance_mask_array(phase: np.ndarray, standing: np.ndarray | None = None) -> np.ndarray:
    """Vectorised :func:`stance_mask`; returns an ``(N, 2)`` float array."""
    phase = np.asarray(phase, dtype=float)
    left = (phase < 0.5).astype(float)
    mask = np.stack([left, 1.0 - left], axis=-1)
    if standing is not None:
        mask[np.asarray(standing, dtype=bool)] = 1.0
    return mask


def _constraint_matrix(T: float) -> np.ndarray:
    half = T / 2.0
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
            [1.0, half, half**2, half**3, half**4, half**5],
            [1.0, T, T**2, T**3, T**4, T**5],
            [0.0, 1.0, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
        ]
    )


def solve_quintic(c: QuinticConstraints) -> QuinticCoeffs:
    """Coefficients of the unique quintic meeting the six swing constraints.

    The constraint set is square, so a direct LU solve replaces any iterative
    fit and reproduces the published coefficient table exactly.
    """
    if not c.T > 0:
        raise np.linalg.LinAlgError(f"swing duration must be positive, got T={c.T}")
    rhs = np.array([c.h0, c.v0, c.acc0, c.h_max, c.h_swing, c.v_swing], dtype=float)
    coeffs = np.linalg.solve(_constraint_matrix(c.T), rhs)
    return QuinticCoeffs(*(float(a) for a in coeffs))


def eval_quintic(coeffs: QuinticCoeffs, t):
    """Height, velocity and acceleration of the polynomial at ``t``.

    ``t`` may be a scalar or an array; Horner evaluation, no clamping.
    """
    a = coeffs.as_array()
    t = np.asarray(t, dtype=float)
    height = ((((a[5] * t + a[4]) * t + a[3]) * t + a[2]) * t + a[1]) * t + a[0]
    velocity = (((5 * a[5] * t + 4 * a[4]) * t + 3 * a[3]) * t + 2 * a[2]) * t + a[1]
    acceleration = ((20 * a[5] * t + 12 * a[4]) * t + 6 * a[3]) * t + 2 * a[2]
    if t.ndim == 0:
        return float(height), float(velocity), float(acceleration)
    return height, velocity, acceleration


def swing_time(phase, cycle_time: float):
    """Local swing time of (left, right) feet; negative entries mean stance.

    The right foot swings on [0, 0.5) and the left on [0.5, 1), so a foot's
    local time runs from 0 to cycle_time / 2 across its swing.
    """
    phase = np.asarray(phase, dtype=float)
    left = np.where(phase >= 0.5, (phase - 0.5) * cycle_time, -1.0)
    right = np.where(phase < 0.5, phase * cycle_time, -1.0)
    return np.stack([left, right], axis=-1)


def foot_reference(clock: GaitClock, coeffs: QuinticCoeffs, T: float, standing: bool = False):
    """Per-foot (height, vertical velocity) references, shape ``(2, 2)``.

    Row 0 is the left foot, row 1 the right. Stance feet get (0, 0).
    """
    refs = foot_reference_array(np.array([clock.phase]), clock.cycle_time, coeffs, T,
                                np.array([standing]))
    return refs[0]


def foot_reference_array(phase: np.ndarray, cycle_time: float, coeffs: QuinticCoeffs,
                         T: float, standing: np.ndarray | None = None) -> np.ndarray:
    """Vectorised :func:`foot_reference`; returns ``(N, 2, 2)``."""
    local = swing_time(phase, cycle_time)
    swinging = local >= 0.0
    if standing is not None:
        swinging &= ~np.asarray(standing, dtype=bool)[:, None]
    t = np.clip(local, 0.0, T)
    height, velocity, _ = eval_quintic(coeffs, t)
    out = np.zeros(local.shape + (2,))
    out[..., 0] = np.where(swinging, height, 0.0)
    out[..., 1] = np.where(swinging, velocity, 0.0)
    return out
