"""Polynomial decreasing step sequences gamma_k = gamma1 * k^(-a) and their power sums."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import accumulate_power_sums

_CHUNK = 1 << 20


@dataclass(frozen=True)
class StepSchedule:
    """Step sequence gamma_k = min(gamma1 * k^(-a), clamp).

    The clamp belongs to the schedule, not the model: every partial sum used
    by the estimators must reflect the steps that were actually taken.
    """

    gamma1: float
    a: float
    clamp: float | None = None

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ValueError(f"gamma1 must be positive, got {self.gamma1}")
        if not 0 < self.a < 1:
            raise ValueError(f"step exponent a must be in (0,1), got {self.a}")
        if self.clamp is not None and not self.clamp > 0:
            raise ValueError(f"clamp must be positive, got {self.clamp}")

    @property
    def clamp_value(self) -> float:
        return math.inf if self.clamp is None else self.clamp


def step(sched: StepSchedule, k: int) -> float:
    """k-th step (k >= 1), non-increasing in k."""
    if k < 1:
        raise ValueError(f"step index must be >= 1, got {k}")
    return min(sched.gamma1 * float(k) ** (-sched.a), sched.clamp_value)


def refined_schedule(sched: StepSchedule, r: int, M: int) -> StepSchedule:
    """Schedule of the coarse scheme at correcting level r: every step divided by M^(r-2).

    The clamp scales too, so the level-r steps stay exactly proportional to
    the base steps (the proportionality is what lets the weight system cancel
    the per-level normalizations).  The fine companion inside a level divides
    once more by M; that division lives in the simulation kernels.
    """
    if r < 2:
        raise ValueError(f"correcting level index must be >= 2, got {r}")
    if M < 2:
        raise ValueError(f"root M must be >= 2, got {M}")
    scale = float(M) ** (r - 2)
    clamp = None if sched.clamp is None else sched.clamp / scale
    return StepSchedule(sched.gamma1 / scale, sched.a, clamp)


@dataclass
class PowerSums:
    """Partial sums sums[l-1] = sum_{k=1..n} gamma_k^l for l = 1..l_max."""

    n: int
    sums: np.ndarray

    def __getitem__(self, l: int) -> float:
        if not 1 <= l <= self.sums.shape[0]:
            raise IndexError(f"power {l} outside 1..{self.sums.shape[0]}")
        return float(self.sums[l - 1])


class PowerSumCache:
    """Incrementally extended, compensated power sums of one schedule.

    Kahan compensation keeps the relative error ~1e-15 per term even for
    n beyond 1e8, where naive accumulation loses several digits.
    """

    def __init__(self, sched: StepSchedule, l_max: int):
        if l_max < 1:
            raise ValueError("l_max must be >= 1")
        self.sched = sched
        self.l_max = l_max
        self.n = 0
        self._sums = np.zeros(l_max)
        self._comp = np.zeros(l_max)

    def extend(self, n: int) -> PowerSums:
        """Advance the cache to n >= current n and return a snapshot."""
        if n < self.n:
            raise ValueError(f"cache already at n={self.n}, cannot rewind to {n}")
        k0 = self.n
        while k0 < n:
            k1 = min(n, k0 + _CHUNK)
            accumulate_power_sums(
                self.sched.gamma1, self.sched.a, self.sched.clamp_value,
                k0, k1, self._sums, self._comp,
            )
            k0 = k1
        self.n = n
        return PowerSums(n, self._sums.copy())


def power_sums(sched: StepSchedule, n: int, l_max: int) -> PowerSums:
    """Gamma_n^(l) = sum_{k<=n} gamma_k^l for l = 1..l_max, compensated."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return PowerSumCache(sched, l_max).extend(n)
