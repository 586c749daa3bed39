"""Decreasing-step Euler schemes, coupled correcting levels, and the assembled estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .models import DiffusionModel, TestFunction
from .schedule import StepSchedule, refined_schedule
from .weights import WeightSet

_CHUNK = 1 << 20


class BlowUpError(RuntimeError):
    """A state coordinate left the finite floats; carries the failing level and step."""

    def __init__(self, level: int, step: int, message: str = ""):
        self.level = level
        self.step = step
        super().__init__(
            message or f"simulation blew up at level {level}, step {step}"
            " (consider a step clamp on the schedule)"
        )


@dataclass(frozen=True)
class GaussianStream:
    """Deterministic, independent Gaussian streams from a counter-based generator.

    Identical (seed, stream_id) reproduces the identical draw sequence; the
    Philox key is built from the triple (seed, level, replication), so levels
    and replications can be simulated on any worker in any order.
    """

    seed: int
    stream_id: tuple[int, int] = (0, 0)

    def generator(self) -> np.random.Generator:
        level, rep = self.stream_id
        key = np.array(
            [np.uint64(self.seed), (np.uint64(level) << np.uint64(32)) ^ np.uint64(rep)],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))


@dataclass
class EmpiricalAccumulator:
    """Running weighted mean value = (sum eta_k f_k)/H with H = sum eta_k."""

    H: float = 0.0
    value: float = 0.0
    n: int = 0


def update_empirical(acc: EmpiricalAccumulator, eta: float, value: float) -> EmpiricalAccumulator:
    """One step of the weighted running-mean recursion; the first update sets value."""
    if not eta > 0:
        raise ValueError(f"weight eta must be positive, got {eta}")
    H = acc.H + eta
    v = acc.value + (eta / H) * (value - acc.value)
    return EmpiricalAccumulator(H=H, value=v, n=acc.n + 1)


def euler_step(state, model: DiffusionModel, gamma: float, dW):
    """x + gamma*b(x) + sigma(x)*dW; dW must be drawn with variance gamma per coordinate."""
    if model.d == 1 and np.ndim(state) == 0:
        out = state + gamma * model.drift(state) + _sigma_apply(model, state, dW)
        if not np.all(np.isfinite(out)):
            raise BlowUpError(0, 0, "euler_step produced a non-finite state")
        return out
    x = np.asarray(state, dtype=float)
    out = x + gamma * np.asarray(model.drift(x), dtype=float) + _sigma_apply(model, x, dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(0, 0, "euler_step produced a non-finite state")
    return out


def _sigma_apply(model, x, dW):
    s = model.diffusion(x)
    if np.ndim(s) == 0:
        return s * dW
    return np.asarray(s) @ np.asarray(dW)


def _x0_scalar(model: DiffusionModel) -> float:
    return float(np.asarray(model.x0).ravel()[0])


def _snap_array(n: int, snapshots) -> np.ndarray:
    if snapshots is None:
        return np.empty(0, dtype=np.int64)
    snaps = np.asarray(sorted(int(s) for s in snapshots), dtype=np.int64)
    if snaps.size and (snaps[0] < 1 or snaps[-1] > n):
        raise ValueError("snapshots must lie in 1..n")
    return snaps


def run_coarse_level(model: DiffusionModel, f: TestFunction, sched: StepSchedule,
                     n: int, stream: GaussianStream, snapshots=None, record: bool = False):
    """nu_n(f) = (1/Gamma_n) sum_{k<=n} gamma_k f(X_{k-1}) along one Euler path.

    With ``snapshots`` (sorted step counts) also returns the running value at
    those points; with ``record`` (python engine) also returns the visited
    states and increments for identity checks.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    snaps = _snap_array(n, snapshots)
    fast = (model.scalar_drift_jit is not None and f.scalar_f_jit is not None
            and model.sigma_const is not None and model.d == 1 and not record)
    if fast:
        gen = stream.generator()
        state = np.array([_x0_scalar(model), 0.0, 0.0])
        snap_vals = np.empty(snaps.size)
        k0, si = 0, 0
        while k0 < n:
            k1 = min(n, k0 + _CHUNK)
            while si < snaps.size and snaps[si] <= k1:
                k1 = int(snaps[si])
                break
            z = gen.standard_normal(k1 - k0)
            fail = kernels.coarse_chunk(
                model.scalar_drift_jit, f.scalar_f_jit, model.sigma_const,
                sched.gamma1, sched.a, sched.clamp_value, k0, z, state)
            if fail:
                raise BlowUpError(1, int(fail))
            k0 = k1
            while si < snaps.size and snaps[si] == k0:
                snap_vals[si] = state[1]
                si += 1
        return (state[1], snap_vals) if snaps.size else state[1]
    return _coarse_python(model, f, sched, n, stream, snaps, record)


def _coarse_python(model, f, sched, n, stream, snaps, record):
    gen = stream.generator()
    scalar = model.d == 1
    x = _x0_scalar(model) if scalar else np.asarray(model.x0, dtype=float).copy()
    acc = EmpiricalAccumulator()
    snap_vals = np.empty(snaps.size)
    states = [x] if record else None
    increments = [] if record else None
    si = 0
    for k in range(1, n + 1):
        g = min(sched.gamma1 * k ** (-sched.a), sched.clamp_value)
        acc = update_empirical(acc, g, f.f(x))
        dW = math.sqrt(g) * (gen.standard_normal() if scalar else gen.standard_normal(model.q))
        x = x + g * (model.drift(x) if scalar else np.asarray(model.drift(x))) + _sigma_apply(model, x, dW)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(1, k)
        if record:
            states.append(x)
            increments.append(dW)
        while si < snaps.size and snaps[si] == k:
            snap_vals[si] = acc.value
            si += 1
    out = acc.value
    if record:
        return out, {"states": states, "increments": increments}
    return (out, snap_vals) if snaps.size else out


def run_correcting_level(model: DiffusionModel, f: TestFunction, r: int, M: int,
                         base_sched: StepSchedule, n: int, stream: GaussianStream,
                         snapshots=None, record: bool = False):
    """mu_n^{(r,M)}(f): difference of fine and coarse occupation measures at level r.

    The coarse scheme runs with steps gamma_k / M^(r-2), the fine companion
    with an extra division by M; both are driven by the same increments
    (each coarse increment is the sum of its M fine sub-increments).
    """
    if r < 2:
        raise ValueError("correcting levels start at r = 2")
    if M < 2:
        raise ValueError("root M must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    sched = refined_schedule(base_sched, r, M)
    snaps = _snap_array(n, snapshots)
    fast = (model.scalar_drift_jit is not None and f.scalar_f_jit is not None
            and model.sigma_const is not None and model.d == 1 and not record)
    if fast:
        gen = stream.generator()
        x0 = _x0_scalar(model)
        state = np.array([x0, x0, 0.0, 0.0])
        snap_vals = np.empty(snaps.size)
        chunk = max(1, _CHUNK // M)
        k0, si = 0, 0
        while k0 < n:
            k1 = min(n, k0 + chunk)
            while si < snaps.size and snaps[si] <= k1:
                k1 = int(snaps[si])
                break
            z = gen.standard_normal((k1 - k0) * M)
            fail = kernels.pair_chunk(
                model.scalar_drift_jit, f.scalar_f_jit, model.sigma_const,
                sched.gamma1, sched.a, sched.clamp_value, M, k0, z, state)
            if fail:
                raise BlowUpError(r, int(fail))
            k0 = k1
            while si < snaps.size and snaps[si] == k0:
                snap_vals[si] = state[2]
                si += 1
        return (state[2], snap_vals) if snaps.size else state[2]
    return _pair_python(model, f, sched, r, M, n, stream, snaps, record)


def _pair_python(model, f, sched, r, M, n, stream, snaps, record):
    gen = stream.generator()
    scalar = model.d == 1
    xc = _x0_scalar(model) if scalar else np.asarray(model.x0, dtype=float).copy()
    xf = xc if scalar else xc.copy()
    acc = EmpiricalAccumulator()
    snap_vals = np.empty(snaps.size)
    rec = {"coarse_states": [xc], "fine_states": [xf],
           "coarse_increments": [], "fine_increments": [], "steps": []} if record else None
    si = 0
    for k in range(1, n + 1):
        g = min(sched.gamma1 * k ** (-sched.a), sched.clamp_value)
        gf = g / M
        fsum = 0.0
        dwc = 0.0 if scalar else np.zeros(model.q)
        for _ in range(M):
            fsum += f.f(xf)
            dw = math.sqrt(gf) * (gen.standard_normal() if scalar else gen.standard_normal(model.q))
            xf = xf + gf * (model.drift(xf) if scalar else np.asarray(model.drift(xf))) + _sigma_apply(model, xf, dw)
            dwc = dwc + dw
            if record:
                rec["fine_states"].append(xf)
                rec["fine_increments"].append(dw)
        acc = update_empirical(acc, g, fsum / M - f.f(xc))
        xc = xc + g * (model.drift(xc) if scalar else np.asarray(model.drift(xc))) + _sigma_apply(model, xc, dwc)
        if not (np.all(np.isfinite(xc)) and np.all(np.isfinite(xf))):
            raise BlowUpError(r, k)
        if record:
            rec["coarse_states"].append(xc)
            rec["coarse_increments"].append(dwc)
            rec["steps"].append(g)
        while si < snaps.size and snaps[si] == k:
            snap_vals[si] = acc.value
            si += 1
    out = acc.value
    if record:
        return out, rec
    return (out, snap_vals) if snaps.size else out


def level_sizes(plan) -> list[int]:
    n_r = [int(math.floor(q * plan.n)) for q in plan.q]
    if any(m < 1 for m in n_r):
        raise ValueError("every level needs at least one iteration; increase n")
    return n_r


def ml2rgodic_estimate(model: DiffusionModel, f: TestFunction, plan, weights: WeightSet,
                       seed: int, rep: int = 0, snapshots=None):
    """W_1 nu_{n_1}(f) + sum_{r=2..R} W_r mu_{n_r}^{(r,M)}(f) with independent level streams.

    ``snapshots``: fractions in (0, 1] of each level's budget at which to
    snapshot; returns (estimate, per-snapshot estimates) when given.  Levels
    are combined in fixed order (1..R), so results are bit-reproducible for
    a given seed on one platform.
    """
    if (plan.R, plan.M) != (weights.R, weights.M):
        raise ValueError("plan and weight set disagree on (R, M)")
    if abs(plan.a - weights.a) > 1e-12 or np.max(np.abs(np.asarray(plan.q) - weights.q)) > 1e-12:
        raise ValueError("plan and weight set disagree on (a, q)")
    if model.ewa_params is not None:
        return _ml2r_ewa(model, plan, weights, seed, rep, snapshots)
    sched = StepSchedule(plan.gamma1, plan.a, plan.clamp)
    n_r = level_sizes(plan)
    snap_sets = None
    if snapshots is not None:
        fracs = np.asarray(snapshots, dtype=float)
        snap_sets = [np.unique(np.clip(np.ceil(fracs * m).astype(np.int64), 1, m)) for m in n_r]

    total = 0.0
    snap_totals = np.zeros(0 if snapshots is None else len(snap_sets[0]))
    for r in range(1, plan.R + 1):
        stream = GaussianStream(seed, (r, rep))
        W = weights.W[r - 1]
        snaps = None if snap_sets is None else snap_sets[r - 1]
        if r == 1:
            out = run_coarse_level(model, f, sched, n_r[0], stream, snapshots=snaps)
        else:
            out = run_correcting_level(model, f, r, plan.M, sched, n_r[r - 1], stream, snapshots=snaps)
        if snaps is not None:
            val, snap_vals = out
            snap_totals = snap_totals + W * snap_vals
        else:
            val = out
        total += W * val
    return (total, snap_totals) if snapshots is not None else total


def _ml2r_ewa(model, plan, weights, seed, rep, snapshots):
    """EWA fast path: the estimate is the vector of coordinate means."""
    p = model.d
    pars = model.ewa_params
    X, Y, beta, tau2 = pars["X"], pars["Y"], pars["beta"], pars["tau2"]
    sig = model.sigma_const
    n_r = level_sizes(plan)
    fracs = None if snapshots is None else np.asarray(snapshots, dtype=float)
    chunk = max(16, _CHUNK // max(1, p))

    total = np.zeros(p)
    snap_totals = None
    for r in range(1, plan.R + 1):
        sched = StepSchedule(plan.gamma1, plan.a, plan.clamp)
        if r >= 2:
            sched = refined_schedule(sched, r, plan.M)
        m = n_r[r - 1]
        snaps = (np.unique(np.clip(np.ceil(fracs * m).astype(np.int64), 1, m))
                 if fracs is not None else np.empty(0, dtype=np.int64))
        if snap_totals is None and fracs is not None:
            snap_totals = np.zeros((snaps.size, p))
        gen = GaussianStream(seed, (r, rep)).generator()
        W = weights.W[r - 1]
        val = np.zeros(p)
        H = 0.0
        if r == 1:
            x = np.asarray(model.x0, dtype=float).copy()
        else:
            xc = np.asarray(model.x0, dtype=float).copy()
            xf = xc.copy()
        k0, si = 0, 0
        while k0 < m:
            k1 = min(m, k0 + chunk)
            while si < snaps.size and snaps[si] <= k1:
                k1 = int(snaps[si])
                break
            if r == 1:
                z = gen.standard_normal((k1 - k0, p))
                fail, H = kernels.ewa_coarse_chunk(X, Y, beta, tau2, sig, sched.gamma1,
                                                   sched.a, sched.clamp_value, k0, z, x, val, H)
            else:
                z = gen.standard_normal(((k1 - k0) * plan.M, p))
                fail, H = kernels.ewa_pair_chunk(X, Y, beta, tau2, sig, sched.gamma1,
                                                 sched.a, sched.clamp_value, plan.M, k0, z, xc, xf, val, H)
            if fail:
                raise BlowUpError(r, int(fail))
            k0 = k1
            while si < snaps.size and snaps[si] == k0:
                snap_totals[si] += W * val
                si += 1
        total += W * val
    return (total, snap_totals) if fracs is not None else total
