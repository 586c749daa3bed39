import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ml2rgodic.models import DiffusionModel, make_ou
from ml2rgodic.models import TestFunction as Fn
from ml2rgodic.optimizer import EstimatorPlan, complexity
from ml2rgodic.schedule import StepSchedule, power_sums
from ml2rgodic.simulate import (
    BlowUpError, EmpiricalAccumulator, GaussianStream, _coarse_python, euler_step,
    ml2rgodic_estimate, run_coarse_level, run_correcting_level, update_empirical,
)
from ml2rgodic.weights import WeightSet, solve_uniform


def test_stream_determinism_and_separation():
    a = GaussianStream(7, (1, 0)).generator().standard_normal(16)
    b = GaussianStream(7, (1, 0)).generator().standard_normal(16)
    c = GaussianStream(7, (2, 0)).generator().standard_normal(16)
    d = GaussianStream(7, (1, 1)).generator().standard_normal(16)
    e = GaussianStream(8, (1, 0)).generator().standard_normal(16)
    assert np.array_equal(a, b)
    for other in (c, d, e):
        assert not np.array_equal(a, other)


def test_euler_step_examples(ou1):
    model, _, _ = ou1
    assert euler_step(2.0, model, 0.5, 0.0) == pytest.approx(1.5)
    assert euler_step(0.0, model, 1.0, 0.3) == pytest.approx(0.3)
    frozen = DiffusionModel(d=1, q=1, drift=lambda x: 0.0, diffusion=lambda x: 0.0,
                            x0=np.zeros(1))
    assert euler_step(1.23, frozen, 0.7, 0.9) == 1.23


def test_update_empirical_examples():
    acc = update_empirical(EmpiricalAccumulator(), 0.7, 5.0)
    assert (acc.value, acc.H) == (5.0, 0.7)
    acc2 = update_empirical(EmpiricalAccumulator(H=1.0, value=1.0, n=1), 1.0, 3.0)
    assert acc2.value == pytest.approx(2.0)
    acc3 = update_empirical(update_empirical(EmpiricalAccumulator(), 1.0, 1.0), 2 ** -0.5, 0.0)
    assert acc3.value == pytest.approx(1 / (1 + 2 ** -0.5), rel=1e-14)
    with pytest.raises(ValueError):
        update_empirical(EmpiricalAccumulator(), 0.0, 1.0)


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(-100, 100)), min_size=1, max_size=40))
def test_update_empirical_equals_direct_weighted_mean(pairs):
    acc = EmpiricalAccumulator()
    for eta, v in pairs:
        acc = update_empirical(acc, eta, v)
    num = sum(eta * v for eta, v in pairs)
    den = sum(eta for eta, _ in pairs)
    assert acc.H == pytest.approx(den, rel=1e-12)
    assert acc.value == pytest.approx(num / den, rel=1e-9, abs=1e-9)


def test_coarse_single_step_returns_f_x0(ou1):
    model, f, _ = ou1
    v = run_coarse_level(model, f, StepSchedule(1.0, 1 / 3), 1, GaussianStream(1, (1, 0)))
    assert v == f.f(float(model.x0[0]))


def test_coarse_zero_noise_matches_hand_loop():
    model = DiffusionModel(d=1, q=1, drift=lambda x: -0.5 * x, diffusion=lambda x: 0.0,
                           x0=np.ones(1), label="det",
                           scalar_drift_jit=make_ou(1.0)[0].scalar_drift_jit, sigma_const=0.0)
    f = make_ou(1.0)[1]
    sched = StepSchedule(0.8, 0.4)
    # brute-force 20-step loop oracle
    x, num, den = 1.0, 0.0, 0.0
    for k in range(1, 21):
        g = 0.8 * k ** -0.4
        num += g * x * x
        den += g
        x = x - 0.5 * g * x
    expect = num / den
    got = run_coarse_level(model, f, sched, 20, GaussianStream(3, (1, 0)))
    assert got == pytest.approx(expect, rel=1e-13)


def test_coarse_statistical_check(ou1):
    model, f, ref = ou1
    sched = StepSchedule(1.0, 1 / 3)
    n = 10 ** 6
    v = run_coarse_level(model, f, sched, n, GaussianStream(11, (1, 0)))
    se = 2.0 / np.sqrt(power_sums(sched, n, 1)[1])
    assert abs(v - 1.0) < 3 * se + 0.01  # 0.01 covers the a=1/3 discretization bias


def test_fast_and_python_engines_agree(ou1):
    model, f, _ = ou1
    sched = StepSchedule(1.0, 1 / 3)
    stream = GaussianStream(42, (1, 3))
    fast = run_coarse_level(model, f, sched, 4000, stream)
    slow = _coarse_python(model, f, sched, 4000, stream, np.empty(0, dtype=np.int64), False)
    assert fast == pytest.approx(slow, rel=1e-12)
    mu_fast = run_correcting_level(model, f, 2, 3, sched, 800, GaussianStream(7, (2, 0)))
    mu_slow, _ = run_correcting_level(model, f, 2, 3, sched, 800, GaussianStream(7, (2, 0)),
                                      record=True)
    assert mu_fast == pytest.approx(mu_slow, rel=1e-12, abs=1e-14)


def test_correcting_level_constant_function_vanishes(ou1):
    model, _, _ = ou1
    fc = Fn(f=lambda x: 3.14, label="const")
    mu = run_correcting_level(model, fc, 2, 2, StepSchedule(1.0, 1 / 3), 500,
                              GaussianStream(3, (2, 0)))
    assert mu == 0.0


def test_correcting_level_rejects_degenerate_M(ou1):
    model, f, _ = ou1
    with pytest.raises(ValueError):
        run_correcting_level(model, f, 2, 1, StepSchedule(1.0, 1 / 3), 10,
                             GaussianStream(1, (2, 0)))


def test_measure_difference_identity_on_recorded_path(ou1):
    model, f, _ = ou1
    M, n = 3, 1000
    mu, rec = run_correcting_level(model, f, 2, M, StepSchedule(1.0, 1 / 3), n,
                                   GaussianStream(7, (2, 0)), record=True)
    gs = np.asarray(rec["steps"])
    fine = np.asarray(rec["fine_states"][:-1])
    coarse = np.asarray(rec["coarse_states"][:-1])
    nu_fine = np.sum((gs[:, None] / M) * fine.reshape(-1, M) ** 2) / gs.sum()
    nu_coarse = np.sum(gs * coarse ** 2) / gs.sum()
    assert mu == pytest.approx(nu_fine - nu_coarse, abs=1e-12)


def test_coupling_increment_identity_bitwise(ou1):
    model, f, _ = ou1
    _, rec = run_correcting_level(model, f, 2, 4, StepSchedule(1.0, 1 / 3), 300,
                                  GaussianStream(13, (2, 0)), record=True)
    ci = np.asarray(rec["coarse_increments"])
    fi = np.asarray(rec["fine_increments"]).reshape(-1, 4)
    assert np.array_equal(ci, fi.sum(axis=1))


def test_zero_noise_correcting_level_contracts():
    model = DiffusionModel(d=1, q=1, drift=lambda x: -0.5 * x, diffusion=lambda x: 0.0,
                           x0=np.ones(1), label="det",
                           scalar_drift_jit=make_ou(1.0)[0].scalar_drift_jit, sigma_const=0.0)
    f = make_ou(1.0)[1]
    mu = run_correcting_level(model, f, 2, 2, StepSchedule(1.0, 1 / 3), 10 ** 5,
                              GaussianStream(1, (2, 0)))
    assert abs(mu) < 1e-3


def _plan(R, M, a, gamma1, n, clamp=None):
    return EstimatorPlan(epsilon=float("nan"), M=M, R=R, a=a, q=np.full(R, 1.0 / R),
                         gamma1=gamma1, rho=float("nan"), n=n,
                         n_r=[n // R] * R, K=complexity(n, R, M), clamp=clamp)


def test_ml2r_constant_function_returns_constant(ou1):
    model, _, _ = ou1
    fc = Fn(f=lambda x: 2.5, label="const")
    plan = _plan(2, 2, 0.2, 1.0, 400)
    ws = solve_uniform(2, 2, 0.2)
    assert ml2rgodic_estimate(model, fc, plan, ws, seed=5) == pytest.approx(2.5, rel=1e-14)


def test_ml2r_depth_one_equals_coarse_level(ou1):
    model, f, _ = ou1
    n = 2000
    plan = EstimatorPlan(epsilon=float("nan"), M=2, R=1, a=1 / 3, q=np.array([1.0]),
                         gamma1=1.0, rho=float("nan"), n=n, n_r=[n], K=float(n))
    ws = WeightSet(R=1, M=2, a=1 / 3, q=np.array([1.0]), W=np.array([1.0]),
                   wt1=float("nan"), wt2=float("nan"))
    est = ml2rgodic_estimate(model, f, plan, ws, seed=9, rep=4)
    direct = run_coarse_level(model, f, StepSchedule(1.0, 1 / 3), n, GaussianStream(9, (1, 4)))
    assert est == direct


def test_ml2r_determinism(ou1):
    model, f, _ = ou1
    plan = _plan(3, 2, 1 / 7, 2.0, 3000, clamp=2.0)
    ws = solve_uniform(3, 2, 1 / 7)
    a = ml2rgodic_estimate(model, f, plan, ws, seed=123, rep=1)
    b = ml2rgodic_estimate(model, f, plan, ws, seed=123, rep=1)
    assert a == b
    c = ml2rgodic_estimate(model, f, plan, ws, seed=124, rep=1)
    assert a != c


def test_ml2r_snapshots_monotone_budget(ou1):
    model, f, _ = ou1
    plan = _plan(2, 2, 0.2, 1.0, 5000)
    ws = solve_uniform(2, 2, 0.2)
    full, snaps = ml2rgodic_estimate(model, f, plan, ws, seed=3, snapshots=[0.25, 0.5, 1.0])
    assert snaps.shape == (3,)
    assert snaps[-1] == pytest.approx(full, rel=1e-14)


def test_plan_weights_consistency_checked(ou1):
    model, f, _ = ou1
    plan = _plan(2, 2, 0.2, 1.0, 100)
    with pytest.raises(ValueError):
        ml2rgodic_estimate(model, f, plan, solve_uniform(3, 2, 1 / 7), seed=1)
    with pytest.raises(ValueError):
        ml2rgodic_estimate(model, f, plan, solve_uniform(2, 3, 0.2), seed=1)


def test_blowup_detected_with_level_and_step(ou1):
    model, f, _ = ou1
    plan = _plan(2, 2, 0.1, 1e8, 4000)
    ws = solve_uniform(2, 2, 0.1)
    with pytest.raises(BlowUpError) as exc:
        ml2rgodic_estimate(model, f, plan, ws, seed=2)
    assert exc.value.level >= 1
    assert exc.value.step >= 1
