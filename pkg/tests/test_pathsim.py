import math

import numpy as np
import pytest

from levycsbp.branching import BranchingMechanism, ExponentialTail, StablePower
from levycsbp.environment import EnvironmentPath, EnvironmentSpec, sample_path
from levycsbp.pathsim import (MAX_BRANCH_RATE, absorption_time, branching_cutoff, simulate_batch,
                              simulate_z)
from levycsbp.quenched import quenched_survival
from levycsbp.rng import stream

FELLER = BranchingMechanism(gaussian=0.5)
EXP_TAIL = BranchingMechanism(gaussian=0.2, jumps=ExponentialTail(1.0, 2.0))
MIXED = BranchingMechanism(gaussian=0.3, jumps=StablePower.normalized(1.0, 1.5))
STABLE = BranchingMechanism(jumps=StablePower.normalized(1.0, 1.5))
BROWNIAN = EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0)


def flat(t):
    return EnvironmentPath.from_arrays([0.0, t], [0.0, 0.0])


def test_deterministic_growth_without_branching_noise():
    env = EnvironmentPath.from_arrays([0.0, 1.0, 2.0], [0.0, 0.7, 0.4], [0.0, 0.7, 0.9])
    batch = simulate_batch(BranchingMechanism(drift=0.3), env, 2.0, 0.1, stream(0, 0), 5)
    np.testing.assert_allclose(batch.final, 2.0 * math.exp(0.4), rtol=1e-12)
    assert batch.clips == 0


def test_zero_is_absorbing():
    batch = simulate_batch(FELLER, flat(1.0), 0.0, 0.01, stream(0, 1), 10)
    assert np.all(batch.final == 0)
    assert np.all(batch.absorption == 0)


def test_feller_survival_matches_closed_form():
    batch = simulate_batch(FELLER, flat(1.0), 1.0, 1e-3, stream(1, 0), 10_000)
    p = batch.survived.mean()
    exact = -math.expm1(-2.0)  # v_infinity = 1 / (0.5 t)
    assert abs(p - exact) <= 3 * math.sqrt(exact * (1 - exact) / 10_000)
    assert not batch.overflow


def test_feller_absorption_frequency():
    batch = simulate_batch(BranchingMechanism(gaussian=1.0), flat(1.0), 1.0, 1e-3, stream(1, 1), 10_000)
    absorbed = np.mean(~np.isnan(batch.absorption))
    q = math.exp(-1.0)
    assert abs(absorbed - q) <= 3 * math.sqrt(q * (1 - q) / 10_000)


@pytest.mark.parametrize("m", [FELLER, EXP_TAIL])
@pytest.mark.parametrize("t", [1.0, 5.0])
def test_martingale_in_environment_coordinates(m, t):
    env = sample_path(BROWNIAN, t, 0.01, rng=stream(2, int(t)))
    batch = simulate_batch(m, env, 1.0, 0.01, stream(3, int(t)), 10_000)
    y = batch.final * math.exp(-env.values[-1])
    assert abs(y.mean() - 1.0) <= 3 * y.std(ddof=1) / math.sqrt(len(y))


# declared discretization allowance on survival frequencies
ALLOWANCE = 0.01


@pytest.mark.parametrize("m", [FELLER, STABLE, MIXED])
def test_survival_matches_quenched_solution(m):
    env = sample_path(BROWNIAN, 10.0, 0.01, rng=stream(4, 0))
    batch = simulate_batch(m, env, 1.0, 0.01, stream(5, 0), 10_000)
    exact = quenched_survival(m, env, 1.0)
    se = math.sqrt(exact * (1 - exact) / 10_000)
    assert abs(batch.survived.mean() - exact) <= 3 * se + ALLOWANCE


def test_cutoff_respects_rate_cap():
    heavy = BranchingMechanism(jumps=StablePower.normalized(1.0, 1.8))
    delta = branching_cutoff(heavy)
    assert heavy.jumps.tail_rate(delta) <= MAX_BRANCH_RATE * (1 + 1e-9)
    assert delta >= heavy.jumps.default_cutoff(heavy.gaussian)
    assert branching_cutoff(EXP_TAIL) == 0.0
    batch = simulate_batch(heavy, flat(0.1), 1.0, 0.01, stream(6, 0), 10, cutoff=0.5)
    assert batch.cutoff == 0.5


@pytest.mark.parametrize("dt", [1e-2, 1e-3])
def test_no_overflow_on_long_runs(dt):
    env = sample_path(EnvironmentSpec.from_kbar_drift(0.5, sigma=1.0), 10.0, 0.1, rng=stream(7, 0))
    batch = simulate_batch(MIXED, env, 1.0, dt, stream(8, 0), 200)
    assert not batch.overflow
    assert np.all(np.isfinite(batch.final))


def test_recorded_path_and_absorption_time():
    zp = simulate_z(FELLER, flat(5.0), 0.2, 0.01, stream(9, 0))
    assert zp.values[0] == 0.2 and len(zp.times) == len(zp.values) == 501
    assert zp.times[-1] == pytest.approx(5.0)
    if zp.absorption_time is not None:
        k = int(np.nonzero(zp.values == 0)[0][0])
        assert zp.times[k] == pytest.approx(zp.absorption_time)
        assert np.all(zp.values[k:] == 0)
    assert absorption_time(zp, threshold=1e9) == 0.0
    assert 0 <= zp.meta["clip_rate"] <= 1


def test_clip_rate_is_small_on_fine_grids():
    batch = simulate_batch(FELLER, flat(1.0), 1.0, 1e-3, stream(10, 0), 2000)
    assert batch.clip_ok


def test_same_stream_same_result():
    a = simulate_batch(MIXED, flat(1.0), 1.0, 0.01, stream(11, 3), 50)
    b = simulate_batch(MIXED, flat(1.0), 1.0, 0.01, stream(11, 3), 50)
    assert np.array_equal(a.final, b.final)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        simulate_batch(FELLER, flat(1.0), 1.0, 0.0, stream(0, 0), 1)
    with pytest.raises(ValueError):
        simulate_batch(FELLER, flat(1.0), -1.0, 0.1, stream(0, 0), 1)
