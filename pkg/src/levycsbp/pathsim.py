"""Pathwise Euler simulation of Z in a frozen environment.

The scheme works in the martingale coordinates Y = Z e^{-Kbar}: over a step
of length h with environment increment d,

    Z <- max(Z + B, 0) * exp(d),

where B is the branching noise: a Gaussian part with variance
(2 gamma^2 + small-jump variance) Z h, plus the jumps of size >= delta drawn
by Poisson thinning at rate Z mu([delta, inf)), minus their compensator.
exp(d) carries the environment and the drift -psi'(0+) Z, because
Kbar = log of the stochastic exponential of K minus psi'(0+) t.  Within an
environment segment Kbar is taken piecewise linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .branching import BranchingMechanism
from .environment import EnvironmentPath

ABSORPTION_REL = 1e-12
MAX_BRANCH_RATE = 100.0
OVERFLOW_GUARD = 1e300
CLIP_RATE_LIMIT = 1e-3


def branching_cutoff(m: BranchingMechanism, max_rate: float = MAX_BRANCH_RATE) -> float:
    """Jump cutoff delta: the mechanism default, raised until the jump rate per unit mass <= max_rate."""
    jumps = m.jumps
    delta = jumps.default_cutoff(m.gaussian)
    if delta <= 0 or jumps.tail_rate(delta) <= max_rate:
        return delta
    hi = max(delta, 1.0)
    while jumps.tail_rate(hi) > max_rate:
        hi *= 2.0
    return optimize.brentq(lambda d: jumps.tail_rate(d) - max_rate, delta, hi, rtol=1e-10)


@dataclass
class ZBatch:
    """Terminal state of independent replicas on one environment path."""

    t: float
    z0: float
    final: np.ndarray
    absorption: np.ndarray
    clips: int
    steps: int
    max_value: float
    cutoff: float
    threshold: float

    @property
    def survived(self) -> np.ndarray:
        return self.final > 0

    @property
    def clip_rate(self) -> float:
        return self.clips / max(1, self.steps * len(self.final))

    @property
    def clip_ok(self) -> bool:
        return self.clip_rate <= CLIP_RATE_LIMIT

    @property
    def overflow(self) -> bool:
        return not (self.max_value < OVERFLOW_GUARD)


@dataclass
class ZPath:
    times: np.ndarray
    values: np.ndarray
    absorption_time: Optional[float]
    env: Optional[EnvironmentPath] = None
    clips: int = 0
    meta: dict = field(default_factory=dict)


def _substeps(env: EnvironmentPath, dt: float, t: float):
    """(durations, Kbar increments, end times) of the simulation steps on [0, t]."""
    k_end = env.index_of(t)
    times = env.times[: k_end + 1]
    h = np.diff(times)
    counts = np.maximum(1, np.ceil(h / dt - 1e-9).astype(int))
    seg = np.repeat(np.arange(len(h)), counts)
    frac = np.concatenate([np.arange(c) for c in counts]) if len(counts) else np.zeros(0)
    n_k = counts[seg]
    durations = h[seg] / n_k
    drift = (env.left[1 : k_end + 1] - env.values[:k_end])[seg] / n_k
    # the jump of Kbar at the end of a segment is applied on its last substep
    jumps = (env.values[1 : k_end + 1] - env.left[1 : k_end + 1])[seg] * (frac == n_k - 1)
    ends = times[seg] + (frac + 1) * durations
    ends[frac == n_k - 1] = times[1 : k_end + 1][seg[frac == n_k - 1]]
    return durations, drift + jumps, ends


@dataclass(frozen=True)
class _Scheme:
    jumps: object
    delta: float
    rate: float
    comp: float
    gauss: float

    @classmethod
    def build(cls, m: BranchingMechanism, cutoff: Optional[float]):
        delta = branching_cutoff(m) if cutoff is None else cutoff
        rate = m.jumps.tail_rate(delta)
        comp = m.jumps.tail_mean(delta) if rate > 0 else 0.0
        return cls(m.jumps, delta, rate, comp, 2.0 * m.gaussian + m.jumps.small_variance(delta))

    def step(self, za: np.ndarray, h: float, d: float, rng: np.random.Generator):
        b = np.zeros_like(za)
        if self.gauss > 0:
            b += np.sqrt(self.gauss * za * h) * rng.standard_normal(len(za))
        if self.rate > 0:
            counts = rng.poisson(za * h * self.rate)
            total = int(counts.sum())
            if total:
                sizes = self.jumps.sample_large(rng, total, self.delta)
                owner = np.repeat(np.arange(len(za)), counts)
                b += np.bincount(owner, weights=sizes, minlength=len(za))
            b -= za * h * self.comp
        new = za + b
        neg = new < 0
        return np.where(neg, 0.0, new) * math.exp(d), int(neg.sum())


def simulate_batch(m: BranchingMechanism, env: EnvironmentPath, z0: float, dt: float,
                   rng: np.random.Generator, n: int, t: Optional[float] = None,
                   cutoff: Optional[float] = None, threshold: Optional[float] = None,
                   record: bool = False):
    """Simulate n replicas of Z on [0, t] along one environment path.

    With ``record`` also returns the grid and the (steps+1, n) trajectory array.
    """
    if not (dt > 0):
        raise ValueError("step dt must be positive")
    if z0 < 0:
        raise ValueError("initial mass must be nonnegative")
    t = env.horizon if t is None else t
    scheme = _Scheme.build(m, cutoff)
    thr = ABSORPTION_REL * z0 if threshold is None else threshold
    durations, dk, ends = _substeps(env, dt, t)
    z = np.full(n, float(z0))
    absorbed = np.full(n, np.nan)
    if z0 <= thr:
        z[:] = 0.0
        absorbed[:] = 0.0
    traj = np.zeros((len(durations) + 1, n)) if record else None
    if record:
        traj[0] = z
    clips = 0
    zmax = float(z0)
    for j, (h, d, end) in enumerate(zip(durations, dk, ends)):
        alive = z > 0
        if not alive.any():
            break
        new, c = scheme.step(z[alive], h, d, rng)
        clips += c
        dead = new <= thr
        new[dead] = 0.0
        absorbed[np.nonzero(alive)[0][dead]] = end
        z[alive] = new
        zmax = max(zmax, float(new.max()))
        if record:
            traj[j + 1] = z
    batch = ZBatch(t, z0, z, absorbed, clips, len(durations), zmax, scheme.delta, thr)
    if record:
        return batch, np.concatenate(([0.0], ends)), traj
    return batch


def simulate_z(m: BranchingMechanism, env: EnvironmentPath, z0: float, dt: float,
               rng: np.random.Generator, t: Optional[float] = None,
               cutoff: Optional[float] = None, threshold: Optional[float] = None) -> ZPath:
    """One replica of Z recorded on the simulation grid."""
    batch, times, traj = simulate_batch(m, env, z0, dt, rng, 1, t, cutoff, threshold, record=True)
    a = batch.absorption[0]
    return ZPath(times, traj[:, 0], None if math.isnan(a) else float(a), env, batch.clips,
                 {"cutoff": batch.cutoff, "threshold": batch.threshold, "clip_rate": batch.clip_rate})


def absorption_time(zpath: ZPath, threshold: Optional[float] = None) -> Optional[float]:
    """First grid time with Z <= threshold (the simulation threshold by default)."""
    if threshold is None:
        return zpath.absorption_time
    hit = np.nonzero(zpath.values <= threshold)[0]
    return float(zpath.times[hit[0]]) if len(hit) else None
