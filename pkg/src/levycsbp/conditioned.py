"""Environment conditioned to stay positive, as Doob h-transform weights.

Under P_x, the weight V(Kbar_t) 1{I_t >= 0} / V(x) has mean one, so the
conditioned law is sampled by plain (not self-normalized) weighted averages
over unconditioned paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .environment import EnvironmentPath, EnvironmentSpec, sample_path
from .fluctuation import RenewalFunction
from .quenched import quenched_survival
from .rng import stream

CONDITIONING = 2
MIN_POSITIVE = 30


@dataclass
class HWeight:
    x: float
    t: float
    weight: float


@dataclass
class WeightedEstimate:
    estimate: float
    stderr: float
    weight_mean: float
    weight_stderr: float
    n_paths: int
    n_positive: int


@dataclass
class ConvergenceRow:
    s: float
    hard: float
    hard_stderr: float
    n_accepted: int
    n_sampled: int
    weighted: float
    weighted_stderr: float

    @property
    def gap(self) -> float:
        return self.hard - self.weighted

    @property
    def gap_stderr(self) -> float:
        return math.hypot(self.hard_stderr, self.weighted_stderr)

    @property
    def ok(self) -> bool:
        return abs(self.gap) <= 3 * self.gap_stderr


def _check_start(x: float, V: RenewalFunction, regular: Optional[bool]):
    regular = V.regular_downwards if regular is None else regular
    if x < 0 or (x == 0 and regular is not False):
        raise ValueError("start x must be positive (0 is regular downwards)")


def h_weight(path: EnvironmentPath, x: float, V: RenewalFunction, t: Optional[float] = None,
             bridge: bool = True, regular: Optional[bool] = None) -> HWeight:
    """V(Kbar_t) 1{I_t >= 0} / V(x) for a path started at x."""
    _check_start(x, V, regular)
    if abs(path.start - x) > 1e-12 * max(1.0, abs(x)):
        raise ValueError(f"path starts at {path.start}, not at x={x}")
    t = path.horizon if t is None else t
    if path.infimum_at(t, bridge) < 0:
        return HWeight(x, t, 0.0)
    return HWeight(x, t, V(path.value_at(t)) / V(x))


def _mean_se(values: np.ndarray):
    n = len(values)
    mean = float(np.sum(values) / n)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def conditioned_expectation(F: Callable[[EnvironmentPath], float], x: float, V: RenewalFunction,
                            spec: EnvironmentSpec, t: float, n_paths: int, seed: int = 0,
                            dt: float = 0.01, bridge: bool = True) -> WeightedEstimate:
    """E^up_x[F] estimated as (1/n) sum w_i F(path_i); F sees the path on [0, t]."""
    _check_start(x, V, spec.regular_downwards)
    w = np.empty(n_paths)
    fw = np.empty(n_paths)
    for i in range(n_paths):
        path = sample_path(spec, t, dt, x=x, rng=stream(seed, i), tag=(seed, i))
        w[i] = h_weight(path, x, V, bridge=bridge, regular=spec.regular_downwards).weight
        fw[i] = w[i] * F(path) if w[i] > 0 else 0.0
    positive = int(np.count_nonzero(w))
    if positive < MIN_POSITIVE:
        warnings.warn(f"only {positive} paths carry positive weight", stacklevel=2)
    est, se = _mean_se(fw)
    wm, wse = _mean_se(w)
    return WeightedEstimate(est, se, wm, wse, n_paths, positive)


def conditioned_survival(m, z: float, x: float, V: RenewalFunction, spec: EnvironmentSpec, t: float,
                         n_paths: int, seed: int = 0, dt: float = 0.01,
                         bridge: bool = True) -> WeightedEstimate:
    """P^up_{(z,x)}(Z_t > 0) via the quenched survival of each weighted path."""
    if not (z > 0):
        raise ValueError("initial mass z must be positive")
    return conditioned_expectation(lambda p: quenched_survival(m, p, z), x, V, spec, t, n_paths,
                                   seed, dt, bridge)


def hard_conditioned(F: Callable[[EnvironmentPath], float], x: float, spec: EnvironmentSpec, t: float,
                     s_grid: Sequence[float], n_accept: int, seed: int = 0, dt: float = 0.01,
                     bridge: bool = True, budget: Optional[int] = None, chunk: int = 1000):
    """E_x[F | I_s > 0] for each s by rejection, on shared paths of horizon max(s).

    Paths are drawn in chunks until the largest s has ``n_accept`` accepted
    paths or ``budget`` paths (default 200 * n_accept) have been used.
    """
    s_grid = sorted(float(s) for s in s_grid)
    if any(s < t for s in s_grid):
        raise ValueError("conditioning horizons must satisfy s >= t")
    budget = 200 * n_accept if budget is None else budget
    smax = s_grid[-1]
    checkpoints = sorted(set(s_grid) | {t})
    values = {s: [] for s in s_grid}
    used = 0
    while used < budget and len(values[smax]) < n_accept:
        for i in range(used, min(used + chunk, budget)):
            path = sample_path(spec, smax, dt, x=x, rng=stream(seed, i, CONDITIONING),
                               checkpoints=checkpoints)
            inf = path.running_infimum(bridge)
            f = None
            for s in s_grid:
                if inf[path.index_of(s)] > 0:
                    if f is None:
                        f = F(path.truncate(t))
                    values[s].append(f)
        used = min(used + chunk, budget)
    out = {}
    for s in s_grid:
        v = np.asarray(values[s])
        if len(v) < 2:
            out[s] = (math.nan, math.nan, len(v), used)
        else:
            out[s] = (*_mean_se(v), len(v), used)
    return out


def convergence_check(F: Callable[[EnvironmentPath], float], x: float, V: RenewalFunction,
                      spec: EnvironmentSpec, t: float, s_grid: Sequence[float], n_paths: int,
                      seed: int = 0, dt: float = 0.01, bridge: bool = True,
                      budget: Optional[int] = None) -> List[ConvergenceRow]:
    """Hard conditioning E_x[F | I_s > 0] against the h-transform estimate, per s."""
    weighted = conditioned_expectation(F, x, V, spec, t, n_paths, seed, dt, bridge)
    hard = hard_conditioned(F, x, spec, t, s_grid, n_paths, seed, dt, bridge, budget)
    return [ConvergenceRow(s, h, hse, na, ns, weighted.estimate, weighted.stderr)
            for s, (h, hse, na, ns) in hard.items()]
