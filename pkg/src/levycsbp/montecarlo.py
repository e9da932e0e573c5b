"""Annealed survival estimation, the infimum decomposition and exponent fits.

Paths are processed in fixed-size chunks, each path with its own counter-based
stream, and per-path values are reassembled in path order before reduction.
Results therefore do not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .branching import BranchingMechanism
from .environment import EnvironmentSpec, sample_path
from .errors import ConfigMismatchError, IllConditionedFitError, SolverError
from .fluctuation import brownian_ell
from .pathsim import simulate_batch
from .quenched import quenched_survival, survival_from_log_functional
from .rng import BRANCHING, stream

CHUNK = 1000
QUENCHED = "quenched-rao-blackwell"
PATHWISE = "pathwise"


@dataclass(frozen=True)
class SurvivalEstimate:
    """Mergeable accumulator (n, sum, sum of squares) of per-path survival values."""

    t: float
    z: float
    n: int
    total: float
    total_sq: float
    kind: str = QUENCHED
    seed: Optional[int] = None
    config_hash: str = ""

    @property
    def estimate(self) -> float:
        return self.total / self.n if self.n else math.nan

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return 0.0 if self.n == 1 else math.nan
        mean = self.total / self.n
        var = max(self.total_sq - self.n * mean * mean, 0.0) / (self.n - 1)
        return math.sqrt(var / self.n)

    @classmethod
    def empty(cls, t, z, kind=QUENCHED, seed=None, config_hash=""):
        return cls(t, z, 0, 0.0, 0.0, kind, seed, config_hash)

    @classmethod
    def from_values(cls, values, t, z, kind=QUENCHED, seed=None, config_hash=""):
        v = np.asarray(values, dtype=float)
        return cls(t, z, len(v), math.fsum(v), math.fsum(v * v), kind, seed, config_hash)


def merge_estimates(a: SurvivalEstimate, b: SurvivalEstimate) -> SurvivalEstimate:
    if (a.t, a.z, a.kind, a.config_hash) != (b.t, b.z, b.kind, b.config_hash):
        raise ConfigMismatchError("estimates come from different configurations")
    seed = a.seed if a.seed == b.seed else None
    return SurvivalEstimate(a.t, a.z, a.n + b.n, a.total + b.total, a.total_sq + b.total_sq,
                            a.kind, seed, a.config_hash)


@dataclass
class ExponentFit:
    ts: np.ndarray
    log_values: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    intercept_stderr: float
    correction: str
    residual_norm: float
    weighted: bool = True

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "intercept_stderr": self.intercept_stderr,
            "correction": self.correction,
            "residual_norm": self.residual_norm,
            "weighted": self.weighted,
            "t": [float(t) for t in self.ts],
            "log_values": [float(v) for v in self.log_values],
        }


@dataclass(frozen=True)
class PathTask:
    mechanism: BranchingMechanism
    spec: EnvironmentSpec
    z: float
    ts: tuple
    dt: float
    seed: int
    start: int
    stop: int
    x: float = 0.0
    beta: Optional[float] = None
    want_survival: bool = True
    want_infimum: bool = False
    bridge: bool = True


def _path_chunk(task: PathTask) -> dict:
    """Per-path survival (n, len(ts)), infimum and log exponential functional."""
    n, k = task.stop - task.start, len(task.ts)
    tmax = max(task.ts)
    out = {}
    surv = np.empty((n, k)) if task.want_survival else None
    inf = np.empty((n, k)) if task.want_infimum else None
    logi = np.empty((n, k)) if task.beta is not None else None
    m = task.mechanism
    exact = m.exact_stable() if task.want_survival else None
    for row, i in enumerate(range(task.start, task.stop)):
        path = sample_path(task.spec, tmax, task.dt, x=task.x, rng=stream(task.seed, i),
                           checkpoints=task.ts, tag=(task.seed, i))
        if inf is not None:
            run = path.running_infimum(task.bridge)
            inf[row] = [run[path.index_of(t)] for t in task.ts]
        if logi is not None:
            logi[row] = path.log_exp_functional_at(task.beta, task.ts)
        if surv is None:
            continue
        if exact is not None:
            li = logi[row] if task.beta == exact[0] else path.log_exp_functional_at(exact[0], task.ts)
            surv[row] = survival_from_log_functional(exact[0], exact[1], li, task.z, path.start)
        else:
            surv[row] = [_survival_retry(m, path, task.z, t) for t in task.ts]
    out["survival"], out["infimum"], out["log_functional"] = surv, inf, logi
    return out


def _survival_retry(m, path, z, t):
    try:
        return quenched_survival(m, path, z, t=t)
    except SolverError:
        # one retry with tighter tolerances, then give up
        return quenched_survival(m, path, z, t=t, rtol=1e-11, atol=1e-14)


def run_paths(task: PathTask, n_paths: int, workers: int = 1, chunk: int = CHUNK) -> dict:
    """Run ``n_paths`` paths in fixed chunks; arrays are stacked in path order."""
    tasks = [replace(task, start=s, stop=min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]
    if workers <= 1 or len(tasks) == 1:
        parts = [_path_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_path_chunk, tasks))
    out = {}
    for key in ("survival", "infimum", "log_functional"):
        arrs = [p[key] for p in parts]
        out[key] = None if arrs[0] is None else np.concatenate(arrs, axis=0)
    return out


def estimate_survival_curve(m: BranchingMechanism, spec: EnvironmentSpec, z: float, ts: Sequence[float],
                            n_paths: int, seed: int = 0, dt: float = 0.1, workers: int = 1,
                            config_hash: str = "") -> List[SurvivalEstimate]:
    """Quenched (Rao-Blackwellized) survival at each t, on common paths of horizon max(ts)."""
    if not (z > 0):
        raise ValueError("initial mass z must be positive")
    if not len(ts):
        raise ValueError("empty time grid")
    ts = tuple(float(t) for t in ts)
    cert = m.exact_stable()
    task = PathTask(m, spec, z, ts, dt, seed, 0, 0, beta=cert[0] if cert else None)
    surv = run_paths(task, n_paths, workers)["survival"]
    return [SurvivalEstimate.from_values(surv[:, j], t, z, QUENCHED, seed, config_hash)
            for j, t in enumerate(ts)]


def estimate_survival(m: BranchingMechanism, spec: EnvironmentSpec, z: float, t: float, n_paths: int,
                      seed: int = 0, dt: float = 0.1, workers: int = 1,
                      config_hash: str = "") -> SurvivalEstimate:
    return estimate_survival_curve(m, spec, z, [t], n_paths, seed, dt, workers, config_hash)[0]


def estimate_survival_pathwise(m: BranchingMechanism, spec: EnvironmentSpec, z: float, t: float,
                               n_paths: int, seed: int = 0, dt: float = 0.01,
                               config_hash: str = "") -> SurvivalEstimate:
    """Survival indicator of one simulated Z per environment path."""
    values = np.empty(n_paths)
    for i in range(n_paths):
        env = sample_path(spec, t, dt, rng=stream(seed, i))
        batch = simulate_batch(m, env, z, dt, stream(seed, i, BRANCHING), 1)
        values[i] = float(batch.survived[0])
    return SurvivalEstimate.from_values(values, t, z, PATHWISE, seed, config_hash)


@dataclass
class DecompositionTerms:
    y: float
    term1: float
    term2: float
    term3: float
    total: float
    stderr: tuple = field(default=(0.0, 0.0, 0.0, 0.0))


def decomposition_terms(m: BranchingMechanism, spec: EnvironmentSpec, z: float, x: float,
                        ys: Sequence[float], t: float, n_paths: int, seed: int = 0, dt: float = 0.1,
                        workers: int = 1, bridge: bool = True) -> List[DecompositionTerms]:
    """Split P(Z_t > 0) by the environment infimum, started at x:

    term1 = P(Z_t > 0, I_t > 0), term2 = P(Z_t > 0, -y < I_t <= 0),
    term3 = P(Z_t > 0, I_t <= -y).  Survival is computed on the path started
    at 0 (it does not depend on the start) and I_t = x + infimum of that path,
    so ``total`` is identical to estimate_survival on the same seed.
    """
    if not (x > 0) or any(y <= 0 for y in ys):
        raise ValueError("x and y must be positive")
    cert = m.exact_stable()
    task = PathTask(m, spec, z, (float(t),), dt, seed, 0, 0, beta=cert[0] if cert else None,
                    want_infimum=True, bridge=bridge)
    res = run_paths(task, n_paths, workers)
    p = res["survival"][:, 0]
    inf = x + res["infimum"][:, 0]
    total = math.fsum(p) / n_paths
    out = []
    for y in ys:
        parts = [p * (inf > 0), p * ((inf > -y) & (inf <= 0)), p * (inf <= -y)]
        terms = [math.fsum(v) / n_paths for v in parts]
        ses = [float(np.std(v, ddof=1) / math.sqrt(n_paths)) for v in parts + [p]]
        out.append(DecompositionTerms(float(y), *terms, total, tuple(ses)))
    return out


def exp_functional_moment(spec: EnvironmentSpec, beta: float, q: float, ts: Sequence[float],
                          n_paths: int, seed: int = 0, dt: float = 0.1, workers: int = 1):
    """E[I_t(beta Kbar)^(-q)] with standard errors, on common paths."""
    ts = tuple(float(t) for t in ts)
    task = PathTask(BranchingMechanism(), spec, 1.0, ts, dt, seed, 0, 0, beta=beta, want_survival=False)
    logi = run_paths(task, n_paths, workers)["log_functional"]
    vals = np.exp(-q * logi)
    return [(float(np.mean(vals[:, j])), float(np.std(vals[:, j], ddof=1) / math.sqrt(n_paths)))
            for j in range(len(ts))]


def fit_exponent(estimates: Sequence[SurvivalEstimate], correction: str = "none",
                 max_rel_stderr: float = 0.1) -> ExponentFit:
    """Weighted least squares of log p(t) against log t.

    ``correction="explicit-ell"`` subtracts log l(t) with the Brownian l;
    weights are 1/(stderr/estimate)^2, equal weights if any stderr is zero.
    """
    if correction not in ("none", "explicit-ell"):
        raise ValueError(f"unknown correction {correction!r}")
    ests = sorted(estimates, key=lambda e: e.t)
    if len(ests) < 4:
        raise IllConditionedFitError("need at least 4 time points")
    ts = np.array([e.t for e in ests])
    if math.log10(ts[-1] / ts[0]) < 1.5 - 1e-12:
        raise IllConditionedFitError("time grid must span at least 1.5 decades")
    p = np.array([e.estimate for e in ests])
    se = np.array([e.stderr for e in ests])
    if np.any(~(p > 0)):
        raise IllConditionedFitError("all estimates must be positive")
    rel = se / p
    if np.any(rel > max_rel_stderr):
        raise IllConditionedFitError(f"relative stderr exceeds {max_rel_stderr}")
    y = np.log(p)
    if correction == "explicit-ell":
        y = y - np.log([brownian_ell(t) for t in ts])
    X = np.column_stack([np.ones_like(ts), np.log(ts)])
    weighted = bool(np.all(rel > 0))
    w = 1.0 / rel**2 if weighted else np.ones_like(ts)
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ y)
    resid = y - X @ coef
    if not weighted:
        dof = max(len(ts) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    return ExponentFit(ts, y, float(coef[1]), float(math.sqrt(cov[1, 1])), float(coef[0]),
                       float(math.sqrt(cov[0, 0])), correction,
                       float(np.sqrt(np.sum(w * resid**2))), weighted)
