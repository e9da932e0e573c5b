"""Levy environments, the auxiliary process Kbar and its sampled paths.

Kbar_t = kbar_drift*t + sigma*B_t + (compensated jumps in (-1, 1)) + (jumps outside (-1, 1)),
with

    kbar_drift = alpha - psi'(0+) - sigma^2/2 - int_{(-1,1)} (e^z - 1 - z) pi(dz).

Paths are sampled on a regular grid refined by the exact jump times.
Jumps smaller than a cutoff are replaced by a variance-matched Brownian
part; between event times the path is Gaussian and, when a Brownian part is
present, each step also carries an exact draw of its bridge minimum.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

SMALL_JUMP_VARIANCE_RATIO = 1e-4
MAX_JUMP_RATE = 50.0
_SERIES_TERMS = 30


def _expm1_over(a: float) -> float:
    """(e^a - 1)/a, equal to 1 at a = 0."""
    return math.expm1(a) / a if a != 0 else 1.0


def _first_moment_unit(r: float) -> float:
    """int_0^1 z e^{-r z} dz."""
    if r < 1e-6:
        return 0.5 - r / 3.0
    return -(math.expm1(-r) + r * math.exp(-r)) / (r * r)


class EnvJumpMeasure:
    """Levy measure pi on R minus {0} of the environment."""

    kind = "abstract"
    cutoff = 0.0

    def large_rate(self) -> float:
        """Total rate of simulated jumps, |z| >= cutoff."""
        raise NotImplementedError

    def sample_large(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def small_variance(self) -> float:
        """int_{|z| < cutoff} z^2 pi(dz), folded into the Brownian part."""
        return 0.0

    def simulated_compensator(self) -> float:
        """int_{cutoff <= |z| < 1} z pi(dz)."""
        raise NotImplementedError

    def exp_compensator(self) -> float:
        """int_{(-1,1)} (e^z - 1 - z) pi(dz), closed form."""
        raise NotImplementedError

    def exp_compensator_quad(self) -> float:
        """Same integral by adaptive quadrature."""
        raise NotImplementedError

    def large_mean(self) -> float:
        """int_{|z| >= 1} z pi(dz); nan when not absolutely integrable."""
        raise NotImplementedError

    def finite_variance(self) -> bool:
        return True

    def positive_exp_bound(self) -> float:
        """Supremum of theta with int_{z >= 1} e^{theta z} pi(dz) < inf."""
        return math.inf

    def finite_activity(self) -> bool:
        return True

    def with_cutoff(self, sigma: float) -> "EnvJumpMeasure":
        return self

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class EnvNoJumps(EnvJumpMeasure):
    kind = "none"

    def large_rate(self):
        return 0.0

    def sample_large(self, rng, n):
        return np.zeros(n)

    def simulated_compensator(self):
        return 0.0

    def exp_compensator(self):
        return 0.0

    def exp_compensator_quad(self):
        return 0.0

    def large_mean(self):
        return 0.0

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class EnvAtoms(EnvJumpMeasure):
    """Jumps of size ``sizes[i]`` at rate ``rates[i]``."""

    sizes: Tuple[float, ...]
    rates: Tuple[float, ...]
    kind = "atoms"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.sizes) != len(self.rates) or not self.sizes:
            raise ValueError("atoms need matching, non-empty sizes and rates")
        if any(s == 0 for s in self.sizes) or any(r <= 0 for r in self.rates):
            raise ValueError("atom sizes must be nonzero and rates positive")

    def _pairs(self):
        return zip(self.sizes, self.rates)

    def large_rate(self):
        return sum(self.rates)

    def sample_large(self, rng, n):
        p = np.asarray(self.rates) / sum(self.rates)
        return np.asarray(self.sizes)[rng.choice(len(p), size=n, p=p)]

    def simulated_compensator(self):
        return sum(r * z for z, r in self._pairs() if abs(z) < 1)

    def exp_compensator(self):
        return sum(r * (math.expm1(z) - z) for z, r in self._pairs() if abs(z) < 1)

    def exp_compensator_quad(self):
        return math.fsum(r * (math.exp(z) - 1.0 - z) for z, r in self._pairs() if abs(z) < 1)

    def large_mean(self):
        return sum(r * z for z, r in self._pairs() if abs(z) >= 1)

    def positive_exp_bound(self):
        return math.inf

    def to_dict(self):
        return {"kind": self.kind, "sizes": list(self.sizes), "rates": list(self.rates)}


@dataclass(frozen=True)
class TwoSidedExponential(EnvJumpMeasure):
    """Density c_plus*e^{-rate_plus z} on z > 0 and c_minus*e^{-rate_minus |z|} on z < 0."""

    c_plus: float
    rate_plus: float
    c_minus: float
    rate_minus: float
    kind = "two_sided_exponential"

    def __post_init__(self):
        if self.c_plus < 0 or self.c_minus < 0 or self.c_plus + self.c_minus == 0:
            raise ValueError("jump intensities must be nonnegative and not both zero")
        if self.rate_plus <= 0 or self.rate_minus <= 0:
            raise ValueError("exponential rates must be positive")

    def large_rate(self):
        return self.c_plus / self.rate_plus + self.c_minus / self.rate_minus

    def sample_large(self, rng, n):
        p_up = (self.c_plus / self.rate_plus) / self.large_rate()
        up = rng.random(n) < p_up
        mag = rng.exponential(1.0, size=n) / np.where(up, self.rate_plus, self.rate_minus)
        return np.where(up, mag, -mag)

    def simulated_compensator(self):
        return (self.c_plus * _first_moment_unit(self.rate_plus)
                - self.c_minus * _first_moment_unit(self.rate_minus))

    def exp_compensator(self):
        rp, rm = self.rate_plus, self.rate_minus
        up = _expm1_over(1.0 - rp) - _expm1_over(-rp) - _first_moment_unit(rp)
        down = _expm1_over(-1.0 - rm) - _expm1_over(-rm) + _first_moment_unit(rm)
        return self.c_plus * up + self.c_minus * down

    def exp_compensator_quad(self):
        up, _ = integrate.quad(lambda z: (math.exp(z) - 1 - z) * math.exp(-self.rate_plus * z),
                               0.0, 1.0, epsabs=0, epsrel=1e-13)
        down, _ = integrate.quad(lambda z: (math.exp(-z) - 1 + z) * math.exp(-self.rate_minus * z),
                                 0.0, 1.0, epsabs=0, epsrel=1e-13)
        return self.c_plus * up + self.c_minus * down

    def large_mean(self):
        rp, rm = self.rate_plus, self.rate_minus
        return (self.c_plus * math.exp(-rp) * (rp + 1) / rp**2
                - self.c_minus * math.exp(-rm) * (rm + 1) / rm**2)

    def positive_exp_bound(self):
        return self.rate_plus if self.c_plus > 0 else math.inf

    def to_dict(self):
        return {"kind": self.kind, "c_plus": self.c_plus, "rate_plus": self.rate_plus,
                "c_minus": self.c_minus, "rate_minus": self.rate_minus}


@dataclass(frozen=True)
class TruncatedStable(EnvJumpMeasure):
    """Stable-like density c_plus*z^{-1-index} (z > 0), c_minus*|z|^{-1-index} (z < 0).

    Jumps with |z| >= cutoff are simulated exactly; smaller ones are
    replaced by Brownian motion with the same variance.  ``cutoff=None``
    lets :class:`EnvironmentSpec` pick it.
    """

    c_plus: float
    c_minus: float
    index: float
    cutoff: Optional[float] = None
    kind = "truncated_stable"

    def __post_init__(self):
        if self.c_plus < 0 or self.c_minus < 0 or self.c_plus + self.c_minus == 0:
            raise ValueError("jump intensities must be nonnegative and not both zero")
        if not (0.0 < self.index < 2.0):
            raise ValueError("stable index must lie in (0, 2)")
        if self.cutoff is not None and not (0.0 < self.cutoff < 1.0):
            raise ValueError("small-jump cutoff must lie in (0, 1)")

    @property
    def total(self):
        return self.c_plus + self.c_minus

    def with_cutoff(self, sigma):
        if self.cutoff is not None:
            return self
        a = self.index
        if sigma > 0:
            eps = (SMALL_JUMP_VARIANCE_RATIO * sigma**2 * (2 - a) / self.total) ** (1 / (2 - a))
        else:
            eps = 0.01
        # keep the simulated jump rate bounded
        eps_rate = (self.total / (a * MAX_JUMP_RATE)) ** (1 / a)
        return replace(self, cutoff=min(max(eps, eps_rate), 0.5))

    def _eps(self):
        if self.cutoff is None:
            raise ValueError("cutoff not set; build through EnvironmentSpec")
        return self.cutoff

    def large_rate(self):
        return self.total * self._eps() ** (-self.index) / self.index

    def sample_large(self, rng, n):
        up = rng.random(n) < self.c_plus / self.total
        mag = self._eps() * rng.random(n) ** (-1.0 / self.index)
        return np.where(up, mag, -mag)

    def small_variance(self):
        return self.total * self._eps() ** (2 - self.index) / (2 - self.index)

    def simulated_compensator(self):
        a, eps = self.index, self._eps()
        if a == 1.0:
            integral = -math.log(eps)
        else:
            integral = (1.0 - eps ** (1.0 - a)) / (1.0 - a)
        return (self.c_plus - self.c_minus) * integral

    def _series(self, upper: float, sign: float) -> float:
        a = self.index
        return math.fsum(sign**k * upper ** (k - a) / (math.factorial(k) * (k - a))
                         for k in range(2, _SERIES_TERMS))

    def exp_compensator(self):
        return self.c_plus * self._series(1.0, 1.0) + self.c_minus * self._series(1.0, -1.0)

    def unsimulated_exp_compensator(self):
        eps = self._eps()
        return self.c_plus * self._series(eps, 1.0) + self.c_minus * self._series(eps, -1.0)

    def exp_compensator_quad(self):
        a = self.index
        # integrands behave like z^{1-a} near 0: use the algebraic weight
        opts = dict(weight="alg", wvar=(1.0 - a, 0.0), epsabs=0, epsrel=1e-13, limit=200)
        up, _ = integrate.quad(lambda z: (math.expm1(z) - z) / (z * z) if z > 0 else 0.5,
                               0.0, 1.0, **opts)
        down, _ = integrate.quad(lambda z: (math.expm1(-z) + z) / (z * z) if z > 0 else 0.5,
                                 0.0, 1.0, **opts)
        return self.c_plus * up + self.c_minus * down

    def large_mean(self):
        if self.index <= 1.0:
            return math.nan
        return (self.c_plus - self.c_minus) / (self.index - 1.0)

    def finite_variance(self):
        return False

    def positive_exp_bound(self):
        return 0.0 if self.c_plus > 0 else math.inf

    def finite_activity(self):
        return False

    def to_dict(self):
        d = {"kind": self.kind, "c_plus": self.c_plus, "c_minus": self.c_minus, "index": self.index}
        if self.cutoff is not None:
            d["cutoff"] = self.cutoff
        return d


def env_jumps_from_dict(d: Optional[dict]) -> EnvJumpMeasure:
    if not d or d.get("kind", "none") == "none":
        return EnvNoJumps()
    kind = d["kind"]
    if kind == "atoms":
        return EnvAtoms(tuple(d["sizes"]), tuple(d["rates"]))
    if kind == "two_sided_exponential":
        return TwoSidedExponential(float(d["c_plus"]), float(d["rate_plus"]),
                                   float(d["c_minus"]), float(d["rate_minus"]))
    if kind == "truncated_stable":
        cutoff = d.get("cutoff")
        return TruncatedStable(float(d["c_plus"]), float(d["c_minus"]), float(d["index"]),
                               None if cutoff is None else float(cutoff))
    raise ValueError(f"unknown environment jump kind {kind!r}")


def kbar_drift_from(alpha: float, sigma: float, jumps: EnvJumpMeasure, branching_drift: float) -> float:
    return alpha - branching_drift - 0.5 * sigma * sigma - jumps.exp_compensator()


@dataclass(frozen=True)
class EnvironmentSpec:
    """Environment K = (alpha, sigma, pi) together with the branching drift psi'(0+).

    ``regular_downwards`` declares whether 0 is regular for (-inf, 0); it is
    inferred as True when sigma > 0 and must be declared otherwise.
    """

    alpha: float
    sigma: float = 0.0
    jumps: EnvJumpMeasure = field(default_factory=EnvNoJumps)
    branching_drift: float = 0.0
    regular_downwards: Optional[bool] = None
    kbar_drift: float = field(init=False)

    def __post_init__(self):
        if not (self.sigma >= 0):
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "jumps", self.jumps.with_cutoff(self.sigma))
        object.__setattr__(self, "kbar_drift",
                           kbar_drift_from(self.alpha, self.sigma, self.jumps, self.branching_drift))
        if self.regular_downwards is None and self.sigma > 0:
            object.__setattr__(self, "regular_downwards", True)

    @classmethod
    def from_kbar_drift(cls, kbar_drift: float, sigma: float = 0.0, jumps: Optional[EnvJumpMeasure] = None,
                        branching_drift: float = 0.0, regular_downwards: Optional[bool] = None):
        """Spec whose alpha is chosen to give the requested Kbar drift."""
        jumps = (jumps or EnvNoJumps()).with_cutoff(sigma)
        alpha = kbar_drift + branching_drift + 0.5 * sigma * sigma + jumps.exp_compensator()
        return cls(alpha, sigma, jumps, branching_drift, regular_downwards)

    @classmethod
    def centered(cls, sigma: float = 0.0, jumps: Optional[EnvJumpMeasure] = None,
                 branching_drift: float = 0.0, regular_downwards: Optional[bool] = None):
        """Spec with E[Kbar_1] = 0, i.e. an oscillating environment."""
        jumps = (jumps or EnvNoJumps()).with_cutoff(sigma)
        mean_jump = jumps.large_mean()
        if not math.isfinite(mean_jump):
            raise ValueError("jumps have no finite mean; cannot center")
        return cls.from_kbar_drift(-mean_jump, sigma, jumps, branching_drift, regular_downwards)

    def recompute_kbar_drift(self) -> float:
        """kbar_drift with the jump integral evaluated by quadrature."""
        return self.alpha - self.branching_drift - 0.5 * self.sigma**2 - self.jumps.exp_compensator_quad()

    @property
    def sigma_eff(self) -> float:
        return math.sqrt(self.sigma**2 + self.jumps.small_variance())

    @property
    def drift_eff(self) -> float:
        """Drift of the continuous part once simulated small jumps are compensated."""
        return self.kbar_drift - self.jumps.simulated_compensator()

    @property
    def mean(self) -> float:
        """E[Kbar_1]; nan if undefined."""
        return self.kbar_drift + self.jumps.large_mean()

    @property
    def is_compound_poisson(self) -> bool:
        return self.sigma_eff == 0 and self.jumps.finite_activity() and self.jumps.large_rate() > 0

    @property
    def is_brownian(self) -> bool:
        return isinstance(self.jumps, EnvNoJumps) and self.sigma > 0

    def metadata(self) -> dict:
        return {
            "kbar_drift": self.kbar_drift,
            "sigma_eff": self.sigma_eff,
            "small_jump_cutoff": self.jumps.cutoff or 0.0,
            "small_jump_variance": self.jumps.small_variance(),
            "jump_rate": self.jumps.large_rate(),
            "outside_hypotheses": self.is_compound_poisson,
        }

    def to_dict(self) -> dict:
        d = {"alpha": self.alpha, "sigma": self.sigma, "jumps": self.jumps.to_dict()}
        if self.regular_downwards is not None:
            d["regular_downwards"] = self.regular_downwards
        return d

    @classmethod
    def from_dict(cls, d: dict, branching_drift: float = 0.0) -> "EnvironmentSpec":
        jumps = env_jumps_from_dict(d.get("jumps"))
        sigma = float(d.get("sigma", 0.0))
        reg = d.get("regular_downwards")
        if "alpha" in d and "kbar_drift" in d:
            raise ValueError("environment: give either alpha or kbar_drift, not both")
        if "kbar_drift" in d:
            return cls.from_kbar_drift(float(d["kbar_drift"]), sigma, jumps, branching_drift, reg)
        if d.get("centered"):
            return cls.centered(sigma, jumps, branching_drift, reg)
        return cls(float(d.get("alpha", 0.0)), sigma, jumps, branching_drift, reg)


@dataclass
class EnvironmentPath:
    """One sampled trajectory of Kbar on [0, T].

    ``values[k]`` is the (post-jump) value at ``times[k]``, ``left[k]`` the
    left limit there; on segment k the path runs from ``values[k]`` to
    ``left[k+1]`` and time integrals treat it as linear.  ``seg_min[k]`` is
    the minimum over segment k (an exact bridge draw when a Brownian part is
    present).
    """

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray
    seg_min: np.ndarray
    sigma_eff: float = 0.0
    jump_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jump_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tag: Optional[Tuple[int, int]] = None

    @classmethod
    def from_arrays(cls, times, values, left=None, sigma_eff=0.0, seg_min=None, tag=None):
        """Path from explicit arrays; segments are linear unless sigma_eff > 0."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        left = values.copy() if left is None else np.asarray(left, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or left.shape != values.shape:
            raise ValueError("times, values and left must be 1-d arrays of equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if seg_min is None:
            seg_min = np.minimum(values[:-1], left[1:])
        jumps = values - left
        idx = np.nonzero(jumps)[0]
        return cls(times, values, left, np.asarray(seg_min, dtype=float), sigma_eff,
                   times[idx], jumps[idx], tag)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def start(self) -> float:
        return float(self.values[0])

    def index_of(self, t: float) -> int:
        """Grid index of time t; t must be a grid time."""
        k = int(np.searchsorted(self.times, t))
        for j in (k, k - 1):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= 1e-9 * max(1.0, abs(t)):
                return j
        raise ValueError(f"time {t} is not a grid time of the path")

    def value_at(self, t: float) -> float:
        return float(self.values[self.index_of(t)])

    def running_infimum(self, bridge: bool = True) -> np.ndarray:
        """Running minimum at each grid time.

        With ``bridge`` the within-step minima are included (exact on linear
        segments, an exact bridge draw on Brownian ones); otherwise this is
        the grid infimum min(values[0..k]).
        """
        out = np.minimum.accumulate(self.values)
        if bridge and len(self.seg_min):
            out[1:] = np.minimum(out[1:], np.minimum.accumulate(self.seg_min))
        return out

    @property
    def infimum(self) -> np.ndarray:
        return self.running_infimum(True)

    def infimum_at(self, t: float, bridge: bool = True) -> float:
        k = self.index_of(t)
        low = float(self.values[: k + 1].min())
        if bridge and k > 0:
            low = min(low, float(self.seg_min[:k].min()))
        return low

    def first_passage(self, level: float, bridge: bool = False) -> Optional[float]:
        """First time Kbar <= level, None if it never happens on [0, T].

        Linear segments are crossed exactly; for a Brownian part, a bridge
        minimum below the level reports the end of that step.
        """
        if self.values[0] <= level:
            return float(self.times[0])
        a, b = self.values[:-1], self.left[1:]
        below_end = self.values[1:] <= level
        if self.sigma_eff > 0:
            hit = (self.seg_min <= level) if bridge else (b <= level)
            hit = hit | below_end
        else:
            hit = (b <= level) | below_end
        ks = np.nonzero(hit)[0]
        if not len(ks):
            return None
        k = int(ks[0])
        if self.sigma_eff == 0 and b[k] <= level < a[k]:
            frac = (a[k] - level) / (a[k] - b[k])
            return float(self.times[k] + frac * (self.times[k + 1] - self.times[k]))
        return float(self.times[k + 1])

    def _segment_integrals(self, beta: float, shift: float, lo: int, hi: int) -> np.ndarray:
        """exp(-shift) * int over segments lo..hi-1 of exp(-beta Kbar)."""
        # Kbar is linear between grid points, as in the backward ODE and in pathsim
        h = np.diff(self.times[lo : hi + 1])
        a, b = self.values[lo:hi], self.left[lo + 1 : hi + 1]
        d = beta * (b - a)
        small = np.abs(d) < 1e-8
        ratio = np.where(small, 1.0 - 0.5 * d, -np.expm1(-d) / np.where(small, 1.0, d))
        return h * np.exp(-beta * a - shift) * ratio

    def log_exp_functional_at(self, beta: float, times: Sequence[float]) -> np.ndarray:
        """log int_0^t exp(-beta Kbar_s) ds for each t in ``times`` (grid times)."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        idx = [self.index_of(t) for t in times]
        order = np.argsort(idx, kind="stable")
        out = np.empty(len(idx))
        acc, prev = -np.inf, 0
        for j in order:
            k = idx[j]
            if k > prev:
                shift = -beta * float(min(self.values[prev:k].min(), self.left[prev + 1 : k + 1].min()))
                part = math.log(float(np.sum(self._segment_integrals(beta, shift, prev, k)))) + shift
                acc = float(np.logaddexp(acc, part))
                prev = k
            out[j] = acc
        return out

    def exp_functional(self, beta: float, t: Optional[float] = None) -> float:
        t = self.horizon if t is None else t
        return float(np.exp(self.log_exp_functional_at(beta, [t])[0]))

    def truncate(self, t: float) -> "EnvironmentPath":
        """Prefix of the path on [0, t]; t must be a grid time."""
        k = self.index_of(t)
        jt = self.jump_times <= self.times[k]
        return EnvironmentPath(self.times[: k + 1].copy(), self.values[: k + 1].copy(),
                               self.left[: k + 1].copy(), self.seg_min[:k].copy(), self.sigma_eff,
                               self.jump_times[jt], self.jump_sizes[jt], self.tag)

    def to_csv(self, fh, bridge: bool = True) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "value", "infimum"])
        for row in zip(self.times, self.values, self.running_infimum(bridge)):
            writer.writerow([repr(float(v)) for v in row])


def _regular_grid(T: float, dt: float, checkpoints: Sequence[float]) -> np.ndarray:
    n = int(math.ceil(T / dt - 1e-9))
    times = np.arange(n + 1, dtype=float) * dt
    times[-1] = T
    extra = []
    for c in checkpoints:
        if not (0 < c <= T):
            raise ValueError(f"checkpoint {c} outside (0, T]")
        k = int(round(c / dt))
        if abs(k * dt - c) <= 1e-9 * max(1.0, c) and k <= n:
            times[k] = c
        else:
            extra.append(c)
    if extra:
        times = np.union1d(times, extra)
    return times


def bridge_minimum(a, b, var, u):
    """Minimum of a Brownian bridge from a to b with total variance ``var``,
    driven by uniforms ``u`` in (0, 1]."""
    return 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * var * np.log(u)))


def sample_path(spec: EnvironmentSpec, T: float, dt: float, x: float = 0.0,
                rng: Optional[np.random.Generator] = None, checkpoints: Sequence[float] = (),
                bridge: bool = True, tag=None) -> EnvironmentPath:
    """Sample Kbar on [0, T] started at x."""
    if not (T > 0):
        raise ValueError("horizon T must be positive")
    if not (dt > 0):
        raise ValueError("step dt must be positive")
    rng = np.random.default_rng() if rng is None else rng
    if spec.is_compound_poisson:
        warnings.warn("compound Poisson environment lies outside the hypotheses of the survival asymptotics",
                      stacklevel=2)
    times = _regular_grid(T, dt, checkpoints)
    rate = spec.jumps.large_rate()
    if rate > 0:
        n_jumps = rng.poisson(rate * T)
        jt = np.sort(rng.uniform(0.0, T, size=n_jumps))
        js = spec.jumps.sample_large(rng, n_jumps)
        # drop (measure-zero) collisions with grid points
        keep = ~np.isin(jt, times) & (jt > 0)
        jt, js = jt[keep], js[keep]
        times = np.union1d(times, jt)
    else:
        jt = js = np.zeros(0)
    h = np.diff(times)
    sig = spec.sigma_eff
    incr = spec.drift_eff * h
    if sig > 0:
        incr = incr + sig * np.sqrt(h) * rng.standard_normal(len(h))
    jump_at = np.zeros(len(times))
    if len(jt):
        jump_at[np.searchsorted(times, jt)] = js
    values = np.empty(len(times))
    values[0] = x
    np.cumsum(incr + jump_at[1:], out=values[1:])
    values[1:] += x
    left = values - jump_at
    a, b = values[:-1], left[1:]
    if sig > 0 and bridge:
        u = 1.0 - rng.random(len(h))
        seg_min = bridge_minimum(a, b, sig * sig * h, u)
    else:
        seg_min = np.minimum(a, b)
    return EnvironmentPath(times, values, left, seg_min, sig, jt, js, tag)


def spitzer_estimate(spec: EnvironmentSpec, t: float, n: int, seed: int = 0,
                     dt: Optional[float] = None) -> Tuple[float, float]:
    """Fraction of n paths with Kbar_t >= 0, with its standard error."""
    from .rng import stream

    if n < 100:
        raise ValueError("spitzer_estimate needs n >= 100")
    dt = t if dt is None else dt
    hits = 0
    for i in range(n):
        path = sample_path(spec, t, dt, rng=stream(seed, i), bridge=False)
        hits += path.values[-1] >= 0
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


def check_h1(spec: EnvironmentSpec, tol: float = 1e-9) -> Optional[float]:
    """Analytic Spitzer check: the positivity parameter rho, or None.

    Requires a centred environment (E[Kbar_1] = 0).  Finite variance gives
    rho = 1/2; the truncated-stable variant is in the stable domain of
    attraction and gets the stable positivity parameter.
    """
    if spec.sigma_eff == 0 and spec.jumps.large_rate() == 0:
        return None
    mean = spec.mean
    if not math.isfinite(mean):
        j = spec.jumps
        if isinstance(j, TruncatedStable) and j.c_plus == j.c_minus:
            return 0.5
        return None
    if abs(mean) > tol:
        return None
    j = spec.jumps
    if j.finite_variance():
        return 0.5
    a = j.index
    skew = (j.c_plus - j.c_minus) / j.total
    return 0.5 + math.atan(skew * math.tan(math.pi * a / 2)) / (math.pi * a)


def check_h3(spec: EnvironmentSpec) -> Optional[float]:
    """A valid theta+ > 1 with E[exp(theta+ Kbar_1)] < inf, or None."""
    bound = spec.jumps.positive_exp_bound()
    if bound <= 1.0:
        return None
    if math.isinf(bound):
        return 2.0
    return 0.5 * (1.0 + bound)
