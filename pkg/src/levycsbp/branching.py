"""Branching mechanisms of continuous-state branching processes.

A mechanism is the triple (drift, gaussian, jumps) with

    psi(lam) = drift*lam + gaussian*lam**2 + int (exp(-lam*x) - 1 + lam*x) mu(dx)

``psi0`` drops the linear term and ``phi = psi0 / lam``.  All jump-measure
variants evaluate their integrals in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

QUAD_RTOL = 1e-10

H4_GRID = np.logspace(-6, 6, 1000)
H4_BETA_RESOLUTION = 1e-3
H4_SLOPE_TOL = 1e-2


def levy_kernel(y):
    """exp(-y) - 1 + y, accurate for small y >= 0."""
    y = np.asarray(y, dtype=float)
    small = y < 1e-3
    ys = np.where(small, y, 0.0)
    series = ys * ys * (0.5 - ys * (1.0 / 6.0 - ys * (1.0 / 24.0 - ys / 120.0)))
    direct = np.expm1(-np.where(small, 1.0, y)) + np.where(small, 1.0, y)
    return np.where(small, series, direct)


class JumpMeasure:
    """Levy measure on (0, inf) of the branching jumps."""

    kind = "abstract"

    def laplace_integral(self, lam):
        """int (exp(-lam x) - 1 + lam x) mu(dx)."""
        raise NotImplementedError

    def z_min_z2(self) -> float:
        """int min(z, z^2) mu(dz)."""
        raise NotImplementedError

    def h2_integral(self) -> float:
        """int_1^inf z ln(z)^2 mu(dz)."""
        raise NotImplementedError

    # Pieces used by the pathwise Euler scheme.
    def tail_rate(self, delta: float) -> float:
        raise NotImplementedError

    def tail_mean(self, delta: float) -> float:
        raise NotImplementedError

    def small_variance(self, delta: float) -> float:
        raise NotImplementedError

    def sample_large(self, rng: np.random.Generator, n: int, delta: float) -> np.ndarray:
        raise NotImplementedError

    def default_cutoff(self, gaussian: float) -> float:
        return 0.0

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class NoJumps(JumpMeasure):
    kind = "none"

    def laplace_integral(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=float))

    def z_min_z2(self):
        return 0.0

    def h2_integral(self):
        return 0.0

    def tail_rate(self, delta):
        return 0.0

    def tail_mean(self, delta):
        return 0.0

    def small_variance(self, delta):
        return 0.0

    def sample_large(self, rng, n, delta):
        return np.zeros(n)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class StablePower(JumpMeasure):
    """Density ``c * z**(-1-index)`` on (0, inf), index in (1, 2).

    The resulting psi0 is ``c * Gamma(-index) * lam**index``; use
    :meth:`normalized` to build the measure from that constant directly.
    """

    c: float
    index: float
    kind = "stable"

    def __post_init__(self):
        if not (self.c > 0):
            raise ValueError(f"stable jump constant must be positive, got {self.c}")
        if not (1.0 < self.index < 2.0):
            raise ValueError(f"stable index must lie in (1, 2), got {self.index}")

    @classmethod
    def normalized(cls, constant: float, index: float) -> "StablePower":
        """Measure whose psi0 is exactly ``constant * lam**index``."""
        return cls(c=constant / special.gamma(-index), index=index)

    @property
    def psi0_constant(self) -> float:
        return float(self.c * special.gamma(-self.index))

    def laplace_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.psi0_constant * lam**self.index

    def z_min_z2(self):
        a = self.index
        return self.c * (1.0 / (2.0 - a) + 1.0 / (a - 1.0))

    def h2_integral(self):
        return self.c * 2.0 / (self.index - 1.0) ** 3

    def tail_rate(self, delta):
        return self.c * delta ** (-self.index) / self.index

    def tail_mean(self, delta):
        return self.c * delta ** (1.0 - self.index) / (self.index - 1.0)

    def small_variance(self, delta):
        return self.c * delta ** (2.0 - self.index) / (2.0 - self.index)

    def sample_large(self, rng, n, delta):
        return delta * rng.random(n) ** (-1.0 / self.index)

    def default_cutoff(self, gaussian):
        # residual variance at most 1% of the diffusion variance 2*gaussian
        if gaussian > 0:
            target = 0.01 * 2.0 * gaussian
        else:
            target = 1e-4
        delta = (target * (2.0 - self.index) / self.c) ** (1.0 / (2.0 - self.index))
        return min(delta, 0.1)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "index": self.index}


@dataclass(frozen=True)
class FiniteAtoms(JumpMeasure):
    """Finitely many atoms ``rates[i] * delta_{sizes[i]}``."""

    sizes: Tuple[float, ...]
    rates: Tuple[float, ...]
    kind = "atoms"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.sizes) != len(self.rates) or not self.sizes:
            raise ValueError("atoms need matching, non-empty sizes and rates")
        if any(s <= 0 for s in self.sizes) or any(r <= 0 for r in self.rates):
            raise ValueError("atom sizes and rates must be positive")

    def laplace_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        for z, r in zip(self.sizes, self.rates):
            out = out + r * levy_kernel(lam * z)
        return out

    def z_min_z2(self):
        return sum(r * min(z, z * z) for z, r in zip(self.sizes, self.rates))

    def h2_integral(self):
        return sum(r * z * math.log(z) ** 2 for z, r in zip(self.sizes, self.rates) if z > 1)

    def tail_rate(self, delta):
        return sum(self.rates)

    def tail_mean(self, delta):
        return sum(r * z for z, r in zip(self.sizes, self.rates))

    def small_variance(self, delta):
        return 0.0

    def sample_large(self, rng, n, delta):
        p = np.asarray(self.rates) / sum(self.rates)
        return np.asarray(self.sizes)[rng.choice(len(p), size=n, p=p)]

    def to_dict(self):
        return {"kind": self.kind, "sizes": list(self.sizes), "rates": list(self.rates)}


@dataclass(frozen=True)
class ExponentialTail(JumpMeasure):
    """Density ``c * exp(-rate * z)`` on (0, inf)."""

    c: float
    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not (self.c > 0 and self.rate > 0):
            raise ValueError("exponential-tail parameters must be positive")

    def laplace_integral(self, lam):
        lam = np.asarray(lam, dtype=float)
        r = self.rate
        return self.c * lam * lam / (r * r * (r + lam))

    def z_min_z2(self):
        r = self.rate
        inner = special.gammainc(3, r) * 2.0 / r**3
        outer = math.exp(-r) * (r + 1.0) / r**2
        return self.c * (inner + outer)

    def h2_integral(self):
        val, _ = integrate.quad(
            lambda x: x * math.log(x) ** 2 * math.exp(-self.rate * x),
            1.0, np.inf, epsrel=QUAD_RTOL, limit=200,
        )
        return self.c * val

    def tail_rate(self, delta):
        return self.c * math.exp(-self.rate * delta) / self.rate

    def tail_mean(self, delta):
        r = self.rate
        return self.c * math.exp(-r * delta) * (r * delta + 1.0) / r**2

    def small_variance(self, delta):
        return self.c * special.gammainc(3, self.rate * delta) * 2.0 / self.rate**3

    def sample_large(self, rng, n, delta):
        return delta + rng.exponential(1.0 / self.rate, size=n)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "rate": self.rate}


def jump_measure_from_dict(d: Optional[dict]) -> JumpMeasure:
    if not d or d.get("kind", "none") == "none":
        return NoJumps()
    kind = d["kind"]
    if kind == "stable":
        if "constant" in d:
            return StablePower.normalized(float(d["constant"]), float(d["index"]))
        return StablePower(float(d["c"]), float(d["index"]))
    if kind == "atoms":
        return FiniteAtoms(tuple(d["sizes"]), tuple(d["rates"]))
    if kind == "exponential":
        return ExponentialTail(float(d["c"]), float(d["rate"]))
    raise ValueError(f"unknown branching jump kind {kind!r}")


@dataclass(frozen=True)
class BranchingMechanism:
    """psi determined by ``drift`` (= psi'(0+)), ``gaussian`` (= gamma^2) and ``jumps``."""

    drift: float = 0.0
    gaussian: float = 0.0
    jumps: JumpMeasure = field(default_factory=NoJumps)

    def __post_init__(self):
        if not (self.gaussian >= 0):
            raise ValueError(f"gaussian coefficient must be nonnegative, got {self.gaussian}")
        if not math.isfinite(self.drift):
            raise ValueError("drift must be finite")
        if not math.isfinite(self.jumps.z_min_z2()):
            raise ValueError("jump measure violates int min(z, z^2) mu(dz) < inf")

    def psi(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("psi is defined for lam >= 0")
        return self.drift * lam + self.psi0(lam)

    def psi0(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.gaussian * lam * lam + self.jumps.laplace_integral(lam)

    def phi(self, lam):
        """psi0(lam) / lam, continuous at 0 with phi(0) = 0."""
        lam = np.asarray(lam, dtype=float)
        safe = np.where(lam > 0, lam, 1.0)
        return np.where(lam > 0, self.psi0(safe) / safe, 0.0)

    def exact_stable(self) -> Optional[Tuple[float, float]]:
        """(beta, C) when psi0 is exactly C * lam**(1+beta), else None."""
        if isinstance(self.jumps, NoJumps):
            return (1.0, self.gaussian) if self.gaussian > 0 else None
        if isinstance(self.jumps, StablePower) and self.gaussian == 0:
            return (self.jumps.index - 1.0, float(self.jumps.psi0_constant))
        return None

    def h2_integral(self) -> float:
        return self.jumps.h2_integral()

    def check_h2(self) -> bool:
        return bool(math.isfinite(self.h2_integral()))

    def check_h4(self) -> Optional[Tuple[float, float]]:
        exact = self.exact_stable()
        if exact is not None:
            return exact
        lam = H4_GRID
        vals = self.psi0(lam)
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            return None
        logl = np.log(lam)
        logp = np.log(vals)
        a_inf = (logp[-1] - logp[-2]) / (logl[-1] - logl[-2])
        candidates = {1.0, round((a_inf - 1.0) / H4_BETA_RESOLUTION) * H4_BETA_RESOLUTION}
        if isinstance(self.jumps, StablePower):
            candidates.add(self.jumps.index - 1.0)
        for beta in sorted(candidates, reverse=True):
            if not (H4_BETA_RESOLUTION <= beta <= 1.0):
                continue
            logr = logp - (1.0 + beta) * logl
            left = (logr[1] - logr[0]) / (logl[1] - logl[0])
            right = (logr[-1] - logr[-2]) / (logl[-1] - logl[-2])
            # the ratio must not be heading to 0 beyond either end of the grid
            if left <= H4_SLOPE_TOL and right >= -H4_SLOPE_TOL:
                return (float(beta), float(np.exp(logr.min())))
        return None

    def grey_integral(self, upper: float = 1e6) -> float:
        """int_1^inf dz / psi0(z); ``inf`` when Grey's condition fails."""
        if self.psi0(1.0) <= 0:
            return math.inf
        body, _ = integrate.quad(
            lambda u: math.exp(u) / float(self.psi0(math.exp(u))),
            0.0, math.log(upper), epsrel=QUAD_RTOL, epsabs=0.0, limit=500,
        )
        h = 1e-4
        growth = (math.log(float(self.psi0(upper * math.exp(h)))) - math.log(float(self.psi0(upper)))) / h
        if growth <= 1.0 + 1e-6:
            return math.inf
        tail = upper / (float(self.psi0(upper)) * (growth - 1.0))
        return body + tail

    def to_dict(self) -> dict:
        return {"drift": self.drift, "gaussian": self.gaussian, "jumps": self.jumps.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchingMechanism":
        return cls(
            drift=float(d.get("drift", 0.0)),
            gaussian=float(d.get("gaussian", 0.0)),
            jumps=jump_measure_from_dict(d.get("jumps")),
        )
