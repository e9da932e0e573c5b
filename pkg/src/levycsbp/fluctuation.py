"""Renewal functions, descending ladder exponents and infimum laws.

Normalization: the local-time constant is chosen so that Brownian motion has
V(x) = x.  Each family below states its own convention in ``note``; the
identity int_0^inf e^{-theta x} V(dx) = 1/kappa_hat(0, theta) holds for all of
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import InversionInstabilityError, UnsupportedFamilyError

TALBOT_LEVELS = (24, 32)
TALBOT_TOL = 1e-7
QUAD_ATOL = 1e-10


class RenewalFunction:
    """V (descending) or V# (ascending) renewal function."""

    direction = "descending"
    note = ""
    regular_downwards = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("renewal functions are evaluated at x >= 0")
        out = self._eval(x)
        return float(out) if out.ndim == 0 else out

    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def linear_constant(self) -> float:
        """C with V(x) <= C (1 + x); C = V(1) by subadditivity and monotonicity."""
        return float(self(1.0))

    def linear_bound(self, x):
        return self.linear_constant * (1.0 + np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BrownianLinear(RenewalFunction):
    slope: float = 1.0
    direction: str = "descending"
    note: str = "V(x) = slope*x; slope 1 is the library normalization"

    def _eval(self, x):
        return self.slope * x

    @property
    def linear_constant(self):
        return self.slope

    def linear_bound(self, x):
        # exact linear certificate V(x) <= C x
        return self.slope * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class StablePowerRenewal(RenewalFunction):
    """V(x) = x^{a}/Gamma(1 + a) with a = alpha(1 - rho) (descending) or alpha*rho."""

    alpha: float
    rho: float
    direction: str = "descending"
    note: str = "Laplace transform of V(dx) is theta^{-a}"

    def __post_init__(self):
        if not (0 < self.alpha <= 2) or not (0 < self.rho < 1):
            raise ValueError("stable renewal needs alpha in (0,2] and rho in (0,1)")

    @property
    def exponent(self) -> float:
        return self.alpha * (1 - self.rho) if self.direction == "descending" else self.alpha * self.rho

    def _eval(self, x):
        a = self.exponent
        return np.power(x, a) / math.gamma(1.0 + a)


def talbot(F: Callable, t: float, m: int) -> float:
    """Fixed-Talbot inversion of the Laplace transform F at t > 0 with m nodes."""
    r = 2.0 * m / (5.0 * t)
    theta = np.arange(1, m) * math.pi / m
    cot = 1.0 / np.tan(theta)
    s = r * theta * (cot + 1j)
    sig = theta + (theta * cot - 1.0) * cot
    terms = np.exp(t * s) * F(s) * (1.0 + 1j * sig)
    return float(r / m * (0.5 * np.real(F(np.array([r + 0j]))[0]) * math.exp(r * t) + np.sum(terms.real)))


@dataclass(frozen=True)
class SpectrallyNegativeScale(RenewalFunction):
    """V = W, the scale function with int e^{-lam x} W(x) dx = 1/phi(lam)."""

    phi: Callable
    grid: tuple = ()
    table: tuple = ()
    levels: tuple = TALBOT_LEVELS
    tol: float = TALBOT_TOL
    scale: float = 1.0
    direction: str = "descending"
    note: str = "V = W (scale function), fixed-Talbot inversion"

    def _invert(self, x: float) -> float:
        if x == 0:
            # W(0) = lim lam/phi(lam)
            lam = 1e100
            with np.errstate(over="ignore", invalid="ignore"):
                val = lam / float(np.real(self.phi(np.array([lam + 0j]))[0]))
            return self.scale * (val if math.isfinite(val) else 0.0)
        F = lambda s: 1.0 / self.phi(s)
        vals = [talbot(F, x, m) for m in self.levels]
        ref = vals[-1]
        if abs(vals[0] - ref) > self.tol * max(abs(ref), 1e-300):
            raise InversionInstabilityError(
                f"Talbot levels {self.levels} disagree at x={x}: {vals[0]!r} vs {ref!r}")
        return self.scale * ref

    def _eval(self, x):
        lookup = dict(zip(self.grid, self.table))
        flat = [lookup[v] if v in lookup else self._invert(float(v)) for v in np.ravel(x)]
        return np.asarray(flat, dtype=float).reshape(np.shape(x))

    def rescaled(self, factor: float) -> "SpectrallyNegativeScale":
        return SpectrallyNegativeScale(self.phi, self.grid, tuple(factor * v for v in self.table),
                                       self.levels, self.tol, self.scale * factor, self.direction,
                                       self.note + f"; rescaled by {factor:g}")

    def metadata(self) -> dict:
        return {"method": "fixed_talbot", "levels": list(self.levels), "tolerance": self.tol,
                "scale": self.scale}


def scale_function_invert(phi: Callable, xs: Sequence[float], levels=TALBOT_LEVELS,
                          tol: float = TALBOT_TOL) -> SpectrallyNegativeScale:
    """Scale function W of a spectrally negative process from its Laplace exponent.

    ``phi`` must accept complex numpy arrays.  Raises InversionInstabilityError
    if the two Talbot precision levels disagree beyond ``tol`` (relative).
    """
    base = SpectrallyNegativeScale(phi, (), (), tuple(levels), tol)
    grid = tuple(float(x) for x in xs)
    if any(x < 0 for x in grid):
        raise ValueError("scale function grid must be nonnegative")
    table = tuple(base._invert(x) for x in grid)
    return SpectrallyNegativeScale(phi, grid, table, tuple(levels), tol)


@dataclass(frozen=True)
class EmpiricalRenewal(RenewalFunction):
    """V from Monte Carlo ratios P_x(I_t > 0)/P_1(I_t > 0) at a large fixed t; approximate."""

    xs: tuple
    values: tuple
    stderr: tuple
    t: float
    n_paths: int
    direction: str = "descending"
    note: str = "empirical, normalized so V(1) = 1; approximate"

    def _eval(self, x):
        return np.interp(x, self.xs, self.values)


def renewal_eval(r: RenewalFunction, x: float) -> float:
    return r(x)


def empirical_renewal(spec, xs: Sequence[float], t: float, n_paths: int, seed: int = 0,
                      dt: float = 0.01, bridge: bool = True) -> EmpiricalRenewal:
    """Empirical renewal table from one batch of paths started at 0 (shifted by x)."""
    from .environment import sample_path
    from .rng import stream

    xs = sorted(set(float(x) for x in xs) | {0.0, 1.0})
    inf = np.array([sample_path(spec, t, dt, rng=stream(seed, i)).running_infimum(bridge)[-1]
                    for i in range(n_paths)])
    p = np.array([np.mean(inf > -x) for x in xs])
    p1 = p[xs.index(1.0)]
    if p1 == 0:
        raise ValueError("no path stayed above -1; increase n_paths")
    ratio = p / p1
    se = ratio * np.sqrt(np.maximum(p * (1 - p), 0) / n_paths) / np.where(p > 0, p, 1.0)
    return EmpiricalRenewal(tuple(xs), tuple(ratio), tuple(se), t, n_paths)


@dataclass(frozen=True)
class BrownianFamily:
    """sigma * (standard Brownian motion), no drift."""

    sigma: float = 1.0
    rho = 0.5

    def kappa_hat(self, q: float, theta: float = 0.0) -> float:
        if q < 0 or theta < 0:
            raise ValueError("kappa_hat arguments must be nonnegative")
        return math.sqrt(2.0 * q) / self.sigma + theta

    def renewal(self) -> RenewalFunction:
        return BrownianLinear(1.0)

    def inf_probability(self, x: float, t: float) -> float:
        return brownian_inf_probability(x / self.sigma, t)


@dataclass(frozen=True)
class SpectrallyNegativeFamily:
    """Oscillating spectrally negative process with Laplace exponent phi."""

    phi: Callable

    def _phi_real(self, lam: float) -> float:
        return float(np.real(self.phi(np.array([complex(lam)]))[0]))

    def big_phi(self, q: float) -> float:
        """Right inverse of phi on [0, inf)."""
        if q == 0:
            return 0.0
        hi = 1.0
        while self._phi_real(hi) < q:
            hi *= 2.0
        return optimize.brentq(lambda l: self._phi_real(l) - q, 0.0, hi, xtol=1e-15, rtol=1e-14)

    def kappa_hat(self, q: float, theta: float = 0.0) -> float:
        if q < 0 or theta < 0:
            raise ValueError("kappa_hat arguments must be nonnegative")
        if q == 0 and theta == 0:
            return 0.0
        if theta == 0:
            return q / self.big_phi(q)
        if q == 0:
            return self._phi_real(theta) / theta
        b = self.big_phi(q)
        if abs(b - theta) < 1e-9 * max(1.0, b):
            h = 1e-6 * max(1.0, b)
            return (self._phi_real(b + h) - self._phi_real(b - h)) / (2 * h)
        return (q - self._phi_real(theta)) / (b - theta)

    def renewal(self, xs: Sequence[float] = ()) -> SpectrallyNegativeScale:
        return scale_function_invert(self.phi, xs)


@dataclass(frozen=True)
class StableFamily:
    """Strictly stable process with index alpha and positivity parameter rho.

    kappa_hat(q, 0) = q^{1-rho} and kappa_hat(0, theta) = theta^{alpha(1-rho)}.
    """

    alpha: float
    rho: float

    def kappa_hat(self, q: float, theta: float = 0.0) -> float:
        if q < 0 or theta < 0:
            raise ValueError("kappa_hat arguments must be nonnegative")
        if theta == 0:
            return q ** (1.0 - self.rho)
        if q == 0:
            return theta ** (self.alpha * (1.0 - self.rho))
        raise UnsupportedFamilyError("bivariate stable kappa_hat is not implemented")

    def renewal(self) -> StablePowerRenewal:
        return StablePowerRenewal(self.alpha, self.rho)


def family_for(spec) -> object:
    """Closed-form family of an environment spec, if one exists."""
    from .environment import EnvNoJumps

    if isinstance(spec.jumps, EnvNoJumps) and spec.sigma > 0 and abs(spec.kbar_drift) < 1e-12:
        return BrownianFamily(spec.sigma)
    raise UnsupportedFamilyError("only driftless Brownian environments have a closed form here")


def kappa_hat(family, q: float, theta: float = 0.0) -> float:
    if not hasattr(family, "kappa_hat"):
        family = family_for(family)
    return family.kappa_hat(q, theta)


def _half_gamma_integral(upper: float, rate: float) -> float:
    """int_0^upper exp(-rate v) v^{-1/2} dv / sqrt(2 pi), with an algebraic weight at 0."""
    val, _ = integrate.quad(lambda v: math.exp(-rate * v), 0.0, upper, weight="alg",
                            wvar=(-0.5, 0.0), epsabs=QUAD_ATOL, epsrel=1e-12)
    return val / math.sqrt(2 * math.pi)


def brownian_inf_probability(x: float, t: float) -> float:
    """P_x(I_t > 0) for standard Brownian motion, by quadrature.

    The integral int_{t/x^2}^inf exp(-1/(2w)) dw / sqrt(2 pi w^3) is taken
    in v = 1/w, where its tail becomes an integrable v^{-1/2} singularity.
    """
    if not (x > 0 and t > 0):
        raise ValueError("x and t must be positive")
    return _half_gamma_integral(x * x / t, 0.5)


def brownian_inf_probability_erf(x: float, t: float) -> float:
    return math.erf(x / math.sqrt(2.0 * t))


def brownian_ell(t: float) -> float:
    """l(t) = int_1^inf exp(-1/(2tu)) du / sqrt(2 pi u^3); the Brownian slowly varying part."""
    if not (t > 0):
        raise ValueError("t must be positive")
    # same substitution v = 1/u
    return _half_gamma_integral(1.0, 0.5 / t)


@dataclass
class BoundCheck:
    x: float
    t: float
    lhs: float
    lhs_stderr: float
    rhs: float
    ok: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def check_majP_bound(family, xs: Sequence[float], ts: Sequence[float], spec=None, n_paths: int = 0,
                     seed: int = 0, dt: float = 0.01, bridge: bool = True) -> list:
    """Check P_x(tau_0^- > t) <= 2e kappa_hat(1/t, 0) V(x) on an (x, t) grid.

    The left side is closed form for Brownian families unless ``n_paths`` is
    given, in which case it is estimated on paths of ``spec``; a violation
    beyond 3 standard errors is a failure.
    """
    V = family.renewal()
    out = []
    mc = n_paths > 0
    if not mc and not isinstance(family, BrownianFamily):
        raise UnsupportedFamilyError("closed-form left side only for Brownian families")
    if mc:
        from .environment import sample_path
        from .rng import stream

        if spec is None:
            raise ValueError("Monte Carlo check needs an environment spec")
        tmax = max(ts)
        paths = [sample_path(spec, tmax, dt, rng=stream(seed, i), checkpoints=ts) for i in range(n_paths)]
        inf = {t: np.array([p.infimum_at(t, bridge) for p in paths]) for t in ts}
    for t in ts:
        k = family.kappa_hat(1.0 / t)
        for x in xs:
            rhs = 2.0 * math.e * k * V(x)
            if mc:
                p = float(np.mean(inf[t] > -x))
                se = math.sqrt(p * (1 - p) / n_paths)
            else:
                p, se = family.inf_probability(x, t), 0.0
            out.append(BoundCheck(x, t, p, se, rhs, p <= rhs + 3 * se))
    return out
