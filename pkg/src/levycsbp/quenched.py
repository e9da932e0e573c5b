"""Backward equation for the quenched Laplace exponent v_t(s, lambda, Kbar).

Along a frozen environment path, s -> v_t(s) solves

    d/ds v = exp(Kbar_s) * psi0(v * exp(-Kbar_s)),   v(t) = lambda,

and E[exp(-lambda Z_t e^{-Kbar_t}) | K] = exp(-z v_t(0)).  For psi0(l) = C l^(1+beta)
there is the closed form 1/v(0)^beta = 1/lambda^beta + beta*C*int_0^t exp(-beta Kbar_s) ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .branching import BranchingMechanism
from .environment import EnvironmentPath
from .errors import NonConvergenceError, SolverError

ATOL = 1e-12
RTOL = 1e-9
LAMBDA_START = 1e3
MAX_DOUBLINGS = 60
MAX_STEPS = 1_000_000

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass
class BackwardSolution:
    lam: float
    v0: float
    t: float
    method: str
    steps: int = 0
    rejected: int = 0
    max_error: float = 0.0
    path: Optional[EnvironmentPath] = None


@lru_cache(maxsize=256)
def _certificate(m: BranchingMechanism) -> Optional[Tuple[float, float]]:
    return m.check_h4()


@lru_cache(maxsize=256)
def _grey_finite(m: BranchingMechanism) -> bool:
    return math.isfinite(m.grey_integral())


def _dp45_segment(f, y, length, h, rtol, atol, stats):
    """Integrate dy/dtau = f(tau, y) over [0, length]; returns (y, next h)."""
    tau = 0.0
    h = min(h, length)
    k1 = f(0.0, y)
    while tau < length:
        if stats["steps"] > MAX_STEPS:
            raise SolverError("step budget exhausted")
        last = tau + h >= length * (1.0 - 1e-12)
        if last:
            h_free, h = h, length - tau
        ks = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(f(tau + _C[i] * h, yi))
        y5 = y + h * sum(b * k for b, k in zip(_B5, ks))
        err = abs(h * sum(e * k for e, k in zip(_E, ks)))
        scale = atol + rtol * max(abs(y), abs(y5))
        ratio = err / scale if math.isfinite(err) else math.inf
        if ratio <= 1.0:
            # land exactly on the segment end, leaving no rounding remainder
            tau = length if last else tau + h
            y = y5
            k1 = ks[6]
            stats["steps"] += 1
            stats["max_error"] = max(stats["max_error"], ratio)
            fac = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** -0.2)
        else:
            stats["rejected"] += 1
            fac = max(0.2, 0.9 * ratio ** -0.2) if math.isfinite(ratio) else 0.2
        if ratio <= 1.0 and last:
            return y, max(h * fac, h_free)
        h = h * fac
        if h < 1e-14 * max(1.0, length) and tau < length:
            raise SolverError(f"step size underflow (h={h:.3g}) at local error ratio {ratio:.3g}")
    return y, h


def _prefix(path: EnvironmentPath, t: Optional[float]) -> EnvironmentPath:
    if t is None or t == path.horizon:
        return path
    return path.truncate(t)


def closed_form_v0(m: BranchingMechanism, path: EnvironmentPath, lam: float,
                   t: Optional[float] = None) -> float:
    """Closed form for exactly stable psi0; lam may be inf."""
    cert = m.exact_stable()
    if cert is None:
        raise ValueError("closed form requires an exactly stable psi0")
    beta, c = cert
    log_i = float(_prefix(path, t).log_exp_functional_at(beta, [path.horizon if t is None else t])[0])
    return math.exp(_log_v_closed(beta, c, log_i, lam))


def _log_v_closed(beta: float, c: float, log_i: float, lam: float) -> float:
    log_b = math.log(beta * c) + log_i
    if math.isinf(lam):
        return -log_b / beta
    # 1/v^beta = lam^-beta + beta*C*I, in logs
    return -float(np.logaddexp(-beta * math.log(lam), log_b)) / beta


def solve_backward(m: BranchingMechanism, path: EnvironmentPath, lam: float,
                   t: Optional[float] = None, method: str = "auto",
                   rtol: float = RTOL, atol: float = ATOL) -> BackwardSolution:
    """v_t(0, lam, Kbar) along ``path``.

    ``method`` is "auto" (closed form when psi0 is exactly stable), "closed"
    or "ode".  The ODE integrates log(v^-beta) when an H4 certificate
    (beta, C) is available and log v otherwise, splitting at every grid
    time of the path.
    """
    if not (lam >= 0):
        raise ValueError("lambda must be nonnegative")
    path = _prefix(path, t)
    horizon = path.horizon
    if lam == 0:
        return BackwardSolution(0.0, 0.0, horizon, "trivial", path=path)
    if math.isinf(lam):
        v = v_infinity(m, path, method=method)
        return BackwardSolution(lam, v, horizon, "limit", path=path)
    if method not in ("auto", "closed", "ode"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "closed") and m.exact_stable() is not None:
        return BackwardSolution(lam, closed_form_v0(m, path, lam), horizon, "closed", path=path)
    if method == "closed":
        raise ValueError("closed form requires an exactly stable psi0")

    cert = _certificate(m)
    stats = {"steps": 0, "rejected": 0, "max_error": 0.0}
    times, values, left = path.times, path.values, path.left
    n = len(times) - 1
    if cert is not None:
        beta = cert[0]

        def make_rhs(kb_end, slope):
            def rhs(tau, y):
                kb = kb_end - slope * tau
                # R(u) = psi0(u)/u^(1+beta) is bounded away from 0 and inf; clamp
                # log u so trial stages far off the solution stay finite
                log_u = min(max(-y / beta - kb, -300.0), 300.0)
                r = m.psi0(math.exp(log_u)) * math.exp(-(1.0 + beta) * log_u)
                return beta * math.exp(-beta * kb - y) * r
            return rhs

        y = -beta * math.log(lam)
    else:
        beta = None

        def make_rhs(kb_end, slope):
            def rhs(tau, y):
                kb = kb_end - slope * tau
                return -m.phi(math.exp(min(y - kb, 700.0)))
            return rhs

        y = math.log(lam)
    h = float(times[-1] - times[0]) / 8.0
    # backward in s = forward in tau = t - s, segment by segment
    for k in range(n - 1, -1, -1):
        length = float(times[k + 1] - times[k])
        kb_end = float(left[k + 1])
        slope = (kb_end - float(values[k])) / length
        y, h = _dp45_segment(make_rhs(kb_end, slope), y, length, h, rtol, atol, stats)
        if not math.isfinite(y):
            raise SolverError("non-finite state in backward solve")
    v0 = math.exp(-y / beta) if beta is not None else math.exp(y)
    return BackwardSolution(lam, v0, horizon, "ode", stats["steps"], stats["rejected"],
                            stats["max_error"], path)


def v_infinity(m: BranchingMechanism, path: EnvironmentPath, tol: float = 1e-8,
               t: Optional[float] = None, method: str = "auto",
               rtol: float = RTOL, atol: float = ATOL) -> float:
    """lim_{lambda -> inf} v_t(0, lambda, Kbar) by lambda-doubling."""
    path = _prefix(path, t)
    if method != "ode" and m.exact_stable() is not None:
        return closed_form_v0(m, path, math.inf)
    if not _grey_finite(m):
        raise NonConvergenceError("Grey's condition fails: int^inf dz/psi0(z) is infinite")
    lam = LAMBDA_START
    prev = solve_backward(m, path, lam, method="ode", rtol=rtol, atol=atol).v0
    for _ in range(MAX_DOUBLINGS):
        lam *= 2.0
        v = solve_backward(m, path, lam, method="ode", rtol=rtol, atol=atol).v0
        if abs(v - prev) <= tol * abs(v):
            return v
        prev = v
    raise NonConvergenceError(f"v(0, lambda) did not stabilise after {MAX_DOUBLINGS} doublings")


def quenched_survival(m: BranchingMechanism, path: EnvironmentPath, z: float,
                      t: Optional[float] = None, rtol: float = RTOL, atol: float = ATOL) -> float:
    """P(Z_t > 0 | K) = 1 - exp(-z e^{-x} v_t(0, inf, Kbar)), x the path start."""
    if not (z > 0):
        raise ValueError("initial mass z must be positive")
    v = v_infinity(m, path, t=t, rtol=rtol, atol=atol)
    return -math.expm1(-z * math.exp(-path.start) * v)


def survival_from_log_functional(beta: float, c: float, log_i, z: float, x: float = 0.0):
    """Quenched survival for exactly stable psi0 from log I_t(beta Kbar), vectorised."""
    log_v = -(math.log(beta * c) + np.asarray(log_i, dtype=float)) / beta
    return -np.expm1(-z * np.exp(log_v - x))
