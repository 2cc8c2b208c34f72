"""The series rho_hat(lam) = sum_k prod_{i<=k} f(i)/(lam+f(i)) and its root.

Truncated sums are enclosed between two comparison tails. With declared
bounds C_lo*i + b_lo <= f(i) <= C_hi*i + b_hi, the factor x/(lam+x) is
increasing in x, so the tail after T terms lies between a_T * S(C_lo, b_lo)
and a_T * S(C_hi, b_hi), where a_T is the T-th term and

    S(C, b) = sum_{j>=1} prod_{i=T+1}^{T+j} (C i + b)/(lam + C i + b)
            = (T + 1 + b/C) / (lam/C - 1)    if C > 0, lam > C
            = b / lam                        if C = 0

(the first from sum_j Gamma(x+j)/Gamma(y+j) = Gamma(x)/((y-x-1)Gamma(y-1))).
The reported value is the midpoint of the enclosure and its half-width is
the tail bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .attach_model import AttachmentFunction, DomainError

TERM_CAP = 10**7
DOMAIN_MARGIN = 1e-9


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, partial_sum):
        super().__init__(msg)
        self.partial_sum = partial_sum


class MalthusianConditionError(RuntimeError):
    """rho_hat never exceeds 1 on the admissible domain."""


@dataclass
class SeriesEval:
    value: float
    tail_bound: float
    terms: int
    lower: float
    upper: float
    heuristic: bool = False


@dataclass
class MalthusianSolution:
    lambda_star: float
    truncation_depth: int
    tail_bound: float
    bracket: tuple[float, float]
    lambda_floor: float
    heuristic_tail: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bracket"] = list(self.bracket)
        return d


def _comparison_tail(C: float, b: float, lam: float, T: int) -> float:
    if C <= 0:
        return b / lam
    if lam <= C:
        return math.inf
    return (T + 1 + b / C) / (lam / C - 1)


def _upper_factor(f: AttachmentFunction, lam: float, T: int) -> tuple[float, bool]:
    """Tail multiplier (times a_T) and whether it is only heuristic."""
    best = _comparison_tail(*f.linear_bound, lam, T)
    if f.sup_bound is not None:
        best = min(best, f.sup_bound / lam)
    if math.isfinite(best):
        return best, False
    # frozen-ratio geometric tail at the truncation point: not a bound for
    # non-monotone custom f, flagged to the caller
    C, b = f.linear_bound
    return (C * T + b) / lam, True


def _series(f: AttachmentFunction, lam: float, tol: float, target: Optional[float] = None,
            cap: int = TERM_CAP) -> SeriesEval:
    """Sum terms until the enclosure is narrower than 2*tol.

    With `target` set, stop as soon as the enclosure excludes it (sign query).
    """
    lo_C, lo_b = f.lower_bound
    lower_infinite = lo_C > 0 and lam <= lo_C
    partial = 0.0
    log_a = 0.0
    T = 0
    chunk = 256
    while True:
        idx = np.arange(T + 1, T + chunk + 1)
        fv = f.values(idx)
        logs = np.cumsum(np.log(fv) - np.log(lam + fv)) + log_a
        terms = np.exp(logs)
        partial = math.fsum((partial, math.fsum(terms)))
        T += chunk
        log_a = float(logs[-1])
        a_T = math.exp(log_a)
        if lower_infinite:
            if target is not None and partial > target:
                return SeriesEval(math.inf, math.inf, T, partial, math.inf)
        else:
            up_fac, heur = _upper_factor(f, lam, T)
            lo = partial + a_T * _comparison_tail(lo_C, lo_b, lam, T)
            hi = partial + a_T * up_fac
            half = 0.5 * (hi - lo)
            if target is not None and (lo > target or hi < target):
                return SeriesEval(0.5 * (lo + hi), float(half), T, lo, hi, heur)
            if half <= tol or a_T == 0.0:
                return SeriesEval(0.5 * (lo + hi), float(max(half, 0.0)), T, lo, hi, heur)
        if T >= cap:
            raise NonConvergenceError(
                f"rho_hat({lam}) did not converge within {cap} terms", partial
            )
        chunk = min(chunk * 2, 1 << 20)


def rho_hat(f: AttachmentFunction, lam: float, tol: float = 1e-12) -> tuple[float, float]:
    """(value, tail_bound) with |rho_hat(lam) - value| <= tail_bound <= tol."""
    if not lam > f.limsup_bound * (1 + DOMAIN_MARGIN) or lam <= 0:
        raise DomainError(f"lambda={lam} must exceed the limsup bound {f.limsup_bound}")
    ev = _series(f, lam, tol)
    if ev.heuristic:
        warnings.warn("rho_hat tail bound is heuristic for this attachment function")
    return ev.value, ev.tail_bound


def rho_hat_eval(f: AttachmentFunction, lam: float, tol: float = 1e-12) -> SeriesEval:
    if not lam > f.limsup_bound * (1 + DOMAIN_MARGIN) or lam <= 0:
        raise DomainError(f"lambda={lam} must exceed the limsup bound {f.limsup_bound}")
    return _series(f, lam, tol)


def _above_one(f: AttachmentFunction, lam: float) -> bool:
    ev = _series(f, lam, 1e-15, target=1.0)
    if ev.lower > 1.0:
        return True
    if ev.upper < 1.0:
        return False
    return ev.value >= 1.0


def solve_malthusian(f: AttachmentFunction, tol: float = 1e-9) -> MalthusianSolution:
    """Bisection for rho_hat(lam*) = 1 using that rho_hat is decreasing."""
    # lam* >= f_star because rho_hat(f_star) >= sum 2^-k = 1
    lo = max(f.f_star, f.limsup_bound * (1 + DOMAIN_MARGIN) + tol)
    if lo > f.f_star and not _above_one(f, lo):
        raise MalthusianConditionError(
            f"rho_hat({lo:g}) <= 1 at the lower end of the domain: the Malthusian "
            "condition fails numerically (root at or below the limsup bound)"
        )
    hi = 2.0 * lo
    while _above_one(f, hi):
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise MalthusianConditionError("no upper bracket found")
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if _above_one(f, mid):
            lo = mid
        else:
            hi = mid
    # one secant step inside the final bracket
    r_lo = _series(f, lo, 1e-15).value - 1.0
    r_hi = _series(f, hi, 1e-15).value - 1.0
    lam = 0.5 * (lo + hi)
    if math.isfinite(r_lo) and math.isfinite(r_hi) and r_lo > r_hi:
        lam = min(max(lo - r_lo * (hi - lo) / (r_hi - r_lo), lo), hi)
    ev = _series(f, lam, 1e-12)
    return MalthusianSolution(
        lambda_star=lam,
        truncation_depth=ev.terms,
        tail_bound=ev.tail_bound,
        bracket=(lo, hi),
        lambda_floor=max(f.f_star, f.limsup_bound),
        heuristic_tail=ev.heuristic,
    )


def check_assumption_limsup(f: AttachmentFunction, sol: MalthusianSolution,
                            tol: float = 1e-9) -> bool:
    return f.limsup_bound < sol.lambda_star - tol


def degree_pmf(f: AttachmentFunction, sol: MalthusianSolution, k_max: int):
    """(p_1..p_kmax, residual) with p_k = lam/(lam+f(k)) prod_{i<k} f(i)/(lam+f(i)).

    The partial sums telescope to 1 - prod_{i<=k_max} f(i)/(lam+f(i)); the
    residual is returned as that product.
    """
    lam = sol.lambda_star
    fv = f.values(np.arange(1, k_max + 1))
    log_q = np.log(fv) - np.log(lam + fv)
    log_prev = np.concatenate([[0.0], np.cumsum(log_q)[:-1]])
    p = np.exp(log_prev) * (lam / (lam + fv))
    residual = float(np.exp(log_prev[-1] + log_q[-1]))
    return p, residual
