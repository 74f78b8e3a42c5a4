"""Chi-square distribution functions used by the energy detector.

The noncentral CDF is evaluated as a Poisson mixture of central CDFs,

    F(x; k, lam) = sum_i exp(-lam/2) (lam/2)^i / i! * F(x; k + 2i),

summed outward from the Poisson mode so that very large noncentralities
(lam ~ 1e4) do not underflow the leading weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class ConvergenceError(ArithmeticError):
    """Series truncation did not reach the requested tail bound."""


@dataclass(frozen=True)
class SeriesControl:
    abs_tol: float = 1e-12
    max_terms: int = 10_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and math.isfinite(self.abs_tol)):
            raise ValueError(f"abs_tol must be positive, got {self.abs_tol}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 1:
            raise ValueError(f"max_terms must be a positive integer, got {self.max_terms}")


DEFAULT_SERIES = SeriesControl()


def _check_finite(**kwargs):
    for name, value in kwargs.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")


def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a)."""
    _check_finite(a=a, x=x)
    if a <= 0:
        raise ValueError(f"shape a must be > 0, got {a}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return float(min(1.0, max(0.0, special.gammainc(a, x))))


def _check_dof(dof) -> int:
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    return int(dof)


def chi2_cdf(dof: int, x: float) -> float:
    dof = _check_dof(dof)
    _check_finite(x=x)
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return reg_lower_gamma(dof / 2.0, x / 2.0)


def noncentral_chi2_cdf(dof: int, lam: float, x: float,
                        ctl: SeriesControl = DEFAULT_SERIES) -> float:
    """CDF of the noncentral chi-square law with `dof` degrees of freedom.

    Terms are accumulated in blocks around the Poisson(lam/2) mode until the
    Poisson mass not yet visited is at most ``ctl.abs_tol``; since every central
    CDF is bounded by 1 that mass bounds the truncation error.
    """
    dof = _check_dof(dof)
    _check_finite(lam=lam, x=x)
    if lam < 0:
        raise ValueError(f"noncentrality must be >= 0, got {lam}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0:
        return 0.0
    half = lam / 2.0
    if half == 0:  # also catches subnormal lam that underflows on halving
        return chi2_cdf(dof, x)

    mode = int(math.floor(half))
    log_half = math.log(half)

    def weights(idx):
        return np.exp(-half + idx * log_half - special.gammaln(idx + 1.0))

    lo, hi = mode, mode  # visited range is [lo, hi)
    total = 0.0
    mass = 0.0
    block = 32
    used = 0
    while True:
        new_hi = hi + block
        new_lo = max(0, lo - block)
        idx = np.concatenate([np.arange(new_lo, lo), np.arange(hi, new_hi)]).astype(float)
        w = weights(idx)
        total += float(np.dot(w, special.gammainc(dof / 2.0 + idx, x / 2.0)))
        mass += float(w.sum())
        used += idx.size
        lo, hi = new_lo, new_hi
        if 1.0 - mass <= ctl.abs_tol:
            break
        if used >= ctl.max_terms:
            raise ConvergenceError(
                f"noncentral chi-square series: tail mass {1.0 - mass:.3e} "
                f"after {used} terms exceeds abs_tol={ctl.abs_tol:g}")
    return min(1.0, max(0.0, total))
