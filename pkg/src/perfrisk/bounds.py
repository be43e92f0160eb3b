"""Confidence widths c(n, delta') for means of losses bounded in [0, 1].

Every width here is a constant that can be fixed before any data is seen:
sample-dependent constructions are evaluated at the worst-case Bernoulli mean
admissible under the target risk level (see ``precomputed_width``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

from scipy.special import bdtr

from .errors import DegenerateNullError, InvalidParameterError, RegimeError

_NORMAL = NormalDist()

HOEFFDING = "hoeffding"
BERNSTEIN = "bernstein"
HB = "hb"
CLT = "clt"
QUANTILE_CLT = "quantile_clt"
DKW_BAND = "dkw_band"

_KINDS = (HOEFFDING, BERNSTEIN, HB, CLT, QUANTILE_CLT, DKW_BAND)


@dataclass(frozen=True)
class WidthMethod:
    """Which width construction is in force.

    ``quantile_clt`` carries the CVaR tail level ``beta`` and the positive base
    rate ``p_rate``.  ``dkw_band`` is the band-based width for quantile risk; its
    value depends on the weight function and is resolved in :mod:`perfrisk.prc`.
    """

    kind: str
    beta: float | None = None
    p_rate: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameterError(f"unknown width method {self.kind!r}; expected one of {_KINDS}")
        if self.kind == QUANTILE_CLT:
            if self.beta is None or self.p_rate is None:
                raise InvalidParameterError("quantile_clt needs beta and p_rate")
            if not 0 <= self.beta < 1:
                raise InvalidParameterError(f"beta must be in [0, 1), got {self.beta}")
            if not 0 < self.p_rate < 1:
                raise InvalidParameterError(f"p_rate must be in (0, 1), got {self.p_rate}")
            if self.beta > 1 - self.p_rate:
                raise RegimeError(
                    f"beta={self.beta} > 1 - p_rate={1 - self.p_rate}: only the beta <= 1 - p regime is supported"
                )

    @classmethod
    def hoeffding(cls):
        return cls(HOEFFDING)

    @classmethod
    def bernstein(cls):
        return cls(BERNSTEIN)

    @classmethod
    def hoeffding_bentkus(cls):
        return cls(HB)

    @classmethod
    def clt(cls):
        return cls(CLT)

    @classmethod
    def quantile_clt(cls, beta: float, p_rate: float):
        return cls(QUANTILE_CLT, beta=beta, p_rate=p_rate)

    @classmethod
    def dkw_band(cls):
        return cls(DKW_BAND)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == QUANTILE_CLT:
            d.update(beta=self.beta, p_rate=self.p_rate)
        return d

    @classmethod
    def from_dict(cls, d) -> "WidthMethod":
        if isinstance(d, str):
            return cls(d)
        return cls(d["kind"], beta=d.get("beta"), p_rate=d.get("p_rate"))


def normal_quantile(q: float) -> float:
    return _NORMAL.inv_cdf(q)


def _check_delta_prime(delta_prime):
    if not 0 < delta_prime < 1:
        raise InvalidParameterError(f"delta_prime must be in (0, 1), got {delta_prime}")


def _check_n(n, minimum=1):
    if int(n) != n or n < minimum:
        raise InvalidParameterError(f"n must be an integer >= {minimum}, got {n}")


def hoeffding_width(n: int, delta_prime: float) -> float:
    _check_n(n)
    _check_delta_prime(delta_prime)
    return math.sqrt(math.log(2.0 / delta_prime) / (2.0 * n))


def bernstein_width_at(n: int, delta_prime: float, r_hat: float) -> float:
    """Two-sided empirical Bernstein width with the Bernoulli variance r(1 - r)."""
    _check_n(n, 2)
    _check_delta_prime(delta_prime)
    if not 0 <= r_hat <= 1:
        raise InvalidParameterError(f"r_hat must be in [0, 1], got {r_hat}")
    log_term = math.log(4.0 / delta_prime)
    return math.sqrt(2.0 * r_hat * (1.0 - r_hat) * log_term / n) + 7.0 * log_term / (3.0 * (n - 1))


def h1(a: float, b: float) -> float:
    """Bernoulli relative entropy KL(a || b), with 0 * log 0 = 0."""
    out = 0.0
    if a > 0:
        out += a * math.log(a / b)
    if a < 1:
        out += (1 - a) * math.log((1 - a) / (1 - b))
    return out


def hb_pvalue(n: int, r_hat: float, beta_null: float) -> float:
    """Hoeffding-Bentkus p-value for the null ``risk > beta_null``."""
    _check_n(n)
    if not 0 <= r_hat <= 1:
        raise InvalidParameterError(f"r_hat must be in [0, 1], got {r_hat}")
    if not 0 <= beta_null <= 1:
        raise InvalidParameterError(f"beta_null must be in [0, 1], got {beta_null}")
    if beta_null in (0.0, 1.0):
        raise DegenerateNullError(f"beta_null={beta_null} makes h1 degenerate")
    hoeff = math.exp(-n * h1(min(r_hat, beta_null), beta_null))
    # n * r_hat of an empirical mean k / n can land a hair above k.
    k = math.ceil(n * r_hat - 1e-9)
    bentkus = 1.0 if k >= n else math.e * float(bdtr(k, n, beta_null))
    return min(max(min(hoeff, bentkus), 0.0), 1.0)


def _hb_one_sided(n, r_hat, beta_null):
    if beta_null >= 1.0:
        return 0.0  # null "risk > 1" is impossible
    if beta_null <= 0.0:
        return 1.0
    return hb_pvalue(n, r_hat, beta_null)


def _hb_two_sided(n, r_hat, c):
    return _hb_one_sided(n, r_hat, r_hat + c) + _hb_one_sided(n, 1.0 - r_hat, 1.0 - r_hat + c)


def hb_width_at(n: int, delta_prime: float, r_hat: float, tol: float = 1e-6) -> float:
    """Narrowest c whose upper and lower HB p-values sum to at most delta'.

    Bisection on [0, 1]; the upper end of the final bracket is returned.
    """
    _check_n(n)
    _check_delta_prime(delta_prime)
    if not 0 <= r_hat <= 1:
        raise InvalidParameterError(f"r_hat must be in [0, 1], got {r_hat}")
    if _hb_two_sided(n, r_hat, 0.0) <= delta_prime:
        return 0.0
    if _hb_two_sided(n, r_hat, 1.0) > delta_prime:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _hb_two_sided(n, r_hat, mid) <= delta_prime:
            hi = mid
        else:
            lo = mid
    return hi


def clt_width_at(n: int, delta_prime: float, sigma_hat: float) -> float:
    _check_n(n, 2)
    _check_delta_prime(delta_prime)
    if sigma_hat < 0:
        raise InvalidParameterError(f"sigma_hat must be nonnegative, got {sigma_hat}")
    return normal_quantile(1.0 - delta_prime / 2.0) * sigma_hat / math.sqrt(n)


def cvar_clt_width(n: int, delta_prime: float, beta: float, p_rate: float) -> float:
    """CLT width for beta-CVaR of a loss that is 0 w.p. 1-p and U[0,1] otherwise.

    Uses the asymptotic variance (4 - 3p) p / (12 (1 - beta)^2), valid for
    beta <= 1 - p and maximized over p' in [0, p] at p' = p.
    """
    _check_n(n, 2)
    _check_delta_prime(delta_prime)
    if not 0 < p_rate < 1:
        raise InvalidParameterError(f"p_rate must be in (0, 1), got {p_rate}")
    if not 0 <= beta < 1:
        raise InvalidParameterError(f"beta must be in [0, 1), got {beta}")
    if beta > 1 - p_rate:
        raise RegimeError(f"beta={beta} > 1 - p_rate={1 - p_rate} is not supported")
    z = normal_quantile(1.0 - delta_prime / 2.0)
    return z / (1.0 - beta) * math.sqrt((4.0 - 3.0 * p_rate) * p_rate / (12.0 * n))


def precomputed_width(method: WidthMethod, n: int, delta_prime: float, alpha: float) -> float:
    """Constant width used by every calibration iteration.

    Sample-dependent methods are evaluated at r* = min(alpha, 1/2), the
    supremum of the Bernoulli variance over means in [0, alpha].
    """
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must be in (0, 1), got {alpha}")
    r_star = min(alpha, 0.5)
    kind = method.kind
    if kind == HOEFFDING:
        return hoeffding_width(n, delta_prime)
    if kind == BERNSTEIN:
        return bernstein_width_at(n, delta_prime, r_star)
    if kind == HB:
        return hb_width_at(n, delta_prime, r_star)
    if kind == CLT:
        return clt_width_at(n, delta_prime, math.sqrt(r_star * (1.0 - r_star)))
    if kind == QUANTILE_CLT:
        return cvar_clt_width(n, delta_prime, method.beta, method.p_rate)
    raise InvalidParameterError(f"{kind!r} width depends on the weight function; use perfrisk.prc.plan_width")
