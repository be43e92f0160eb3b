"""Empirical loss CDFs, DKW bands and weighted-quantile risk measures.

A risk measure is R_psi(F) = int_0^1 psi(p) F^{-1}(p) dp for a weight
function psi >= 0 integrating to one.  Uniform psi gives the mean, CVaR(beta)
the average of the worst 1 - beta tail.  All integrals against step CDFs are
evaluated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import GuaranteeModeError, InvalidInputError, InvalidParameterError

UNIFORM = "uniform"
CVAR = "cvar"
VAR = "var"
PIECEWISE = "piecewise"


@dataclass(frozen=True, eq=False)
class StepCdf:
    """Right-continuous step CDF with jumps at ``support``."""

    support: np.ndarray
    cum_prob: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64).reshape(-1)
        cum = np.asarray(self.cum_prob, dtype=np.float64).reshape(-1)
        if support.size == 0 or support.size != cum.size:
            raise InvalidInputError("support and cum_prob must be non-empty and of equal length")
        if np.any(np.diff(support) <= 0) or np.any(np.diff(cum) <= 0):
            raise InvalidInputError("support and cum_prob must be strictly increasing")
        if cum[0] <= 0 or cum[-1] != 1.0:
            raise InvalidInputError("cum_prob must lie in (0, 1] and end at 1")
        support.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "cum_prob", cum)

    def __call__(self, w):
        idx = np.searchsorted(self.support, w, side="right")
        vals = np.concatenate(([0.0], self.cum_prob))[idx]
        return float(vals) if np.ndim(vals) == 0 else vals

    @property
    def masses(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.cum_prob)))


@dataclass(frozen=True, eq=False)
class CdfBand:
    lower: StepCdf
    upper: StepCdf
    level: float


@dataclass(frozen=True)
class WeightFn:
    """Weight function psi.  ``breakpoints``/``weights`` only for piecewise."""

    kind: str
    beta: float | None = None
    breakpoints: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in (UNIFORM, CVAR, VAR, PIECEWISE):
            raise InvalidParameterError(f"unknown weight function {self.kind!r}")
        if self.kind in (CVAR, VAR):
            if self.beta is None or not 0 < self.beta < 1:
                raise InvalidParameterError(f"beta must be in (0, 1), got {self.beta}")
        if self.kind == PIECEWISE:
            b = tuple(float(x) for x in self.breakpoints)
            w = tuple(float(x) for x in self.weights)
            object.__setattr__(self, "breakpoints", b)
            object.__setattr__(self, "weights", w)
            if len(b) != len(w) + 1 or len(w) == 0:
                raise InvalidParameterError("need len(breakpoints) == len(weights) + 1")
            if b[0] != 0.0 or b[-1] != 1.0 or any(y <= x for x, y in zip(b, b[1:])):
                raise InvalidParameterError("breakpoints must increase strictly from 0 to 1")
            if min(w) < 0:
                raise InvalidParameterError("weights must be nonnegative")
            total = sum(wi * (y - x) for wi, x, y in zip(w, b, b[1:]))
            if abs(total - 1.0) > 1e-9:
                raise InvalidParameterError(f"weights integrate to {total}, not 1")

    @classmethod
    def uniform(cls):
        return cls(UNIFORM)

    @classmethod
    def cvar(cls, beta: float):
        return cls(CVAR, beta=beta)

    @classmethod
    def var(cls, beta: float):
        return cls(VAR, beta=beta)

    @classmethod
    def piecewise(cls, breakpoints, weights):
        return cls(PIECEWISE, breakpoints=tuple(breakpoints), weights=tuple(weights))

    @property
    def has_density(self) -> bool:
        return self.kind != VAR

    def _pieces(self):
        if self.kind == UNIFORM:
            return (0.0, 1.0), (1.0,)
        if self.kind == CVAR:
            return (0.0, self.beta, 1.0), (0.0, 1.0 / (1.0 - self.beta))
        if self.kind == PIECEWISE:
            return self.breakpoints, self.weights
        raise GuaranteeModeError("VaR has no density")

    def integral(self, a, b):
        """int_a^b psi(p) dp, vectorized over a and b."""
        bps, ws = self._pieces()
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        out = np.zeros(np.broadcast(a, b).shape)
        for w, x0, x1 in zip(ws, bps, bps[1:]):
            if w:
                out += w * np.clip(np.minimum(b, x1) - np.maximum(a, x0), 0.0, None)
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in (CVAR, VAR):
            d["beta"] = self.beta
        if self.kind == PIECEWISE:
            d.update(breakpoints=list(self.breakpoints), weights=list(self.weights))
        return d

    @classmethod
    def from_dict(cls, d) -> "WeightFn":
        if isinstance(d, str):
            return cls(d)
        return cls(
            d["kind"],
            beta=d.get("beta"),
            breakpoints=tuple(d.get("breakpoints", ())),
            weights=tuple(d.get("weights", ())),
        )


class RiskInterval(NamedTuple):
    lower: float
    upper: float
    guaranteed: bool = True


def empirical_cdf(losses) -> StepCdf:
    x = np.sort(np.asarray(losses, dtype=np.float64).reshape(-1))
    if x.size == 0:
        raise InvalidInputError("empirical CDF of an empty sample")
    support, counts = np.unique(x, return_counts=True)
    cum = np.cumsum(counts) / x.size
    cum[-1] = 1.0
    return StepCdf(support, cum)


def dkw_epsilon(n: int, delta_prime: float) -> float:
    if int(n) != n or n < 1:
        raise InvalidParameterError(f"n must be a positive integer, got {n}")
    if not 0 < delta_prime <= 1:
        raise InvalidParameterError(f"delta_prime must be in (0, 1], got {delta_prime}")
    return math.sqrt(math.log(2.0 / delta_prime) / (2.0 * n))


def _compact(support, cum) -> StepCdf:
    # Drop points that carry no mass and truncate once the CDF reaches 1.
    keep = np.concatenate(([cum[0] > 0], np.diff(cum) > 0))
    support, cum = support[keep], cum[keep]
    top = int(np.argmax(cum >= 1.0))
    support, cum = support[: top + 1], cum[: top + 1].copy()
    cum[-1] = 1.0
    return StepCdf(support, cum)


def dkw_band(cdf: StepCdf, n: int, delta_prime: float, lo: float = 0.0, hi: float = 1.0) -> CdfBand:
    """Uniform DKW envelope F_hat -/+ eps for a loss supported in [lo, hi].

    The lower CDF places its missing eps mass at ``hi`` and the upper CDF its
    excess eps mass at ``lo``, so both stay proper CDFs on [lo, hi].
    """
    if cdf.support[0] < lo or cdf.support[-1] > hi:
        raise InvalidInputError(f"CDF support must lie in [{lo}, {hi}]")
    eps = dkw_epsilon(n, delta_prime)

    up_support = np.union1d([lo], cdf.support)
    up_cum = np.minimum(cdf(up_support) + eps, 1.0)
    upper = _compact(up_support, up_cum)

    low_support = np.union1d(cdf.support, [hi])
    low_cum = np.maximum(cdf(low_support) - eps, 0.0)
    low_cum[-1] = 1.0
    lower = _compact(low_support, low_cum)
    return CdfBand(lower=lower, upper=upper, level=delta_prime)


def inverse_cdf(cdf: StepCdf, p: float) -> float:
    """Generalized inverse inf{x : F(x) >= p}."""
    if not 0 < p <= 1:
        raise InvalidParameterError(f"p must be in (0, 1], got {p}")
    idx = int(np.searchsorted(cdf.cum_prob, p, side="left"))
    return float(cdf.support[min(idx, cdf.support.size - 1)])


def quantile_risk(cdf: StepCdf, psi: WeightFn) -> float:
    if psi.kind == VAR:
        return inverse_cdf(cdf, psi.beta)
    if psi.kind == UNIFORM:
        return float(np.dot(cdf.support, cdf.masses))
    left = np.concatenate(([0.0], cdf.cum_prob[:-1]))
    return float(np.dot(cdf.support, psi.integral(left, cdf.cum_prob)))


@lru_cache(maxsize=64)
def _order_weights(psi: WeightFn, n: int) -> np.ndarray:
    edges = np.arange(n + 1) / n
    return psi.integral(edges[:-1], edges[1:])


def quantile_risk_of_losses(losses, psi: WeightFn) -> float:
    """R_psi of the empirical distribution of ``losses`` (same value as via the CDF)."""
    x = np.asarray(losses, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("quantile risk of an empty sample")
    if psi.kind == UNIFORM:
        return float(np.mean(x))
    x = np.sort(x)
    if psi.kind == VAR:
        return float(x[max(math.ceil(x.size * psi.beta - 1e-12), 1) - 1])
    return float(np.dot(x, _order_weights(psi, x.size)))


def risk_interval_from_band(band: CdfBand, psi: WeightFn) -> RiskInterval:
    """Risk bounds induced by a CDF band: the upper CDF gives the lower risk."""
    return RiskInterval(
        lower=quantile_risk(band.upper, psi),
        upper=quantile_risk(band.lower, psi),
        guaranteed=psi.has_density,
    )


def quantile_width_at(n: int, delta_prime: float, psi: WeightFn, losses) -> float:
    """Largest one-sided deviation of the DKW-induced risk bounds from the point estimate."""
    cdf = empirical_cdf(losses)
    band = dkw_band(cdf, n, delta_prime)
    point = quantile_risk(cdf, psi)
    lower, upper, _ = risk_interval_from_band(band, psi)
    return max(upper - point, point - lower, 0.0)


def m_factor(psi: WeightFn, v: float = math.inf) -> float:
    """L^v norm of psi on [0, 1]; the factor multiplying the sensitivity in the guard."""
    if not psi.has_density:
        raise GuaranteeModeError("VaR has no density, so its norm factor is undefined")
    if not v >= 1:
        raise InvalidParameterError(f"v must be >= 1, got {v}")
    bps, ws = psi._pieces()
    if math.isinf(v):
        return float(max(w for w, x0, x1 in zip(ws, bps, bps[1:]) if x1 > x0))
    total = sum(w**v * (x1 - x0) for w, x0, x1 in zip(ws, bps, bps[1:]) if w)
    return float(total ** (1.0 / v))
