"""Domain types and exact empirical risk for the threshold-ramp loss.

The loss of a record at evaluation threshold ``lam`` is

    label * cost * clip(((1 + eps) - lam - score) / (2 * eps), 0, 1)

i.e. a smoothed indicator that a positive (delinquent) record falls inside
the approval region ``score <= 1 - lam``.  It is non-increasing in ``lam`` and
is exactly zero at ``lam = 1 + eps`` for any score in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

DEFAULT_EPSILON = 1e-4


@dataclass(frozen=True)
class ThresholdWindow:
    lambda_min: float
    lambda_safe: float

    def __post_init__(self):
        if not self.lambda_min < self.lambda_safe:
            raise InvalidParameterError(
                f"lambda_min ({self.lambda_min}) must be below lambda_safe ({self.lambda_safe})"
            )

    @classmethod
    def for_epsilon(cls, epsilon: float = DEFAULT_EPSILON, lambda_min: float = 0.0):
        """Window [lambda_min, 1 + epsilon]; the right edge has zero loss exactly."""
        return cls(lambda_min, 1.0 + epsilon)

    @property
    def length(self) -> float:
        return self.lambda_safe - self.lambda_min


@dataclass(frozen=True)
class RiskSpec:
    """User targets: risk level, tightness slack, failure budget, guard, batch size."""

    alpha: float
    delta_alpha: float
    delta: float
    tau: float
    n: int

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidParameterError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must be in (0, 1), got {self.delta}")
        if not self.delta_alpha > 0:
            raise InvalidParameterError(f"delta_alpha must be positive, got {self.delta_alpha}")
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParameterError(f"n must be an integer >= 2, got {self.n}")


@dataclass(frozen=True)
class SampleRecord:
    score: float
    label: int
    cost: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"score must be in [0, 1], got {self.score}")
        if self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0 or 1, got {self.label}")
        if not 0.0 <= self.cost <= 1.0:
            raise InvalidInputError(f"cost must be in [0, 1], got {self.cost}")


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Columnar batch of i.i.d. draws from the distribution induced by ``lambda_deploy``."""

    scores: np.ndarray
    labels: np.ndarray
    costs: np.ndarray
    lambda_deploy: float
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        scores = _frozen(self.scores, np.float64)
        labels = _frozen(self.labels, np.int8)
        costs = _frozen(self.costs, np.float64)
        if not (len(scores) == len(labels) == len(costs)):
            raise InvalidInputError("scores, labels and costs must have equal length")
        if len(scores) and (scores.min() < 0.0 or scores.max() > 1.0):
            raise InvalidInputError("scores must lie in [0, 1]")
        if len(labels) and not np.isin(labels, (0, 1)).all():
            raise InvalidInputError("labels must be 0 or 1")
        if len(costs) and (costs.min() < 0.0 or costs.max() > 1.0):
            raise InvalidInputError("costs must lie in [0, 1]")
        weights = _frozen(labels * costs, np.float64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "lambda_deploy", float(self.lambda_deploy))
        object.__setattr__(self, "_weights", weights)

    @classmethod
    def from_records(cls, records, lambda_deploy: float) -> "SampleBatch":
        records = list(records)
        return cls(
            scores=[r.score for r in records],
            labels=[r.label for r in records],
            costs=[r.cost for r in records],
            lambda_deploy=lambda_deploy,
        )

    @property
    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(float(s), int(y), float(c))
            for s, y, c in zip(self.scores, self.labels, self.costs)
        ]

    def __len__(self) -> int:
        return len(self.scores)

    def losses(self, lambda_eval: float, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
        """Per-record losses at ``lambda_eval``."""
        return self._weights * _ramp(self.scores, lambda_eval, epsilon)


def _check_epsilon(epsilon: float) -> None:
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")


def _ramp(score, lambda_eval, epsilon):
    # (1 + eps) - lam is formed first so that lam = 1 + eps gives exactly 0.
    return np.clip((((1.0 + epsilon) - lambda_eval) - score) / (2.0 * epsilon), 0.0, 1.0)


def loss_eval(record: SampleRecord, lambda_eval: float, epsilon: float = DEFAULT_EPSILON) -> float:
    _check_epsilon(epsilon)
    if record.label == 0:
        return 0.0
    return float(record.cost * _ramp(record.score, lambda_eval, epsilon))


def empirical_risk(batch: SampleBatch, lambda_eval: float, epsilon: float = DEFAULT_EPSILON) -> float:
    _check_epsilon(epsilon)
    if len(batch) == 0:
        raise InvalidInputError("empirical risk of an empty batch")
    return float(np.mean(batch.losses(lambda_eval, epsilon)))


def risk_curve(batch: SampleBatch, grid, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Empirical risk at every point of an ascending threshold grid.

    Records are sorted by score once.  For each grid point the records lying
    fully inside the approval region contribute through a prefix sum of their
    weights; only records on the ramp itself (a score window of width 2*eps)
    are evaluated individually, with the same expression as ``loss_eval``.
    With grid spacing of order eps each record sits on O(1) ramps, so the total
    cost is O((n + G) log n).
    """
    _check_epsilon(epsilon)
    if len(batch) == 0:
        raise InvalidInputError("risk curve of an empty batch")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        return np.zeros(0)
    if np.any(np.diff(grid) < 0):
        raise InvalidInputError("grid must be sorted ascending")

    n = len(batch)
    w = batch._weights
    keep = w > 0
    s = batch.scores[keep]
    w = w[keep]
    if s.size == 0:
        return np.zeros(grid.size)
    order = np.argsort(s, kind="stable")
    s = s[order]
    w = w[order]
    prefix = np.concatenate(([0.0], np.cumsum(w)))

    # a = (1 + eps) - lam is the zero-loss edge; a - 2 eps the full-loss edge.
    a = (1.0 + epsilon) - grid
    tol = 1e-9
    lo = np.searchsorted(s, a - 2.0 * epsilon - tol, side="left")
    hi = np.searchsorted(s, a + tol, side="right")
    total = prefix[lo]

    counts = hi - lo
    k = int(counts.sum())
    if k:
        seg = np.repeat(np.arange(grid.size), counts)
        starts = np.repeat(lo - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
        idx = starts + np.arange(k)
        vals = w[idx] * _ramp(s[idx], grid[seg], epsilon)
        total = total + np.bincount(seg, weights=vals, minlength=grid.size)
    return total / n
