"""Performative credit-scoring environment.

Applicants respond to a deployed threshold ``lam`` by lowering their score by
``s`` whenever that would put them inside the approval region
``score <= 1 - lam``.  Base scores are drawn from class-conditional Beta
distributions, so the sensitivity bound gamma = p * C (base rate times the
maximum positive-class score density) is available in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, UnboundedDensityError
from .risk import DEFAULT_EPSILON, SampleBatch, ThresholdWindow

COST_OFF = "off"
COST_UNIFORM = "uniform"


@dataclass(frozen=True)
class CreditEnvConfig:
    p_pos: float = 0.432
    pos_score: tuple = (2.0, 2.0)
    neg_score: tuple = (2.0, 5.0)
    shift_s: float = 0.3
    epsilon: float = DEFAULT_EPSILON
    cost_model: str = COST_OFF

    def __post_init__(self):
        object.__setattr__(self, "pos_score", tuple(float(x) for x in self.pos_score))
        object.__setattr__(self, "neg_score", tuple(float(x) for x in self.neg_score))
        # p_pos = 0 is allowed as a degenerate loss-free environment.
        if not 0 <= self.p_pos < 1:
            raise InvalidParameterError(f"p_pos must be in [0, 1), got {self.p_pos}")
        if not 0 < self.shift_s < 1:
            raise InvalidParameterError(f"shift_s must be in (0, 1), got {self.shift_s}")
        for name in ("pos_score", "neg_score"):
            shape = getattr(self, name)
            if len(shape) != 2 or min(shape) <= 0:
                raise InvalidParameterError(f"{name} must be two positive Beta shapes, got {shape}")
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.cost_model not in (COST_OFF, COST_UNIFORM):
            raise InvalidParameterError(f"cost_model must be 'off' or 'uniform', got {self.cost_model!r}")

    @classmethod
    def expected_risk_default(cls):
        """Class-balanced setting used for expected-risk control."""
        return cls()

    @classmethod
    def quantile_default(cls):
        """Imbalanced setting with uniform realized costs, used for CVaR control."""
        return cls(p_pos=0.064, cost_model=COST_UNIFORM)

    def to_dict(self) -> dict:
        return {
            "p_pos": self.p_pos,
            "pos_score": list(self.pos_score),
            "neg_score": list(self.neg_score),
            "shift_s": self.shift_s,
            "epsilon": self.epsilon,
            "cost_model": self.cost_model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CreditEnvConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class SensitivityEstimate:
    gamma_hat: float
    p_used: float
    c_max: float
    bins: int


def shift_score(f0, lambda_deploy: float, s: float):
    """Strategic response: drop by ``s`` (floored at 0) if that reaches the approval region."""
    f0 = np.asarray(f0, dtype=np.float64)
    shifted = np.where(f0 - s <= 1.0 - lambda_deploy, np.maximum(0.0, f0 - s), f0)
    return float(shifted) if shifted.ndim == 0 else shifted


class CreditEnvironment:
    """Synthetic performative environment D(lam) for the credit-approval loss."""

    def __init__(self, config: CreditEnvConfig | None = None):
        self.config = config or CreditEnvConfig()

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    @property
    def window(self) -> ThresholdWindow:
        return ThresholdWindow.for_epsilon(self.config.epsilon)

    def base_draw(self, n: int, rng: np.random.Generator):
        """Unshifted (scores, labels, costs)."""
        cfg = self.config
        labels = (rng.random(n) < cfg.p_pos).astype(np.int8)
        pos = rng.beta(*cfg.pos_score, size=n)
        neg = rng.beta(*cfg.neg_score, size=n)
        scores = np.where(labels == 1, pos, neg)
        if cfg.cost_model == COST_UNIFORM:
            costs = np.where(labels == 1, rng.random(n), 1.0)
        else:
            costs = np.ones(n)
        return scores, labels, costs

    def sample(self, lambda_deploy: float, n: int, rng: np.random.Generator) -> SampleBatch:
        if n < 1:
            raise InvalidParameterError(f"n must be >= 1, got {n}")
        scores, labels, costs = self.base_draw(n, rng)
        return SampleBatch(
            scores=shift_score(scores, lambda_deploy, self.config.shift_s),
            labels=labels,
            costs=costs,
            lambda_deploy=lambda_deploy,
        )


class EmpiricalCreditEnvironment(CreditEnvironment):
    """Resamples user-supplied (score, label) pairs, then applies the same shift."""

    def __init__(self, scores, labels, config: CreditEnvConfig | None = None):
        super().__init__(config)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int8)
        if self.scores.size == 0 or self.scores.size != self.labels.size:
            raise InvalidInputError("need equally many scores and labels, at least one")

    def base_draw(self, n, rng):
        idx = rng.integers(0, self.scores.size, size=n)
        labels = self.labels[idx]
        if self.config.cost_model == COST_UNIFORM:
            costs = np.where(labels == 1, rng.random(n), 1.0)
        else:
            costs = np.ones(n)
        return self.scores[idx], labels, costs


def sample_batch(config: CreditEnvConfig, lambda_deploy: float, n: int, rng) -> SampleBatch:
    return CreditEnvironment(config).sample(lambda_deploy, n, rng)


def estimate_gamma(samples, p_rate: float, bins: int = 20) -> SensitivityEstimate:
    """gamma_hat = p * (max histogram density of positive-class scores on [0, 1])."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("no positive-class scores to estimate from")
    if int(bins) != bins or bins < 1:
        raise InvalidParameterError(f"bins must be a positive integer, got {bins}")
    counts, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    c_max = float(counts.max() / (x.size * (1.0 / bins)))
    return SensitivityEstimate(gamma_hat=p_rate * c_max, p_used=p_rate, c_max=c_max, bins=int(bins))


def beta_max_density(a: float, b: float) -> float:
    if a < 1 or b < 1:
        raise UnboundedDensityError(f"Beta({a}, {b}) has unbounded density")
    if a == 1 and b == 1:
        return 1.0
    mode = (a - 1) / (a + b - 2)
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    return math.exp(log_norm) * mode ** (a - 1) * (1 - mode) ** (b - 1)


def analytic_gamma(config: CreditEnvConfig) -> float:
    return config.p_pos * beta_max_density(*config.pos_score)


def load_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``score,label`` CSV (header required)."""
    path = Path(path)
    scores, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["score", "label"]:
            raise InvalidInputError(f"{path}: line 1: expected header 'score,label', got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InvalidInputError(f"{path}: line {line}: expected 2 columns, got {len(row)}")
            try:
                score = float(row[0])
                label_f = float(row[1])
            except ValueError:
                raise InvalidInputError(f"{path}: line {line}: could not parse {row}") from None
            if not 0.0 <= score <= 1.0:
                raise InvalidInputError(f"{path}: line {line}: score {score} outside [0, 1]")
            if label_f not in (0.0, 1.0):
                raise InvalidInputError(f"{path}: line {line}: label {row[1]!r} is not 0 or 1")
            scores.append(score)
            labels.append(int(label_f))
    if not scores:
        raise InvalidInputError(f"{path}: no data rows after header")
    return np.array(scores), np.array(labels, dtype=np.int8)
