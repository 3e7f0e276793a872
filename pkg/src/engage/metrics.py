"""Engagement metrics, A/B improvement statistics and regression fits.

All metric functions return a MetricValue; uncertainty is computed only when
the caller passes a seeded random generator (bootstrap) or where a closed
form exists (binomial, delta method). Empty samples raise NoSamplesError
rather than returning NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .convlog import Conversation, UserActivity
from .errors import (
    DegenerateLikelihoodError,
    InsufficientTailError,
    NoSamplesError,
    SingularDesignError,
)

DEFAULT_MCL_CAP = 100
DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class MetricValue:
    value: float
    stderr: float | None = None
    n: int = 0


@dataclass(frozen=True)
class RetentionCurve:
    days: tuple[int, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if len(self.days) != len(self.fractions):
            raise ValueError("days and fractions must have equal length")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("days must be strictly increasing")


@dataclass(frozen=True)
class FitResult:
    parameters: dict[str, float]
    parameter_stderrs: dict[str, float]
    residual_norm: float = 0.0

    def __post_init__(self):
        if set(self.parameters) != set(self.parameter_stderrs):
            raise ValueError("every parameter needs a matching stderr")


def _bootstrap_stderr(values: np.ndarray, statistic, rng: np.random.Generator,
                      n_boot: int) -> float:
    n = len(values)
    stats = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        stats[b] = statistic(values[idx])
    return float(np.std(stats, ddof=1))


def mcl_from_lengths(lengths, cap: int | None = DEFAULT_MCL_CAP,
                     rng: np.random.Generator | None = None,
                     n_boot: int = DEFAULT_BOOTSTRAP) -> MetricValue:
    """Capped mean over raw conversation lengths (see mcl)."""
    if cap is not None and cap < 1:
        raise ValueError("cap must be >= 1")
    lengths = np.asarray(lengths, dtype=float)
    if cap is not None:
        lengths = lengths[lengths <= cap]
    if lengths.size == 0:
        raise NoSamplesError("no conversations within cap")
    stderr = None
    if rng is not None and lengths.size >= 2:
        stderr = _bootstrap_stderr(lengths, np.mean, rng, n_boot)
    return MetricValue(float(lengths.mean()), stderr, int(lengths.size))


def mcl(dataset: list[Conversation], cap: int | None = DEFAULT_MCL_CAP,
        rng: np.random.Generator | None = None,
        n_boot: int = DEFAULT_BOOTSTRAP) -> MetricValue:
    """Mean conversation length over conversations of at most `cap` turns.

    Conversations longer than cap are dropped from numerator and denominator;
    the raw mean of a heavy-tailed length distribution does not converge, so
    the capped form is the default. Pass cap=None for the plain mean.
    """
    return mcl_from_lengths([len(c.turns) for c in dataset], cap, rng, n_boot)


def retry_rate(dataset: list[Conversation],
               rng: np.random.Generator | None = None,
               n_boot: int = DEFAULT_BOOTSTRAP) -> MetricValue:
    """Fraction of responses regenerated at least once.

    Uncertainty is a cluster bootstrap over conversations: responses within
    one conversation are correlated.
    """
    retries = np.array([sum(t.response.regenerated for t in c.turns) for c in dataset],
                       dtype=float)
    counts = np.array([len(c.turns) for c in dataset], dtype=float)
    total = counts.sum()
    if total == 0:
        raise NoSamplesError("no responses in dataset")
    value = float(retries.sum() / total)
    stderr = None
    if rng is not None and len(dataset) >= 2:
        n = len(dataset)
        stats = np.empty(n_boot)
        for b in range(n_boot):
            idx = rng.integers(0, n, size=n)
            denom = counts[idx].sum()
            stats[b] = retries[idx].sum() / denom if denom else 0.0
        stderr = float(np.std(stats, ddof=1))
    return MetricValue(value, stderr, int(total))


def star_rating_at_least(dataset: list[Conversation], s: int) -> MetricValue:
    """Among rated responses, the fraction rated >= s stars."""
    if s not in (1, 2, 3, 4):
        raise ValueError("s must be in {1,2,3,4}")
    ratings = [t.response.star_rating for c in dataset for t in c.turns
               if t.response.star_rating is not None]
    if not ratings:
        raise NoSamplesError("no rated responses")
    n = len(ratings)
    p = sum(r >= s for r in ratings) / n
    stderr = math.sqrt(p * (1 - p) / n) if n >= 2 else None
    return MetricValue(p, stderr, n)


def retention(users: list[UserActivity], day_x: int,
              observed_through=None) -> MetricValue:
    """Fraction of users active exactly day_x days after their first day.

    Users whose observation window (bounded by observed_through, default the
    latest active date in the cohort) does not reach day_x are excluded; if
    nobody is observable that far out this is a NoSamplesError, not 0.
    """
    if day_x < 1:
        raise ValueError("day_x must be >= 1")
    if not users:
        raise NoSamplesError("empty cohort")
    if observed_through is None:
        observed_through = max(max(u.active_dates) for u in users)
    from datetime import timedelta

    delta = timedelta(days=day_x)
    eligible = [u for u in users if u.first_conversation_date + delta <= observed_through]
    if not eligible:
        raise NoSamplesError(f"no user observable at day {day_x}")
    n = len(eligible)
    hits = sum((u.first_conversation_date + delta) in u.active_dates for u in eligible)
    p = hits / n
    stderr = math.sqrt(p * (1 - p) / n) if n >= 2 else None
    return MetricValue(p, stderr, n)


def relative_improvement(treatment: MetricValue, baseline: MetricValue) -> MetricValue:
    """Percent improvement of treatment over baseline, delta-method stderr."""
    if baseline.value == 0:
        raise ZeroDivisionError("baseline metric is zero")
    value = 100.0 * (treatment.value - baseline.value) / baseline.value
    stderr = None
    if treatment.stderr is not None and baseline.stderr is not None:
        # first-order propagation, arms independent
        dt = 100.0 / baseline.value
        db = -100.0 * treatment.value / baseline.value**2
        stderr = math.sqrt((dt * treatment.stderr) ** 2 + (db * baseline.stderr) ** 2)
    return MetricValue(value, stderr, min(treatment.n, baseline.n))


# ---------------------------------------------------------------------------
# Regression fits


def _wls(x_design: np.ndarray, y: np.ndarray, weights: np.ndarray | None,
         names: list[str]) -> FitResult:
    n, p = x_design.shape
    if weights is None:
        w = np.ones(n)
        known_variance = False
    else:
        w = np.asarray(weights, dtype=float)
        known_variance = True
    xtwx = x_design.T @ (w[:, None] * x_design)
    if np.linalg.matrix_rank(xtwx) < p:
        raise SingularDesignError("design matrix is rank deficient")
    xtwy = x_design.T @ (w * y)
    beta = np.linalg.solve(xtwx, xtwy)
    resid = y - x_design @ beta
    wrss = float(resid @ (w * resid))
    cov = np.linalg.inv(xtwx)
    if not known_variance:
        dof = max(n - p, 1)
        cov = cov * (wrss / dof)
    stderrs = np.sqrt(np.diag(cov))
    return FitResult(
        parameters={k: float(v) for k, v in zip(names, beta)},
        parameter_stderrs={k: float(v) for k, v in zip(names, stderrs)},
        residual_norm=math.sqrt(wrss),
    )


def fit_log_linear(points: list[tuple[float, float]],
                   weights: list[float] | None = None) -> FitResult:
    """Least squares fit of y = m*log10(x) + c; weights are 1/sigma^2."""
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if np.any(x <= 0):
        raise ValueError("x values must be positive")
    if len(set(x.tolist())) < 2:
        raise SingularDesignError("all x values equal")
    design = np.column_stack([np.log10(x), np.ones_like(x)])
    w = np.asarray(weights, dtype=float) if weights is not None else None
    return _wls(design, y, w, ["m", "c"])


def fit_additive_improvement(
    observations: list[tuple[bool, bool, float, float]]
) -> FitResult:
    """Weighted fit of y = b*[alt model] + c*[reward model], no intercept.

    Each observation is (has_alt_model, has_reward_model, y_percent, sigma);
    weights are 1/sigma^2.
    """
    if len(observations) < 2:
        raise ValueError("need at least 2 observations")
    design = np.array([[float(a), float(r)] for a, r, _, _ in observations])
    y = np.array([obs[2] for obs in observations], dtype=float)
    sigma = np.array([obs[3] for obs in observations], dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return _wls(design, y, 1.0 / sigma**2, ["b", "c"])


# ---------------------------------------------------------------------------
# Discrete power law (Zeta) tail


def zeta_log_likelihood(a: float, tail: np.ndarray, x_min: int) -> float:
    return float(-a * np.log(tail).sum() - len(tail) * np.log(special.zeta(a, x_min)))


def fit_power_law_tail(lengths: list[int], x_min: int) -> FitResult:
    """MLE exponent of a discrete power law P(n) ~ n^-a fitted to the tail.

    Returns the slope in the negative convention (slope = -a) with a stderr
    from the observed Fisher information.
    """
    if x_min < 1:
        raise ValueError("x_min must be >= 1")
    tail = np.array([x for x in lengths if x >= x_min], dtype=float)
    if tail.size < 100:
        raise InsufficientTailError(
            f"only {tail.size} samples >= {x_min}; need at least 100")
    if np.all(tail == tail[0]):
        raise DegenerateLikelihoodError("all tail samples equal")
    neg_ll = lambda a: -zeta_log_likelihood(a, tail, x_min)
    res = optimize.minimize_scalar(neg_ll, bounds=(1.0001, 20.0), method="bounded",
                                   options={"xatol": 1e-8})
    a_hat = float(res.x)
    # observed Fisher information = n * d2/da2 log zeta(a, x_min)
    h = 1e-5
    lz = lambda a: math.log(special.zeta(a, x_min))
    d2 = (lz(a_hat + h) - 2 * lz(a_hat) + lz(a_hat - h)) / h**2
    info = tail.size * d2
    stderr = 1.0 / math.sqrt(info) if info > 0 else float("inf")
    return FitResult(parameters={"slope": -a_hat},
                     parameter_stderrs={"slope": stderr},
                     residual_norm=float(-res.fun))


def sample_zeta(exponent: float, size: int, rng: np.random.Generator,
                x_min: int = 1) -> np.ndarray:
    """Draw integers from P(n) ~ n^-exponent for n >= x_min (inverse CDF).

    Exact: the quantile is found by vectorized binary search on the Hurwitz
    zeta survival function.
    """
    if exponent <= 1:
        raise ValueError("exponent must be > 1 for a proper distribution")
    total = special.zeta(exponent, x_min)
    u = rng.random(size)
    # target survival mass strictly above the sampled value
    target = (1.0 - u) * total
    lo = np.full(size, x_min, dtype=np.int64)
    hi = np.full(size, x_min + 1, dtype=np.int64)
    # exponential bracket: find hi with zeta(a, hi+1) <= target
    while True:
        mask = special.zeta(exponent, hi + 1) > target
        if not mask.any():
            break
        hi[mask] = hi[mask] * 2
    while np.any(hi > lo):
        mid = (lo + hi) // 2
        take_hi = special.zeta(exponent, mid + 1) <= target
        hi = np.where(take_hi, np.minimum(hi, mid), hi)
        lo = np.where(take_hi, lo, mid + 1)
    return lo
