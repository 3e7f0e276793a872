"""Seeded synthetic-user simulator and A/B harness.

Each response candidate carries a scalar latent quality q ~ N(0,1); the
deployed policy picks a candidate (at random, by a noisy oracle that sees q,
or by a trained scorer reading the templated text). Users retry bad
responses, occasionally rate them, keep talking with a quality-dependent
probability, and return on later days with a hazard that decreases with the
engagement they experienced. Everything is deterministic for fixed seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone

import numpy as np

from . import metrics as metrics_mod
from .convlog import ChatResponse, Conversation, Turn, UserActivity, extract_rows
from .errors import CalibrationError, ConfigError
from .labeler import LabelStrategy, apply_strategy
from .metrics import MetricValue, RetentionCurve, relative_improvement
from .reward import FeaturizerConfig, TrainConfig, TrainedScorer
from .reward import train as train_scorer

RETENTION_DAY_GRID = (1, 2, 3, 4, 5, 6, 7, 10, 15, 20, 25, 30)

# Hard bound on simulated conversation turns; the length distribution is
# heavy-tailed with infinite mean, so an uncapped loop can effectively hang.
MAX_TURNS = 1000

USER_LINE = "tell me more"
_GOOD_TOKENS = [f"lumen{i}" for i in range(20)]
_BAD_TOKENS = [f"grum{i}" for i in range(20)]


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class UserModel:
    continue_slope: float = 0.3
    continue_offset: float = 0.0
    retry_threshold: float = 0.0
    retry_noise: float = 0.35
    star_cutpoints: tuple[float, float, float] = (-2.4, -1.9, -1.1)
    fatigue: float = 0.0
    latency_penalty: float = 0.0
    retention_base: float = 0.6
    retention_gain: float = 0.35
    # heterogeneity of the per-user continuation offset: lambda ~ Gamma(shape,
    # scale) gives a power-law conversation-length tail with pmf slope
    # -(shape + 1)
    tail_shape: float = 0.8
    tail_scale: float = 3.0
    rating_rate: float = 0.05
    star_noise: float = 0.5
    message_cap: int | None = None  # platform-style per-conversation cap

    def __post_init__(self):
        if self.continue_slope <= 0:
            raise ConfigError("continue_slope must be positive")
        if self.retry_noise <= 0:
            raise ConfigError("retry_noise must be positive")
        if list(self.star_cutpoints) != sorted(self.star_cutpoints):
            raise ConfigError("star_cutpoints must be increasing")
        if not 0 < self.retention_base < 1:
            raise ConfigError("retention_base must be in (0,1)")
        if self.retention_gain < 0 or self.fatigue < 0 or self.latency_penalty < 0:
            raise ConfigError("fatigue/latency_penalty/retention_gain must be >= 0")
        if self.tail_shape <= 0 or self.tail_scale <= 0:
            raise ConfigError("tail_shape and tail_scale must be positive")


@dataclass(frozen=True)
class Policy:
    n: int = 1
    scorer: str = "none"  # none | oracle | trained
    sigma_obs: float = 0.0
    trained_model: TrainedScorer | None = None
    added_latency_s: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.scorer not in ("none", "oracle", "trained"):
            raise ConfigError(f"unknown scorer kind: {self.scorer}")
        if self.scorer == "trained" and self.trained_model is None:
            raise ConfigError("trained policy needs a trained_model")
        if self.sigma_obs < 0 or self.added_latency_s < 0:
            raise ConfigError("sigma_obs and added_latency_s must be >= 0")


@dataclass(frozen=True)
class Population:
    n_users: int
    model: UserModel
    heterogeneity_seed: int = 0


@dataclass
class ConvStats:
    length: int = 0
    n_retries: int = 0
    quality_sum: float = 0.0  # accepted (final) qualities
    selected_sum: float = 0.0  # every selection event, including redraws
    selected_n: int = 0

    @property
    def mean_quality(self) -> float:
        return self.quality_sum / self.length if self.length else 0.0


@dataclass
class ArmResult:
    mcl: MetricValue
    retry_rate: MetricValue
    retention_curve: RetentionCurve
    retention_by_day: dict[int, MetricValue]
    n_users: int
    n_conversations: int
    mean_selected_quality: float


@dataclass
class ABReport:
    baseline: str
    arms: dict[str, ArmResult]
    improvements: dict[str, dict[str, MetricValue]]
    horizon_days: int
    conversations: dict[str, list[Conversation]] | None = None

    def to_dict(self) -> dict:
        def mv(m: MetricValue) -> dict:
            return {"value": m.value, "stderr": m.stderr, "n": m.n}

        return {
            "baseline": self.baseline,
            "horizon_days": self.horizon_days,
            "arms": {
                name: {
                    "mcl": mv(a.mcl),
                    "retry_rate": mv(a.retry_rate),
                    "retention_days": list(a.retention_curve.days),
                    "retention_fractions": list(a.retention_curve.fractions),
                    "n_users": a.n_users,
                    "n_conversations": a.n_conversations,
                    "mean_selected_quality": a.mean_selected_quality,
                }
                for name, a in self.arms.items()
            },
            "improvements": {
                name: {metric: mv(m) for metric, m in imps.items()}
                for name, imps in self.improvements.items()
            },
        }


def _individual_offset(model: UserModel, rng: np.random.Generator) -> float:
    lam = max(rng.gamma(model.tail_shape, model.tail_scale), 1e-12)
    # base per-turn continuation probability is exp(-lam)
    return model.continue_offset - math.log(math.expm1(lam)) if lam < 700 else \
        model.continue_offset - lam


def _response_text(q: float, rng: np.random.Generator) -> str:
    p = _logistic(q)
    good = rng.random(10) < p
    ids = rng.integers(0, 20, 10)
    return " ".join(
        (_GOOD_TOKENS if g else _BAD_TOKENS)[j] for g, j in zip(good, ids)
    )


_TRAINED_CONTEXT = f"USER: {USER_LINE}"


def _propose(policy: Policy, rng: np.random.Generator) -> tuple[float, str]:
    n = policy.n
    if policy.scorer == "none":
        q = float(rng.standard_normal()) if n == 1 else float(rng.standard_normal(n)[0])
        return q, _response_text(q, rng)
    qs = rng.standard_normal(n)
    if policy.scorer == "oracle":
        if policy.sigma_obs > 0:
            obs = qs + policy.sigma_obs * rng.standard_normal(n)
        else:
            obs = qs
        i = int(np.argmax(obs))
        return float(qs[i]), _response_text(float(qs[i]), rng)
    texts = [_response_text(float(q), rng) for q in qs]
    model = policy.trained_model
    scores = [model.score(_TRAINED_CONTEXT, t) for t in texts]
    i = max(range(n), key=lambda j: (scores[j], -j))
    return float(qs[i]), texts[i]


def _simulate_conversation(
    model: UserModel, policy: Policy, rng: np.random.Generator,
    offset: float, conv_id: str, user_id: str, started_at: datetime,
) -> tuple[Conversation, ConvStats]:
    stats = ConvStats()
    turns: list[Turn] = []
    lat_shift = model.latency_penalty * policy.added_latency_s
    latency_ms = int(policy.added_latency_s * 1000) if policy.added_latency_s else None
    cap = model.message_cap or MAX_TURNS
    cutpoints = model.star_cutpoints
    turn = 1
    while True:
        q, text = _propose(policy, rng)
        stats.selected_sum += q
        stats.selected_n += 1
        p_retry = _logistic((model.retry_threshold - q) / model.retry_noise)
        regenerated = rng.random() < p_retry
        if regenerated:
            q, text = _propose(policy, rng)
            stats.selected_sum += q
            stats.selected_n += 1
            stats.n_retries += 1
        star = None
        if rng.random() < model.rating_rate:
            v = q + model.star_noise * rng.standard_normal()
            star = 1 + sum(v > c for c in cutpoints)
        turns.append(Turn(USER_LINE, ChatResponse(text, regenerated, star, latency_ms)))
        stats.quality_sum += q
        p_cont = _logistic(
            model.continue_slope * q + offset - model.fatigue * turn - lat_shift)
        if rng.random() >= p_cont or turn >= cap:
            break
        turn += 1
    stats.length = len(turns)
    conv = Conversation(id=conv_id, user_id=user_id, character_id="sim",
                        started_at=started_at, turns=tuple(turns))
    return conv, stats


def simulate_conversation(user: UserModel, policy: Policy,
                          rng_seed: int) -> Conversation:
    """One conversation for one synthetic user; deterministic per seed."""
    ss = np.random.SeedSequence([rng_seed])
    het = np.random.default_rng(np.random.SeedSequence([rng_seed, 1]))
    offset = _individual_offset(user, het)
    rng = np.random.default_rng(ss)
    conv, _ = _simulate_conversation(
        user, policy, rng, offset, f"sim-{rng_seed}", f"user-{rng_seed}",
        datetime(2023, 1, 1, tzinfo=timezone.utc))
    return conv


def simulate_many(model: UserModel, policy: Policy, n_conversations: int,
                  seed: int, heterogeneity_seed: int = 0,
                  ) -> tuple[list[Conversation], ConvStats]:
    """Independent single-session users; returns conversations plus pooled
    selection statistics."""
    start = datetime(2023, 1, 1, tzinfo=timezone.utc)
    pooled = ConvStats()
    convs = []
    for i in range(n_conversations):
        het = np.random.default_rng(
            np.random.SeedSequence([heterogeneity_seed, i]))
        offset = _individual_offset(model, het)
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        conv, stats = _simulate_conversation(
            model, policy, rng, offset, f"c{i}", f"u{i}", start)
        convs.append(conv)
        pooled.length += stats.length
        pooled.n_retries += stats.n_retries
        pooled.quality_sum += stats.quality_sum
        pooled.selected_sum += stats.selected_sum
        pooled.selected_n += stats.selected_n
    return convs, pooled


def _simulate_arm(name: str, arm_idx: int, policy: Policy,
                  population: Population, horizon_days: int, rng_seed: int,
                  n_boot: int, keep_conversations: bool):
    model = population.model
    start_date = date(2023, 1, 1)
    start_dt = datetime(2023, 1, 1, tzinfo=timezone.utc)
    beta_base = 1.0 / model.retention_base - 1.0
    conversations: list[Conversation] = []
    activities: list[UserActivity] = []
    sel_sum = 0.0
    sel_n = 0
    for u in range(population.n_users):
        het = np.random.default_rng(
            np.random.SeedSequence([population.heterogeneity_seed, arm_idx, u]))
        offset = _individual_offset(model, het)
        urng = np.random.default_rng(np.random.SeedSequence([rng_seed, arm_idx, u]))
        user_id = f"{name}-u{u}"
        active_days = []
        eng_sum = 0.0
        day = 0
        while day < horizon_days:
            crng = np.random.default_rng(
                np.random.SeedSequence([rng_seed, arm_idx, u, day]))
            conv, stats = _simulate_conversation(
                model, policy, crng, offset, f"{user_id}-d{day}", user_id,
                start_dt + timedelta(days=day))
            conversations.append(conv)
            active_days.append(day)
            sel_sum += stats.selected_sum
            sel_n += stats.selected_n
            eng_sum += stats.mean_quality
            mean_eng = eng_sum / len(active_days)
            beta = beta_base * math.exp(-model.retention_gain * mean_eng)
            beta = min(max(beta, 1e-3), 50.0)
            hazard = beta / (beta + day + 1)
            if urng.random() < hazard:
                break
            day += 1
        activities.append(UserActivity(
            user_id, start_date,
            frozenset(start_date + timedelta(days=d) for d in active_days)))

    boot_rng = np.random.default_rng(np.random.SeedSequence([rng_seed, arm_idx, 10**9]))
    mcl_v = metrics_mod.mcl(conversations, rng=boot_rng, n_boot=n_boot)
    retry_v = metrics_mod.retry_rate(conversations, rng=boot_rng, n_boot=n_boot)
    observed_through = start_date + timedelta(days=horizon_days - 1)
    days = [d for d in RETENTION_DAY_GRID if d <= horizon_days - 1]
    retention_by_day = {
        d: metrics_mod.retention(activities, d, observed_through=observed_through)
        for d in days
    }
    curve = RetentionCurve(tuple(days),
                           tuple(retention_by_day[d].value for d in days))
    result = ArmResult(
        mcl=mcl_v, retry_rate=retry_v, retention_curve=curve,
        retention_by_day=retention_by_day, n_users=population.n_users,
        n_conversations=len(conversations),
        mean_selected_quality=sel_sum / sel_n if sel_n else 0.0)
    return result, (conversations if keep_conversations else None)


def run_ab(arms: dict[str, Policy], baseline: str, population: Population,
           horizon_days: int, rng_seed: int, n_boot: int = 1000,
           keep_conversations: bool = False) -> ABReport:
    """Disjoint user cohorts per arm, daily sessions over the horizon,
    per-arm metrics and relative improvements vs the baseline arm."""
    if baseline not in arms:
        raise ConfigError(f"baseline arm {baseline!r} not among arms")
    if len(arms) < 2:
        raise ConfigError("need at least 2 arms")
    if population.n_users < 100:
        raise ConfigError("need at least 100 users per arm")
    if horizon_days < 1:
        raise ConfigError("horizon_days must be >= 1")
    results: dict[str, ArmResult] = {}
    logs: dict[str, list[Conversation]] = {}
    for arm_idx, (name, policy) in enumerate(sorted(arms.items())):
        results[name], convs = _simulate_arm(
            name, arm_idx, policy, population, horizon_days, rng_seed,
            n_boot, keep_conversations)
        if convs is not None:
            logs[name] = convs
    base = results[baseline]
    improvements: dict[str, dict[str, MetricValue]] = {}
    for name, res in results.items():
        if name == baseline:
            continue
        imps = {
            "mcl": relative_improvement(res.mcl, base.mcl),
            "retry_rate": relative_improvement(res.retry_rate, base.retry_rate),
        }
        for d, mv in res.retention_by_day.items():
            imps[f"retention_day_{d}"] = relative_improvement(
                mv, base.retention_by_day[d])
        improvements[name] = imps
    return ABReport(baseline=baseline, arms=results, improvements=improvements,
                    horizon_days=horizon_days,
                    conversations=logs if keep_conversations else None)


# ---------------------------------------------------------------------------
# In-simulator scorer training


def default_sim_train_config(seed: int = 0) -> TrainConfig:
    # token unigrams are enough for the templated vocabulary; the tiny
    # context budget keeps featurization cheap
    return TrainConfig(
        featurizer=FeaturizerConfig(token_orders=(1,), char_orders=(),
                                    hash_dimension=1 << 12, seed=0),
        epochs=4, learning_rate=0.5, val_fraction=0.1, seed=seed, l2=0.0,
        context_budget=4)


def train_policy_scorer(model: UserModel, strategy: LabelStrategy,
                        n_conversations: int, seed: int,
                        train_config: TrainConfig | None = None) -> TrainedScorer:
    """Train a scorer on pseudo-labeled baseline (n=1) simulator logs."""
    convs, _ = simulate_many(model, Policy(n=1, scorer="none"),
                             n_conversations, seed=seed,
                             heterogeneity_seed=seed + 1)
    rows = [row for c in convs for row in extract_rows(c)]
    labeled = apply_strategy(rows, strategy)
    cfg = train_config or default_sim_train_config(seed)
    return train_scorer(labeled, cfg)


# ---------------------------------------------------------------------------
# Calibration


@dataclass(frozen=True)
class CalibrationTargets:
    mcl_latency_drop_1s: float  # percent, e.g. -3.01
    mcl_latency_drop_2s: float
    tail_slope: float  # e.g. -1.8


def _sim_lengths(model: UserModel, n: int, seed: int) -> list[int]:
    convs, _ = simulate_many(model, Policy(), n, seed=seed,
                             heterogeneity_seed=seed + 1)
    return [len(c.turns) for c in convs]


def _latency_drop(model: UserModel, latency_s: float, n: int, seed: int) -> float:
    base, _ = simulate_many(model, Policy(), n, seed=seed, heterogeneity_seed=seed + 1)
    lagged, _ = simulate_many(model, Policy(added_latency_s=latency_s), n,
                              seed=seed, heterogeneity_seed=seed + 1)
    m0 = metrics_mod.mcl(base).value
    m1 = metrics_mod.mcl(lagged).value
    return 100.0 * (m1 - m0) / m0


def calibrate(user_model: UserModel, targets: CalibrationTargets,
              n_conversations: int = 20000, seed: int = 0) -> UserModel:
    """Match the simulated length-tail exponent and the MCL latency drops.

    The tail shape parameter is set from the target slope directly, then
    fatigue is grid-searched to fine-tune the fitted exponent; the latency
    penalty is bisected against the 1-second MCL drop.
    """
    shape = -targets.tail_slope - 1.0
    if shape <= 0:
        raise CalibrationError("tail slope must be steeper than -1", math.inf)
    model = replace(user_model, tail_shape=shape)

    def fitted_slope(m: UserModel) -> float:
        lengths = _sim_lengths(m, n_conversations, seed)
        return metrics_mod.fit_power_law_tail(lengths, x_min=10).parameters["slope"]

    best_fatigue, best_resid = None, math.inf
    for fatigue in (model.fatigue, 0.0, 0.001, 0.002, 0.005, 0.01):
        cand = replace(model, fatigue=fatigue)
        resid = abs(fitted_slope(cand) - targets.tail_slope)
        if resid < best_resid:
            best_fatigue, best_resid = fatigue, resid
        if resid <= 0.1:
            break
    if best_resid > 0.2:
        raise CalibrationError("tail slope target unreachable", best_resid)
    model = replace(model, fatigue=best_fatigue)

    target1 = targets.mcl_latency_drop_1s
    tol1 = max(0.2 * abs(target1), 0.5)
    if abs(target1) < 1e-9:
        model = replace(model, latency_penalty=0.0)
    else:
        lo, hi = 0.0, 2.0
        drop_hi = _latency_drop(replace(model, latency_penalty=hi), 1.0,
                                n_conversations, seed)
        while drop_hi > target1 and hi < 64:
            hi *= 2
            drop_hi = _latency_drop(replace(model, latency_penalty=hi), 1.0,
                                    n_conversations, seed)
        best_pen, best_pen_resid = hi, abs(drop_hi - target1)
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            drop = _latency_drop(replace(model, latency_penalty=mid), 1.0,
                                 n_conversations, seed)
            resid = abs(drop - target1)
            if resid < best_pen_resid:
                best_pen, best_pen_resid = mid, resid
            if resid <= 0.1 * abs(target1):
                break
            if drop > target1:  # not enough drop yet
                lo = mid
            else:
                hi = mid
        if best_pen_resid > tol1:
            raise CalibrationError("1s latency drop target unreachable",
                                   best_pen_resid)
        model = replace(model, latency_penalty=best_pen)
        drop2 = _latency_drop(model, 2.0, n_conversations, seed)
        tol2 = max(0.2 * abs(targets.mcl_latency_drop_2s), 0.5)
        if abs(drop2 - targets.mcl_latency_drop_2s) > tol2:
            raise CalibrationError("2s latency drop inconsistent with 1s target",
                                   abs(drop2 - targets.mcl_latency_drop_2s))
    return model
