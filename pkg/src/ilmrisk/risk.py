"""Retrospective infection-risk scores.

The risk of individual ``i`` on day ``t`` combines the daily ILM infection
probabilities over the window ``t-d .. t`` with a symptom likelihood ratio::

    R(i, t) = r_s * sum_n prod_{l<n} (1 - P(t-d+l)) * P(t-d+n)

The sum runs over the mutually exclusive events "first infected on window
day n" and telescopes to ``1 - prod (1 - P)``.  ``r_s`` is ``P(I|S)/P(I)``,
with ``P(I|S)`` from a logistic symptom model and ``P(I)`` the prevalence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import rng as streams
from .ilm import Individual, IlmParams, State, infection_probability

# Logistic symptom predictor of infection (log-odds coefficients).
SYMPTOM_INTERCEPT = 1.32
SYMPTOM_COEFFICIENTS = {
    "age": -0.01,
    "sex": 0.44,
    "smell_taste_loss": 1.75,
    "cough": 0.31,
    "fatigue": 0.49,
    "skipped_meals": 0.39,
}
SYMPTOM_FLAGS = ("smell_taste_loss", "cough", "fatigue", "skipped_meals")


@dataclass(frozen=True)
class SymptomProfile:
    age: float
    sex: int = 0
    smell_taste_loss: int = 0
    cough: int = 0
    fatigue: int = 0
    skipped_meals: int = 0

    def __post_init__(self):
        if self.age < 0:
            raise ValueError("age must be >= 0")
        for name in ("sex",) + SYMPTOM_FLAGS:
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")


@dataclass(frozen=True)
class RiskRecord:
    id: int
    day: int
    daily_probs: tuple
    r_s: float
    window_prob: float
    score: float
    predicted: Optional[bool] = None


def symptom_probability(profile: SymptomProfile) -> float:
    """P(infected | symptoms) from the logistic symptom model."""
    logit = SYMPTOM_INTERCEPT + sum(coef * getattr(profile, name) for name, coef in SYMPTOM_COEFFICIENTS.items())
    return 1.0 / (1.0 + math.exp(-logit))


def symptom_ratio(profile: SymptomProfile, prevalence: float) -> float:
    if not 0 < prevalence < 1:
        raise ValueError(f"prevalence must lie in (0, 1), got {prevalence}")
    return symptom_probability(profile) / prevalence


def _check_window(history, t: int, d: int):
    if d < 0:
        raise ValueError("window length d must be >= 0")
    first, last = t - d, t
    missing = [day for day in range(first, last + 1) if not 0 <= day < history.days]
    if missing:
        raise ValueError(
            f"history covers days 0..{history.days - 1}; window {first}..{last} "
            f"is missing days {missing[0]}..{missing[-1]}"
        )


def daily_infection_probs(i: int, t: int, history, params: IlmParams, d: int) -> np.ndarray:
    """ILM infection probability of ``i`` on each day ``t-d .. t`` (oldest first).

    ``history`` needs ``x1``, ``y1``, ``days`` and ``contacts_on(day)``.
    """
    _check_window(history, t, d)
    me = Individual(int(i), int(history.x1[i]), 0)
    probs = np.empty(d + 1)
    for n, day in enumerate(range(t - d, t + 1)):
        log = history.contacts_on(day)
        js = log.infectious[log.susceptible == i]
        contacts = [Individual(int(j), 0, int(history.y1[j]), State.INFECTIOUS) for j in js]
        probs[n] = infection_probability(me, contacts, params)
    return probs


def window_infection_probability(daily_probs: Sequence[float]) -> float:
    """Probability of a first infection on some day of the window."""
    total = 0.0
    survive = 1.0
    for p in daily_probs:
        if not 0 <= p <= 1:
            raise ValueError("daily probabilities must lie in [0, 1]")
        total += survive * p
        survive *= 1.0 - p
    # rounding can push the sum a hair past one
    return min(total, 1.0)


def risk_score(
    i: int,
    t: int,
    history,
    params: IlmParams,
    d: int,
    profile: SymptomProfile,
    prevalence: float,
) -> RiskRecord:
    probs = daily_infection_probs(i, t, history, params, d)
    window = window_infection_probability(probs)
    r_s = symptom_ratio(profile, prevalence)
    return RiskRecord(int(i), int(t), tuple(probs.tolist()), r_s, window, r_s * window)


def classification_threshold(infected_scores: Sequence[float]) -> float:
    """Mean minus sample standard deviation of the infected group's scores."""
    scores = np.asarray(infected_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("need at least one score")
    if scores.size == 1:
        return float(scores[0])
    return float(scores.mean() - scores.std(ddof=1))


def classify(records: Sequence[RiskRecord], threshold: float) -> list[RiskRecord]:
    # ties count as positive: false positives are the cheaper error here
    return [replace(r, predicted=bool(r.score >= threshold)) for r in records]


# Bulk scoring over a whole simulated run.


def _log_survival(log, x1: np.ndarray, y1: np.ndarray, params: IlmParams) -> np.ndarray:
    trans = np.bincount(log.susceptible, weights=params.b0 + params.b1 * y1[log.infectious], minlength=len(x1))
    return -((params.a0 + params.a1 * x1) * trans + params.sparks)


def log_survival_matrix(history, params: IlmParams, days: Optional[int] = None) -> np.ndarray:
    """(days, N) matrix of log(1 - P(i, t)), i.e. minus the daily hazard."""
    days = history.days if days is None else days
    x1 = np.asarray(history.x1, dtype=float)
    y1 = np.asarray(history.y1, dtype=float)
    out = np.empty((days, len(x1)))
    for t in range(days):
        out[t] = _log_survival(history.contacts_on(t), x1, y1, params)
    return out


def window_probabilities(log_survival: np.ndarray, d: int) -> np.ndarray:
    """Window infection probability for every (day, individual).

    Windows reaching before day 0 are truncated at day 0.
    """
    csum = np.cumsum(log_survival, axis=0)
    shifted = np.zeros_like(csum)
    if d + 1 < len(csum):
        shifted[d + 1 :] = csum[: len(csum) - d - 1]
    return -np.expm1(csum - shifted)


class WindowRisk:
    """Risk function for quarantine decisions: the window infection probability.

    Called as ``risk(history, day)``; returns scores for the window ending on
    ``day``.  Per-day log survival vectors are cached since histories only grow.
    """

    def __init__(self, params: IlmParams, window: int = 14):
        self.params = params
        self.window = window
        self._history = None
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, history, day: int) -> np.ndarray:
        if history is not self._history:
            self._history, self._cache = history, {}
        x1 = np.asarray(history.x1, dtype=float)
        y1 = np.asarray(history.y1, dtype=float)
        total = np.zeros(len(x1))
        for t in range(max(0, day - self.window), day + 1):
            if t not in self._cache:
                self._cache[t] = _log_survival(history.contacts_on(t), x1, y1, self.params)
            total += self._cache[t]
        return -np.expm1(total)


def infection_labels(states: np.ndarray, d: int) -> np.ndarray:
    """Evaluation labels for every (day, individual).

    1 if the individual was exposed during the window ``t-d .. t``, 0 if still
    susceptible at the end of day ``t``, -1 otherwise (infected earlier, or
    infectious from the start).  ``states`` has one row per day boundary.
    """
    states = np.asarray(states)
    days = states.shape[0] - 1
    sus_rows = np.count_nonzero(states == State.SUSCEPTIBLE, axis=0)
    left = (sus_rows > 0) & (sus_rows <= days) & (states[-1] != State.SUSCEPTIBLE)
    exposure_day = np.where(left, sus_rows - 1, -10**9)
    t = np.arange(days)[:, None]
    labels = np.full((days, states.shape[1]), -1, dtype=np.int8)
    labels[states[1:] == State.SUSCEPTIBLE] = 0
    in_window = (exposure_day[None, :] <= t) & (exposure_day[None, :] >= t - d)
    labels[in_window] = 1
    return labels


@dataclass(frozen=True)
class SymptomModel:
    """Symptom prevalences used to give simulated agents self-reports.

    The defaults are illustrative placeholders, not estimates; set them in
    the ``risk`` section of the configuration.
    """

    infected: tuple = (0.60, 0.50, 0.55, 0.30)
    uninfected: tuple = (0.10, 0.25, 0.30, 0.15)
    p_male: float = 0.5
    young_age: tuple = (18.0, 65.0)
    old_age: tuple = (65.0, 90.0)

    def probabilities(self, seed: int, x1: np.ndarray, infected: bool) -> np.ndarray:
        """P(I | symptoms) for every individual under one infection status."""
        ids = np.arange(len(x1))
        tag = "inf" if infected else "uninf"
        prevalence = self.infected if infected else self.uninfected
        u_age = streams.uniform(seed, "age", 0, ids)
        lo = np.where(x1 == 1, self.old_age[0], self.young_age[0])
        hi = np.where(x1 == 1, self.old_age[1], self.young_age[1])
        age = lo + u_age * (hi - lo)
        sex = (streams.uniform(seed, "sex", 0, ids) < self.p_male).astype(float)
        logit = SYMPTOM_INTERCEPT + SYMPTOM_COEFFICIENTS["age"] * age + SYMPTOM_COEFFICIENTS["sex"] * sex
        for name, prev in zip(SYMPTOM_FLAGS, prevalence):
            flag = streams.uniform(seed, f"symptom-{tag}-{name}", 0, ids) < prev
            logit = logit + SYMPTOM_COEFFICIENTS[name] * flag
        return 1.0 / (1.0 + np.exp(-logit))

    def profile(self, seed: int, x1: np.ndarray, i: int, infected: bool) -> SymptomProfile:
        """The profile behind :meth:`probabilities` for one individual."""
        ids = np.array([i])
        tag = "inf" if infected else "uninf"
        prevalence = self.infected if infected else self.uninfected
        lo, hi = self.old_age if x1[i] == 1 else self.young_age
        age = lo + float(streams.uniform(seed, "age", 0, ids)[0]) * (hi - lo)
        sex = int(streams.uniform(seed, "sex", 0, ids)[0] < self.p_male)
        flags = {
            name: int(streams.uniform(seed, f"symptom-{tag}-{name}", 0, ids)[0] < prev)
            for name, prev in zip(SYMPTOM_FLAGS, prevalence)
        }
        return SymptomProfile(age=age, sex=sex, **flags)


@dataclass
class ScoredRun:
    """Risk of every (day, individual) of a run, with evaluation labels."""

    r_s: np.ndarray
    window_prob: np.ndarray
    score: np.ndarray
    labels: np.ndarray

    def index(self, include_unlabelled: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(day, id) index arrays of the records to report, day-major."""
        mask = np.ones(self.labels.shape, dtype=bool) if include_unlabelled else self.labels >= 0
        return np.nonzero(mask)


def prevalence_series(states: np.ndarray, mode="overall") -> np.ndarray:
    """Prevalence P(I) used in r_s for each day.

    ``"overall"`` is the fraction of the population ever infected over the
    run, the same for every day.  ``"current"`` is the infectious fraction at
    the end of each day.  Both are floored at one individual.  A number is
    used as a constant.
    """
    states = np.asarray(states)
    n = states.shape[1]
    days = states.shape[0] - 1
    if mode == "overall":
        ever = np.count_nonzero(states[-1] != State.SUSCEPTIBLE)
        value = min(max(ever, 1) / n, 1 - 1e-12)
        return np.full(days, value)
    if mode == "current":
        infectious = np.count_nonzero(states[1:] == State.INFECTIOUS, axis=1)
        return np.clip(np.maximum(infectious, 1) / n, None, 1 - 1e-12)
    value = float(mode)
    if not 0 < value < 1:
        raise ValueError("prevalence must lie in (0, 1)")
    return np.full(days, value)


def score_run(
    history,
    states: np.ndarray,
    params: IlmParams,
    d: int,
    symptoms: SymptomModel,
    seed: int,
    prevalence="overall",
) -> ScoredRun:
    """Score every (day, individual) of a simulated run.

    Agents report symptoms drawn from the infected prevalences while exposed
    or infectious, and from the uninfected prevalences otherwise.
    """
    states = np.asarray(states)
    labels = infection_labels(states, d)
    window = window_probabilities(log_survival_matrix(history, params, states.shape[0] - 1), d)
    x1 = np.asarray(history.x1)
    p_inf = symptoms.probabilities(seed, x1, infected=True)
    p_uninf = symptoms.probabilities(seed, x1, infected=False)
    current = np.isin(states[1:], (State.EXPOSED, State.INFECTIOUS)) | (labels == 1)
    p_sym = np.where(current, p_inf[None, :], p_uninf[None, :])
    r_s = p_sym / prevalence_series(states, prevalence)[:, None]
    return ScoredRun(r_s=r_s, window_prob=window, score=r_s * window, labels=labels)
