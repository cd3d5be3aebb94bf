"""Individual-level transmission model.

A susceptible individual ``i`` with infectious contacts ``C(i, t)`` on day
``t`` is infected with probability::

    P(i, t) = 1 - exp(-(a0 + a1*x1(i)) * sum_j (b0 + b1*y1(j)) - sparks)

where ``x1`` flags elevated susceptibility (over 65 or immunosuppressed) and
``y1`` flags a symptomatic infectious contact.  Because only products of a
susceptibility and a transmissibility coefficient ever enter the model, the
fitted quantities are the four products ``c_xy`` (see :class:`CParams`).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class DegenerateParametersError(ValueError):
    """Raised when a ratio of coefficients has a zero denominator."""


class State(enum.IntEnum):
    SUSCEPTIBLE = 0
    EXPOSED = 1
    INFECTIOUS = 2
    REMOVED = 3


@dataclass(frozen=True)
class IlmParams:
    a0: float
    a1: float
    b0: float
    b1: float
    sparks: float = 0.0

    def __post_init__(self):
        for name in ("a0", "a1", "b0", "b1", "sparks"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("a0 and b0 must be strictly positive")

    def as_dict(self) -> dict:
        return {"a0": self.a0, "a1": self.a1, "b0": self.b0, "b1": self.b1, "sparks": self.sparks}


@dataclass(frozen=True)
class CParams:
    """Products of susceptibility and transmissibility coefficients.

    ``c_xy`` is the hazard contributed by one contact between a susceptible
    with ``x1 = x`` and an infectious individual with ``y1 = y``.
    """

    c00: float
    c01: float
    c10: float
    c11: float

    def __post_init__(self):
        for name in ("c00", "c01", "c10", "c11"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.c00, self.c01, self.c10, self.c11])

    def as_dict(self) -> dict:
        return {"c00": self.c00, "c01": self.c01, "c10": self.c10, "c11": self.c11}

    @classmethod
    def from_array(cls, values) -> "CParams":
        return cls(*(float(v) for v in values))


# Ground-truth coefficient sets of the simulation study.
PARAMETER_SETS = {
    1: IlmParams(a0=0.2, a1=2.0, b0=0.2, b1=2.0),
    2: IlmParams(a0=0.5, a1=1.5, b0=0.5, b1=0.8),
    3: IlmParams(a0=1.0, a1=2.0, b0=1.0, b1=1.0),
}


@dataclass(frozen=True)
class Individual:
    id: int
    x1: int
    y1: int
    state: State = State.SUSCEPTIBLE
    state_entry_day: int = 0

    def __post_init__(self):
        if self.x1 not in (0, 1) or self.y1 not in (0, 1):
            raise ValueError("x1 and y1 must be 0 or 1")


class ContactLog:
    """Daily contacts between susceptible and infectious individuals.

    Stored column-wise; entry ``k`` means ``susceptible[k]`` met
    ``infectious[k]`` during day ``day[k]``.
    """

    def __init__(self, day=(), susceptible=(), infectious=()):
        self.day = np.asarray(day, dtype=np.int64).reshape(-1)
        self.susceptible = np.asarray(susceptible, dtype=np.int64).reshape(-1)
        self.infectious = np.asarray(infectious, dtype=np.int64).reshape(-1)
        if not (len(self.day) == len(self.susceptible) == len(self.infectious)):
            raise ValueError("contact columns must have equal length")
        self._by_day = None

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, int]]) -> "ContactLog":
        rows = list(entries)
        if not rows:
            return cls()
        day, s, i = zip(*rows)
        return cls(day, s, i)

    @classmethod
    def concatenate(cls, parts: Sequence["ContactLog"]) -> "ContactLog":
        if not parts:
            return cls()
        return cls(
            np.concatenate([p.day for p in parts]),
            np.concatenate([p.susceptible for p in parts]),
            np.concatenate([p.infectious for p in parts]),
        )

    def __len__(self):
        return len(self.day)

    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.day.tolist(), self.susceptible.tolist(), self.infectious.tolist()))

    def on_day(self, day: int) -> tuple[np.ndarray, np.ndarray]:
        """(susceptible ids, infectious ids) for one day."""
        if self._by_day is None:
            order = np.argsort(self.day, kind="stable")
            days, starts = np.unique(self.day[order], return_index=True)
            ends = np.append(starts[1:], len(order))
            self._by_day = {int(d): order[a:b] for d, a, b in zip(days, starts, ends)}
        idx = self._by_day.get(int(day))
        if idx is None:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        return self.susceptible[idx], self.infectious[idx]

    def contacts_of(self, susceptible_id: int, day: int) -> np.ndarray:
        """Sorted ids of the infectious contacts of one individual on one day."""
        s, i = self.on_day(day)
        return np.sort(i[s == susceptible_id])

    def partners_of(self, infectious_id: int, day: int) -> np.ndarray:
        """Sorted ids of the susceptible contacts of one infectious individual."""
        s, i = self.on_day(day)
        return np.sort(s[i == infectious_id])


def susceptibility(ind: Individual, params: IlmParams) -> float:
    return params.a0 + params.a1 * ind.x1


def transmissibility(ind: Individual, params: IlmParams) -> float:
    return params.b0 + params.b1 * ind.y1


def _one_minus_exp(hazard: float) -> float:
    return -math.expm1(-hazard)


def infection_probability(
    i: Individual, contacts: Iterable[Individual], params: IlmParams
) -> float:
    """Probability that ``i`` is infected during a day with ``contacts``.

    Transmissibilities are summed in ascending contact id so the result is
    reproducible bit for bit.
    """
    total = 0.0
    for j in sorted(contacts, key=lambda c: c.id):
        total += transmissibility(j, params)
    return _one_minus_exp(susceptibility(i, params) * total + params.sparks)


def pairwise_probability(i: Individual, j: Individual, params: IlmParams) -> float:
    return _one_minus_exp(susceptibility(i, params) * transmissibility(j, params))


def reparameterize(params: IlmParams) -> CParams:
    return CParams(
        c00=params.a0 * params.b0,
        c01=params.a0 * params.b1,
        c10=params.a1 * params.b0,
        c11=params.a1 * params.b1,
    )


class RatioEstimate(NamedTuple):
    """Coefficient ratios a0/a1 and b0/b1 recovered from products.

    Each ratio has two algebraic routes; they agree when the products come
    from a genuine (a, b) pair and disagree otherwise.
    """

    ratio_a: float
    ratio_b: float
    ratio_a_alt: float
    ratio_b_alt: float

    @property
    def consistent(self) -> bool:
        return math.isclose(self.ratio_a, self.ratio_a_alt, rel_tol=1e-9) and math.isclose(
            self.ratio_b, self.ratio_b_alt, rel_tol=1e-9
        )


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        raise DegenerateParametersError(f"cannot form {what}: zero denominator")
    return num / den


def recover_ratios(c: CParams) -> RatioEstimate:
    return RatioEstimate(
        ratio_a=_ratio(c.c01, c.c11, "a0/a1 from c01/c11"),
        ratio_b=_ratio(c.c00, c.c01, "b0/b1 from c00/c01"),
        ratio_a_alt=_ratio(c.c00, c.c10, "a0/a1 from c00/c10"),
        ratio_b_alt=_ratio(c.c10, c.c11, "b0/b1 from c10/c11"),
    )


def mean_cparams(cs: Sequence[CParams]) -> CParams:
    if not cs:
        raise ValueError("need at least one parameter vector")
    return CParams.from_array(np.mean([c.as_array() for c in cs], axis=0))


def heuristic_ratios(top_mles: Sequence[CParams]) -> tuple[float, float]:
    """Average both algebraic routes after averaging each c_xy over the fits.

    Averaging the products first damps the fit-to-fit fluctuations that make
    per-fit ratios noisy.
    """
    m = mean_cparams(top_mles)
    ratio_a = 0.5 * _ratio(m.c01, m.c11, "a0/a1") + 0.5 * _ratio(m.c00, m.c10, "a0/a1")
    ratio_b = 0.5 * _ratio(m.c10, m.c11, "b0/b1") + 0.5 * _ratio(m.c00, m.c01, "b0/b1")
    return ratio_a, ratio_b


def params_from_fit(c_mean: CParams, ratio_a: float, ratio_b: float) -> IlmParams:
    """Individual-level coefficients consistent with fitted products and ratios.

    Only products a*b enter infection probabilities, so the split of c00
    between a0 and b0 is arbitrary; a symmetric split is used.
    """
    if ratio_a <= 0 or ratio_b <= 0:
        raise DegenerateParametersError("ratios must be positive")
    a0 = b0 = math.sqrt(c_mean.c00)
    if a0 == 0:
        raise DegenerateParametersError("c00 must be positive")
    return IlmParams(a0=a0, a1=a0 / ratio_a, b0=b0, b1=b0 / ratio_b)


def estimate_beta(
    sample: Sequence[tuple[Individual, Iterable[Individual]]], c: CParams
) -> float:
    """Mean daily transmission rate of a sample of infectious individuals.

    Each infectious ``j`` contributes the summed pairwise infection
    probabilities of its susceptible contacts.  Individuals are visited in
    ascending id, and so are their contacts.
    """
    if not sample:
        raise ValueError("sample must be non-empty")
    table = ((c.c00, c.c01), (c.c10, c.c11))
    total = 0.0
    for j, contacts in sorted(sample, key=lambda rec: rec[0].id):
        for i in sorted(contacts, key=lambda ind: ind.id):
            total += _one_minus_exp(table[i.x1][j.y1])
    return total / len(sample)


@dataclass
class Trajectory:
    """Complete individual-level record of an outbreak.

    ``states[t, i]`` is the state of individual ``i`` at the start of day
    ``t``; ``contacts`` holds the contacts made during each day.
    """

    x1: np.ndarray
    y1: np.ndarray
    states: np.ndarray
    contacts: ContactLog

    @property
    def days(self) -> int:
        return self.states.shape[0] - 1

    def contacts_on(self, day: int) -> ContactLog:
        s, i = self.contacts.on_day(day)
        return ContactLog(np.full(len(s), day), s, i)


def daily_hazards(
    day: int, contacts: ContactLog, x1: np.ndarray, y1: np.ndarray, params: IlmParams
) -> np.ndarray:
    """ILM hazard of every individual during ``day`` (without sparks)."""
    s, j = contacts.on_day(day)
    n = len(x1)
    trans = np.bincount(s, weights=params.b0 + params.b1 * y1[j], minlength=n)
    return (params.a0 + params.a1 * x1) * trans


def full_ilm_log_likelihood(trajectory: Trajectory, params: IlmParams) -> float:
    """Exact log-likelihood of a fully observed individual-level outbreak.

    Meant as an oracle for small populations.  Returns ``-inf`` when an
    observed infection had probability zero.
    """
    states = np.asarray(trajectory.states)
    total = 0.0
    for t in range(trajectory.days):
        susceptible = states[t] == State.SUSCEPTIBLE
        if not susceptible.any():
            continue
        hazard = daily_hazards(t, trajectory.contacts, trajectory.x1, trajectory.y1, params)
        hazard = hazard + params.sparks
        still = susceptible & (states[t + 1] == State.SUSCEPTIBLE)
        newly = susceptible & (states[t + 1] != State.SUSCEPTIBLE)
        if np.any(hazard[newly] == 0):
            return -math.inf
        total -= float(np.sum(hazard[still]))
        total += float(np.sum(np.log(-np.expm1(-hazard[newly]))))
    return total
