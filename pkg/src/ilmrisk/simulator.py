"""Agent-based generator of individual-resolved epidemics.

Each day, every infectious individual that is not quarantined meets a
Poisson number of partners drawn uniformly from the other non-removed,
non-quarantined individuals.  Susceptible partners may become exposed
according to the ILM infection probability; exposed and infectious
individuals progress with daily probabilities ``1 - exp(-sigma)`` and
``1 - exp(-gamma)``.  All transitions of a day are applied together,
computed from the state at the start of the day.

Randomness is drawn from counter-based streams keyed by
``(seed, purpose, day, individual)`` so that scenarios sharing a seed share
their random numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np
from scipy import stats

from . import rng as streams
from .ilm import ContactLog, Individual, IlmParams, State

_S, _E, _I, _R = (int(s) for s in State)
_MAX_PARTNER_ROUNDS = 64
_SLOT_STRIDE = 1 << 20


@dataclass(frozen=True)
class SimConfig:
    population_size: int = 10000
    days: int = 100
    p_imm: float = 0.2
    p_sym: float = 0.7
    mean_contacts: float = 5.0
    initial_infectious: int = 10
    sigma: float = 0.26
    gamma: float = 0.6
    rho: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size: must be >= 1")
        if self.days < 0:
            raise ValueError("days: must be >= 0")
        for name in ("p_imm", "p_sym", "rho"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name}: must lie in [0, 1], got {value}")
        for name in ("sigma", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be > 0")
        if not (self.mean_contacts >= 0 and math.isfinite(self.mean_contacts)):
            raise ValueError("mean_contacts: must be a finite number >= 0")
        if not 0 <= self.initial_infectious <= self.population_size:
            raise ValueError("initial_infectious: must lie in [0, population_size]")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Population:
    """Covariates of all individuals, indexed by id (0 .. N-1)."""

    x1: np.ndarray
    y1: np.ndarray
    initial_states: np.ndarray

    def __len__(self):
        return len(self.x1)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self.x1))

    def individual(self, i: int, state=None, entry_day: int = 0) -> Individual:
        s = self.initial_states[i] if state is None else state
        return Individual(int(i), int(self.x1[i]), int(self.y1[i]), State(int(s)), entry_day)

    def individuals(self, states=None) -> list[Individual]:
        states = self.initial_states if states is None else states
        return [self.individual(i, states[i]) for i in range(len(self))]


def generate_population(config: SimConfig) -> Population:
    """Draw covariates and seed the initial infectious individuals.

    ``y1`` is drawn up front for everyone and only matters once an
    individual becomes infectious, so counterfactual runs agree on it.
    """
    ids = np.arange(config.population_size)
    seed = config.seed
    x1 = (streams.uniform(seed, "x1", 0, ids) < config.p_imm).astype(np.int8)
    y1 = (streams.uniform(seed, "y1", 0, ids) < config.p_sym).astype(np.int8)
    order = np.argsort(streams.uniform(seed, "seed-infectious", 0, ids), kind="stable")
    states = np.full(config.population_size, _S, dtype=np.int8)
    states[order[: config.initial_infectious]] = _I
    return Population(x1=x1, y1=y1, initial_states=states)


def _empty_log() -> ContactLog:
    return ContactLog()


def generate_contacts(
    states: np.ndarray,
    day: int,
    config: SimConfig,
    eligible: Optional[np.ndarray] = None,
) -> ContactLog:
    """Contacts of the day between infectious and susceptible individuals.

    ``eligible`` marks individuals who can take part in contacts; by default
    everyone not removed.  Only pairs whose partner is susceptible are kept.
    """
    states = np.asarray(states)
    n = len(states)
    if eligible is None:
        eligible = states != _R
    spreaders = np.flatnonzero((states == _I) & eligible)
    m = int(eligible.sum())
    if spreaders.size == 0 or config.mean_contacts == 0 or m < 2:
        return _empty_log()

    u = streams.uniform(config.seed, "contact-count", day, spreaders)
    k = stats.poisson.ppf(u, config.mean_contacts)
    k = np.clip(np.nan_to_num(k, nan=0.0), 0, m - 1).astype(np.int64)
    owner = np.repeat(spreaders, k)
    if owner.size == 0:
        return _empty_log()
    first = np.repeat(np.cumsum(k) - k, k)
    slot = np.arange(owner.size) - first

    partner = np.full(owner.size, -1, dtype=np.int64)
    pending = np.arange(owner.size)
    for attempt in range(_MAX_PARTNER_ROUNDS):
        u = streams.uniform(
            config.seed, "contact-partner", day, owner[pending], slot[pending] + attempt * _SLOT_STRIDE
        )
        cand = np.minimum((u * (n - 1)).astype(np.int64), n - 2)
        cand += cand >= owner[pending]
        ok = eligible[cand]
        partner[pending[ok]] = cand[ok]
        assigned = np.flatnonzero(partner >= 0)
        keys = owner[assigned] * n + partner[assigned]
        _, keep = np.unique(keys, return_index=True)
        dup = np.ones(assigned.size, dtype=bool)
        dup[keep] = False
        partner[assigned[dup]] = -1
        pending = np.flatnonzero(partner < 0)
        if pending.size == 0:
            break
    for idx in pending:
        # exact fallback for the rare slots rejection could not fill
        j = owner[idx]
        taken = partner[owner == j]
        pool = np.flatnonzero(eligible)
        pool = pool[(pool != j) & ~np.isin(pool, taken)]
        pick = float(np.ravel(streams.uniform(config.seed, "contact-fallback", day, j, slot[idx]))[0])
        partner[idx] = pool[min(int(pick * pool.size), pool.size - 1)]

    keep = states[partner] == _S
    s_ids, i_ids = partner[keep], owner[keep]
    order = np.lexsort((i_ids, s_ids))
    return ContactLog(np.full(order.size, day), s_ids[order], i_ids[order])


@dataclass
class DayEvents:
    contacts: ContactLog
    exposed: np.ndarray
    onset: np.ndarray
    removed: np.ndarray


def exposure_probabilities(
    contacts: ContactLog, x1: np.ndarray, y1: np.ndarray, params: IlmParams
) -> np.ndarray:
    """Per-individual infection probability from one day's contacts."""
    n = len(x1)
    trans = np.bincount(contacts.susceptible, weights=params.b0 + params.b1 * y1[contacts.infectious], minlength=n)
    hazard = (params.a0 + params.a1 * x1) * trans + params.sparks
    return -np.expm1(-hazard)


def step_day(
    population: Population,
    states: np.ndarray,
    day: int,
    params: IlmParams,
    config: SimConfig,
    eligible: Optional[np.ndarray] = None,
) -> DayEvents:
    """Draw the transitions of one day from the start-of-day ``states``."""
    seed = config.seed
    contacts = generate_contacts(states, day, config, eligible)

    sus = np.flatnonzero(states == _S)
    if params.sparks == 0:
        sus = np.intersect1d(sus, contacts.susceptible, assume_unique=False)
    if sus.size:
        p = exposure_probabilities(contacts, population.x1, population.y1, params)[sus]
        exposed = sus[streams.uniform(seed, "expose", day, sus) < p]
    else:
        exposed = sus

    lat = np.flatnonzero(states == _E)
    onset = lat[streams.uniform(seed, "onset", day, lat) < -math.expm1(-config.sigma)]
    inf = np.flatnonzero(states == _I)
    removed = inf[streams.uniform(seed, "remove", day, inf) < -math.expm1(-config.gamma)]
    return DayEvents(contacts, exposed, onset, removed)


def observe_cases(true_new_infectious: int, rho: float, rng: np.random.Generator) -> int:
    """Reported cases: each true case is reported with probability ``rho``."""
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    if true_new_infectious == 0:
        return 0
    return int(rng.binomial(int(true_new_infectious), rho))


@dataclass
class EpidemicOutput:
    """Everything a run produced.

    ``states[t]`` is the state vector at the start of day ``t`` (row 0 is the
    initial state).  ``new_cases[t]`` counts E->I transitions during day
    ``t``, ``reported[t]`` the reported share of them.
    """

    population: Population
    states: np.ndarray
    contacts: ContactLog
    new_cases: np.ndarray
    reported: np.ndarray
    quarantined: np.ndarray = field(default=None)

    @property
    def days(self) -> int:
        return len(self.new_cases)

    @property
    def compartments(self) -> np.ndarray:
        """(days + 1, 4) array of S, E, I, R counts."""
        return np.stack([np.count_nonzero(self.states == s, axis=1) for s in (_S, _E, _I, _R)], axis=1)

    def series_rows(self) -> list[tuple[int, ...]]:
        comp = self.compartments
        return [
            (t + 1, *map(int, comp[t + 1]), int(self.new_cases[t]), int(self.reported[t]))
            for t in range(self.days)
        ]

    def contacts_on(self, day: int) -> ContactLog:
        s, i = self.contacts.on_day(day)
        return ContactLog(np.full(len(s), day), s, i)

    @property
    def x1(self):
        return self.population.x1

    @property
    def y1(self):
        return self.population.y1


class _RunningHistory:
    """Read-only view of a run in progress, handed to risk functions."""

    def __init__(self, population: Population):
        self.population = population
        self.x1 = population.x1
        self.y1 = population.y1
        self.daily: list[ContactLog] = []

    def contacts_on(self, day: int) -> ContactLog:
        if not 0 <= day < len(self.daily):
            raise KeyError(f"no contact history for day {day}")
        return self.daily[day]

    @property
    def days(self) -> int:
        return len(self.daily)


RiskFunction = Callable[[object, int], np.ndarray]


def _simulate(
    config: SimConfig,
    params: IlmParams,
    risk_fn: Optional[RiskFunction] = None,
    threshold: float = math.inf,
    delay_days: int = 0,
    quarantine_days: int = 14,
) -> EpidemicOutput:
    population = generate_population(config)
    n = len(population)
    states = population.initial_states.copy()
    history = np.empty((config.days + 1, n), dtype=np.int8)
    history[0] = states
    new_cases = np.zeros(config.days, dtype=np.int64)
    reported = np.zeros(config.days, dtype=np.int64)
    q_until = np.zeros(n, dtype=np.int64)
    q_count = np.zeros(config.days, dtype=np.int64)
    running = _RunningHistory(population)

    for day in range(config.days):
        if risk_fn is not None:
            info_day = day - 1 - delay_days
            if info_day >= 0:
                scores = np.asarray(risk_fn(running, info_day), dtype=float)
            else:
                scores = np.zeros(n)
            start = (states != _R) & (q_until <= day) & (scores > threshold)
            q_until[start] = day + quarantine_days
        free = q_until <= day
        q_count[day] = np.count_nonzero(~free & (states != _R))
        eligible = (states != _R) & free

        events = step_day(population, states, day, params, config, eligible)
        running.daily.append(events.contacts)
        states = states.copy()
        states[events.exposed] = _E
        states[events.onset] = _I
        states[events.removed] = _R
        history[day + 1] = states
        new_cases[day] = events.onset.size
        reported[day] = observe_cases(events.onset.size, config.rho, streams.generator(config.seed, "observe", day))

    return EpidemicOutput(
        population=population,
        states=history,
        contacts=ContactLog.concatenate(running.daily),
        new_cases=new_cases,
        reported=reported,
        quarantined=q_count,
    )


def run_epidemic(config: SimConfig, params: IlmParams) -> EpidemicOutput:
    """Simulate an outbreak without interventions; deterministic in ``config.seed``."""
    return _simulate(config, params)


def run_with_quarantine(
    config: SimConfig,
    params: IlmParams,
    risk_fn: RiskFunction,
    threshold: float,
    delay_days: int = 4,
    quarantine_days: int = 14,
) -> EpidemicOutput:
    """Simulate with risk-triggered quarantine.

    On day ``t`` each non-removed, non-quarantined individual whose risk
    (computed from contacts up to day ``t - 1 - delay_days``) exceeds
    ``threshold`` is quarantined for ``quarantine_days`` days and takes part
    in no contacts meanwhile.  ``delay_days=0`` uses yesterday's contacts.
    """
    if delay_days < 0:
        raise ValueError("delay_days must be >= 0")
    if quarantine_days < 0:
        raise ValueError("quarantine_days must be >= 0")
    return _simulate(config, params, risk_fn, threshold, delay_days, quarantine_days)
