"""Likelihood-based fitting of ILM coefficients from reported case counts.

The population is modelled as a discrete-time stochastic SEIR process whose
transmission rate is the ILM estimate ``beta_hat(c)`` over a frozen sample
of infectious individuals and their contacts.  Daily reported cases are a
binomial thinning of the true number of new infectious cases.  The
likelihood is estimated with a bootstrap particle filter and maximised by
iterated filtering (parameters take a cooled random walk on the log scale
inside repeated filters).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import rng as streams
from .ilm import CParams, ContactLog, Individual, State, estimate_beta

PARAM_NAMES = ("c00", "c01", "c10", "c11")
# log-scale bounds for perturbed coefficients
PARAM_LOWER = 1e-4
PARAM_UPPER = 1e2
RHO_EPS = 1e-6


class FilterFailure(RuntimeError):
    """All particles were incompatible with an observation."""

    def __init__(self, step: int, iteration: Optional[int] = None):
        self.step = step
        self.iteration = iteration
        where = f"step {step}" if iteration is None else f"iteration {iteration}, step {step}"
        super().__init__(f"particle filter collapsed at {where}")


class SeirState(NamedTuple):
    S: int
    E: int
    I: int
    R: int

    @property
    def total(self) -> int:
        return self.S + self.E + self.I + self.R


@dataclass
class ObservedSeries:
    """Daily reported cases, optionally with simulator ground truth."""

    reported: np.ndarray
    days: Optional[np.ndarray] = None
    susceptible: Optional[np.ndarray] = None
    true_cases: Optional[np.ndarray] = None

    def __post_init__(self):
        self.reported = np.asarray(self.reported, dtype=np.int64)
        if self.days is None:
            self.days = np.arange(1, len(self.reported) + 1)
        if np.any(self.reported < 0):
            raise ValueError("reported cases must be non-negative")

    def __len__(self):
        return len(self.reported)

    def head(self, n: int) -> "ObservedSeries":
        cut = lambda a: None if a is None else np.asarray(a)[:n]
        return ObservedSeries(self.reported[:n], cut(self.days), cut(self.susceptible), cut(self.true_cases))


class BetaSample:
    """Frozen sample of infectious individuals with their contact sets."""

    def __init__(self, records: Sequence[tuple[Individual, Sequence[Individual]]]):
        if not records:
            raise ValueError("beta sample must be non-empty")
        self.records = [(j, tuple(cs)) for j, cs in records]
        counts = np.zeros((2, 2))
        for j, contacts in self.records:
            for i in contacts:
                counts[i.x1, j.y1] += 1
        self.pair_counts = counts

    def __len__(self):
        return len(self.records)

    def beta(self, c: CParams) -> float:
        return estimate_beta(self.records, c)

    def beta_many(self, theta: np.ndarray) -> np.ndarray:
        """Vectorised beta_hat for rows of (c00, c01, c10, c11)."""
        theta = np.atleast_2d(theta)
        w = self.pair_counts.reshape(-1)  # order: (x0,y0), (x0,y1), (x1,y0), (x1,y1)
        return (-np.expm1(-theta[:, :4]) @ w) / len(self.records)


def build_beta_sample(
    x1: np.ndarray,
    y1: np.ndarray,
    states: np.ndarray,
    contacts: ContactLog,
    sample_size: int,
    rng: np.random.Generator,
    last_onset_day: Optional[int] = None,
) -> BetaSample:
    """Sample infectious individuals with their first-infectious-day contacts.

    Candidates are individuals infectious at the start of some day no later
    than ``last_onset_day``; their contact set is the susceptible partners
    met on that first day.
    """
    states = np.asarray(states)
    is_inf = states == State.INFECTIOUS
    ever = is_inf.any(axis=0)
    onset = np.where(ever, np.argmax(is_inf, axis=0), -1)
    candidates = np.flatnonzero(ever)
    if last_onset_day is not None:
        candidates = candidates[onset[candidates] <= last_onset_day]
    if candidates.size == 0:
        raise ValueError("no infectious individuals available for the beta sample")
    take = min(sample_size, candidates.size)
    chosen = np.sort(rng.choice(candidates, size=take, replace=False))
    records = []
    for j in chosen:
        partners = contacts.partners_of(int(j), int(onset[j]))
        infectious = Individual(int(j), int(x1[j]), int(y1[j]), State.INFECTIOUS, int(onset[j]))
        records.append((infectious, [Individual(int(i), int(x1[i]), int(y1[i])) for i in partners]))
    return BetaSample(records)


@dataclass
class PopModel:
    """SEIR process with ILM-derived transmission and binomial reporting."""

    c: CParams
    sigma: float
    gamma: float
    rho: float
    N: int
    beta_sample: BetaSample
    E0: int = 0
    I0: int = 10
    R0: int = 0

    def __post_init__(self):
        if self.E0 + self.I0 + self.R0 > self.N:
            raise ValueError("initial E0 + I0 + R0 exceeds N")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")

    @property
    def initial_state(self) -> SeirState:
        return SeirState(self.N - self.E0 - self.I0 - self.R0, self.E0, self.I0, self.R0)

    def with_params(self, c: CParams, rho: Optional[float] = None) -> "PopModel":
        return replace(self, c=c, rho=self.rho if rho is None else rho)

    # particle interface: rows are (S, E, I, R, new cases of the last step)

    def initial_particles(self, count: int) -> np.ndarray:
        x = np.zeros((count, 5), dtype=np.int64)
        x[:, :4] = self.initial_state
        return x

    def propagate(self, x: np.ndarray, rng: np.random.Generator, theta: Optional[np.ndarray] = None) -> np.ndarray:
        if theta is None:
            beta = self.beta_sample.beta_many(self.c.as_array())[0]
        else:
            beta = self.beta_sample.beta_many(theta)
        S, E, I, R = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
        lam = beta * I / self.N
        B = rng.binomial(S, -np.expm1(-lam))
        C = rng.binomial(E, -math.expm1(-self.sigma))
        D = rng.binomial(I, -math.expm1(-self.gamma))
        return np.stack([S - B, E + B - C, I + C - D, R + D, C], axis=1)

    def log_measurement(self, y: int, x: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
        rho = self.rho if theta is None or theta.shape[1] < 5 else theta[:, 4]
        return stats.binom.logpmf(y, x[:, 4], rho)


def process_step(state: SeirState, model: PopModel, rng: np.random.Generator) -> tuple[SeirState, int]:
    """Advance one day; returns the new state and the day's true new cases."""
    x = np.array([[*state, 0]], dtype=np.int64)
    nxt = model.propagate(x, rng)[0]
    return SeirState(*map(int, nxt[:4])), int(nxt[4])


def measurement_log_density(y: int, true_cases: int, rho: float) -> float:
    if y < 0:
        raise ValueError("observation must be non-negative")
    return float(stats.binom.logpmf(y, true_cases, rho))


def systematic_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices from one uniform offset on an evenly spaced grid.

    Particle k receives either floor(J*w_k) or ceil(J*w_k) offspring.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise ValueError("cannot resample: weights are all zero or not finite")
    count = log_weights.size
    cdf = np.cumsum(np.exp(log_weights - total))
    cdf[-1] = 1.0
    points = (rng.uniform() + np.arange(count)) / count
    return np.minimum(np.searchsorted(cdf, points, side="right"), count - 1)


@dataclass
class FilterResult:
    loglik: float
    filtered_means: np.ndarray
    failed_step: Optional[int] = None
    conditional_logliks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def failed(self) -> bool:
        return self.failed_step is not None


def _run_filter(model, data, particle_count, rng, theta=None, perturb=None):
    """Bootstrap filter; with ``theta`` each particle carries its own parameters."""
    obs = np.asarray(data.reported if hasattr(data, "reported") else data)
    x = model.initial_particles(particle_count)
    means = np.zeros((len(obs), x.shape[1]))
    cond = np.zeros(len(obs))
    last_weights = None
    for n, y in enumerate(obs):
        if perturb is not None:
            theta = perturb(theta, rng)
        x = model.propagate(x, rng, theta) if theta is not None else model.propagate(x, rng)
        logw = model.log_measurement(int(y), x, theta) if theta is not None else model.log_measurement(int(y), x)
        lse = logsumexp(logw)
        if not np.isfinite(lse):
            return x, theta, means, cond, n, None
        cond[n] = lse - math.log(particle_count)
        w = np.exp(logw - lse)
        means[n] = w @ x
        last_weights = w
        idx = systematic_resample(logw, rng)
        x = x[idx]
        if theta is not None:
            # weighted estimate taken before resampling on the final step
            if n == len(obs) - 1:
                break
            theta = theta[idx]
    return x, theta, means, cond, None, last_weights


def particle_filter(model, data, particle_count: int, rng: np.random.Generator) -> FilterResult:
    """Estimate the log-likelihood of ``data`` by sequential Monte Carlo.

    ``model`` must provide ``initial_particles``, ``propagate`` and
    ``log_measurement``.  A collapse (every particle inconsistent with an
    observation) is reported through ``failed_step`` with ``loglik = -inf``.
    """
    if particle_count < 2:
        raise ValueError("particle_count must be >= 2")
    _, _, means, cond, failed, _ = _run_filter(model, data, particle_count, rng)
    if failed is not None:
        return FilterResult(-math.inf, means, failed, cond)
    return FilterResult(float(np.sum(cond)), means, None, cond)


@dataclass(frozen=True)
class MifConfig:
    iterations: int = 50
    particle_count: int = 1000
    rw_sd: float = 0.1
    cooling_factor: float = 0.95
    starts: int = 30
    start_box: tuple = ((0.01, 8.0),) * 4
    estimate_rho: bool = False
    rho_box: tuple = (0.5, 1.0)
    top_k: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations: must be >= 1")
        if self.particle_count < 2:
            raise ValueError("particle_count: must be >= 2")
        if not 0 < self.cooling_factor < 1:
            raise ValueError("cooling_factor: must lie in (0, 1)")
        if self.rw_sd < 0:
            raise ValueError("rw_sd: must be >= 0")
        if self.starts < 1:
            raise ValueError("starts: must be >= 1")
        if len(self.start_box) != 4:
            raise ValueError("start_box: needs one (low, high) pair per coefficient")
        for lo, hi in self.start_box:
            if not 0 < lo <= hi:
                raise ValueError("start_box: bounds must satisfy 0 < low <= high")
        if not 0 < self.rho_box[0] <= self.rho_box[1] <= 1:
            raise ValueError("rho_box: bounds must satisfy 0 < low <= high <= 1")


@dataclass
class MifResult:
    theta: CParams
    loglik: float
    trace: list
    rho: Optional[float] = None
    start: Optional[CParams] = None
    error: Optional[str] = None


def _perturbation(sd: float, with_rho: bool):
    lo, hi = math.log(PARAM_LOWER), math.log(PARAM_UPPER)

    def perturb(theta, rng):
        if sd == 0:
            return theta
        z = rng.standard_normal(theta.shape)
        out = np.empty_like(theta)
        out[:, :4] = np.exp(np.clip(np.log(theta[:, :4]) + sd * z[:, :4], lo, hi))
        if with_rho:
            r = np.clip(theta[:, 4], RHO_EPS, 1 - RHO_EPS)
            logit = np.log(r) - np.log1p(-r) + sd * z[:, 4]
            out[:, 4] = 1.0 / (1.0 + np.exp(-logit))
        return out

    return perturb


def _weighted_mean(center: np.ndarray, theta: np.ndarray, w: np.ndarray) -> np.ndarray:
    # center + weighted deviation: exact when every particle equals center
    return center + w @ (theta - center)


def mif_run(
    model: PopModel,
    data: ObservedSeries,
    config: MifConfig,
    start: CParams,
    rng: np.random.Generator,
) -> MifResult:
    """Iterated filtering from one starting point.

    Iteration ``m`` perturbs every particle's parameters before each time
    step by a log-normal factor with sd ``rw_sd * cooling_factor**m``; the
    next iteration restarts from the weighted particle mean.  The returned
    log-likelihood comes from an unperturbed filter at the final estimate.
    """
    if min(start.as_array()) <= 0:
        raise ValueError("starting parameters must be strictly positive")
    base = streams.child_seed(rng)
    eval_seed = streams.child_seed(rng)
    center = start.as_array()
    if config.estimate_rho:
        center = np.append(center, model.rho)
    trace = []
    for m in range(config.iterations):
        it_rng = streams.generator(base, "mif", m)
        sd = config.rw_sd * config.cooling_factor**m
        theta = np.tile(center, (config.particle_count, 1))
        _, theta, _, cond, failed, w = _run_filter(
            model, data, config.particle_count, it_rng, theta, _perturbation(sd, config.estimate_rho)
        )
        if failed is not None:
            raise FilterFailure(failed, m)
        if w is not None:
            center = _weighted_mean(center, theta, w)
        trace.append({"iteration": m + 1, "loglik": float(np.sum(cond)), "theta": center.tolist()})
    c_hat = CParams.from_array(center[:4])
    rho_hat = float(center[4]) if config.estimate_rho else None
    final = particle_filter(
        model.with_params(c_hat, rho_hat), data, config.particle_count, streams.generator(eval_seed, "final-loglik")
    )
    if final.failed:
        raise FilterFailure(final.failed_step, config.iterations)
    return MifResult(theta=c_hat, loglik=final.loglik, trace=trace, rho=rho_hat, start=start)


@dataclass
class MultiStartResult:
    results: list  # MifResult, best first; failed starts last

    @property
    def successful(self) -> list:
        return [r for r in self.results if r.error is None]

    def top(self, k: int = 10) -> list:
        return self.successful[:k]

    def summary(self, k: int = 10) -> tuple[CParams, CParams]:
        """Mean and sample standard deviation of the top-``k`` estimates."""
        best = self.top(k)
        if not best:
            raise ValueError("no successful fits to summarise")
        arr = np.array([r.theta.as_array() for r in best])
        sd = arr.std(axis=0, ddof=1) if len(best) > 1 else np.zeros(4)
        return CParams.from_array(arr.mean(axis=0)), CParams.from_array(sd)


def draw_starts(config: MifConfig, rng: np.random.Generator) -> list[CParams]:
    lo = np.array([b[0] for b in config.start_box])
    hi = np.array([b[1] for b in config.start_box])
    return [CParams.from_array(rng.uniform(lo, hi)) for _ in range(config.starts)]


def multi_start_mle(
    model: PopModel,
    data: ObservedSeries,
    config: MifConfig,
    rng: np.random.Generator,
    threads: int = 1,
) -> MultiStartResult:
    """Run iterated filtering from ``config.starts`` uniform starting points.

    Each start has its own random stream, so results do not depend on
    ``threads``.  A start whose filter collapses is kept with its error
    message and ranked last.
    """
    starts = draw_starts(config, rng)
    base = streams.child_seed(rng)
    rho_starts = rng.uniform(*config.rho_box, size=len(starts))

    def one(k: int) -> MifResult:
        m = model.with_params(starts[k], float(rho_starts[k]) if config.estimate_rho else None)
        try:
            return mif_run(m, data, config, starts[k], streams.generator(base, "start", k))
        except FilterFailure as exc:
            return MifResult(theta=starts[k], loglik=-math.inf, trace=[], start=starts[k], error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(starts))))
    else:
        results = [one(k) for k in range(len(starts))]
    order = sorted(range(len(results)), key=lambda k: (results[k].error is not None, -results[k].loglik, k))
    return MultiStartResult([results[k] for k in order])


def fit_window(
    data: ObservedSeries,
    s_min: float = 0.7,
    *,
    population: Optional[int] = None,
    rho: Optional[float] = None,
    initial_infected: int = 0,
    use_true_susceptible: bool = True,
) -> ObservedSeries:
    """Keep the leading days during which susceptibles are still plentiful.

    The series is cut before the first day whose susceptible fraction is
    below ``s_min``.  Without a true susceptible series the fraction is
    estimated as ``1 - (initial_infected + cumulative reported / rho) / N``.
    """
    if len(data) == 0:
        raise ValueError("data must be non-empty")
    if use_true_susceptible and data.susceptible is not None:
        if population is None:
            raise ValueError("population size is required")
        frac = np.asarray(data.susceptible, dtype=float) / population
    else:
        if population is None or not rho:
            raise ValueError("proxy mode needs population and a positive rho")
        frac = 1.0 - (initial_infected + np.cumsum(data.reported) / rho) / population
    below = np.flatnonzero(frac < s_min)
    if below.size == 0:
        return data
    if below[0] == 0:
        raise ValueError("susceptible fraction is below s_min on the first day; nothing to fit")
    return data.head(int(below[0]))


def simulate_pomp(model: PopModel, days: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``count`` replicate (true cases, reported cases) series."""
    x = model.initial_particles(count)
    true = np.zeros((count, days), dtype=np.int64)
    reported = np.zeros((count, days), dtype=np.int64)
    for t in range(days):
        x = model.propagate(x, rng)
        true[:, t] = x[:, 4]
        reported[:, t] = rng.binomial(x[:, 4], model.rho)
    return true, reported
