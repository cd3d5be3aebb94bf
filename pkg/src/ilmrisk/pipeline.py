"""End-to-end stages shared by the command line and the acceptance suite.

simulate -> fit -> score -> evaluate, plus intervention scenarios.  Every
stage draws its randomness from the run seed through named streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as streams
from .config import Config
from .evaluation import EvalReport, evaluate, peak_comparison, PeakReport
from .ilm import CParams, IlmParams, State, heuristic_ratios, params_from_fit
from .inference import (
    MultiStartResult,
    ObservedSeries,
    PopModel,
    build_beta_sample,
    fit_window,
    multi_start_mle,
)
from .risk import (
    WindowRisk,
    classification_threshold,
    infection_labels,
    log_survival_matrix,
    score_run,
    window_probabilities,
)
from .simulator import EpidemicOutput, run_epidemic, run_with_quarantine


class NumericalFailure(RuntimeError):
    pass


def simulate(config: Config, seed: int) -> EpidemicOutput:
    return run_epidemic(config.sim_config(seed), config.ilm_params())


@dataclass
class FitOutcome:
    fits: MultiStartResult
    window_days: int
    mean: CParams
    sd: CParams
    ratios: tuple[float, float]

    def as_dict(self) -> dict:
        starts = []
        for r in self.fits.results:
            entry = {
                "theta": r.theta.as_dict(),
                "start": r.start.as_dict() if r.start is not None else None,
                "loglik": r.loglik if r.error is None else None,
                "trace": r.trace,
            }
            if r.rho is not None:
                entry["rho"] = r.rho
            if r.error is not None:
                entry["error"] = r.error
            starts.append(entry)
        return {
            "starts": starts,
            "top10_mean": self.mean.as_dict(),
            "top10_sd": self.sd.as_dict(),
            "ratio_estimates": {"a0/a1": self.ratios[0], "b0/b1": self.ratios[1]},
            "fit_window_days": self.window_days,
        }


def fit(output: EpidemicOutput, config: Config, seed: int, threads: int = 1) -> FitOutcome:
    """Fit the population model to a run's reported cases.

    The susceptible series of the run decides the fit window.  The beta
    sample is drawn from individuals who became infectious before the
    susceptible fraction first fell below ``beta_sample_s_min``.
    """
    inf = config["inference"]
    sim = config["simulation"]
    n = len(output.population)
    comp = output.compartments
    data = ObservedSeries(output.reported, susceptible=comp[1:, 0], true_cases=output.new_cases)
    try:
        window = fit_window(data, inf["s_min"], population=n)
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from None
    frac = comp[:, 0] / n
    below = np.flatnonzero(frac < inf["beta_sample_s_min"])
    last_onset = int(below[0]) - 1 if below.size else None
    sample = build_beta_sample(
        output.x1,
        output.y1,
        output.states,
        output.contacts,
        inf["beta_sample_size"],
        streams.generator(seed, "beta-sample"),
        last_onset_day=last_onset,
    )
    e0, i0, r0 = (int(comp[0, s]) for s in (State.EXPOSED, State.INFECTIOUS, State.REMOVED))
    model = PopModel(CParams(1.0, 1.0, 1.0, 1.0), sim["sigma"], sim["gamma"], sim["rho"], n, sample, e0, i0, r0)
    mif = config.mif_config()
    fits = multi_start_mle(model, window, mif, streams.generator(seed, "fit"), threads=threads)
    if not fits.successful:
        raise NumericalFailure("every start failed: " + "; ".join(r.error for r in fits.results))
    mean, sd = fits.summary(mif.top_k)
    ratios = heuristic_ratios([r.theta for r in fits.top(mif.top_k)])
    return FitOutcome(fits, len(window), mean, sd, ratios)


def risk_params(config: Config, seed: int, fit_result: Optional[dict] = None) -> IlmParams:
    """Coefficients used for risk scoring.

    ``ratios``: a0 and b0 are the configured truth with a log-normal jitter,
    a1 and b1 follow from the fitted ratios.  ``fit``: a symmetric split of
    the fitted products.  ``truth``: the configured coefficients.
    """
    truth = config.ilm_params()
    source = config["risk"]["params_source"]
    if source == "truth":
        return truth
    if fit_result is None:
        raise ValueError(f"risk.params_source={source} needs fit results")
    ra = fit_result["ratio_estimates"]["a0/a1"]
    rb = fit_result["ratio_estimates"]["b0/b1"]
    if source == "fit":
        return params_from_fit(CParams(**fit_result["top10_mean"]), ra, rb)
    z = streams.generator(seed, "risk-jitter").standard_normal(2)
    jitter = config["risk"]["jitter"]
    a0 = truth.a0 * math.exp(jitter * z[0])
    b0 = truth.b0 * math.exp(jitter * z[1])
    return IlmParams(a0=a0, a1=a0 / ra, b0=b0, b1=b0 / rb)


@dataclass
class ScoreTable:
    """Labelled (agent, day) risk records of one run, day-major."""

    ids: np.ndarray
    days: np.ndarray
    r_s: np.ndarray
    window_prob: np.ndarray
    score: np.ndarray
    labels: np.ndarray
    predicted: np.ndarray
    threshold: float

    def evaluation_mask(self, records: str) -> np.ndarray:
        """Records used for evaluation: all, or those with an infectious contact in the window."""
        if records == "all":
            return np.ones(len(self.ids), dtype=bool)
        return self.window_prob > 0


def score(output: EpidemicOutput, params: IlmParams, config: Config, seed: int) -> ScoreTable:
    risk = config["risk"]
    run = score_run(output, output.states, params, risk["window"], config.symptom_model(), seed, risk["prevalence"])
    t_idx, i_idx = run.index()
    table = ScoreTable(
        ids=i_idx,
        days=t_idx,
        r_s=run.r_s[t_idx, i_idx],
        window_prob=run.window_prob[t_idx, i_idx],
        score=run.score[t_idx, i_idx],
        labels=run.labels[t_idx, i_idx].astype(np.int64),
        predicted=np.zeros(len(t_idx), dtype=bool),
        threshold=math.nan,
    )
    mask = table.evaluation_mask(risk["records"])
    infected = table.score[mask & (table.labels == 1)]
    if infected.size:
        table.threshold = classification_threshold(infected)
        table.predicted = table.score >= table.threshold
    return table


def evaluate_scores(scores, labels, predicted, config: Config, seed: int) -> EvalReport:
    ev = config["evaluation"]
    return evaluate(
        scores, labels, predicted, resamples=ev["resamples"], rng=streams.generator(seed, "bootstrap"), level=ev["level"]
    )


def quarantine_threshold(output: EpidemicOutput, params: IlmParams, window: int) -> float:
    """Classification threshold applied to the window risk of an unmitigated run.

    Mean minus sd of the window probabilities of infected records that had
    an infectious contact in their window.
    """
    wp = window_probabilities(log_survival_matrix(output, params), window)
    labels = infection_labels(output.states, window)
    infected = wp[(labels == 1) & (wp > 0)]
    if infected.size == 0:
        raise NumericalFailure("no infected records with contacts; cannot set the quarantine threshold")
    return classification_threshold(infected)


def intervene(
    config: Config, params: IlmParams, seed: int, scenarios: Optional[list] = None
) -> tuple[dict, PeakReport, Optional[float]]:
    """Run every scenario on the same seed.

    Returns the outputs by scenario name, the peak report and the quarantine
    threshold (None when no scenario quarantines).
    """
    sim = config.sim_config(seed)
    truth = config.ilm_params()
    iv = config["intervention"]
    window = config["risk"]["window"]
    scenarios = config.scenarios() if scenarios is None else scenarios
    baseline = None
    threshold = None
    if any(kind != "none" for _, kind, _ in scenarios):
        threshold = iv["threshold"]
        if threshold == "classifier":
            baseline = run_epidemic(sim, truth)
            threshold = quarantine_threshold(baseline, params, window)
    outputs = {}
    for name, kind, delay in scenarios:
        if kind == "none":
            outputs[name] = baseline if baseline is not None else run_epidemic(sim, truth)
        else:
            outputs[name] = run_with_quarantine(
                sim, truth, WindowRisk(params, window), threshold, delay_days=delay, quarantine_days=iv["quarantine_days"]
            )
    report = peak_comparison({name: out.new_cases for name, out in outputs.items()})
    return outputs, report, threshold
