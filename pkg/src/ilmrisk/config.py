"""Declarative run configuration: a YAML file plus ``--set section.key=value`` overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import yaml

from .ilm import PARAMETER_SETS, IlmParams
from .inference import MifConfig
from .risk import SymptomModel
from .simulator import SimConfig

SCENARIO_NAMES = ("none", "delayed", "instant")

DEFAULTS = {
    "simulation": {
        "population_size": 10000,
        "days": 100,
        "p_imm": 0.2,
        "p_sym": 0.7,
        "mean_contacts": 5.0,
        "initial_infectious": 10,
        "sigma": 0.26,
        "gamma": 0.6,
        "rho": 0.9,
    },
    "ilm": {
        "parameter_set": 1,
        # explicit coefficients override the parameter set when all four are given
        "a0": None,
        "a1": None,
        "b0": None,
        "b1": None,
    },
    "inference": {
        "iterations": 50,
        "particle_count": 1000,
        "rw_sd": 0.1,
        "cooling_factor": 0.95,
        "starts": 30,
        "start_low": 0.01,
        "start_high": 8.0,
        "estimate_rho": False,
        "top_k": 10,
        "s_min": 0.7,
        "beta_sample_size": 100,
        "beta_sample_s_min": 0.95,
    },
    "risk": {
        "window": 14,
        "prevalence": "overall",
        "params_source": "ratios",
        "jitter": 0.1,
        "infected_symptoms": list(SymptomModel.infected),
        "uninfected_symptoms": list(SymptomModel.uninfected),
        "p_male": 0.5,
        "records": "contacted",
    },
    "intervention": {
        "scenarios": ["none", "delayed:4", "instant"],
        # "classifier": mean minus sd of the window risk of infected records in the unmitigated run
        "threshold": "classifier",
        "quarantine_days": 14,
    },
    "evaluation": {
        "resamples": 1000,
        "level": 0.95,
    },
}

_NULLABLE_FLOAT = {("ilm", "a0"), ("ilm", "a1"), ("ilm", "b0"), ("ilm", "b1")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if (section, key) in _NULLABLE_FLOAT:
        if value is None:
            return None
        default = 0.0
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    if isinstance(default, str):
        if isinstance(value, (int, float)) and not isinstance(value, bool) and key in ("prevalence", "threshold"):
            if math.isnan(value):
                raise ConfigError(f"{where}: must be a number, got nan")
            return float(value)
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def parse_scenario(name: str) -> tuple[str, int]:
    """``none``, ``instant`` or ``delayed:<days>`` to (kind, delay)."""
    kind, _, arg = name.partition(":")
    if kind == "none" and not arg:
        return "none", 0
    if kind == "instant" and not arg:
        return "instant", 0
    if kind == "delayed":
        try:
            delay = int(arg) if arg else 4
        except ValueError:
            raise ConfigError(f"scenario {name!r}: delay must be an integer") from None
        if delay < 0:
            raise ConfigError(f"scenario {name!r}: delay must be >= 0")
        return "delayed", delay
    raise ConfigError(f"unknown scenario {name!r}; choose from none, delayed:<days>, instant")


@dataclass(frozen=True)
class Config:
    """Validated configuration with typed views for each stage."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def digest(self) -> str:
        canonical = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(seed=seed, **self.values["simulation"])

    def ilm_params(self) -> IlmParams:
        ilm = self.values["ilm"]
        explicit = [ilm[k] for k in ("a0", "a1", "b0", "b1")]
        if all(v is not None for v in explicit):
            return IlmParams(*explicit)
        return PARAMETER_SETS[ilm["parameter_set"]]

    def mif_config(self) -> MifConfig:
        inf = self.values["inference"]
        box = ((inf["start_low"], inf["start_high"]),) * 4
        return MifConfig(
            iterations=inf["iterations"],
            particle_count=inf["particle_count"],
            rw_sd=inf["rw_sd"],
            cooling_factor=inf["cooling_factor"],
            starts=inf["starts"],
            start_box=box,
            estimate_rho=inf["estimate_rho"],
            top_k=inf["top_k"],
        )

    def symptom_model(self) -> SymptomModel:
        risk = self.values["risk"]
        return SymptomModel(
            infected=tuple(risk["infected_symptoms"]),
            uninfected=tuple(risk["uninfected_symptoms"]),
            p_male=risk["p_male"],
        )

    def scenarios(self) -> list[tuple[str, str, int]]:
        return [(name, *parse_scenario(name)) for name in self.values["intervention"]["scenarios"]]


def _validate(values: dict) -> None:
    try:
        SimConfig(**values["simulation"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"simulation.{exc}") from None

    ilm = values["ilm"]
    explicit = [ilm[k] for k in ("a0", "a1", "b0", "b1")]
    if any(v is not None for v in explicit) and not all(v is not None for v in explicit):
        raise ConfigError("ilm: give all of a0, a1, b0, b1 or none of them")
    if all(v is not None for v in explicit):
        try:
            IlmParams(*explicit)
        except ValueError as exc:
            raise ConfigError(f"ilm: {exc}") from None
    elif ilm["parameter_set"] not in PARAMETER_SETS:
        raise ConfigError(f"ilm.parameter_set: must be one of {sorted(PARAMETER_SETS)}, got {ilm['parameter_set']}")

    inf = values["inference"]
    try:
        Config(values).mif_config()
    except ValueError as exc:
        raise ConfigError(f"inference.{exc}") from None
    for key in ("s_min", "beta_sample_s_min"):
        if not 0 < inf[key] <= 1:
            raise ConfigError(f"inference.{key}: must lie in (0, 1], got {inf[key]}")
    if inf["beta_sample_size"] < 1:
        raise ConfigError("inference.beta_sample_size: must be >= 1")
    if not 1 <= inf["top_k"]:
        raise ConfigError("inference.top_k: must be >= 1")

    risk = values["risk"]
    if risk["window"] < 0:
        raise ConfigError(f"risk.window: must be >= 0, got {risk['window']}")
    prevalence = risk["prevalence"]
    if isinstance(prevalence, str):
        if prevalence not in ("overall", "current"):
            raise ConfigError(f"risk.prevalence: must be 'overall', 'current' or a number in (0, 1), got {prevalence!r}")
    elif not 0 < prevalence < 1:
        raise ConfigError(f"risk.prevalence: must lie in (0, 1), got {prevalence}")
    if risk["params_source"] not in ("ratios", "fit", "truth"):
        raise ConfigError(f"risk.params_source: must be 'ratios', 'fit' or 'truth', got {risk['params_source']!r}")
    if risk["jitter"] < 0:
        raise ConfigError("risk.jitter: must be >= 0")
    for key in ("infected_symptoms", "uninfected_symptoms"):
        probs = risk[key]
        if len(probs) != 4 or not all(isinstance(p, (int, float)) and 0 <= p <= 1 for p in probs):
            raise ConfigError(f"risk.{key}: need four prevalences in [0, 1]")
    if not 0 <= risk["p_male"] <= 1:
        raise ConfigError("risk.p_male: must lie in [0, 1]")
    if risk["records"] not in ("contacted", "all"):
        raise ConfigError(f"risk.records: must be 'contacted' or 'all', got {risk['records']!r}")

    iv = values["intervention"]
    if not iv["scenarios"]:
        raise ConfigError("intervention.scenarios: need at least one scenario")
    for name in iv["scenarios"]:
        if not isinstance(name, str):
            raise ConfigError(f"intervention.scenarios: expected scenario names, got {name!r}")
        parse_scenario(name)
    if len(set(iv["scenarios"])) != len(iv["scenarios"]):
        raise ConfigError("intervention.scenarios: names must be unique")
    if isinstance(iv["threshold"], str) and iv["threshold"] != "classifier":
        raise ConfigError(f"intervention.threshold: must be 'classifier' or a number, got {iv['threshold']!r}")
    if iv["quarantine_days"] < 0:
        raise ConfigError("intervention.quarantine_days: must be >= 0")

    ev = values["evaluation"]
    if ev["resamples"] < 1:
        raise ConfigError("evaluation.resamples: must be >= 1")
    if not 0 < ev["level"] < 1:
        raise ConfigError("evaluation.level: must lie in (0, 1)")


def _apply(values: dict, section: str, key: str, value) -> None:
    if section not in DEFAULTS:
        raise ConfigError(f"unknown section {section!r}; expected one of {', '.join(DEFAULTS)}")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"{section}.{key}: unknown field")
    values[section][key] = _coerce(section, key, value, DEFAULTS[section][key])


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with the value parsed as YAML."""
    target, sep, raw = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override {text!r}: expected section.key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return section, key, value


def build_config(document: Optional[dict] = None, overrides: Sequence[str] = ()) -> Config:
    values = copy.deepcopy(DEFAULTS)
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError("config: top level must be a mapping of sections")
    for section, body in document.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section {section!r}; expected one of {', '.join(DEFAULTS)}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a mapping")
        for key, value in body.items():
            _apply(values, section, key, value)
    for text in overrides:
        _apply(values, *parse_override(text))
    _validate(values)
    return Config(values)


def load_config(path=None, overrides: Sequence[str] = ()) -> Config:
    document = None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                document = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: {path} is not valid YAML: {exc}") from None
    return build_config(document, overrides)
