"""CSV and JSON formats for runs, fits, risk scores and evaluation output.

All CSV files have a header row, UTF-8 encoding and LF line endings.  JSON
is written with sorted keys so that files diff cleanly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .ilm import ContactLog
from .simulator import EpidemicOutput, Population

POPULATION_HEADER = ("id", "x1", "y1")
CONTACTS_HEADER = ("day", "susceptible_id", "infectious_id")
SERIES_HEADER = ("day", "S", "E", "I", "R", "new_cases", "reported_cases")
STATES_HEADER = ("day", "id", "state")
RISK_HEADER = ("id", "day", "r_s", "window_prob", "score", "predicted")
LABELS_HEADER = ("id", "day", "label")
ROC_HEADER = ("fpr", "tpr")


class FormatError(ValueError):
    pass


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path, header: Sequence[str]) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected header {','.join(header)}") from None
        if tuple(found) != tuple(header):
            raise FormatError(f"{path}: header {','.join(found)} does not match {','.join(header)}")
        return list(reader)


def _int_columns(path, header) -> np.ndarray:
    rows = read_csv(path, header)
    try:
        return np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_population(path, population: Population) -> None:
    write_csv(path, POPULATION_HEADER, zip(population.ids.tolist(), population.x1.tolist(), population.y1.tolist()))


def read_population(path) -> tuple[np.ndarray, np.ndarray]:
    arr = _int_columns(path, POPULATION_HEADER)
    if not np.array_equal(arr[:, 0], np.arange(len(arr))):
        raise FormatError(f"{path}: ids must be 0..N-1 in order")
    return arr[:, 1], arr[:, 2]


def write_contacts(path, contacts: ContactLog) -> None:
    write_csv(path, CONTACTS_HEADER, contacts.entries())


def read_contacts(path) -> ContactLog:
    arr = _int_columns(path, CONTACTS_HEADER)
    return ContactLog(arr[:, 0], arr[:, 1], arr[:, 2])


def write_series(path, output: EpidemicOutput) -> None:
    write_csv(path, SERIES_HEADER, output.series_rows())


def read_series(path) -> np.ndarray:
    """(days, 7) integer array in header order."""
    return _int_columns(path, SERIES_HEADER)


def write_states(path, states: np.ndarray) -> None:
    """Day-0 state of everyone, then one row per state change.

    Row ``(t, i, s)`` means individual ``i`` is in state ``s`` from the
    start of day ``t`` (after ``t`` simulated days).
    """
    states = np.asarray(states)
    rows = [(0, i, int(s)) for i, s in enumerate(states[0])]
    changed_t, changed_i = np.nonzero(states[1:] != states[:-1])
    rows.extend(zip((changed_t + 1).tolist(), changed_i.tolist(), states[changed_t + 1, changed_i].tolist()))
    write_csv(path, STATES_HEADER, rows)


def read_states(path, days: Optional[int] = None) -> np.ndarray:
    """Rebuild the ``(days + 1, N)`` state matrix written by :func:`write_states`.

    ``days`` defaults to the last day with a state change.
    """
    arr = _int_columns(path, STATES_HEADER)
    if days is None:
        days = int(arr[:, 0].max()) if len(arr) else 0
    initial = arr[arr[:, 0] == 0]
    n = len(initial)
    if not np.array_equal(initial[:, 1], np.arange(n)):
        raise FormatError(f"{path}: day-0 rows must list ids 0..N-1 in order")
    if (arr[:, 0] > days).any():
        raise FormatError(f"{path}: state change after day {days}")
    states = np.empty((days + 1, n), dtype=np.int8)
    states[0] = initial[:, 2]
    changes = arr[arr[:, 0] > 0]
    pos = 0
    for t in range(1, days + 1):
        states[t] = states[t - 1]
        while pos < len(changes) and changes[pos, 0] == t:
            states[t, changes[pos, 1]] = changes[pos, 2]
            pos += 1
    if pos != len(changes):
        raise FormatError(f"{path}: state changes must be sorted by day")
    return states


def write_run(directory, output: EpidemicOutput) -> dict:
    """Write the four run CSVs; returns their paths by role."""
    directory = Path(directory)
    paths = {
        "population": directory / "population.csv",
        "contacts": directory / "contacts.csv",
        "series": directory / "series.csv",
        "states": directory / "states.csv",
    }
    write_population(paths["population"], output.population)
    write_contacts(paths["contacts"], output.contacts)
    write_series(paths["series"], output)
    write_states(paths["states"], output.states)
    return paths


def read_run(series_path, contacts_path, population_path, states_path) -> EpidemicOutput:
    """Reassemble a simulated run from its CSV files."""
    x1, y1 = read_population(population_path)
    series = read_series(series_path)
    days = len(series)
    states = read_states(states_path, days)
    if states.shape[1] != len(x1):
        raise FormatError(f"{states_path}: {states.shape[1]} individuals, population has {len(x1)}")
    population = Population(x1, y1, states[0].copy())
    return EpidemicOutput(
        population=population,
        states=states,
        contacts=read_contacts(contacts_path),
        new_cases=series[:, 5].copy(),
        reported=series[:, 6].copy(),
    )


def write_risk(path, ids, days, r_s, window_prob, score, predicted) -> None:
    rows = zip(
        np.asarray(ids).tolist(),
        np.asarray(days).tolist(),
        np.asarray(r_s, dtype=float).tolist(),
        np.asarray(window_prob, dtype=float).tolist(),
        np.asarray(score, dtype=float).tolist(),
        np.asarray(predicted).astype(int).tolist(),
    )
    write_csv(path, RISK_HEADER, rows)


def read_risk(path) -> dict:
    rows = read_csv(path, RISK_HEADER)
    try:
        cols = list(zip(*rows)) if rows else [()] * len(RISK_HEADER)
        return {
            "id": np.array(cols[0], dtype=np.int64),
            "day": np.array(cols[1], dtype=np.int64),
            "r_s": np.array(cols[2], dtype=float),
            "window_prob": np.array(cols[3], dtype=float),
            "score": np.array(cols[4], dtype=float),
            "predicted": np.array(cols[5], dtype=np.int64),
        }
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_labels(path) -> dict:
    arr = _int_columns(path, LABELS_HEADER)
    return {(int(i), int(t)): int(lab) for i, t, lab in arr}


def write_roc(path, roc_points: np.ndarray) -> None:
    write_csv(path, ROC_HEADER, np.asarray(roc_points, dtype=float).tolist())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    """Sorted-key JSON; non-finite floats become null."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
