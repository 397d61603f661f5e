"""CSV / JSON / NPZ serialisation of events, trajectories and fits.

All CSV files have a header row, ``,`` separators and ``.`` decimals.
Floats are written with 17 significant digits so they read back
bit-identically.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .continuous import PAD, EventList
from .discrete import EventTensor
from .errors import ValidationError


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def json_number(x):
    """JSON-safe float: non-finite values become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    x = float(x)
    return x if math.isfinite(x) else fmt(x)


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _read_rows(path, expected):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(line for line in fh if line.strip() and not line.startswith("#"))
            header = next(reader, None)
            if header is None:
                raise ValidationError(f"{path}: file is empty")
            header = [h.strip() for h in header]
            if header != list(expected):
                raise ValidationError(f"{path}: header {','.join(header)} does not match {','.join(expected)}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(expected):
                    raise ValidationError(f"{path}: line {lineno} has {len(row)} fields, expected {len(expected)}")
                rows.append((lineno, [v.strip() for v in row]))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    return rows


def _int(text, path, lineno, what):
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"{path}: line {lineno}: {what} {text!r} is not a number") from None
    if value != int(value):
        raise ValidationError(f"{path}: line {lineno}: {what} {text!r} is not an integer")
    return int(value)


# --- event lists -----------------------------------------------------------

EVENT_LIST_HEADER = ("time", "transition", "unit")


def write_event_list(path, events: EventList):
    ev = events.trimmed()
    _write_rows(path, EVENT_LIST_HEADER, zip(ev.times, ev.transitions, ev.units))


def read_event_list(path, length: int | None = None) -> EventList:
    """Read an event-list CSV; ``length`` re-pads to a fixed number of slots."""
    rows = _read_rows(path, EVENT_LIST_HEADER)
    times, trs, uns = [], [], []
    for lineno, (t, k, i) in rows:
        try:
            times.append(float(t))
        except ValueError:
            raise ValidationError(f"{path}: line {lineno}: time {t!r} is not a number") from None
        trs.append(_int(k, path, lineno, "transition"))
        uns.append(_int(i, path, lineno, "unit"))
    ev = EventList(np.array(times, dtype=np.float64), np.array(trs, dtype=np.int64), np.array(uns, dtype=np.int64))
    if np.any(ev.transitions == PAD):
        ev = ev.trimmed()
    if length is not None:
        ev = ev.padded(max(length, len(ev)))
    return ev


# --- event tensors -----------------------------------------------------------

EVENT_TENSOR_HEADER = ("step", "stratum", "transition", "count")


def write_event_tensor(path, events: EventTensor):
    path = Path(path)
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path, counts=events.counts)
        return
    c = events.counts
    T, M, Z = c.shape
    rows = ((k, i, j, c[k, i, j]) for k in range(T) for i in range(M) for j in range(Z))
    _write_rows(path, EVENT_TENSOR_HEADER, rows)


def read_event_tensor(path, num_strata: int, num_transitions: int) -> EventTensor:
    """Read a long-format CSV (missing rows count as 0) or an ``.npz`` with key ``counts``."""
    path = Path(path)
    if path.suffix == ".npz":
        try:
            with np.load(path) as data:
                counts = data["counts"]
        except (OSError, KeyError, ValueError) as exc:
            raise ValidationError(f"cannot read {path}: {exc}") from None
        return EventTensor(counts)
    rows = _read_rows(path, EVENT_TENSOR_HEADER)
    parsed = []
    for lineno, vals in rows:
        k, i, j, n = (_int(v, path, lineno, name) for v, name in zip(vals, EVENT_TENSOR_HEADER))
        if k < 0 or not 0 <= i < num_strata or not 0 <= j < num_transitions:
            raise ValidationError(f"{path}: line {lineno}: index out of range for a model with "
                                  f"{num_strata} strata and {num_transitions} transitions")
        if n < 0:
            raise ValidationError(f"{path}: line {lineno}: negative count")
        parsed.append((lineno, k, i, j, n))
    T = max((p[1] for p in parsed), default=-1) + 1
    counts = np.zeros((T, num_strata, num_transitions), dtype=np.int64)
    seen = set()
    for lineno, k, i, j, n in parsed:
        if (k, i, j) in seen:
            raise ValidationError(f"{path}: line {lineno}: duplicate entry for step {k}, stratum {i}, transition {j}")
        seen.add((k, i, j))
        counts[k, i, j] = n
    return EventTensor(counts)


# --- trajectories ----------------------------------------------------------------

def state_columns(compartments, num_strata) -> list:
    """Stratum-major column names ``S_0, I_0, ..., S_1, ...``."""
    return [f"{c}_{i}" for i in range(num_strata) for c in compartments]


def write_states(path, times, states, compartments):
    states = np.asarray(states)
    n, M, X = states.shape
    header = ["time"] + state_columns(compartments, M)
    flat = states.reshape(n, M * X)
    _write_rows(path, header, ([t] + list(row) for t, row in zip(times, flat)))


def read_states(path, compartments, num_strata):
    header = ["time"] + state_columns(compartments, num_strata)
    rows = _read_rows(path, header)
    data = np.array([[float(v) for v in vals] for _, vals in rows], dtype=np.float64).reshape(-1, len(header))
    return data[:, 0], data[:, 1:].reshape(-1, num_strata, len(compartments))


def summarize(times, replicate_states, compartments):
    """Per-time mean, 5% and 95% quantiles per compartment, summed over strata.

    ``replicate_states`` is ``(R, n_times, M, X)``.
    """
    totals = np.asarray(replicate_states, dtype=np.float64).sum(axis=2)
    mean = totals.mean(axis=0)
    lo, hi = np.quantile(totals, [0.05, 0.95], axis=0)
    header = ["time"]
    for c in compartments:
        header += [f"{c}_mean", f"{c}_p05", f"{c}_p95"]
    rows = []
    for k, t in enumerate(times):
        row = [float(t)]
        for j in range(len(compartments)):
            row += [mean[k, j], lo[k, j], hi[k, j]]
        rows.append(row)
    return header, rows


def write_summary(path, times, replicate_states, compartments):
    header, rows = summarize(times, replicate_states, compartments)
    _write_rows(path, header, rows)


# --- observed counts ----------------------------------------------------------------

COUNTS_HEADER = ("step", "stratum", "count")


def write_counts(path, counts):
    counts = np.asarray(counts)
    T, M = counts.shape
    _write_rows(path, COUNTS_HEADER, ((k, i, counts[k, i]) for k in range(T) for i in range(M)))


def read_counts(path, num_steps: int, num_strata: int) -> np.ndarray:
    """Long-format observed counts ``step,stratum,count`` into a ``(T, M)`` array."""
    rows = _read_rows(path, COUNTS_HEADER)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    out = np.zeros((num_steps, num_strata), dtype=np.int64)
    seen = set()
    for lineno, vals in rows:
        k, i, n = (_int(v, path, lineno, name) for v, name in zip(vals, COUNTS_HEADER))
        if not (0 <= k < num_steps and 0 <= i < num_strata):
            raise ValidationError(f"{path}: line {lineno}: step/stratum outside ({num_steps}, {num_strata})")
        if n < 0:
            raise ValidationError(f"{path}: line {lineno}: negative count")
        if (k, i) in seen:
            raise ValidationError(f"{path}: line {lineno}: duplicate entry for step {k}, stratum {i}")
        seen.add((k, i))
        out[k, i] = n
    return out


# --- fits -----------------------------------------------------------------------------

def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_bootstrap(path, result):
    header = list(result.labels) + ["converged"]
    rows = ([*row, int(ok)] for row, ok in zip(result.samples, result.converged))
    _write_rows(path, header, rows)


def read_bootstrap(path, labels):
    rows = _read_rows(path, list(labels) + ["converged"])
    data = np.array([[float(v) for v in vals] for _, vals in rows], dtype=np.float64).reshape(-1, len(labels) + 1)
    return data[:, :-1], data[:, -1].astype(bool)
