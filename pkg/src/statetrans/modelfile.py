"""Sectioned plain-text model files.

Example::

    [compartments]
    S I R

    [parameters]
    beta = 0.3
    gamma = 0.1
    N = 1000

    [transitions]
    S -> I : beta * I / N
    I -> R : gamma

    [initial_state]
    990 10 0

    [integrator]
    kind = discrete
    num_steps = 100
    time_delta = 1

See ``docs/model_format.md`` for the full grammar.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import dsl
from .errors import (
    EvalError,
    MissingParameterError,
    ParseError,
    UnknownIdentifierError,
    ValidationError,
)
from .model import INTEGRATORS, ModelSpec, check_model, incidence_from_transitions

SECTIONS = (
    "compartments",
    "parameters",
    "arrays",
    "transitions",
    "initial_state",
    "integrator",
    "observation",
    "fit",
)
REQUIRED = ("compartments", "transitions", "initial_state", "integrator")

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_HEADER_RE = re.compile(r"^\s*\[\s*([A-Za-z_]+)\s*\]\s*$")
_ASSIGN_RE = re.compile(rf"^(\s*)({_IDENT})\s*(?:=\s*(.*?))?\s*$")
_TRANSITION_RE = re.compile(rf"^\s*({_IDENT})\s*->\s*({_IDENT})\s*:(.*)$")
_CSV_RE = re.compile(r"^csv\(\s*[\"']?(.+?)[\"']?\s*\)$")

_INTEGRATOR_KEYS = {
    "kind": str,
    "num_steps": int,
    "initial_step": float,
    "time_delta": float,
    "substeps": int,
    "method": str,
    "rtol": float,
    "atol": float,
}


@dataclass(frozen=True)
class Transition:
    source: str
    destination: str
    expr: object
    line: int

    @property
    def label(self):
        return f"{self.source}->{self.destination}"


@dataclass
class ModelFile:
    """Parsed model file.  ``build(overrides)`` produces a validated :class:`ModelSpec`."""

    compartments: tuple
    parameters: dict
    arrays: dict
    transitions: list
    integrator: dict
    initial_rows: np.ndarray | None = None
    initial_exprs: dict | None = None
    observation: dict | None = None
    fit: dict | None = None
    path: str | None = None
    _compiled: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._compiled = [dsl.compile_expr(tr.expr, self.compartments) for tr in self.transitions]
        self._batched = [dsl.compile_expr(tr.expr, self.compartments, batched=True) for tr in self.transitions]
        self._initial_compiled = {
            c: dsl.compile_expr(e) for c, e in (self.initial_exprs or {}).items()
        }

    # -- structure ---------------------------------------------------------

    @property
    def name(self) -> str:
        return Path(self.path).stem if self.path else "model"

    @property
    def incidence(self) -> np.ndarray:
        index = {c: j for j, c in enumerate(self.compartments)}
        pairs = [(index[tr.source], index[tr.destination]) for tr in self.transitions]
        return incidence_from_transitions(len(self.compartments), pairs)

    @property
    def num_strata(self) -> int:
        if self.initial_rows is not None:
            return self.initial_rows.shape[0]
        for value in self.arrays.values():
            if np.ndim(value) >= 1:
                return np.shape(value)[0]
        return 1

    @property
    def kind(self) -> str:
        return self.integrator["kind"]

    @property
    def solver_options(self) -> dict:
        return {k: self.integrator[k] for k in ("method", "substeps", "rtol", "atol") if k in self.integrator}

    # -- parameters --------------------------------------------------------

    def parameter_values(self, overrides: Mapping[str, float] | None = None) -> dict:
        """Defaults merged with ``overrides``; every parameter must end up with a value."""
        overrides = dict(overrides or {})
        unknown = [k for k in overrides if k not in self.parameters]
        if unknown:
            raise ValidationError([f"unknown parameter '{k}'" for k in unknown])
        values = {}
        for name, default in self.parameters.items():
            value = overrides.get(name, default)
            if value is None:
                raise MissingParameterError(name)
            value = float(value)
            if not np.isfinite(value):
                raise ValidationError(f"parameter '{name}' must be finite, got {value}")
            values[name] = value
        return values

    def rate_functions(self, params: Mapping[str, float]) -> list:
        return [
            dsl.RateExpression(tr.expr, f, params, self.arrays, compartments=self.compartments, batched=fb)
            for tr, f, fb in zip(self.transitions, self._compiled, self._batched)
        ]

    def initial_state_for(self, params: Mapping[str, float], initial_step: float = 0.0) -> np.ndarray:
        if self.initial_rows is not None:
            return self.initial_rows
        M = self.num_strata
        X = len(self.compartments)
        out = np.zeros((M, X))
        empty = np.zeros((M, 0))
        for j, c in enumerate(self.compartments):
            f = self._initial_compiled.get(c)
            if f is None:
                continue
            with np.errstate(all="ignore"):
                value = f(initial_step, empty, params, self.arrays)
            out[:, j] = dsl.to_vector(value, M, f"initial state of '{c}'")
        if self.kind in ("continuous", "discrete"):
            rounded = np.round(out)
            if np.all(np.abs(out - rounded) < 1e-9):
                out = rounded
        return out

    def build(self, overrides: Mapping[str, float] | None = None, *, integrator: str | None = None,
              num_steps: int | None = None, initial_step: float | None = None,
              time_delta: float | None = None) -> ModelSpec:
        """Validated :class:`ModelSpec` for the given parameter values."""
        params = self.parameter_values(overrides)
        kind = integrator or self.kind
        t0 = self.integrator.get("initial_step", 0.0) if initial_step is None else initial_step
        state = self.initial_state_for(params, t0)
        if kind in ("continuous", "discrete"):
            state = np.asarray(state)
            if np.all(state == np.round(state)):
                state = state.astype(np.int64)
        spec = ModelSpec(
            integrator=kind,
            incidence=self.incidence,
            rates=self.rate_functions(params),
            initial_state=state,
            num_steps=self.integrator["num_steps"] if num_steps is None else num_steps,
            initial_step=float(t0),
            time_delta=float(self.integrator.get("time_delta", 1.0) if time_delta is None else time_delta),
            compartments=self.compartments,
            name=self.name,
        )
        return check_model(spec)


# --- parsing -----------------------------------------------------------------

def _strip_comment(text):
    i = text.find("#")
    return text if i < 0 else text[:i]


def _split_sections(text):
    sections = {}
    order = []
    current = None
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        m = _HEADER_RE.match(line)
        if m:
            name = m.group(1).lower()
            if name not in SECTIONS:
                raise ParseError(f"unknown section [{name}]", lineno, line.index("[") + 1, SECTIONS)
            if name in sections:
                raise ParseError(f"duplicate section [{name}]", lineno, line.index("[") + 1)
            sections[name] = []
            order.append(name)
            current = name
            continue
        if current is None:
            raise ParseError("content before the first [section] header", lineno,
                             len(line) - len(line.lstrip()) + 1, ("[section]",))
        sections[current].append((lineno, line))
    for name in REQUIRED:
        if name not in sections:
            raise ParseError(f"missing required section [{name}]", len(lines) or 1, 1)
    return sections


def _col(line, fragment_start):
    return fragment_start + 1


def _parse_number(text, lineno, column, what):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{what}: expected a number, got {text.strip()!r}", lineno, column) from None


def _parse_compartments(entries):
    names = []
    seen = {}
    for lineno, line in entries:
        for m in re.finditer(r"[^\s,]+", line):
            name = m.group()
            if not _IDENT_RE.match(name):
                raise ParseError(f"invalid compartment name {name!r}", lineno, m.start() + 1)
            if name in seen:
                raise ValidationError(f"duplicate compartment '{name}'", f"line {lineno}")
            seen[name] = lineno
            names.append(name)
    return tuple(names)


def _parse_parameters(entries):
    params = {}
    lines = {}
    for lineno, line in entries:
        m = _ASSIGN_RE.match(line)
        if not m:
            raise ParseError("expected 'name' or 'name = value'", lineno, len(line) - len(line.lstrip()) + 1)
        name, value = m.group(2), m.group(3)
        if name in params:
            raise ValidationError(f"duplicate parameter '{name}' (first declared on line {lines[name]})",
                                  f"line {lineno}")
        if value is None or value == "":
            params[name] = None
        else:
            params[name] = _parse_number(value, lineno, line.index("=") + 2, f"parameter '{name}'")
        lines[name] = lineno
    return params, lines


def _load_csv(path_text, base_dir, lineno):
    path = Path(path_text)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise ValidationError(f"cannot read CSV '{path}': {exc}", f"line {lineno}") from None
    except ValueError as exc:
        raise ValidationError(f"malformed CSV '{path}': {exc}", f"line {lineno}") from None
    return data


def _parse_literal(text, lineno, column):
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed array literal: {exc.msg}", lineno, column + exc.pos) from None
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError("array literal must be a number or a rectangular nested list of numbers",
                         lineno, column) from None
    return arr


def _parse_arrays(entries, base_dir):
    arrays = {}
    lines = {}
    i = 0
    while i < len(entries):
        lineno, line = entries[i]
        m = re.match(rf"^\s*({_IDENT})\s*=\s*(.*)$", line)
        if not m:
            raise ParseError("expected 'name = [ ... ]' or 'name = csv(path)'", lineno,
                             len(line) - len(line.lstrip()) + 1)
        name, value = m.group(1), m.group(2).strip()
        column = m.start(2) + 1
        # multi-line literals: keep reading until brackets balance
        while value.count("[") > value.count("]") and i + 1 < len(entries):
            i += 1
            value += " " + entries[i][1].strip()
        if name in arrays:
            raise ValidationError(f"duplicate array '{name}'", f"line {lineno}")
        csv = _CSV_RE.match(value)
        if csv:
            arr = _load_csv(csv.group(1), base_dir, lineno)
            if arr.shape[0] == 1:
                arr = arr[0]
            elif arr.shape[1] == 1:
                arr = arr[:, 0]
        else:
            arr = _parse_literal(value, lineno, column)
        if arr.ndim > 2:
            raise ValidationError(f"array '{name}' has {arr.ndim} dimensions; at most 2 supported",
                                  f"line {lineno}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"array '{name}' contains non-finite values", f"line {lineno}")
        arr.setflags(write=False)
        arrays[name] = arr
        lines[name] = lineno
        i += 1
    return arrays, lines


def _parse_transitions(entries, compartments):
    out = []
    for lineno, line in entries:
        m = _TRANSITION_RE.match(line)
        if not m:
            raise ParseError("expected 'SOURCE -> DESTINATION : expression'", lineno,
                             len(line) - len(line.lstrip()) + 1, ("SOURCE -> DESTINATION : expression",))
        src, dst = m.group(1), m.group(2)
        for name, start in ((src, m.start(1)), (dst, m.start(2))):
            if name not in compartments:
                raise UnknownIdentifierError(name, lineno, start + 1)
        if src == dst:
            raise ValidationError(f"transition {src} -> {dst} has identical source and destination",
                                  f"line {lineno}")
        expr = dsl.parse_expression(m.group(3), lineno, m.start(3) + 1)
        out.append(Transition(src, dst, expr, lineno))
    return out


def _parse_initial(entries, compartments, base_dir):
    if len(entries) == 1:
        lineno, line = entries[0]
        csv = _CSV_RE.match(line.strip())
        if csv:
            return _load_csv(csv.group(1), base_dir, lineno), None
    if entries and _ASSIGN_RE.match(entries[0][1]) and "=" in entries[0][1]:
        exprs = {}
        for lineno, line in entries:
            m = re.match(rf"^\s*({_IDENT})\s*=(.*)$", line)
            if not m:
                raise ParseError("expected 'COMPARTMENT = expression'", lineno,
                                 len(line) - len(line.lstrip()) + 1)
            name = m.group(1)
            if name not in compartments:
                raise UnknownIdentifierError(name, lineno, m.start(1) + 1)
            if name in exprs:
                raise ValidationError(f"initial state of '{name}' given twice", f"line {lineno}")
            exprs[name] = dsl.parse_expression(m.group(2), lineno, m.start(2) + 1)
        return None, exprs
    rows = []
    for lineno, line in entries:
        row = []
        for m in re.finditer(r"[^\s,]+", line):
            row.append(_parse_number(m.group(), lineno, m.start() + 1, "initial state"))
        if len(row) != len(compartments):
            raise ValidationError(
                f"initial state row has {len(row)} values for {len(compartments)} compartments",
                f"line {lineno}",
            )
        rows.append(row)
    return np.array(rows, dtype=np.float64), None


def _parse_settings(entries, section, allowed=None):
    out = {}
    for lineno, line in entries:
        m = re.match(rf"^\s*({_IDENT})\s*=\s*(.*?)\s*$", line)
        if not m:
            raise ParseError("expected 'key = value'", lineno, len(line) - len(line.lstrip()) + 1)
        key, value = m.group(1), m.group(2)
        if allowed is not None and key not in allowed:
            raise ParseError(f"unknown [{section}] key '{key}'", lineno, m.start(1) + 1, tuple(allowed))
        if key in out:
            raise ValidationError(f"duplicate [{section}] key '{key}'", f"line {lineno}")
        out[key] = (value, lineno, m.start(2) + 1)
    return out


def _parse_integrator(entries):
    raw = _parse_settings(entries, "integrator", _INTEGRATOR_KEYS)
    out = {}
    for key, (value, lineno, column) in raw.items():
        conv = _INTEGRATOR_KEYS[key]
        try:
            out[key] = conv(value)
        except ValueError:
            raise ParseError(f"[integrator] {key}: cannot parse {value!r} as {conv.__name__}",
                             lineno, column) from None
    if "kind" not in out:
        raise ValidationError("[integrator] needs 'kind'")
    if out["kind"] not in INTEGRATORS:
        raise ValidationError(f"[integrator] kind must be one of {', '.join(INTEGRATORS)}, got '{out['kind']}'")
    if "num_steps" not in out:
        raise ValidationError("[integrator] needs 'num_steps'")
    return out


def _kinds(compartments, params, arrays):
    kinds = {c: dsl.VECTOR for c in compartments}
    kinds.update({p: dsl.SCALAR for p in params})
    kinds.update({a: dsl.kind_of(v) for a, v in arrays.items()})
    return kinds


def _check_names(compartments, params, arrays, param_lines, array_lines):
    problems = []
    for group, names in (("compartment", compartments), ("parameter", params), ("array", arrays)):
        for name in names:
            if name in dsl.RESERVED:
                problems.append(f"{group} name '{name}' is reserved")
    for name in params:
        if name in compartments:
            problems.append(f"parameter '{name}' (line {param_lines[name]}) collides with a compartment")
    for name in arrays:
        if name in compartments or name in params:
            problems.append(f"array '{name}' (line {array_lines[name]}) collides with a compartment or parameter")
    if problems:
        raise ValidationError(problems)


def _check_arrays(arrays, M, lines):
    for name, arr in arrays.items():
        if arr.ndim == 1 and arr.shape[0] != M:
            raise ValidationError(f"array '{name}' has length {arr.shape[0]}, model has {M} strata",
                                  f"line {lines[name]}")
        if arr.ndim == 2 and arr.shape != (M, M):
            raise ValidationError(f"array '{name}' has shape {arr.shape}, expected ({M}, {M})",
                                  f"line {lines[name]}")


def _parse_fit(entries, params):
    raw = _parse_settings(entries, "fit", ("estimate", "log_transform", "func_tolerance", "max_iterations"))
    out = {}
    names = raw.get("estimate", ("", 0, 0))
    estimate = tuple(re.split(r"[\s,]+", names[0].strip())) if names[0].strip() else ()
    for name in estimate:
        if name not in params:
            raise UnknownIdentifierError(name, names[1], names[2])
    out["estimate"] = estimate
    lt = raw.get("log_transform", ("all", 0, 0))
    if lt[0].strip() == "all":
        out["log_transform"] = estimate
    elif lt[0].strip() == "none":
        out["log_transform"] = ()
    else:
        chosen = tuple(re.split(r"[\s,]+", lt[0].strip()))
        for name in chosen:
            if name not in estimate:
                raise ValidationError(f"[fit] log_transform names '{name}', which is not estimated", f"line {lt[1]}")
        out["log_transform"] = chosen
    if "func_tolerance" in raw:
        out["func_tolerance"] = _parse_number(raw["func_tolerance"][0], raw["func_tolerance"][1],
                                              raw["func_tolerance"][2], "func_tolerance")
    if "max_iterations" in raw:
        out["max_iterations"] = int(_parse_number(raw["max_iterations"][0], raw["max_iterations"][1],
                                                  raw["max_iterations"][2], "max_iterations"))
    return out


def _parse_observation(entries, compartments, kinds):
    raw = _parse_settings(entries, "observation", ("kind", "compartment", "scale"))
    kind = raw.get("kind", ("events", 0, 0))[0]
    if kind not in ("events", "poisson_increments"):
        raise ValidationError(f"[observation] kind must be 'events' or 'poisson_increments', got '{kind}'")
    out = {"kind": kind}
    if kind == "poisson_increments":
        if "compartment" not in raw:
            raise ValidationError("[observation] poisson_increments needs 'compartment'")
        comp, lineno, column = raw["compartment"]
        if comp not in compartments:
            raise UnknownIdentifierError(comp, lineno, column)
        out["compartment"] = comp
        scale_text, lineno, column = raw.get("scale", ("1", 0, 1))
        expr = dsl.parse_expression(scale_text, max(lineno, 1), column)
        _check_static(expr, kinds, allow_state=False)
        out["scale"] = expr
    return out


def _check_static(expr, kinds, allow_state=True):
    dsl.resolve(expr, kinds)
    if not allow_state:
        for n in dsl.walk(expr):
            if isinstance(n, dsl.Name) and n.id == "sumstate":
                raise UnknownIdentifierError("sumstate", *n.pos)
    if dsl.infer_type(expr, kinds) == dsl.MATRIX:
        line, col = getattr(expr, "pos", (1, 1))
        raise EvalError(f"line {line}, column {col}: expression evaluates to a matrix, expected a vector")


def parse_model_file(text: str, base_dir: str | Path | None = None, path: str | None = None) -> ModelFile:
    """Parse model-file source.  ``base_dir`` anchors relative CSV paths."""
    sections = _split_sections(text)
    compartments = _parse_compartments(sections["compartments"])
    params, param_lines = _parse_parameters(sections.get("parameters", []))
    arrays, array_lines = _parse_arrays(sections.get("arrays", []), base_dir)
    _check_names(compartments, params, arrays, param_lines, array_lines)
    transitions = _parse_transitions(sections["transitions"], compartments)
    if not transitions:
        raise ValidationError("[transitions] is empty")
    kinds = _kinds(compartments, params, arrays)
    for tr in transitions:
        _check_static(tr.expr, kinds)

    rows, exprs = _parse_initial(sections["initial_state"], compartments, base_dir)
    if exprs is not None:
        init_kinds = {k: v for k, v in kinds.items() if k not in compartments}
        for e in exprs.values():
            _check_static(e, init_kinds, allow_state=False)
    integrator = _parse_integrator(sections["integrator"])
    observation = None
    if "observation" in sections:
        observation = _parse_observation(sections["observation"], compartments,
                                         {k: v for k, v in kinds.items() if k not in compartments})
    fit = _parse_fit(sections["fit"], params) if "fit" in sections else None

    mf = ModelFile(
        compartments=compartments,
        parameters=params,
        arrays=arrays,
        transitions=transitions,
        integrator=integrator,
        initial_rows=rows,
        initial_exprs=exprs,
        observation=observation,
        fit=fit,
        path=path,
    )
    if rows is not None and rows.shape[1] != len(compartments):
        raise ValidationError(f"initial state has {rows.shape[1]} columns for {len(compartments)} compartments")
    _check_arrays(arrays, mf.num_strata, array_lines)
    if all(v is not None for v in params.values()):
        mf.build()
    return mf


def load_model(path: str | Path) -> ModelFile:
    """Read and parse a model file from disk."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_model_file(text, base_dir=path.parent, path=str(path))


def bundled_model_path(name: str) -> Path:
    """Path of a model shipped with the package (``sir``, ``metapop_sir``, ``seir_network``)."""
    here = Path(__file__).parent / "models"
    path = here / (name if name.endswith(".model") else f"{name}.model")
    if not path.exists():
        available = sorted(p.stem for p in here.glob("*.model"))
        raise FileNotFoundError(f"no bundled model '{name}'; available: {', '.join(available)}")
    return path


def bundled_models() -> list[Path]:
    return sorted((Path(__file__).parent / "models").glob("*.model"))
