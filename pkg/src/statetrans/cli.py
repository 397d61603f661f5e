"""Command-line front end: ``statetrans {simulate,logprob,ode,fit,bootstrap}``."""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io, rng
from .continuous import ctmc_compute_state, ctmc_log_prob, ctmc_sample
from .discrete import dtmc_compute_state, dtmc_log_prob, dtmc_sample
from .errors import (
    NonFiniteObjectiveError,
    NonFiniteStateError,
    ProbabilityOverflowError,
    StateTransitionError,
)
from .inference import FitResult, bootstrap, fit_mle
from .modelfile import ModelFile, bundled_model_path, load_model
from .ode import ode_solve
from .workflow import FitProblem

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
OUTPUT_ENV = "STATETRANS_OUTPUT_DIR"
QUANTILES = (0.025, 0.05, 0.5, 0.95, 0.975)

GRAMMAR = """\
model file grammar
------------------
A model file is plain text split into [sections]; '#' starts a comment.

  [compartments]    names separated by spaces, e.g.  S I R
  [parameters]      name = value   (or a bare name: must be given with --set)
  [arrays]          NAME = [json-style number / list / nested list]   (may span lines)
                    NAME = csv(path/relative/to/model.csv)
                    vectors have one entry per stratum, matrices are strata x strata
  [transitions]     SRC -> DST : expression      (per-capita rate, one per line)
  [initial_state]   one row of counts per stratum, or csv(path),
                    or COMPARTMENT = expression lines (others start at 0)
  [integrator]      kind = continuous | discrete | ode
                    num_steps, initial_step, time_delta, substeps, method (rk4|dopri5), rtol, atol
  [observation]     kind = events | poisson_increments; compartment = NAME; scale = expression
  [fit]             estimate = names; log_transform = all | none | names;
                    func_tolerance = value; max_iterations = n

Expressions: numbers, + - * / unary -, parentheses, exp(x), log(x), pow(x, y),
sum(v), matvec(M, v); names are compartments (vectors over strata), parameters
(scalars), arrays, t (time) and sumstate (stratum totals).

Exit codes: 0 success, 2 input error, 3 numerical failure or non-convergence.
Outputs go to --out, else $STATETRANS_OUTPUT_DIR, else the current directory.
"""


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


# --- argument helpers ---------------------------------------------------------

def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise CliError(f"--set expects name=value, got '{pair}'")
        name, value = pair.split("=", 1)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise CliError(f"--set {name.strip()}: '{value}' is not a number") from None
    return out


def _resolve_model_path(text):
    path = Path(text)
    if path.exists():
        return path
    try:
        return bundled_model_path(text)
    except FileNotFoundError:
        raise CliError(f"model file '{text}' not found") from None


def _load(args) -> ModelFile:
    path = _resolve_model_path(args.model)
    try:
        return load_model(path)
    except StateTransitionError as exc:
        raise CliError(f"{path}: {exc}") from None


def _problem(args, model) -> FitProblem:
    return FitProblem(model, _overrides(args.set), integrator=args.integrator, num_steps=args.num_steps,
                      initial_step=args.initial_step, time_delta=args.time_delta)


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "."))


def _out_file(args, default_name) -> Path:
    """``--out`` names a file when it has a suffix, otherwise a directory."""
    if args.out and Path(args.out).suffix:
        return Path(args.out)
    return _out_dir(args) / default_name


def _seed(args):
    if args.seed is None:
        return 0
    if args.seed < 0:
        raise CliError("--seed must be nonnegative")
    return args.seed


# --- subcommands ------------------------------------------------------------

def cmd_simulate(args) -> int:
    model = _load(args)
    problem = _problem(args, model)
    if problem.kind == "ode":
        raise CliError("this is an ode model; use the ode subcommand")
    if args.replicates < 1:
        raise CliError("--replicates must be >= 1")
    spec = problem.spec({})
    stream = rng.as_stream(_seed(args))
    out = _out_dir(args)
    name = model.name
    R = args.replicates
    suffix = ".npz" if args.format == "npz" else ".csv"
    if args.format == "npz" and problem.kind != "discrete":
        raise CliError("--format npz is only available for discrete models")
    trajectories = []
    for r in range(R):
        tag = "" if R == 1 else f"_{r:04d}"
        child = stream.child(r)
        if problem.kind == "continuous":
            events = ctmc_sample(spec, child)
            io.write_event_list(out / f"{name}_events{tag}.csv", events)
            if args.states or R > 1:
                n = events.num_events
                states = ctmc_compute_state(spec, events)[: n + 1]
                times = np.concatenate([[spec.initial_step], events.times[:n]])
                if args.states:
                    io.write_states(out / f"{name}_states{tag}.csv", times, states, spec.compartments)
                trajectories.append(events)
        else:
            events = dtmc_sample(spec, child)
            io.write_event_tensor(out / f"{name}_events{tag}{suffix}", events)
            if args.states or R > 1:
                states = dtmc_compute_state(spec, events)
                times = spec.initial_step + spec.time_delta * np.arange(states.shape[0])
                if args.states:
                    io.write_states(out / f"{name}_states{tag}.csv", times, states, spec.compartments)
                trajectories.append(states)
    if R > 1:
        if problem.kind == "continuous":
            end = max([ev.times[ev.num_events - 1] for ev in trajectories if ev.num_events] + [spec.initial_step])
            step = args.grid_step or spec.time_delta
            grid = spec.initial_step + step * np.arange(int(np.floor((end - spec.initial_step) / step)) + 2)
            stack = np.stack([ctmc_compute_state(spec, ev, grid) for ev in trajectories])
        else:
            grid = spec.initial_step + spec.time_delta * np.arange(spec.num_steps + 1)
            stack = np.stack(trajectories)
        io.write_summary(out / f"{name}_summary.csv", grid, stack, spec.compartments)
    print(f"wrote {R} replicate(s) of {name} to {out}")
    return EXIT_OK


def _read_events(problem, spec, path):
    if problem.kind == "continuous":
        return io.read_event_list(path)
    if problem.kind == "discrete":
        return io.read_event_tensor(path, spec.num_strata, spec.num_transitions)
    raise CliError("ode models have no event likelihood; use fit with an [observation] section")


def cmd_logprob(args) -> int:
    model = _load(args)
    problem = _problem(args, model)
    spec = problem.spec({})
    events = _read_events(problem, spec, args.events)
    lp = ctmc_log_prob(spec, events) if problem.kind == "continuous" else dtmc_log_prob(spec, events)
    print(io.fmt(lp))
    if args.out:
        io.write_json(_out_file(args, f"{model.name}_logprob.json"), {
            "model": model.name,
            "events": str(args.events),
            "parameters": problem.parameters(),
            "log_prob": io.json_number(lp),
        })
    return EXIT_OK


def cmd_ode(args) -> int:
    model = _load(args)
    problem = _problem(args, model)
    spec = problem.spec({}).replace(integrator="ode")
    options = dict(model.solver_options)
    if args.method:
        options["method"] = args.method
    if args.substeps:
        options["substeps"] = args.substeps
    sol = ode_solve(spec, **options)
    path = _out_file(args, f"{model.name}_ode.csv")
    io.write_states(path, sol.times, sol.states, spec.compartments)
    print(f"wrote {len(sol.times)} time points to {path}")
    return EXIT_OK


def _fit_settings(args, model):
    fit = dict(model.fit or {})
    estimate = tuple(args.estimate.split(",")) if args.estimate else fit.get("estimate", ())
    if not estimate:
        raise CliError("nothing to estimate: give --estimate or an [fit] estimate line")
    for name in estimate:
        if name not in model.parameters:
            raise CliError(f"--estimate: unknown parameter '{name}'")
    log_transform = fit.get("log_transform", estimate) if not args.estimate else estimate
    log_transform = tuple(n for n in log_transform if n in estimate)
    tol = args.func_tolerance if args.func_tolerance is not None else fit.get("func_tolerance", 1e-8)
    iters = args.max_iterations if args.max_iterations is not None else fit.get("max_iterations", 2000)
    return estimate, log_transform, float(tol), int(iters)


def _read_data(problem, spec, path):
    if problem.observation_kind == "poisson_increments":
        data = io.read_counts(path, spec.num_steps, spec.num_strata)
    else:
        data = _read_events(problem, spec, path)
    problem.check_data(data)
    return data


def _write_bootstrap(args, model, result, base):
    out = _out_dir(args)
    io.write_bootstrap(out / f"{model.name}_bootstrap.csv", result)
    q = result.quantiles(QUANTILES)
    summary = {
        "replicates": len(result),
        "converged": int(result.converged.sum()),
        "quantiles": {f"{p:g}": {k: io.json_number(v) for k, v in zip(result.labels, row)}
                      for p, row in zip(QUANTILES, q)},
    }
    base["bootstrap"] = summary
    io.write_json(out / f"{model.name}_bootstrap_summary.json", summary)
    print(f"bootstrap: {summary['converged']}/{len(result)} replicates converged")


def _run_bootstrap(args, model, problem, fitted, estimate, log_transform, tol, iters, n):
    fixed = {k: v for k, v in problem.parameters().items() if k not in estimate}
    return bootstrap(fitted, problem.simulate, problem.log_likelihood, n, _seed(args), fixed=fixed,
                     log_transform=log_transform, func_tolerance=tol, max_iterations=iters,
                     n_jobs=args.jobs, require_converged=not args.allow_nonconverged)


def cmd_fit(args) -> int:
    model = _load(args)
    problem = _problem(args, model)
    spec = problem.spec({})
    data = _read_data(problem, spec, args.data)
    estimate, log_transform, tol, iters = _fit_settings(args, model)
    initial = problem.parameters()
    res = fit_mle(problem.log_likelihood, data, initial, estimate, log_transform, tol, iters)
    report = {
        "model": model.name,
        "data": str(args.data),
        **res.as_dict(),
        "fixed": {k: v for k, v in initial.items() if k not in estimate},
        "initial": {k: initial[k] for k in estimate},
        "log_transform": list(log_transform),
        "func_tolerance": tol,
        "max_iterations": iters,
    }
    path = _out_file(args, f"{model.name}_fit.{args.format}")
    if args.format == "csv":
        header = list(estimate) + ["negative_log_likelihood", "converged", "iterations"]
        io._write_rows(path, header, [[*res.position, res.value, int(res.converged), res.iterations]])
    else:
        io.write_json(path, report)
    for k, v in zip(estimate, res.position):
        print(f"{k} = {io.fmt(v)}")
    print(f"negative log-likelihood = {io.fmt(res.value)}; converged = {res.converged} "
          f"after {res.iterations} iterations")
    if not res.converged and not args.allow_nonconverged:
        raise CliError(f"fit did not converge: {res.message}", EXIT_NONCONVERGED)
    if args.bootstrap:
        result = _run_bootstrap(args, model, problem, res, estimate, log_transform, tol, iters, args.bootstrap)
        _write_bootstrap(args, model, result, report)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    model = _load(args)
    report = io.read_json(args.fit)
    try:
        params = {k: float(v) for k, v in report["parameters"].items()}
        fixed = {k: float(v) for k, v in report.get("fixed", {}).items()}
        log_transform = tuple(report.get("log_transform", params))
        tol = float(report.get("func_tolerance", 1e-8))
        iters = int(report.get("max_iterations", 2000))
        converged = bool(report["converged"])
    except (KeyError, TypeError, ValueError, AttributeError):
        raise CliError(f"{args.fit}: not a fit result file") from None
    unknown = [k for k in list(params) + list(fixed) if k not in model.parameters]
    if unknown:
        raise CliError(f"{args.fit}: parameters {unknown} are not declared in the model")
    overrides = _overrides(args.set)
    fixed.update({k: v for k, v in overrides.items() if k not in params})
    args.set = [f"{k}={v!r}" for k, v in fixed.items()]
    problem = _problem(args, model)
    if args.replicates < 0:
        raise CliError("--replicates must be >= 0")
    fitted = FitResult(np.array(list(params.values())), float(report.get("negative_log_likelihood", np.nan)),
                       converged, 0, tuple(params))
    if not converged and not args.allow_nonconverged:
        raise CliError("fit result is not converged; pass --allow-nonconverged to bootstrap anyway",
                       EXIT_NONCONVERGED)
    result = _run_bootstrap(args, model, problem, fitted, tuple(params), log_transform, tol, iters,
                            args.replicates)
    _write_bootstrap(args, model, result, {})
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statetrans",
        description="Simulate, score, solve and fit state-transition epidemic models.",
        epilog=GRAMMAR,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("model", help="model file, or the name of a bundled model (sir, metapop_sir, seir_network)")
        p.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a parameter (repeatable)")
        p.add_argument("--integrator", choices=("continuous", "discrete", "ode"), help="override the integrator kind")
        p.add_argument("--num-steps", type=int, help="override num_steps")
        p.add_argument("--initial-step", type=float, help="override initial_step")
        p.add_argument("--time-delta", type=float, help="override time_delta")
        p.add_argument("--out", help="output directory (or file, for single-file outputs)")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")

    p = sub.add_parser("simulate", help="sample event data", epilog=GRAMMAR,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, seed=True)
    p.add_argument("--replicates", type=int, default=1, help="independent replicates (child streams)")
    p.add_argument("--states", action="store_true", help="also write reconstructed state trajectories")
    p.add_argument("--format", choices=("csv", "npz"), default="csv", help="event tensor format")
    p.add_argument("--grid-step", type=float, help="summary grid spacing for continuous models")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("logprob", help="log-probability of an event file")
    common(p)
    p.add_argument("events", help="event list CSV, event tensor CSV or .npz")
    p.set_defaults(func=cmd_logprob)

    p = sub.add_parser("ode", help="solve the mean-field ODE")
    common(p)
    p.add_argument("--method", choices=("rk4", "dopri5"))
    p.add_argument("--substeps", type=int)
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("fit", help="maximum-likelihood fit with Nelder-Mead")
    common(p, seed=True)
    p.add_argument("data", help="event file, or step,stratum,count CSV for poisson_increments observations")
    p.add_argument("--estimate", help="comma-separated parameters to estimate (overrides [fit])")
    p.add_argument("--func-tolerance", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N", help="also run N bootstrap replicates")
    p.add_argument("--jobs", type=int, default=1, help="parallel bootstrap workers")
    p.add_argument("--allow-nonconverged", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bootstrap", help="parametric bootstrap from a fit JSON")
    common(p, seed=True)
    p.add_argument("fit", help="JSON written by the fit subcommand")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--allow-nonconverged", action="store_true")
    p.set_defaults(func=cmd_bootstrap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (NonFiniteObjectiveError, NonFiniteStateError, ProbabilityOverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (StateTransitionError, ValueError, OSError) as exc:
        where = f"{args.model}: " if isinstance(exc, StateTransitionError) else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
