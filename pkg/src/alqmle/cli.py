"""Command-line entry point: ``alqmle <subcommand> [options]``.

Every option can also come from a JSON config file (``--config``); explicit
flags override the file, which overrides the built-in defaults. A config
file may be a ``run-manifest.json`` written by an earlier run, which replays
that run. Usage errors exit with status 2, numerical failures with status 1
and a JSON error object on stderr.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from alqmle import __version__
from alqmle.bessel import bessel_bound_constant, bessel_k, log_bessel_k
from alqmle.estimator import OptimizerConfig, estimate, estimate_consistency_path
from alqmle.exceptions import DomainError, EstimationError, FactorizationError
from alqmle.innovations import InnovationSpec, sample_innovations
from alqmle.likelihood import LikelihoodObjective, truncation_report
from alqmle.models import (
    DEFAULT_BURN_IN, FAMILY_NAMES, Box, make_family, simulate_trajectory,
    simulate_with_presample, theta2_membership)
from alqmle.output import read_csv_table, read_series_csv, sha256_file, write_csv, write_json
from alqmle.selfcheck import run_selfcheck

__all__ = ["main", "run", "UsageError", "MANIFEST_NAME"]

MANIFEST_NAME = "run-manifest.json"

SUBCOMMANDS = ("simulate", "loglik", "estimate", "mc-consistency", "bessel-table",
               "truncation-decay", "selfcheck")

_MODEL_OPTIONS = {"family": None, "p": 1, "lags": 1, "intercept": True}
_OPTIMIZER_OPTIONS = {"starts": 8, "max_evals": 2000, "xtol": 1e-8, "ftol": 1e-10,
                      "restrict_theta2": True}

DEFAULTS = {
    "simulate": {**_MODEL_OPTIONS, "theta": None, "n": None, "burn_in": DEFAULT_BURN_IN,
                 "out": "series.csv"},
    "loglik": {**_MODEL_OPTIONS, "theta": None, "grid": None, "series": None,
               "presample": None, "out": "profile.csv"},
    "estimate": {**_MODEL_OPTIONS, **_OPTIMIZER_OPTIONS, "series": None, "box": None,
                 "out": "result.json"},
    "mc-consistency": {**_MODEL_OPTIONS, **_OPTIMIZER_OPTIONS, "theta0": None,
                       "n": [250, 1000, 4000], "reps": 50, "opt_seed": 1,
                       "burn_in": DEFAULT_BURN_IN, "box": None, "out": "mc.csv"},
    "bessel-table": {"v": None, "u_min": None, "u_max": None, "points": None,
                     "out": "bessel-table.csv"},
    "truncation-decay": {**_MODEL_OPTIONS, "family": "var1", "theta": None,
                         "n": [100, 1000, 10000], "burn_in": DEFAULT_BURN_IN,
                         "out": "truncation-decay.csv"},
    "selfcheck": {"out": "selfcheck.json"},
}
GLOBAL_DEFAULTS = {"seed": 1, "threads": 1, "force": False}

# keys holding input file paths; their digests go into the manifest
_INPUT_KEYS = ("series", "presample", "grid", "box")


class UsageError(Exception):
    """Bad or missing command-line/config input (exit status 2)."""


def _add_global(parser):
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file or run manifest")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (64-bit)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="worker processes, 0 = one per CPU")
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    g.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                   help="simulate even outside Theta(2)")


def _add_model(p):
    p.add_argument("--family", choices=FAMILY_NAMES + ("none",), default=argparse.SUPPRESS)
    p.add_argument("--p", type=int, default=argparse.SUPPRESS)
    p.add_argument("--lags", type=int, default=argparse.SUPPRESS)
    p.add_argument("--no-intercept", dest="intercept", action="store_false",
                   default=argparse.SUPPRESS)


def _add_optimizer(p):
    p.add_argument("--starts", type=int, default=argparse.SUPPRESS)
    p.add_argument("--max-evals", type=int, default=argparse.SUPPRESS)
    p.add_argument("--xtol", type=float, default=argparse.SUPPRESS)
    p.add_argument("--ftol", type=float, default=argparse.SUPPRESS)
    p.add_argument("--no-restrict-theta2", dest="restrict_theta2", action="store_false",
                   default=argparse.SUPPRESS)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="alqmle", description="Laplace quasi-likelihood estimation for causal processes")
    parser.add_argument("--version", action="version", version=f"alqmle {__version__}")
    _add_global(parser)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("simulate", help="simulate a trajectory or raw innovations")
    _add_model(p)
    p.add_argument("--theta", default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--burn-in", type=int, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("loglik", help="evaluate the quasi-log-likelihood on a grid")
    _add_model(p)
    p.add_argument("--theta", default=S)
    p.add_argument("--grid", default=S)
    p.add_argument("--series", default=S)
    p.add_argument("--presample", default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("estimate", help="maximize the truncated likelihood")
    _add_model(p)
    _add_optimizer(p)
    p.add_argument("--series", default=S)
    p.add_argument("--box", default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("mc-consistency", help="Monte Carlo consistency experiment")
    _add_model(p)
    _add_optimizer(p)
    p.add_argument("--theta0", default=S)
    p.add_argument("--n", default=S, help="comma-separated lengths")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--opt-seed", type=int, default=S, help="start-point seed")
    p.add_argument("--burn-in", type=int, default=S)
    p.add_argument("--box", default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("bessel-table", help="tabulate K_v on a log-spaced grid")
    p.add_argument("--v", type=float, default=S)
    p.add_argument("--u-min", type=float, default=S)
    p.add_argument("--u-max", type=float, default=S)
    p.add_argument("--points", type=int, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("truncation-decay", help="truncated vs full likelihood gap")
    _add_model(p)
    p.add_argument("--theta", default=S)
    p.add_argument("--n", default=S, help="comma-separated lengths")
    p.add_argument("--burn-in", type=int, default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("selfcheck", help="fast invariant suite")
    p.add_argument("--out", default=S)

    for name, action in sub.choices.items():
        _add_global(action)
    return parser


def _load_config(path, subcommand):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        # a run manifest
        recorded = data.get("subcommand")
        if recorded is not None and recorded != subcommand:
            raise UsageError(f"manifest was written by {recorded!r}, not {subcommand!r}")
        data = data["config"]
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_config(args):
    """Merge defaults, config file and flags into one flat dictionary."""
    sub = args.subcommand
    given = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config")}
    config = {**GLOBAL_DEFAULTS, **DEFAULTS[sub]}
    if hasattr(args, "config"):
        from_file = _load_config(args.config, sub)
        allowed = set(config) | {"out_dir"}
        unknown = sorted(set(from_file) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {sub}: {', '.join(unknown)}")
        config.update(from_file)
    config.update(given)
    config.setdefault("out_dir", ".")
    return config


def _require(config, *keys):
    missing = [k for k in keys if config.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))


def parse_vector(value, name="theta"):
    """Real vector from a list, a JSON array, comma-separated text or a file."""
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        items = value
    else:
        text = str(value).strip()
        if os.path.isfile(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read().strip()
        try:
            items = json.loads(text) if text.startswith("[") else text.replace("\n", ",").split(",")
            return np.array([float(x) for x in items if str(x).strip() != ""], dtype=float)
        except (ValueError, TypeError):
            raise UsageError(f"cannot parse --{name} {value!r}") from None
    try:
        return np.array([float(x) for x in items], dtype=float)
    except (ValueError, TypeError):
        raise UsageError(f"cannot parse --{name} {value!r}") from None


def parse_lengths(value):
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = [x for x in str(value).split(",") if x.strip()]
    try:
        out = [int(x) for x in items]
    except ValueError:
        raise UsageError(f"cannot parse --n {value!r}") from None
    if not out or any(n < 1 for n in out):
        raise UsageError("--n needs positive lengths")
    return out


def _family(config):
    _require(config, "family", "p")
    if config["family"] == "none":
        raise UsageError("family 'none' is only valid for simulate")
    try:
        return make_family(config["family"], int(config["p"]), int(config["lags"]),
                           bool(config["intercept"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _theta(family, value, name="theta"):
    theta = parse_vector(value, name)
    if theta is None or theta.size != family.dim:
        raise UsageError(f"--{name} needs {family.dim} values ({', '.join(family.param_names)})")
    return theta


def _load_box(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return Box(data["lower"], data["upper"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read box {path}: {exc}") from None


def _optimizer(config, seed):
    try:
        return OptimizerConfig(starts=int(config["starts"]), max_evals=int(config["max_evals"]),
                               xtol=float(config["xtol"]), ftol=float(config["ftol"]),
                               seed=int(seed), restrict_theta2=bool(config["restrict_theta2"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _out(config, name=None):
    return os.path.join(config["out_dir"], name or config["out"])


def cmd_simulate(config):
    _require(config, "family", "p", "n")
    n, seed = int(config["n"]), int(config["seed"])
    if n < 1:
        raise UsageError("--n must be positive")
    path = _out(config)
    if config["family"] == "none":
        p = int(config["p"])
        z = sample_innovations(InnovationSpec(p, seed), n)
        write_csv(path, [f"z{k + 1}" for k in range(p)], z.tolist())
        return [path], 0
    family = _family(config)
    theta = _theta(family, config["theta"])
    x = simulate_trajectory(family, theta, n, int(config["burn_in"]), InnovationSpec(family.p, seed),
                            force=bool(config["force"]))
    header = ["t"] + [f"x{k + 1}" for k in range(family.p)]
    write_csv(path, header, ([t + 1, *row] for t, row in enumerate(x.tolist())))
    return [path], 0


def cmd_loglik(config):
    _require(config, "series")
    family = _family(config)
    series = read_series_csv(config["series"], family.p)
    presample = None if config["presample"] is None else read_series_csv(config["presample"], family.p)
    if config["grid"] is not None:
        header, grid = read_csv_table(config["grid"])
        if grid.shape[1] != family.dim:
            raise UsageError(f"grid needs {family.dim} columns, found {grid.shape[1]}")
    elif config["theta"] is not None:
        grid = _theta(family, config["theta"])[None, :]
    else:
        raise UsageError("loglik needs --theta or --grid")
    objective = LikelihoodObjective(family, series, presample)
    rows = []
    for theta in grid:
        ev = objective.evaluate(theta)
        member = theta2_membership(family, theta).member
        rows.append([*theta.tolist(), ev.value, ev.clamp_count, member])
    path = _out(config)
    write_csv(path, list(family.param_names) + ["loglik", "clamp_count", "in_theta2"], rows)
    return [path], 0


def cmd_estimate(config):
    _require(config, "series")
    family = _family(config)
    series = read_series_csv(config["series"], family.p)
    box = None if config["box"] is None else _load_box(config["box"])
    if box is not None and box.dim != family.dim:
        raise UsageError(f"box has {box.dim} coordinates, family needs {family.dim}")
    res = estimate(family, series, box, _optimizer(config, config["seed"]))
    out = {"family": family.describe(), "n": int(series.shape[0]), **res.to_dict()}
    path = _out(config)
    write_json(path, out)
    return [path], 0


def cmd_mc_consistency(config):
    _require(config, "theta0")
    family = _family(config)
    theta0 = _theta(family, config["theta0"], "theta0")
    n_list = parse_lengths(config["n"])
    box = None if config["box"] is None else _load_box(config["box"])
    report = estimate_consistency_path(
        family, theta0, n_list, int(config["reps"]), int(config["seed"]),
        _optimizer(config, config["opt_seed"]), box, int(config["burn_in"]),
        int(config["threads"]))
    path = _out(config)
    write_csv(path, ["n", "rep", "seed", "err_norm", "converged", "clamp_count"],
              ([r.n, r.rep, r.seed, r.err_norm, r.converged, r.clamp_count] for r in report.rows))
    stem = os.path.splitext(config["out"])[0]
    summary_path = _out(config, stem + ".summary.json")
    summaries = report.summaries
    write_json(summary_path, {
        "n": list(report.n_list),
        "summaries": [{"n": n, **summaries[n]} for n in report.n_list],
        "verdict": report.verdict,
        "errors": [{"n": r.n, "rep": r.rep, "seed": r.seed, "message": r.error}
                   for r in report.errors],
    })
    for n in report.n_list:
        s = summaries[n]
        print(f"n={n:<7d} median={s['median']:.6g} iqr={s['iqr']:.6g} max={s['max']:.6g}")
    print(f"verdict: {'decreasing' if report.verdict else 'NOT decreasing'}")
    return [path, summary_path], 0 if report.verdict else 1


def cmd_bessel_table(config):
    _require(config, "v", "u_min", "u_max", "points")
    v, lo, hi, points = (float(config["v"]), float(config["u_min"]), float(config["u_max"]),
                         int(config["points"]))
    if not (0 < lo <= hi) or points < 1:
        raise UsageError("need 0 < u-min <= u-max and points >= 1")
    u = np.geomspace(lo, hi, points)
    k, log_k = bessel_k(v, u), log_bessel_k(v, u)
    bound = bessel_bound_constant(v) * u ** v if v < 0 else np.full(points, math.nan)
    path = _out(config)
    write_csv(path, ["u", "k_v", "log_k_v", "bound_Au_v"],
              zip(u.tolist(), k.tolist(), log_k.tolist(), bound.tolist()))
    return [path], 0


def cmd_truncation_decay(config):
    family = _family(config)
    theta = _theta(family, config["theta"])
    n_list = parse_lengths(config["n"])
    pre, series = simulate_with_presample(
        family, theta, max(n_list), family.q, int(config["burn_in"]),
        InnovationSpec(family.p, int(config["seed"])), force=bool(config["force"]))
    rows = []
    for n in n_list:
        rep = truncation_report(family, [theta], series[:n], pre)
        rows.append([n, rep.mean_diff, rep.sup_diff, family.q * rep.sup_diff / n])
    path = _out(config)
    write_csv(path, ["n", "mean_diff", "sup_diff", "bound"], rows)
    return [path], 0


def cmd_selfcheck(config):
    results = run_selfcheck()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    path = _out(config)
    # timings vary between runs, so they are printed but not written
    write_json(path, {"passed": all(r.passed for r in results),
                      "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail}
                                 for r in results]})
    return [path], 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "loglik": cmd_loglik,
    "estimate": cmd_estimate,
    "mc-consistency": cmd_mc_consistency,
    "bessel-table": cmd_bessel_table,
    "truncation-decay": cmd_truncation_decay,
    "selfcheck": cmd_selfcheck,
}


def write_manifest(subcommand, config, outputs):
    recorded = {k: v for k, v in config.items() if k != "out_dir"}
    if "n" in recorded and subcommand != "simulate":
        recorded["n"] = parse_lengths(recorded["n"])
    for key in ("theta", "theta0"):
        if recorded.get(key) is not None:
            recorded[key] = parse_vector(recorded[key], key).tolist()
    inputs = {}
    for key in _INPUT_KEYS:
        if recorded.get(key) is not None:
            inputs[key] = {"path": recorded[key], "sha256": sha256_file(recorded[key])}
    manifest = {
        "tool": "alqmle",
        "version": __version__,
        "subcommand": subcommand,
        "config": recorded,
        "inputs": inputs,
        "outputs": {os.path.relpath(p, config["out_dir"]): sha256_file(p) for p in outputs},
    }
    path = os.path.join(config["out_dir"], MANIFEST_NAME)
    write_json(path, manifest)
    return path


def _fail(exc, status):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, FactorizationError):
        payload["t"] = exc.t
        payload["theta"] = exc.theta
    sys.stderr.write(json.dumps(payload) + "\n")
    return status


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = resolve_config(args)
        if int(config["seed"]) < 0 or int(config["seed"]) >= 2 ** 64:
            raise UsageError("--seed must fit in 64 unsigned bits")
        outputs, status = COMMANDS[args.subcommand](config)
        write_manifest(args.subcommand, config, outputs)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"alqmle: error: {exc}\n")
        return 2
    except DomainError as exc:
        # invalid user-supplied values, including parameters outside Theta(2)
        sys.stderr.write(f"alqmle: error: {exc}\n")
        return 2
    except (ArithmeticError, EstimationError) as exc:
        return _fail(exc, 1)
    except ValueError as exc:
        sys.stderr.write(f"alqmle: error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"alqmle: error: {exc}\n")
        return 2
    return status


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
