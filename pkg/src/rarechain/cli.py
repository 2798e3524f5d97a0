"""Command-line front end.

Subcommands ``exact``, ``train``, ``estimate`` and ``sweep`` write CSV
(and chain-format) files into ``--out``. Settings come from built-in
defaults, then an optional ``--config`` file of ``key = value`` lines,
then flags. Exit codes: 0 ok, 1 bad input, 2 solver failure, 3
cross-entropy degeneracy, 4 support mismatch.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ce import CeConfig, DegenerateWeightsError, NoHitsError, ce_train, uniform_measure
from .chain import ChangeOfMeasure, InvalidModelError, Kind, MarkovModel, SupportError, validate_model
from .exact import (
    DegenerateModelError,
    SingularSystemError,
    ZeroGammaError,
    approx_gamma_maxpath,
    exact_report,
    exact_second_moment,
    optimal_measure,
)
from .importance import estimate, optimality_check
from .io import ChainFormatError, format_chain, matrix_rows, parse_chain_text, read_measure, write_csv
from .mm1 import DESK_GRID, FULL_GRID, Mm1Params, build_mm1, run_sweep, sample_size_rule
from .simulate import DeadRowError, StepLimitError

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_CE, EXIT_SUPPORT = 0, 1, 2, 3, 4

DEFAULTS = {
    "mm1": None,
    "chain": None,
    "seed": 0,
    "out": ".",
    "replications": 1000,
    "iterations": 10,
    "samples": None,
    "grid": "desk",
    "first_step": "conditioned",
    "jobs": 1,
    "measure": "nominal",
    "initial": "uniform",
    "tol": 1e-3,
    "smoothing": 1.0,
}
# settings that do not change results stay out of the echoed header
NOT_ECHOED = {"out", "jobs", "config"}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _mm1(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) not in (2, 3):
        raise UsageError(f"--mm1 expects 'lam,mu,n' (or 'lam,mu' for sweep), got {text!r}")
    try:
        lam, mu = float(parts[0]), float(parts[1])
        n = int(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise UsageError(f"cannot parse --mm1 {text!r}") from None
    return lam, mu, n


def _grid(text):
    text = str(text).strip()
    if text == "desk":
        return list(DESK_GRID)
    if text == "full":
        return list(FULL_GRID)
    try:
        grid = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --grid {text!r}") from None
    if not grid:
        raise UsageError("--grid is empty")
    return grid


CONVERTERS = {
    "seed": int,
    "replications": int,
    "iterations": int,
    "samples": int,
    "jobs": int,
    "tol": float,
    "smoothing": float,
}


def read_config_file(path):
    values = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{line_no}: unknown setting {key!r}")
        values[key] = value
    return values


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key, conv in CONVERTERS.items():
        if cfg[key] is not None:
            try:
                cfg[key] = conv(cfg[key])
            except ValueError:
                raise UsageError(f"invalid value for {key}: {cfg[key]!r}") from None
    if cfg["seed"] < 0:
        raise UsageError("seed must be non-negative")
    if cfg["first_step"] not in ("conditioned", "nominal"):
        raise UsageError("first_step must be 'conditioned' or 'nominal'")
    return cfg


def header_lines(command, cfg):
    shown = {k: v for k, v in cfg.items() if k not in NOT_ECHOED}
    settings = " ".join(f"{k}={shown[k]}" for k in sorted(shown))
    return [f"rarechain {__version__}", f"command: {command}", f"config: {settings}", f"seed: {cfg['seed']}"]


def load_model(cfg, need_n=True):
    """Return ``(model, label_n, params)`` from ``--chain`` or ``--mm1``."""
    if cfg["chain"] and cfg["mm1"]:
        raise UsageError("give either --chain or --mm1, not both")
    if cfg["chain"]:
        path = Path(cfg["chain"])
        kinds, P = parse_chain_text(path.read_text(encoding="utf-8"))
        model = MarkovModel(P, kinds, check=False)
        violations = validate_model(model)
        if violations:
            raise InvalidModelError(violations)
        return model, model.n_states, None
    if cfg["mm1"]:
        lam, mu, n = _mm1(cfg["mm1"])
        if need_n and n is None:
            raise UsageError("--mm1 needs 'lam,mu,n'")
        if n is None:
            return None, None, (lam, mu)
        try:
            params = Mm1Params(lam, mu, n)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return build_mm1(params), n, params
    raise UsageError("a model is required: --chain FILE or --mm1 lam,mu,n")


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_exact(cfg):
    model, _, _ = load_model(cfg)
    rep = exact_report(model, first_step=cfg["first_step"])
    out = _out_dir(cfg)
    head = header_lines("exact", cfg)
    kinds = model.kinds
    rows = []
    for x in range(model.n_states):
        internal = kinds[x] == Kind.INTERNAL
        rows.append((
            x, Kind(kinds[x]).letter,
            rep.gamma.values[x], rep.visits.v[x], rep.visits.u[x],
            approx_gamma_maxpath(model, x) if internal else rep.gamma.values[x],
        ))
    write_csv(out / "gamma.csv", ["state", "kind", "gamma", "v", "u", "gamma_maxpath"], rows, head)
    write_csv(out / "p_opt.csv", ["from", "to", "prob"], matrix_rows(rep.p_opt.P), head)
    write_csv(out / "p_ce.csv", ["from", "to", "prob"], matrix_rows(rep.p_ce.P), head)
    (out / "p_opt.chain").write_text(format_chain(kinds, rep.p_opt.P, head), encoding="utf-8")
    pa = rep.hit_probability
    diag = [
        ("hit_probability", pa),
        ("log_hit_probability", math.log(pa) if pa > 0 else -math.inf),
        ("first_step", cfg["first_step"]),
        ("max_abs_diff_ce_opt", rep.p_ce.max_abs_diff(rep.p_opt)),
        ("gamma_residual", rep.gamma.residual),
        ("second_moment_opt", exact_second_moment(model, rep.p_opt)),
        ("second_moment_nominal", exact_second_moment(model, ChangeOfMeasure.nominal(model))),
    ]
    diag += [(f"kl_opt_to_{label}", value) for label, value in rep.kl_to.items()]
    write_csv(out / "diagnostics.csv", ["quantity", "value"], diag, head)
    return EXIT_OK


def _initial(cfg, model):
    spec = cfg["initial"]
    if spec in ("uniform", "nominal"):
        return spec
    return read_measure(spec, model)


def cmd_train(cfg):
    model, n, _ = load_model(cfg)
    samples = cfg["samples"] or (sample_size_rule(n) if cfg["mm1"] else 2000)
    config = CeConfig(
        samples_per_iteration=samples,
        max_iterations=cfg["iterations"],
        convergence_norm=cfg["tol"],
        smoothing=cfg["smoothing"],
        initial_measure=_initial(cfg, model),
    )
    measure, trace = ce_train(model, config, cfg["seed"], key=(0,), n_jobs=cfg["jobs"])
    out = _out_dir(cfg)
    head = header_lines("train", cfg) + [f"samples_per_iteration: {samples}"]
    (out / "measure.chain").write_text(format_chain(model.kinds, measure.P, head), encoding="utf-8")
    rows = [(r.iteration, r.hits, r.samples, r.ess, r.matrix_diff_norm) for r in trace]
    write_csv(out / "trace.csv", ["iteration", "hits", "samples", "ess", "matrix_diff_norm"], rows, head)
    return EXIT_OK


def _measure(cfg, model):
    spec = cfg["measure"]
    if spec == "nominal":
        return ChangeOfMeasure.nominal(model)
    if spec == "opt":
        return optimal_measure(model, first_step=cfg["first_step"])
    if spec == "uniform":
        return uniform_measure(model)
    return read_measure(spec, model)


def cmd_estimate(cfg):
    model, n, _ = load_model(cfg)
    measure = _measure(cfg, model)
    report = estimate(model, measure, cfg["replications"], cfg["seed"], key=(1,), n_jobs=cfg["jobs"])
    diag = optimality_check(model, measure, report)
    out = _out_dir(cfg)
    cols = ["n", "seed", "replications", "hits", "mean", "variance", "re", "rat", "kl",
            "kl_over_abs_log_pa", "re_of_mean", "second_moment", "ci95_halfwidth", "exact_pa", "rat_exact"]
    row = (n, report.seed, report.replications, report.hits, report.mean, report.variance,
           report.relative_error, report.rat, diag.kl, diag.kl_over_abs_log_pa,
           report.relative_error_of_mean, report.second_moment, report.ci95_halfwidth,
           diag.hit_probability, diag.rat_exact)
    write_csv(out / "estimate.csv", cols, [row], header_lines("estimate", cfg))
    return EXIT_OK


SWEEP_COLUMNS = ["n", "exact_pa", "mean", "re", "rat", "kl", "kl_over_abs_log_pa", "hits",
                 "replications", "kl_over_pa", "rat_exact", "re_of_mean", "ce_iterations",
                 "ce_samples", "error"]


def cmd_sweep(cfg):
    if cfg["chain"]:
        raise UsageError("sweep runs the M/M/1 family; use --mm1 lam,mu")
    lam, mu, _ = _mm1(cfg["mm1"] or "0.8,1")
    grid = _grid(cfg["grid"])
    ce = CeConfig(max_iterations=cfg["iterations"], convergence_norm=cfg["tol"],
                  smoothing=cfg["smoothing"], initial_measure=cfg["initial"])
    samples = cfg["samples"] or sample_size_rule
    result = run_sweep(lam, mu, grid, ce, cfg["replications"], cfg["seed"], samples=samples,
                       n_jobs=cfg["jobs"])
    rows = [[getattr(r, c) for c in SWEEP_COLUMNS] for r in result]
    write_csv(_out_dir(cfg) / "sweep.csv", SWEEP_COLUMNS, rows, header_lines("sweep", cfg))
    failed = [r for r in result if not r.ok]
    for r in failed:
        print(f"n={r.n}: {r.error}", file=sys.stderr)
    return EXIT_OK if len(failed) < len(result.records) else EXIT_CE


COMMANDS = {"exact": cmd_exact, "train": cmd_train, "estimate": cmd_estimate, "sweep": cmd_sweep}


def build_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="file of 'key = value' settings; flags override it")
    g.add_argument("--mm1", metavar="LAM,MU,N", help="embedded M/M/1 overflow model")
    g.add_argument("--chain", metavar="FILE", help="chain text file")
    g.add_argument("--seed", help="experiment seed (default 0)")
    g.add_argument("--out", metavar="DIR", help="output directory (default .)")
    g.add_argument("--replications", help="importance-sampling replications (default 1000)")
    g.add_argument("--iterations", help="cross-entropy iterations (default 10)")
    g.add_argument("--samples", help="paths per cross-entropy iteration (default 200n, at least 2000)")
    g.add_argument("--grid", help="overflow levels: comma list, 'desk' (10,25,50,100) or 'full' (10..250 step 10)")
    g.add_argument("--first-step", dest="first_step", choices=["conditioned", "nominal"],
                   help="good-state row of the zero-variance measure")
    g.add_argument("--jobs", help="worker threads; results do not depend on it")
    g.add_argument("--tol", help="cross-entropy convergence threshold (default 1e-3)")
    g.add_argument("--smoothing", help="cross-entropy smoothing in (0, 1] (default 1)")
    g.add_argument("--initial", help="initial measure: uniform, nominal or a chain FILE")
    g.add_argument("--measure", help="estimate under: nominal, opt, uniform or a chain FILE")

    parser = _Parser(prog="rarechain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rarechain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("exact", parents=[common], help="exact hitting probabilities and optimal measures")
    sub.add_parser("train", parents=[common], help="train a change of measure by cross-entropy")
    sub.add_parser("estimate", parents=[common], help="importance-sampling estimate under a measure")
    sub.add_parser("sweep", parents=[common], help="M/M/1 overflow sweep over n")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except SupportError as exc:
        print(f"error: support mismatch: {exc}", file=sys.stderr)
        return EXIT_SUPPORT
    except (NoHitsError, DegenerateWeightsError) as exc:
        print(f"error: {exc}\nhint: start from a measure under which the bad set is not so rare "
              "(e.g. --initial uniform)", file=sys.stderr)
        return EXIT_CE
    except (SingularSystemError, ZeroGammaError, DegenerateModelError, StepLimitError,
            DeadRowError, np.linalg.LinAlgError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvalidModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ChainFormatError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
