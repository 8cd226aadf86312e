"""Command-line front end.

Subcommands: clr, analyze, target-only, sample-split, screen, simulate, pred-corr.
Exit codes: 0 success, 1 input or configuration error, 2 statistical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__, data, pathway, sim
from .errors import DegenerateFitError, MbpathError
from .seeds import derive_seed

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2
PARALLELISM_ENV = "MBPATH_PARALLELISM"
DEFAULT_CUTOFF = 0.6


class UsageError(MbpathError):
    pass


# --- output -------------------------------------------------------------------


def fmt_float(x):
    """17 significant digits, so every double round-trips and goldens stay bit-stable."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return None
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        s = fmt_float(obj)
        return "null" if s is None else s
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(pad + i for i in items) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(pad + i for i in items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    """JSON text with floats written at 17 significant digits; NaN/inf become null."""
    return _encode(obj, indent, 0) + "\n"


def _write_text(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else fmt_float(v) if isinstance(v, float) else v
                    for v in row])
    return buf.getvalue()


# --- inputs -------------------------------------------------------------------


def _read_design(path, args):
    """Design CSV (CLR coordinates), or raw abundances when --abundance is set."""
    if getattr(args, "abundance", False):
        table = data.read_abundance_csv(path)
        table = data.filter_prevalence(table, args.max_zero_fraction)
        return data.clr_transform(table, args.pseudocount, args.pseudocount_policy)
    t = data.read_numeric_csv(path)
    return data.DesignMatrix(t.values, t.columns, sample_ids=t.sample_ids)


def _center_columns(design):
    v = design.values - design.values.mean(axis=0)
    return replace(design, values=v)


def _outcome(design, path, column):
    y = data.join_values(design.sample_ids, data.read_numeric_csv(path), column)
    return y - y.mean()


def _metabolite(design, table, column, args):
    raw = data.join_values(design.sample_ids, table, column)
    return data.standardize_metabolite(raw, log=not args.no_log_metabolite)


def _config(args):
    return pathway.PathwayConfig(
        seed=args.seed, folds=args.folds, variance_folds=args.variance_folds,
        c_gamma=args.c_gamma, c_beta=args.c_beta, corr_budget=args.corr_budget,
        one_se=args.one_se, variance_formula=args.variance_formula,
        pvalue_scale=args.pvalue_scale,
    )


def _target(args, need_metabolite=False):
    design = _read_design(args.target_design, args)
    y = _outcome(design, args.target_outcome, args.outcome_column)
    m = None
    if need_metabolite:
        if not args.target_metabolite:
            raise UsageError("--target-metabolite is required for this command")
        table = data.read_numeric_csv(args.target_metabolite)
        m = _metabolite(design, table, args.metabolite_column, args)
    return data.TargetDataset(_center_columns(design), y, m)


def _external(args, column=None, design=None):
    if design is None:
        design = _read_design(args.external_design, args)
    table = data.read_numeric_csv(args.external_metabolite)
    m = _metabolite(design, table, column or args.metabolite_column, args)
    return data.ExternalDataset(_center_columns(design), m)


def _result_doc(result, args):
    doc = pathway.result_to_dict(result)
    doc["alpha"] = args.alpha
    doc["reject"] = bool(result.p_value < args.alpha) if result.status == "ok" else False
    doc["version"] = __version__
    return doc


def _finish(result, args):
    _write_text(dumps(_result_doc(result, args)), args.out)
    if result.status != "ok":
        print(f"mbpath: degenerate: {result.status}; no microbially-regulated signal",
              file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


# --- commands -----------------------------------------------------------------


def cmd_clr(args):
    table = data.read_abundance_csv(args.abundance_csv)
    table = data.filter_prevalence(table, args.max_zero_fraction)
    design = data.clr_transform(table, args.pseudocount, args.pseudocount_policy)
    if args.out in (None, "-"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("sample_id",) + design.taxa_ids)
        for sid, row in zip(design.sample_ids, design.values):
            w.writerow([sid] + [fmt_float(x) for x in row])
        sys.stdout.write(buf.getvalue())
    else:
        data.write_design_csv(design, args.out)
    return EXIT_OK


def cmd_analyze(args):
    target = _target(args)
    external = _external(args)
    target, external, report = data.align_cohorts(target, external)
    result = pathway.run_integrative(target, external, _config(args))
    return _finish(result, args)


def cmd_target_only(args):
    result = pathway.run_target_only(_target(args, need_metabolite=True), _config(args))
    return _finish(result, args)


def cmd_sample_split(args):
    config = replace(_config(args), split_fraction=args.split_fraction)
    result = pathway.run_sample_split(_target(args, need_metabolite=True), config=config)
    return _finish(result, args)


SCREEN_HEADER = ("metabolite_id", "theta_tilde", "p_value", "sigma_eps_hat",
                 "g1", "g2", "g3", "g4", "predictive_correlation", "status", "message")


def _screen_one(i, name, target, ext_design, ext_table, proxy, args):
    config = replace(_config(args), seed=derive_seed(args.seed, i))
    row = {"metabolite_id": name, "theta_tilde": None, "p_value": None,
           "sigma_eps_hat": None, "g1": None, "g2": None, "g3": None, "g4": None,
           "predictive_correlation": None, "status": "ok", "message": ""}
    try:
        external = data.ExternalDataset(
            _center_columns(ext_design), _metabolite(ext_design, ext_table, name, args))
        tgt, ext, _ = data.align_cohorts(target, external)
        result = pathway.run_integrative(tgt, ext, config)
        row["status"] = result.status
        row["g1"], row["g2"], row["g3"], row["g4"] = result.groups.sizes()
        if result.status == "ok":
            row["theta_tilde"] = result.theta_tilde
            row["p_value"] = result.p_value
            row["sigma_eps_hat"] = result.debias.sigma_eps_hat
        if proxy is not None and name in proxy.columns:
            m = _metabolite(tgt.design, proxy, name, args)
            row["predictive_correlation"] = pathway.predictive_correlation(
                replace(tgt, metabolite=m), ext, config)
    except (MbpathError, ValueError) as exc:
        cause = getattr(exc, "cause", exc)
        row["status"] = "error"
        row["message"] = str(cause)
        for key in ("theta_tilde", "p_value", "sigma_eps_hat", "g1", "g2", "g3", "g4",
                    "predictive_correlation"):
            row[key] = None
    return row


def screen_rows(args):
    """One row per external metabolite, sorted by p-value then metabolite id."""
    target = _target(args)
    ext_design = _read_design(args.external_design, args)
    ext_table = data.read_numeric_csv(args.external_metabolites)
    proxy = data.read_numeric_csv(args.target_metabolites) if args.target_metabolites else None
    names = ext_table.columns
    work = lambda i: _screen_one(i, names[i], target, ext_design, ext_table, proxy, args)  # noqa: E731
    if args.parallelism <= 1:
        rows = [work(i) for i in range(len(names))]
    else:
        with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
            rows = list(pool.map(work, range(len(names))))
    rows.sort(key=lambda r: (math.inf if r["p_value"] is None else r["p_value"],
                             r["metabolite_id"]))
    return rows


def cmd_screen(args):
    rows = screen_rows(args)
    if args.json:
        _write_text(dumps({"schema_version": pathway.SCHEMA_VERSION, "alpha": args.alpha,
                           "rows": rows}), args.out)
    else:
        _write_text(_csv_text(SCREEN_HEADER, [[r[k] for k in SCREEN_HEADER] for r in rows]),
                    args.out)
    return EXIT_OK


def _scenario(args):
    if args.scenario and args.preset:
        raise UsageError("give either --scenario or --preset, not both")
    if args.scenario:
        with open(args.scenario) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.scenario}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError("scenario: top level must be an object")
        scenario = sim.Scenario.from_dict(doc)
    elif args.preset:
        if args.preset not in sim.PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(sim.PRESETS)}")
        scenario = sim.preset(args.preset)
    else:
        raise UsageError("simulate needs --scenario or --preset")
    if args.n_reps is not None:
        scenario = replace(scenario, n_reps=args.n_reps)
    if args.master_seed is not None:
        scenario = replace(scenario, master_seed=args.master_seed)
    return scenario


def cmd_simulate(args):
    scenario = _scenario(args)
    if args.sweep:
        if args.sweep not in sim.SWEEPS:
            raise UsageError(f"unknown sweep {args.sweep!r}; choose from {sorted(sim.SWEEPS)}")
        key, grid = sim.SWEEPS[args.sweep]
        scenarios = [sim.Scenario.from_dict({**scenario.to_dict(), key: v}) for v in grid]
    else:
        key, scenarios = None, [scenario]
    summaries = [sim.run_replications(s, parallelism=args.parallelism) for s in scenarios]
    header = (("sweep_key", "sweep_value") if key else ()) + sim.SimSummary.CSV_FIELDS
    rows = []
    for s, summ in zip(scenarios, summaries):
        d = summ.to_dict(with_scenario=False)
        lead = [key, float(getattr(s, key))] if key else []
        rows.append(lead + [d[f] for f in sim.SimSummary.CSV_FIELDS])
    doc = {
        "schema_version": pathway.SCHEMA_VERSION,
        "sweep": None if key is None else {"key": key, "values": [getattr(s, key)
                                                                  for s in scenarios]},
        "summaries": [summ.to_dict() for summ in summaries],
    }
    _write_text(dumps(doc), args.out)
    if args.csv:
        _write_text(_csv_text(header, rows), args.csv)
    return EXIT_OK


def cmd_pred_corr(args):
    design = _read_design(args.target_design, args)
    proxy = data.read_numeric_csv(args.target_metabolite)
    m = _metabolite(design, proxy, args.metabolite_column, args)
    target = data.TargetDataset(_center_columns(design), np.zeros(design.n), m)
    external = _external(args)
    target, external, _ = data.align_cohorts(target, external)
    r = pathway.predictive_correlation(target, external, _config(args))
    verdict = "adequate informativeness" if r >= args.cutoff else "low informativeness"
    if args.json:
        _write_text(dumps({"schema_version": pathway.SCHEMA_VERSION,
                           "predictive_correlation": r, "cutoff": args.cutoff,
                           "verdict": verdict}), args.out)
    else:
        _write_text(f"predictive_correlation\t{fmt_float(r)}\nverdict\t{verdict}\n", args.out)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _prob(s):
    x = float(s)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return x


def _positive_int(s):
    x = int(s)
    if x < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return x


def _seed(s):
    x = int(s, 0)
    if not 0 <= x < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return x


def _default_parallelism():
    raw = os.environ.get(PARALLELISM_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _add_preprocessing(p):
    g = p.add_argument_group("preprocessing")
    g.add_argument("--abundance", action="store_true",
                   help="design inputs are raw relative abundances; filter and CLR them")
    g.add_argument("--max-zero-fraction", type=float, default=1.0,
                   help="prevalence filter: drop taxa with a larger share of zeros")
    g.add_argument("--pseudocount", type=float, default=1e-8)
    g.add_argument("--pseudocount-policy", choices=("zeros", "all"), default="zeros",
                   help="add the pseudocount to zero entries only, or to every entry")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--folds", type=_positive_int, default=5)
    g.add_argument("--variance-folds", type=_positive_int, default=10)
    g.add_argument("--c-gamma", type=float, default=0.1)
    g.add_argument("--c-beta", type=float, default=0.1)
    g.add_argument("--alpha", type=_prob, default=0.05)
    g.add_argument("--corr-budget", type=float, default=2.0)
    g.add_argument("--one-se", action="store_true", help="1-SE rule instead of CV minimum")
    g.add_argument("--variance-formula", choices=("squared", "printed"), default="squared")
    g.add_argument("--pvalue-scale", choices=("sd", "variance"), default="sd",
                   help="divide the statistic by sigma_hat (sd) or sigma_hat^2 (variance)")
    g.add_argument("--no-log-metabolite", action="store_true",
                   help="metabolite values are already on log scale")
    g.add_argument("--outcome-column", default=None)
    g.add_argument("--metabolite-column", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="mbpath", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mbpath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clr", help="prevalence-filter and CLR-transform an abundance CSV")
    p.add_argument("abundance_csv")
    p.add_argument("--out", default="-")
    p.add_argument("--max-zero-fraction", type=float, default=1.0)
    p.add_argument("--pseudocount", type=float, default=1e-8)
    p.add_argument("--pseudocount-policy", choices=("zeros", "all"), default="zeros")
    p.set_defaults(func=cmd_clr)

    for name, func, help_ in (
        ("analyze", cmd_analyze, "integrative analysis of one metabolite"),
        ("target-only", cmd_target_only, "single-cohort analysis with observed metabolite"),
        ("sample-split", cmd_sample_split, "split the target cohort into two halves"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--target-design", required=True)
        p.add_argument("--target-outcome", required=True)
        if name == "analyze":
            p.add_argument("--external-design", required=True)
            p.add_argument("--external-metabolite", required=True)
        else:
            p.add_argument("--target-metabolite", required=True)
        if name == "sample-split":
            p.add_argument("--split-fraction", type=_prob, default=0.5)
        p.add_argument("--out", default="-")
        _add_model(p)
        _add_preprocessing(p)
        p.set_defaults(func=func)

    p = sub.add_parser("screen", help="analyze every metabolite column separately")
    p.add_argument("--target-design", required=True)
    p.add_argument("--target-outcome", required=True)
    p.add_argument("--external-design", required=True)
    p.add_argument("--external-metabolites", required=True)
    p.add_argument("--target-metabolites", default=None,
                   help="proxy measurements in the target for predictive correlation")
    p.add_argument("--out", default="-")
    p.add_argument("--json", action="store_true")
    p.add_argument("--parallelism", type=_positive_int, default=_default_parallelism())
    _add_model(p)
    _add_preprocessing(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("simulate", help="Monte-Carlo replications of a scenario")
    p.add_argument("--scenario", default=None, help="scenario JSON file")
    p.add_argument("--preset", default=None, help=f"one of: {', '.join(sorted(sim.PRESETS))}")
    p.add_argument("--sweep", default=None, help=f"one of: {', '.join(sorted(sim.SWEEPS))}")
    p.add_argument("--n-reps", type=_positive_int, default=None)
    p.add_argument("--master-seed", type=_seed, default=None)
    p.add_argument("--out", default="-")
    p.add_argument("--csv", default=None, help="also write summary row(s) as CSV here")
    p.add_argument("--parallelism", type=_positive_int, default=_default_parallelism())
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pred-corr", help="predictive correlation of a proxy metabolite")
    p.add_argument("--target-design", required=True)
    p.add_argument("--target-metabolite", required=True)
    p.add_argument("--external-design", required=True)
    p.add_argument("--external-metabolite", required=True)
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF,
                   help="correlation at or above which the external cohort is adequate")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default="-")
    _add_model(p)
    _add_preprocessing(p)
    p.set_defaults(func=cmd_pred_corr)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # fit diagnostics are recorded in the outputs themselves
    warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except DegenerateFitError as exc:
        print(f"mbpath: degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (MbpathError, ValueError, OSError, KeyError) as exc:
        cause = getattr(exc, "cause", None)
        if isinstance(cause, DegenerateFitError):
            print(f"mbpath: degenerate: {exc}", file=sys.stderr)
            return EXIT_DEGENERATE
        print(f"mbpath: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
