"""Command-line front end.

Subcommands: ``estimate``, ``jackknife``, ``bootstrap``, ``diagnose`` and
``simulate``. Exit status is 0 on success, 1 for input or configuration
errors and 2 when the design does not permit estimation or inference.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import pandas as pd

from . import report
from .aggregate import SCHEMES, AttResult, aggregate_att
from .errors import InfeasibleError, InputError, JackknifeAbort
from .estimator import estimate_all_cells, influence_contributions
from .inference import (DEFAULT_SEED, DegenerateVarianceWarning, asymptotic_inference,
                        cluster_jackknife, format_table, loo_profile, multiplier_bootstrap)
from .montecarlo import (DESIGN_GRID, McConfig, config_summary, load_config, run_experiment,
                         run_grid)
from .panel import (assign_cohorts, demean_by_region, enumerate_cells, load_gvar, load_panel,
                    normalize_control_mode)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_input(p):
    p.add_argument("--input", required=True, help="long-format panel CSV")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gvar-col", help="first-treatment period column in the panel CSV")
    g.add_argument("--gvar-file", help="two-column CSV: region, first-treatment period")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--region-col", default="region")
    p.add_argument("--time-col", default="period")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--allow-gaps", action="store_true",
                   help="map non-consecutive period labels onto 1..T")
    p.add_argument("--demean", action="store_true", help="demean outcomes by region first")


def _add_common(p, *, alpha=True):
    p.add_argument("--control", default="never", choices=["never", "notyet"])
    p.add_argument("--agg", default="simple", choices=list(SCHEMES))
    if alpha:
        p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", default="table", choices=["table", "json", "csv"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cohortjack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="group-time ATTs, aggregate ATT and inference")
    _add_input(p)
    _add_common(p)
    p.add_argument("--method", default="asymptotic",
                   choices=["asymptotic", "bootstrap", "jackknife"])
    p.add_argument("--B", type=int, default=999)
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("jackknife", help="cluster-jackknife (CV3) inference")
    _add_input(p)
    _add_common(p)
    p.add_argument("--strict", action="store_true",
                   help="fail if any leave-one-out replicate loses cells")

    p = sub.add_parser("bootstrap", help="multiplier bootstrap inference")
    _add_input(p)
    _add_common(p)
    p.add_argument("--B", type=int, default=999)

    p = sub.add_parser("diagnose", help="leave-one-cluster-out influence profile")
    _add_input(p)
    _add_common(p, alpha=False)
    p.add_argument("--k", type=float, default=3.0, help="flag shifts larger than k se")

    p = sub.add_parser("simulate", help="placebo-law rejection-frequency experiment")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--grid", choices=["paper"], help="run the full (R, J=L) design grid")
    p.add_argument("--R", type=int)
    p.add_argument("--J", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--alpha", type=float, help="test level (default 0.05)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--control", choices=["never", "notyet"])
    p.add_argument("--agg", choices=list(SCHEMES))
    p.add_argument("--no-demean", action="store_true")
    p.add_argument("--source", help="panel CSV to subsample instead of the synthetic DGP")
    p.add_argument("--unit-col", default="unit")
    p.add_argument("--region-col", default="region")
    p.add_argument("--time-col", default="period")
    p.add_argument("--outcome-col", default="outcome")
    p.add_argument("--allow-gaps", action="store_true")
    p.add_argument("--out", help="directory for rejection.csv and rejection.txt")
    p.add_argument("--format", default="table", choices=["table", "json", "csv"])
    return parser


def _load(args):
    schema = {"unit": args.unit_col, "region": args.region_col,
              "period": args.time_col, "outcome": args.outcome_col}
    if getattr(args, "gvar_col", None):
        schema["gvar"] = args.gvar_col
    panel = load_panel(args.input, schema, allow_gaps=args.allow_gaps)
    if getattr(args, "gvar_file", None):
        gvar = _read_gvar_file(args.gvar_file)
    elif panel.gvar is not None:
        gvar = panel.gvar
    else:
        raise InputError("treatment timing missing: pass --gvar-col or --gvar-file")
    cohorts = assign_cohorts(panel, gvar)
    if args.demean:
        panel = demean_by_region(panel)
    return panel, cohorts


def _read_gvar_file(path):
    try:
        cols = list(pd.read_csv(path, nrows=0).columns)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise InputError(f"cannot read gvar file {path}: {exc}") from None
    if len(cols) != 2:
        raise InputError(f"gvar file must have exactly two columns, found {cols}")
    return load_gvar(path, cols[0], cols[1])


def _cells_doc(panel, att: AttResult):
    lab = panel.period_labels
    return [
        {
            "g": lab[c.cell.g - 1],
            "t": lab[c.cell.t - 1],
            "att": c.value,
            "n_treated": c.n_treated,
            "n_comparison": c.n_comparison,
            "comparison": sorted(str(r) for r in c.cell.comparison),
            "weight": att.weights[c.key],
        }
        for c in att.cells
    ]


def _att_doc(panel, att: AttResult):
    lab = panel.period_labels
    return {
        "value": att.value,
        "weights": [[lab[g - 1], lab[t - 1], w] for (g, t), w in att.weights.items()],
        "components": [[lab[k - 1], v] for k, v in att.components.items()],
    }


def _cells_table(panel, att: AttResult) -> str:
    rows = [["g", "t", "ATT(g,t)", "N treated", "N comparison", "weight", "comparison"]]
    for d in _cells_doc(panel, att):
        rows.append([str(d["g"]), str(d["t"]), f"{d['att']:.4f}", str(d["n_treated"]),
                     str(d["n_comparison"]), f"{d['weight']:.4f}", " ".join(d["comparison"])])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.rjust(w) if i < 6 else c for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    agg = f"Aggregate ATT ({att.scheme}, {att.control_mode.replace('_', '-')}): {att.value:.4f}"
    comp = ""
    if att.components:
        lab = panel.period_labels
        comp = "\n" + "  ".join(f"ATT({lab[k - 1]})={v:.4f}" for k, v in att.components.items())
    return "\n".join(lines) + "\n\n" + agg + comp


def _cells_csv(panel, att: AttResult) -> str:
    out = ["g,t,att,n_treated,n_comparison,weight,comparison"]
    for d in _cells_doc(panel, att):
        out.append(f"{d['g']},{d['t']},{d['att']!r},{d['n_treated']},{d['n_comparison']},"
                   f"{d['weight']!r},{' '.join(d['comparison'])}")
    return "\n".join(out) + "\n"


def _inference_csv(results) -> str:
    out = ["method,estimate,se,statistic,df,p_value,ci_lower,ci_upper,degenerate"]
    for r in results:
        out.append(f"{r.method},{r.estimate!r},{r.se!r},{r.statistic!r},"
                   f"{'' if r.df is None else r.df},{r.p_value!r},{r.ci[0]!r},{r.ci[1]!r},"
                   f"{r.degenerate}")
    return "\n".join(out) + "\n"


def _fit(panel, cohorts, args):
    mode = normalize_control_mode(args.control)
    return aggregate_att(estimate_all_cells(panel, cohorts, mode, threads=args.threads), args.agg)


def _asymptotic(panel, cohorts, att, alpha):
    psi = influence_contributions(panel, cohorts, att.cells)
    return asymptotic_inference(att, psi, panel.unit_region, alpha, allow_degenerate=True)


def _bootstrap(panel, cohorts, att, args):
    psi = influence_contributions(panel, cohorts, att.cells)
    return multiplier_bootstrap(att, psi, panel.unit_region, B=args.B, seed=args.seed,
                                alpha=args.alpha, threads=args.threads, allow_degenerate=True)


def _jackknife(panel, cohorts, att, args):
    return cluster_jackknife(panel, cohorts, att.control_mode, att.scheme, args.alpha,
                             args.strict, threads=args.threads, att=att, allow_degenerate=True)


def _base_doc(command, att):
    return {"schema_version": report.SCHEMA_VERSION, "command": command,
            "control_mode": att.control_mode, "scheme": att.scheme}


def _loo_rows_doc(profile):
    return [{**r, "cluster": str(r["cluster"])} for r in profile.rows]


def _loo_table(profile) -> str:
    head = ["cluster", "role", "obs", "ATT^(h)", "shift", "flag"]
    body = [[str(r["cluster"]), r["role"], str(r["size"]), f"{r['loo_estimate']:.4f}",
             f"{r['shift']:+.4f}", r["reason"]] for r in profile.rows]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in body]
    flagged = profile.flagged
    lines.append("")
    lines.append(f"Flagged clusters (sign change or shift > {profile.k:g} se): "
                 + (", ".join(str(h) for h in flagged) if flagged else "none"))
    return "\n".join(lines)


def cmd_estimate(args, out):
    panel, cohorts = _load(args)
    att = _fit(panel, cohorts, args)
    if args.method == "bootstrap":
        res = _bootstrap(panel, cohorts, att, args)
    elif args.method == "jackknife":
        res = _jackknife(panel, cohorts, att, args)
    else:
        res = _asymptotic(panel, cohorts, att, args.alpha)
    omitted = enumerate_cells(cohorts, panel, att.control_mode).omitted
    if args.format == "json":
        doc = _base_doc("estimate", att)
        lab = panel.period_labels
        doc.update(cells=_cells_doc(panel, att),
                   omitted_cells=[[lab[g - 1], lab[t - 1], why] for g, t, why in omitted],
                   att=_att_doc(panel, att), inference=[res.to_dict()])
        out.write(report.dumps(doc))
    elif args.format == "csv":
        out.write(_cells_csv(panel, att))
    else:
        out.write(_cells_table(panel, att) + "\n\n" + format_table([res]) + "\n")


def cmd_jackknife(args, out):
    panel, cohorts = _load(args)
    att = _fit(panel, cohorts, args)
    jk = _jackknife(panel, cohorts, att, args)
    asym = _asymptotic(panel, cohorts, att, args.alpha)
    profile = loo_profile(panel, cohorts, att=att)
    if args.format == "json":
        doc = _base_doc("jackknife", att)
        doc.update(att=_att_doc(panel, att), inference=[asym.to_dict(), jk.to_dict()],
                   loo_profile=_loo_rows_doc(profile))
        out.write(report.dumps(doc))
    elif args.format == "csv":
        out.write(profile.to_csv())
    else:
        dropped = jk.detail.dropped_cells
        lines = [format_table([asym, jk]), "", f"H = {jk.detail.H} clusters, "
                 f"t({jk.df}) reference", "", _loo_table(profile)]
        if dropped:
            lab = panel.period_labels
            lines += ["", "Cells lost in leave-one-out replicates (weights renormalised):"]
            lines += [f"  drop {h}: " + ", ".join(f"ATT({lab[g - 1]},{lab[t - 1]})" for g, t in d)
                      for h, d in dropped.items()]
        out.write("\n".join(lines) + "\n")


def cmd_bootstrap(args, out):
    panel, cohorts = _load(args)
    att = _fit(panel, cohorts, args)
    boot = _bootstrap(panel, cohorts, att, args)
    asym = _asymptotic(panel, cohorts, att, args.alpha)
    if args.format == "json":
        doc = _base_doc("bootstrap", att)
        doc.update(att=_att_doc(panel, att), inference=[asym.to_dict(), boot.to_dict()])
        out.write(report.dumps(doc))
    elif args.format == "csv":
        out.write(_inference_csv([asym, boot]))
    else:
        out.write(format_table([asym, boot]) + f"\n\nB = {args.B}, seed = {args.seed}, "
                  "Mammen weights; percentile interval\n")


def cmd_diagnose(args, out):
    panel, cohorts = _load(args)
    att = _fit(panel, cohorts, args)
    profile = loo_profile(panel, cohorts, k=args.k, att=att)
    if args.format == "json":
        doc = _base_doc("diagnose", att)
        doc.update(att=_att_doc(panel, att), loo_profile=_loo_rows_doc(profile))
        out.write(report.dumps(doc))
    elif args.format == "csv":
        out.write(profile.to_csv())
    else:
        out.write(f"Full-sample ATT: {att.value:.4f}\n\n" + _loo_table(profile) + "\n")


def _simulation_config(args) -> McConfig:
    base = McConfig()
    if args.config:
        base = load_config(args.config, base)
    overrides = {"R": args.R, "J": args.J, "L": args.L, "replications": args.reps,
                 "bootstrap_B": args.B, "level": args.alpha, "seed": args.seed,
                 "scheme": args.agg}
    for k, v in overrides.items():
        if v is not None:
            setattr(base, k, v)
    if args.J is not None and args.L is None:
        base.L = args.J
    if args.control:
        base.control_mode = normalize_control_mode(args.control)
    if args.no_demean:
        base.demean = False
    if args.source:
        schema = {"unit": args.unit_col, "region": args.region_col,
                  "period": args.time_col, "outcome": args.outcome_col}
        base.source = load_panel(args.source, schema, allow_gaps=args.allow_gaps)
    return base


def cmd_simulate(args, out):
    config = _simulation_config(args)
    if args.grid == "paper":
        if config.L != config.J:
            raise InputError("--grid runs J = L designs only")
        grid = DESIGN_GRID
        if config.source is not None:
            grid = [(R, J) for R, J in grid if R <= config.source.R]
        table = run_grid(config, grid, threads=args.threads)
    else:
        table = run_experiment(config, threads=args.threads)
    text, csv = table.to_text(), table.to_csv()
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "rejection.csv").write_text(csv, encoding="utf-8")
        (d / "rejection.txt").write_text(text, encoding="utf-8")
    if args.format == "json":
        doc = {"schema_version": report.SCHEMA_VERSION, "command": "simulate",
               "config": config_summary(config),
               "rejection_table": [
                   {"R": r.R, "J": r.J, "L": r.L, "method": m, "replications": r.replications,
                    "completed": r.completed[m], "frequency": r.frequency(m),
                    "mc_se": r.mc_se(m), "failed": r.failed[m]}
                   for _, r in sorted(table.rows.items()) for m in r.completed]}
        out.write(report.dumps(doc))
    elif args.format == "csv":
        out.write(csv)
    else:
        out.write(text)


COMMANDS = {"estimate": cmd_estimate, "jackknife": cmd_jackknife, "bootstrap": cmd_bootstrap,
            "diagnose": cmd_diagnose, "simulate": cmd_simulate}


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", 1) is not None and args.threads < 1:
        err.write("cohortjack: error: --threads must be at least 1\n")
        return 1
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateVarianceWarning)
            COMMANDS[args.command](args, out)
        for w in caught:
            err.write(f"cohortjack: warning: {w.message}\n")
    except JackknifeAbort as exc:
        err.write(f"cohortjack: jackknife unavailable: {exc}\n")
        return 2
    except InfeasibleError as exc:
        err.write(f"cohortjack: estimation infeasible: {exc}\n")
        return 2
    except (InputError, OSError) as exc:
        err.write(f"cohortjack: error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
