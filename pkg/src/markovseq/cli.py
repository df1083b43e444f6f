"""Command-line interface: ``markovseq <subcommand> ...``.

Every file written carries a provenance block with the full run
configuration and seed. The worker count is deliberately left out of it:
results do not depend on it, and outputs must be byte-identical across
worker counts.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, MarkovSeqError
from .estimation import (
    GlobalControl,
    RestartControl,
    direct_ml_fit,
    fit_with_restarts,
    simulate_emission_probs,
    simulate_initial_probs,
    simulate_transition_probs,
)
from .hmm import HiddenMarkovModel, simulate_sequences, viterbi
from .io import dumps, read_model, write_json
from .markov import MarkovModel, estimate_mm, format_markov_model
from .mixture import DesignSpec, MixtureModel, cluster_priors, mixture_hidden_paths, summarize
from .modelselect import bic, comparison_table
from .procmine import build_process_graph, cluster_process_maps, diff_graph, group_models, model_process_graph
from .seqdata import (
    Alphabet,
    CovariateFrame,
    SequenceSet,
    ingest_covariates,
    ingest_wide_csv,
)

THREADS_ENV = "MARKOVSEQ_THREADS"
_EXECUTION_ONLY = {"threads", "func"}


def _provenance(args: argparse.Namespace) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _EXECUTION_ONLY}
    return {"tool": "markovseq", "version": __version__, "subcommand": args.command,
            "config": config, "seed": getattr(args, "seed", None)}


def _comment_line(args) -> str:
    return "# provenance: " + json.dumps(_provenance(args), sort_keys=True)


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _csv_list(value: str | None) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def _parse_levels(items: list[str] | None) -> dict[str, list[str]]:
    levels = {}
    for item in items or []:
        name, _, lv = item.partition("=")
        if not lv:
            raise DataError(f"--levels expects NAME=L1,L2,... (got {item!r})")
        levels[name] = _csv_list(lv)
    return levels


def _load_data(args) -> tuple[SequenceSet, CovariateFrame | None]:
    alphabet = _csv_list(args.alphabet) or None
    if alphabet and args.colors:
        alphabet = Alphabet(tuple(alphabet), tuple(_csv_list(args.colors)))
    s = ingest_wide_csv(args.input, args.seq_cols, args.id_col, alphabet, args.missing_token)
    covariates = _csv_list(getattr(args, "covariates", None))
    cov = None
    if covariates:
        cov = ingest_covariates(args.cov_input or args.input, covariates, args.id_col, _parse_levels(args.levels))
        cov.check_aligned(s)
    return s, cov


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--input", required=required, help="wide CSV/TSV with one sequence per row")
    p.add_argument("--seq-cols", required=required, help="1-based inclusive column range, e.g. 3-22")
    p.add_argument("--id-col", help="name of the id column")
    p.add_argument("--alphabet", help="comma-separated symbols in order (inferred if omitted)")
    p.add_argument("--colors", help="comma-separated hex colors, one per symbol")
    p.add_argument("--missing-token", default="", help="token marking missing cells (default: empty)")


def _add_cov_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--covariates", help="comma-separated categorical covariate columns")
    p.add_argument("--intercept", choices=["on", "off"], default="on")
    p.add_argument("--levels", action="append", help="level order, NAME=L1,L2,... (repeatable)")
    p.add_argument("--cov-input", help="covariate file (defaults to --input)")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get(THREADS_ENV, "1"))


def _starting_model(args, s: SequenceSet, cov: CovariateFrame | None):
    if args.start:
        return read_model(args.start)
    kind = args.model
    m = len(s.alphabet)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(2**31,)))
    if kind == "mm":
        return estimate_mm(s)
    sizes = [int(x) for x in _csv_list(args.n_states)] if args.n_states else []
    if kind == "hmm":
        if len(sizes) != 1:
            raise DataError("--n-states must be a single count for an HMM")
        n = sizes[0]
        return HiddenMarkovModel(
            s.alphabet,
            simulate_initial_probs(n, rng),
            simulate_transition_probs(n, 1, args.diag_boost, rng)[0],
            simulate_emission_probs(n, m, 1, rng)[0],
        )
    k = args.n_clusters or len(sizes)
    if not k:
        raise DataError("--n-clusters (or per-cluster --n-states) required for mixtures")
    if kind == "mmm":
        clusters = [
            MarkovModel(s.alphabet, simulate_initial_probs(m, rng), simulate_transition_probs(m, 1, args.diag_boost, rng)[0])
            for _ in range(k)
        ]
    else:
        if len(sizes) == 1:
            sizes = sizes * k
        if len(sizes) != k:
            raise DataError("--n-states must give one count or one per cluster")
        clusters = [
            HiddenMarkovModel(
                s.alphabet,
                simulate_initial_probs(n, rng),
                simulate_transition_probs(n, 1, args.diag_boost, rng)[0],
                simulate_emission_probs(n, m, 1, rng)[0],
            )
            for n in sizes
        ]
    design = DesignSpec.from_frame(cov, _csv_list(args.covariates), args.intercept == "on")
    return MixtureModel.with_zero_coefficients(clusters, design, tuple(_csv_list(args.cluster_labels)))


def cmd_fit(args) -> int:
    if args.model != "mm" and args.seed is None:
        raise DataError("randomized fits require an explicit --seed")
    s, cov = _load_data(args)
    start = _starting_model(args, s, cov)
    seed = args.seed if args.seed is not None else 0
    if args.method == "direct":
        report = direct_ml_fit(
            start, s, GlobalControl(args.maxtime, args.maxeval, args.multistart, seed), cov
        )
    else:
        control = RestartControl(
            times=args.restarts, n_optimum=args.n_optimum, seed=seed, threads=_threads(args),
            max_iterations=args.max_iter, relative_tolerance=args.tol,
        )
        report = fit_with_restarts(start, s, control, cov)
    model = report.model
    if isinstance(model, MixtureModel) and args.cluster_labels:
        model = model.replace(cluster_labels=tuple(_csv_list(args.cluster_labels)))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args)
    write_json(out / "model.json", model.to_dict(), prov)
    write_json(out / "report.json", report.to_dict(), prov)

    text = [s.describe(), ""]
    if isinstance(model, MixtureModel):
        text.append(str(summarize(model, s, cov)))
    else:
        text.append(str(model))
        score = bic(model, s)
        text.append("")
        text.append(f"Log-likelihood: {score.log_likelihood:.7g}   BIC: {score.bic:.7g}")
    if report.em_results is not None and report.method == "em":
        em = report.em_results
        text += ["", f"$logLik {em.logLik:.7g}", f"$iterations {em.iterations}", f"$change {em.change:.7g}"]
    text.append("$best_opt_restart " + " ".join(f"{x:.3f}" if np.isfinite(x) else "-Inf"
                                                for x in report.best_opt_restart))
    for r, msg in sorted(report.failures.items()):
        text.append(f"Warning (round {r}): {msg}")
    body = "\n".join(text) + "\n"
    (out / "summary.txt").write_text(_comment_line(args) + "\n" + body, encoding="utf-8")
    sys.stdout.write(body)
    return 0


def cmd_trate(args) -> int:
    s, _ = _load_data(args)
    mm = estimate_mm(s)
    labels = list(s.alphabet.symbols)
    if args.format == "json":
        _write_text(args.output, dumps({"labels": labels, "transitions": mm.transitions,
                                        "provenance": _provenance(args)}))
    else:
        buf = _io.StringIO()
        buf.write(_comment_line(args) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["From\\To", *labels])
        for lab, row in zip(labels, mm.transitions):
            writer.writerow([lab, *(f"{v:.{args.digits}f}" for v in row)])
        _write_text(args.output, buf.getvalue())
    for note in mm.warnings:
        print(f"warning: {note}", file=sys.stderr)
    return 0


def _graph_output(args, graphs, kind: str) -> None:
    if args.format == "json":
        payload = [g.to_dict() for g in graphs]
        _write_text(args.output, dumps({kind: payload, "provenance": _provenance(args)}))
    else:
        header = "// provenance: " + json.dumps(_provenance(args), sort_keys=True) + "\n"
        _write_text(args.output, header + "".join(g.to_dot() for g in graphs))


def cmd_graph(args) -> int:
    if args.model:
        model = read_model(args.model)
        if isinstance(model, MarkovModel):
            graphs = [model_process_graph(model, args.cut, args.minimum)]
        elif isinstance(model, MixtureModel):
            graphs = cluster_process_maps(model, args.cut, args.minimum)
        else:
            raise DataError("process maps need an MM or a mixture of MMs")
    elif args.input:
        s, _ = _load_data(args)
        graphs = [model_process_graph(estimate_mm(s), args.cut, args.minimum)]
    else:
        raise DataError("give --model or --input")
    _graph_output(args, graphs, "graphs")
    return 0


def cmd_diff(args) -> int:
    if args.a and args.b:
        a, b = read_model(args.a), read_model(args.b)
    elif args.input and args.group_col and args.groups:
        s, _ = _load_data(args)
        groups = ingest_covariates(args.input, [args.group_col], args.id_col).columns[args.group_col].values
        models = group_models(s, groups)
        names = _csv_list(args.groups)
        if len(names) != 2 or any(n not in models for n in names):
            raise DataError(f"--groups needs two of {list(models)}")
        a, b = models[names[0]], models[names[1]]
    else:
        raise DataError("give --a/--b model files, or --input with --group-col and --groups A,B")
    if not isinstance(a, MarkovModel) or not isinstance(b, MarkovModel):
        raise DataError("difference maps compare two MMs")
    if a.alphabet.symbols != b.alphabet.symbols:
        raise DataError("models have different alphabets")
    g = diff_graph(a.transitions, b.transitions, args.minimum, a.alphabet.symbols, a.alphabet.colors)
    if args.format == "json":
        _write_text(args.output, dumps({**g.to_dict(), "provenance": _provenance(args)}))
    else:
        _write_text(args.output, "// provenance: " + json.dumps(_provenance(args), sort_keys=True) + "\n" + g.to_dot())
    return 0


def cmd_paths(args) -> int:
    model = read_model(args.model)
    s, cov = _load_data(args)
    buf = _io.StringIO()
    buf.write(_comment_line(args) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ID", "cluster", "log_prob", *s.time_labels])
    if isinstance(model, HiddenMarkovModel):
        rows = [(None, p) for p in viterbi(model, s)]
        labels = [list(model.state_labels)]
    elif isinstance(model, MixtureModel) and model.kind == "mhmm":
        rows = mixture_hidden_paths(model, s, cov)
        labels = [list(c.state_labels) for c in model.clusters]
    else:
        raise DataError("hidden paths need an HMM or a mixture of HMMs")
    for sid, (k, path) in zip(s.ids, rows):
        states = labels[k or 0]
        cluster = "" if k is None else model.cluster_labels[k]
        cells = [states[z] for z in path.states] + [""] * (s.n_timepoints - len(path.states))
        lp = f"{path.log_prob:.10g}" if np.isfinite(path.log_prob) else "-Inf"
        writer.writerow([sid, cluster, lp, *cells])
    _write_text(args.output, buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    if args.seed is None:
        raise DataError("simulate requires an explicit --seed")
    model = read_model(args.model)
    rng = np.random.default_rng(args.seed)
    if isinstance(model, MixtureModel):
        if model.design.covariates:
            raise DataError("simulating from a covariate mixture is not supported; refit without covariates")
        prior = cluster_priors(model.coefficients, model.design, None, 1)[0]
        which = rng.choice(model.n_clusters, size=args.n, p=prior)
        rows = np.empty((args.n, args.length), dtype=np.int64)
        for k, c in enumerate(model.clusters):
            idx = np.flatnonzero(which == k)
            if idx.size:
                rows[idx] = simulate_sequences(c, idx.size, args.length, rng).cells
        s = SequenceSet(model.alphabet, rows)
    else:
        s = simulate_sequences(model, args.n, args.length, rng)
    buf = _io.StringIO()
    buf.write(_comment_line(args) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ID", *s.time_labels])
    for sid, row in zip(s.ids, s.tokens()):
        writer.writerow([sid, *row])
    _write_text(args.output, buf.getvalue())
    return 0


def cmd_bic(args) -> int:
    s, cov = _load_data(args)
    scores = {path: bic(read_model(path), s, cov) for path in args.models}
    table = comparison_table(scores)
    if args.output:
        payload = {name: sc.to_dict() for name, sc in scores.items()}
        write_json(args.output, {"scores": payload}, _provenance(args))
    sys.stdout.write(table + "\n")
    return 0


def cmd_summary(args) -> int:
    model = read_model(args.model)
    if not isinstance(model, MixtureModel):
        raise DataError("summary needs a mixture model")
    s, cov = _load_data(args)
    sm = summarize(model, s, cov)
    if args.output:
        write_json(args.output, sm.to_dict(), _provenance(args))
    sys.stdout.write(str(sm) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovseq", description="Markovian models for categorical sequences.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an MM, HMM, MMM or MHMM")
    _add_data_args(p)
    _add_cov_args(p)
    p.add_argument("--model", choices=["mm", "hmm", "mmm", "mhmm"], required=True)
    p.add_argument("--n-states", help="hidden states (one count, or one per cluster)")
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--cluster-labels", help="comma-separated cluster names")
    p.add_argument("--start", help="model JSON with starting values (zeros are kept fixed)")
    p.add_argument("--diag-boost", type=float, default=0.0, help="diagonal weight added to random transitions")
    p.add_argument("--method", choices=["em", "direct"], default="em")
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--n-optimum", type=int, default=25)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-10, help="relative log-likelihood tolerance")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--maxeval", type=int, default=10_000)
    p.add_argument("--maxtime", type=float, help="wall-clock budget (makes results non-reproducible)")
    p.add_argument("--multistart", type=int, default=10)
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("trate", help="empirical transition matrix")
    _add_data_args(p)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--digits", type=int, default=4)
    p.add_argument("--output")
    p.set_defaults(func=cmd_trate)

    p = sub.add_parser("graph", help="process map as DOT or JSON")
    _add_data_args(p, required=False)
    p.add_argument("--model", help="MM or MMM JSON")
    p.add_argument("--cut", type=float, default=0.15)
    p.add_argument("--minimum", type=float, default=0.05)
    p.add_argument("--format", choices=["dot", "json"], default="dot")
    p.add_argument("--output")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("diff", help="difference map b - a")
    _add_data_args(p, required=False)
    p.add_argument("--a", help="MM JSON (subtracted)")
    p.add_argument("--b", help="MM JSON")
    p.add_argument("--group-col", help="group column in --input")
    p.add_argument("--groups", help="two group labels A,B; the map shows B - A")
    p.add_argument("--minimum", type=float, default=0.05)
    p.add_argument("--format", choices=["dot", "json"], default="dot")
    p.add_argument("--output")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("paths", help="Viterbi hidden paths as CSV")
    _add_data_args(p)
    _add_cov_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("simulate", help="simulate sequences from a model JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bic", help="BIC comparison table")
    _add_data_args(p)
    _add_cov_args(p)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--output", help="optional JSON with the scores")
    p.set_defaults(func=cmd_bic)

    p = sub.add_parser("summary", help="mixture summary")
    _add_data_args(p)
    _add_cov_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--output", help="optional JSON with the full summary")
    p.set_defaults(func=cmd_summary)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MarkovSeqError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
