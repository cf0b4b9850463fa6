"""``genfinder`` command line.

Exit codes: 0 yes, 1 no, 2 indeterminate / undecidable at this tolerance,
3 verification mismatch, 64 usage error, 65 malformed or invalid data,
66 missing input file.
"""
import json
import logging
import os
import sys

import click
import numpy as np

from . import __version__
from .branch import DEFAULT_BRANCH_BOUND, Verdict, decide_markovian, decompose_lindblad, \
    fit_generator_series
from .channel import (PAPER_CONVENTION, TRANSFER_CONVENTION, StochasticMatrix, TransferMatrix,
                      encode_matrix, load_series, load_snapshot, write_json_atomic)
from .embed import decide_embeddable
from .errors import GenfinderError, NotLindblad, TooLarge
from .matkernel import DEFAULT_TOL

EXIT_YES, EXIT_NO, EXIT_INDETERMINATE, EXIT_MISMATCH = 0, 1, 2, 3
EXIT_USAGE, EXIT_DATA, EXIT_NOINPUT = 64, 65, 66
REPORT_FORMAT = "report-v1"
GENERATOR_FORMAT = "generator-v1"
REDUCE_MAX_VARS = 30
REDUCE_MAX_CLAUSES = 64

_VERDICT_EXIT = {Verdict.MARKOVIAN: EXIT_YES, Verdict.NON_MARKOVIAN: EXIT_NO,
                 Verdict.INDETERMINATE: EXIT_INDETERMINATE}


class CliExit(Exception):
    def __init__(self, code):
        super().__init__(code)
        self.code = code


def _fail(code, message):
    click.echo(f"genfinder: {message}", err=True)
    raise CliExit(code)


def _require_file(path):
    if not os.path.exists(path):
        _fail(EXIT_NOINPUT, f"no such file: {path}")
    return path


def _emit(payload, text, as_json, out):
    """Print the report (JSON or text) and optionally write JSON to ``out``."""
    if out:
        write_json_atomic(out, payload)
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(text)


def _report_payload(command, report, code, **extra):
    payload = {"format": REPORT_FORMAT, "command": command, "exit_code": code}
    payload.update(report.as_dict())
    payload.update(extra)
    return payload


def _report_text(report):
    lines = [f"verdict: {report.label}"]
    if report.cause:
        lines.append(f"cause: {report.cause}")
    if report.note:
        lines.append(f"note: {report.note}")
    if report.witness_m is not None:
        lines.append(f"branch integers: {list(report.witness_m)}")
    if report.conditions is not None:
        for k, v in report.conditions.as_dict().items():
            lines.append(f"  {k}: {v:.3e}")
    lines.append(f"tolerance: {report.tolerance_used:g}, branch bound: {report.branch_bound_used}, "
                 f"candidates searched: {report.candidates_searched}")
    if report.series_residuals is not None:
        lines.append("series residuals: " + ", ".join(f"{r:.2e}" for r in report.series_residuals))
    return "\n".join(lines)


def _convention(name):
    return PAPER_CONVENTION if name == "paper" else TRANSFER_CONVENTION


def _common(f):
    f = click.option("--out", type=click.Path(dir_okay=False), default=None,
                     help="Also write the JSON report to this file.")(f)
    f = click.option("--json", "as_json", is_flag=True, help="Print the JSON report.")(f)
    f = click.option("--branch-bound", type=click.IntRange(min=0), default=DEFAULT_BRANCH_BOUND,
                     show_default=True, help="Search branch integers in [-b, b].")(f)
    f = click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=DEFAULT_TOL,
                     show_default=True, help="Absolute tolerance on residuals and margins.")(f)
    return f


def _convention_option(f):
    return click.option("--convention", type=click.Choice(["transfer", "paper"]), default=None,
                        help="Index pairing of the input matrix (default: as declared in file, "
                             "else transfer).")(f)


@click.group()
@click.version_option(__version__, prog_name="genfinder")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Decide whether snapshots admit a time-independent master-equation generator."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("check-markov")
@click.argument("snapshot")
@_common
@_convention_option
def check_markov(snapshot, tol, branch_bound, as_json, out, convention):
    """Is the quantum SNAPSHOT exp(L) for a Lindblad generator L?"""
    snap = load_snapshot(_require_file(snapshot), convention and _convention(convention))
    if not isinstance(snap, TransferMatrix):
        _fail(EXIT_DATA, "check-markov needs a quantum snapshot (use check-embed for stochastic matrices)")
    report = decide_markovian(snap, tol, branch_bound)
    code = _VERDICT_EXIT[report.verdict]
    _emit(_report_payload("check-markov", report, code), _report_text(report), as_json, out)
    raise CliExit(code)


@cli.command("check-embed")
@click.argument("matrix")
@_common
def check_embed(matrix, tol, branch_bound, as_json, out):
    """Is the stochastic MATRIX exp(L) for a valid rate matrix L?"""
    snap = load_snapshot(_require_file(matrix))
    if not isinstance(snap, StochasticMatrix):
        _fail(EXIT_DATA, "check-embed needs a classical (stochastic) matrix")
    report = decide_embeddable(snap, tol, branch_bound)
    code = _VERDICT_EXIT[report.verdict]
    _emit(_report_payload("check-embed", report, code), _report_text(report), as_json, out)
    raise CliExit(code)


def _generator_payload(report, kind, dim, tol):
    payload = {"format": GENERATOR_FORMAT, "kind": kind, "dim": dim,
               "convention": TRANSFER_CONVENTION if kind == "quantum" else None,
               "L": encode_matrix(report.witness_L, kind),
               "witness_m": list(report.witness_m), "tolerance": tol}
    if kind == "quantum":
        try:
            dec = decompose_lindblad(report.witness_L, tol)
        except NotLindblad as exc:  # pragma: no cover - the witness passed the same check
            _fail(EXIT_INDETERMINATE, str(exc))
        payload.update({"H": encode_matrix(dec.H), "G": encode_matrix(dec.G),
                        "reassembly_residual": dec.reassembly_residual})
    if report.series_residuals is not None:
        payload["series_residuals"] = [float(r) for r in report.series_residuals]
    return payload


def _write_generator(command, report, kind, dim, tol, as_json, out):
    code = _VERDICT_EXIT[report.verdict]
    if code != EXIT_YES:
        click.echo(_report_text(report), err=True)
        if as_json:
            click.echo(json.dumps(_report_payload(command, report, code), indent=2, sort_keys=True))
        raise CliExit(code)
    payload = _generator_payload(report, kind, dim, tol)
    if out:
        write_json_atomic(out, payload)
        msg = f"wrote generator to {out}"
        if "reassembly_residual" in payload:
            msg += f" (reassembly residual {payload['reassembly_residual']:.2e})"
        click.echo(msg if not as_json else json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    raise CliExit(code)


@cli.command("extract")
@click.argument("snapshot")
@_common
@_convention_option
def extract(snapshot, tol, branch_bound, as_json, out, convention):
    """Write a generator for SNAPSHOT (with H, G for quantum input)."""
    snap = load_snapshot(_require_file(snapshot), convention and _convention(convention))
    if isinstance(snap, TransferMatrix):
        report = decide_markovian(snap, tol, branch_bound)
        _write_generator("extract", report, "quantum", snap.dim, tol, as_json, out)
    report = decide_embeddable(snap, tol, branch_bound)
    _write_generator("extract", report, "classical", snap.dim, tol, as_json, out)


@cli.command("fit")
@click.argument("series")
@_common
@_convention_option
def fit(series, tol, branch_bound, as_json, out, convention):
    """Fit one generator to every snapshot of a SERIES file."""
    ser = load_series(_require_file(series), convention and _convention(convention))
    report = fit_generator_series(ser, tol, branch_bound)
    _write_generator("fit", report, "quantum", ser.dim, tol, as_json, out)


def _load_sat(path):
    from .reduction import parse_sat
    with open(_require_file(path), encoding="utf-8") as fh:
        return parse_sat(fh.read())


@cli.command("reduce")
@click.argument("sat_file")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the manifest as JSON.")
def reduce_cmd(sat_file, out_dir, as_json):
    """Encode a 1-in-3SAT instance as a snapshot bundle in OUT_DIR."""
    from .reduction import build_reduction, export_bundle
    inst = _load_sat(sat_file)
    if inst.num_vars > REDUCE_MAX_VARS or inst.num_clauses > REDUCE_MAX_CLAUSES:
        raise TooLarge(f"reduce is capped at V <= {REDUCE_MAX_VARS}, C <= {REDUCE_MAX_CLAUSES}")
    bundle = build_reduction(inst)
    manifest = export_bundle(bundle, out_dir)
    if as_json:
        click.echo(json.dumps(manifest, indent=2, sort_keys=True))
    else:
        click.echo(f"bundle written to {out_dir}: n={manifest['n']} d={manifest['d']} "
                   f"sigma={manifest['sigma']} expected={manifest['expected_verdict']}")
    raise CliExit(EXIT_YES)


@cli.command("verify-reduction")
@click.argument("sat_file", required=False)
@click.option("--corpus", "use_corpus", is_flag=True,
              help="Sweep every instance with V <= 5, C <= 4 (up to relabeling).")
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Tolerance (default: kappa / (V (C+2V)^3)).")
@click.option("--kappa", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Constant of the default tolerance.")
@click.option("--classical", is_flag=True, help="Also run the rate-matrix check.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def verify_reduction_cmd(sat_file, use_corpus, tol, kappa, classical, as_json, out):
    """Cross-check SAT, reduced inequalities and Markovianity of the encoding."""
    from .reduction import (KAPPA, corpus, default_tolerance, verify_classical_reduction,
                            verify_corpus, verify_reduction)
    if bool(sat_file) == bool(use_corpus):
        raise click.UsageError("give exactly one of SAT_FILE or --corpus")
    kappa = KAPPA if kappa is None else kappa
    if use_corpus:
        instances = corpus()
        if tol is None:
            reports = verify_corpus(instances, kappa=kappa)
        else:
            reports = [verify_reduction(i, tol) for i in instances]
    else:
        instances = [_load_sat(sat_file)]
        reports = [verify_reduction(instances[0], tol, kappa=kappa)]
    results = []
    for inst, rep in zip(instances, reports):
        entry = rep.as_dict()
        if classical:
            crep = verify_classical_reduction(inst, tol if tol is not None
                                              else default_tolerance(inst, kappa))
            entry["classical"] = crep.as_dict()
            entry["agree"] = entry["agree"] and crep.agree
        results.append(entry)
    ok = all(e["agree"] for e in results)
    code = EXIT_YES if ok else EXIT_MISMATCH
    payload = {"format": REPORT_FORMAT, "command": "verify-reduction", "exit_code": code,
               "instances": results, "all_agree": ok}
    text = "\n".join(
        f"{'ok  ' if e['agree'] else 'FAIL'} V={e['instance']['num_vars']} "
        f"clauses={e['instance']['clauses']} sat={e['sat']} "
        f"markov={e['markov_verdict']}" + ("" if e["agree"] else f" {e['disagreements']}")
        for e in results) + f"\n{sum(e['agree'] for e in results)}/{len(results)} agree"
    _emit(payload, text, as_json, out)
    raise CliExit(code)


def main(argv=None):
    """Entry point mapping every outcome to the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="genfinder", standalone_mode=False)
    except CliExit as exc:
        return exc.code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except FileNotFoundError as exc:
        click.echo(f"genfinder: {exc}", err=True)
        return EXIT_NOINPUT
    except (GenfinderError, ValueError, json.JSONDecodeError, KeyError, TypeError) as exc:
        click.echo(f"genfinder: {type(exc).__name__}: {exc}", err=True)
        return EXIT_DATA
    return EXIT_YES


def run():  # pragma: no cover - console script shim
    sys.exit(main())
