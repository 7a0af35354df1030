"""Command-line workflow: initialise, verify, train, evaluate, compare, report.

Every command that produces artifacts writes them under ``--out`` together
with a ``manifest.json`` echoing the configuration and input file hashes.
``verify`` exits 0 (verified), 2 (falsified) or 3 (undecided); any failure
exits 1 with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SchemaError, bundled_schemas, extract_domain, load_dataset, load_schema,
                   schema_domain, schema_layout, split)
from .evaluation import EvalReport, emit_report, evaluate, read_table, timing_ratio
from .initialize import InitConfig, InitializationError, init_until_verified
from .network import NetworkSpec
from .train import (CertificateError, EpochStats, InfeasibleGammaError, TrainConfig, train_erm,
                    train_fair, train_side_by_side)
from .verify import FALSIFIED, UNDECIDED, InputDomain, load_domain, save_domain, verify

EXIT_OK, EXIT_ERROR, EXIT_FALSIFIED, EXIT_UNDECIDED = 0, 1, 2, 3
DEFAULT_LAYERS = "64,32,16,8,4"
DEFAULT_PHI = -1.0


class CliError(Exception):
    """Expected failure reported as a one-line diagnostic."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve_schema(value: str) -> Path:
    path = Path(value)
    if path.is_file():
        return path.resolve()
    bundled = bundled_schemas()
    if value in bundled:
        return bundled[value]
    raise CliError(f"schema {value!r} is neither a file nor a bundled schema "
                   f"({', '.join(sorted(bundled))})")


def _out_dir(args) -> Path:
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, extra: dict | None = None) -> Path:
    inputs = {}
    for key in ("data", "schema", "checkpoint", "domain"):
        value = getattr(args, key, None)
        if value:
            path = _resolve_schema(value) if key == "schema" else Path(value).resolve()
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    config = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": config,
        "inputs": inputs,
        "versions": {"certfair": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _layers(text: str) -> list[int]:
    try:
        sizes = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--layers expects comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise CliError("--layers needs at least one positive width")
    return sizes


def _spec_for(schema, args) -> NetworkSpec:
    names, _ = schema_layout(schema)
    domain = schema.sensitive_domain()
    n_classes = len(schema.label.categories)
    return NetworkSpec.for_features(len(names), _layers(args.layers), n_classes, len(domain),
                                    schema.encoding)


def _init_config(args) -> InitConfig:
    return InitConfig(scheme=args.init, constant=args.constant, p_init=args.p_init,
                      phi=args.phi, seed=args.seed)


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                       mode=args.mode, delta=args.delta, gamma_schedule=args.gamma_schedule,
                       projection=not args.no_projection, tol_fair=args.tol_fair)


def _load(args):
    if not args.data:
        raise CliError("--data is required for this command")
    schema = load_schema(_resolve_schema(args.schema))
    data = load_dataset(args.data, schema)
    train, test = split(data, args.test_fraction, args.seed)
    return schema, data, train, test


def _attribute(schema) -> str:
    return "+".join(f.name for f in schema.sensitive_features)


def _write_rows(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        if rows:
            out = csv.DictWriter(fh, fieldnames=list(rows[0]))
            out.writeheader()
            out.writerows(rows)
    return path


def _print_row(row: dict) -> None:
    print(",".join(str(v) for v in row.values()))


def cmd_init(args) -> int:
    out = _out_dir(args)
    schema = load_schema(_resolve_schema(args.schema))
    spec = _spec_for(schema, args)
    result = init_until_verified(spec, _init_config(args), schema_domain(schema),
                                 args.budget_partitions, args.budget_seconds)
    save_checkpoint(out / "init.ckpt", spec, result.params, args.format)
    save_domain(out / "domain.csv", schema_domain(schema))
    row = result.report_row(schema.name)
    _write_rows(out / "verification.csv", [row])
    _write_manifest(out, args, {"attempts": result.attempts})
    _print_row(row)
    return EXIT_OK


def cmd_verify(args) -> int:
    if not args.checkpoint:
        raise CliError("--checkpoint is required for verify")
    spec, params = load_checkpoint(args.checkpoint)
    if args.domain:
        domain = load_domain(args.domain)
    elif args.schema:
        domain = schema_domain(load_schema(_resolve_schema(args.schema)))
    else:
        raise CliError("verify needs --domain or --schema")
    verdict = verify(spec, params, domain, args.budget_partitions, args.budget_seconds,
                     use_certificate=not args.no_certificate, exact_onehot=args.exact_onehot)
    row = verdict.report_row(Path(args.checkpoint).stem)
    if args.out:
        out = _out_dir(args)
        _write_rows(out / "verification.csv", [row])
        _write_manifest(out, args, {"verdict": verdict.tag})
    _print_row(row)
    if verdict.tag == FALSIFIED:
        cx = verdict.counterexample
        print(f"counterexample: sensitive {cx.s1} -> {cx.s2} changes label {cx.labels}",
              file=sys.stderr)
        return EXIT_FALSIFIED
    return EXIT_UNDECIDED if verdict.tag == UNDECIDED else EXIT_OK


def _prepare(args):
    schema, data, train, test = _load(args)
    spec = _spec_for(schema, args)
    if spec.n_features != data.n_features:
        raise CliError("schema layout and preprocessed data disagree on feature count")
    init = init_until_verified(spec, _init_config(args), extract_domain(data),
                               args.budget_partitions, args.budget_seconds)
    return schema, spec, init, train, test


def _report(schema, spec, result, test, method: str) -> EvalReport:
    return evaluate(spec, result.params, test, method, schema.name, _attribute(schema),
                    result.stats[1:])


def _train_one(args, fair: bool):
    schema, spec, init, train, test = _prepare(args)
    runner = train_fair if fair else train_erm
    result = runner(spec, init.params, train, _train_config(args), probe=test)
    report = _report(schema, spec, result, test, "fair" if fair else "erm")
    return schema, spec, init, result, report


def _save_run(out: Path, args, spec, init, result, report, method: str) -> None:
    save_checkpoint(out / f"{method}.ckpt", spec, result.params, args.format)
    _write_rows(out / f"{method}_log.csv", [s.row() for s in result.stats])
    if result.gamma_reports:
        _write_rows(out / f"{method}_gamma.csv", result.gamma_reports)
    emit_report([report], out, stem=f"{method}_eval")
    _write_rows(out / "init_verification.csv", [init.report_row()])


def cmd_train(args, fair: bool = True) -> int:
    out = _out_dir(args)
    method = "fair" if fair else "erm"
    schema, spec, init, result, report = _train_one(args, fair)
    _save_run(out, args, spec, init, result, report, method)
    _write_manifest(out, args, {"method": method, "init_attempts": init.attempts,
                                "rollbacks": result.rollbacks})
    _print_row(report.row())
    print(f"rollbacks: {result.rollbacks}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise CliError("--checkpoint is required for eval")
    spec, params = load_checkpoint(args.checkpoint)
    schema, data, train, test = _load(args)
    if spec.n_features != data.n_features:
        raise CliError(f"checkpoint expects {spec.n_features} features, data has {data.n_features}")
    report = evaluate(spec, params, test, Path(args.checkpoint).stem, schema.name,
                      _attribute(schema))
    if args.out:
        out = _out_dir(args)
        emit_report([report], out, stem="eval")
        _write_manifest(out, args)
    _print_row(report.row())
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _out_dir(args)
    schema, spec, init, train, test = _prepare(args)
    # epochs alternate between the two runs so both see the same machine load
    fair, erm = train_side_by_side(spec, init.params, train, _train_config(args), probe=test)
    fair_report = _report(schema, spec, fair, test, "fair")
    erm_report = _report(schema, spec, erm, test, "erm")
    _save_run(out, args, spec, init, fair, fair_report, "fair")
    _save_run(out, args, spec, init, erm, erm_report, "erm")
    timing = timing_ratio(fair.stats[1:], erm.stats[1:])
    emit_report([erm_report, fair_report], out, curves={"fair": fair.stats, "erm": erm.stats})
    (out / "timing.json").write_text(json.dumps(asdict(timing), indent=2))
    _write_manifest(out, args, {"timing_ratio": timing.ratio, "rollbacks": fair.rollbacks})
    _print_row(erm_report.row())
    _print_row(fair_report.row())
    print(f"timing ratio fair/erm: {timing.ratio:.4f}")
    return EXIT_OK


def _read_log(path: Path) -> list[EpochStats]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    stats = []
    for row in rows:
        kw = {k: (int(float(v)) if k in ("epoch", "steps", "rollbacks", "projections")
                  else float(v)) for k, v in row.items()}
        stats.append(EpochStats(**kw))
    return stats


def cmd_report(args) -> int:
    out = _out_dir(args)
    reports: list[EvalReport] = []
    curves = {}
    for run in args.runs:
        run = Path(run)
        logs = sorted(run.glob("*_log.csv"))
        if not logs:
            raise CliError(f"{run}: no run logs found")
        for log_path in logs:
            method = log_path.stem[:-len("_log")]
            curves[f"{run.name}_{method}"] = _read_log(log_path)
            table = run / f"{method}_eval.csv"
            if table.is_file():
                reports += read_table(table)
    if not reports:
        raise CliError("no evaluation tables found in the given runs")
    written = emit_report(reports, out, args.report_format, curves)
    _write_manifest(out, args)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="headed CSV file")
    common.add_argument("--schema", help="schema file or bundled schema name")
    common.add_argument("--out", help="output directory (created if absent)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--test-fraction", type=float, default=0.2)
    common.add_argument("--layers", default=DEFAULT_LAYERS, help="hidden widths, comma-separated")
    common.add_argument("--format", choices=("binary", "text"), default="binary",
                        help="checkpoint format")
    common.add_argument("--workers", type=int, default=1,
                        help="recorded in the manifest; computation is single-process")
    common.add_argument("--verbose", action="store_true")
    budget = common.add_argument_group("verifier budget")
    budget.add_argument("--budget-partitions", type=int, default=10_000)
    budget.add_argument("--budget-seconds", type=float, default=60.0)
    init = common.add_argument_group("initialisation")
    init.add_argument("--init", choices=("zero", "bernoulli"), default="bernoulli")
    init.add_argument("--phi", type=float, default=DEFAULT_PHI)
    init.add_argument("--p-init", type=float, default=0.5)
    init.add_argument("--constant", type=float, default=0.0, help="bias for --init zero")
    train = common.add_argument_group("training")
    train.add_argument("--epochs", type=int, default=100)
    train.add_argument("--lr", type=float, default=0.01)
    train.add_argument("--batch", type=int, default=64)
    train.add_argument("--mode", choices=("stochastic", "expectation"), default="expectation")
    train.add_argument("--delta", type=int, default=8)
    train.add_argument("--gamma-schedule", choices=("epoch", "step"), default="epoch")
    train.add_argument("--no-projection", action="store_true",
                       help="disable the projection fallback")
    train.add_argument("--tol-fair", type=float, default=1e-9)

    parser = argparse.ArgumentParser(prog="certfair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("init", parents=[common], help="draw and verify an initialisation")
    p.set_defaults(func=cmd_init)
    p = sub.add_parser("verify", parents=[common], help="verify a checkpoint on a domain")
    p.add_argument("--checkpoint")
    p.add_argument("--domain", help="domain CSV (defaults to the schema's unit box)")
    p.add_argument("--no-certificate", action="store_true")
    p.add_argument("--exact-onehot", action="store_true")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("train", parents=[common], help="verified init, then fair training")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("erm", parents=[common], help="plain SGD baseline")
    p.set_defaults(func=lambda a: cmd_train(a, fair=False))
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("compare", parents=[common], help="fair and ERM training side by side")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("report", parents=[common], help="aggregate run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--report-format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_out = args.command in ("init", "train", "erm", "compare", "report")
    if needs_out and not args.out:
        parser.error(f"{args.command} requires --out")
    if args.command != "verify" and args.command != "report" and not args.schema:
        parser.error(f"{args.command} requires --schema")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        msg = str(exc)
    except (OSError, SchemaError) as exc:
        msg = f"input error: {exc}"
    except InfeasibleGammaError as exc:
        msg = f"infeasible privacy budget: {exc}"
    except InitializationError as exc:
        msg = f"verification exhausted: {exc}"
    except (CertificateError, ValueError) as exc:
        msg = f"invalid configuration: {exc}"
    print(f"certfair {args.command}: {msg}", file=sys.stderr)
    return EXIT_ERROR


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
