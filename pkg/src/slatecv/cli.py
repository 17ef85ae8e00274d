"""``slatecv`` command line: evaluate, simulate, bench, oracle.

Exit codes: 0 success, 2 validation error, 3 enumeration cap exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from typing import List, Optional, Sequence, TextIO

from . import estimators as est
from .bench import run_benchmark
from .errors import CapacityError, ValidationError
from .oracle import enumerate_ground_truth, enumerate_moments
from .policy import FactoredPolicy, SlateSchema, make_deterministic_policy, make_uniform_policy, read_jsonl, write_jsonl
from .simulator import RewardModel, SimConfig, generate_logs, load_sim_config

DEFAULT_SEED = 0
EXIT_OK, EXIT_VALIDATION, EXIT_CAPACITY = 0, 2, 3


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _estimator_list(text: str) -> List[str]:
    names = []
    for key in (x.strip().lower() for x in text.split(",") if x.strip()):
        if key not in est.CLI_ESTIMATORS:
            raise argparse.ArgumentTypeError(
                f"unknown estimator {key!r}; choose from {','.join(est.CLI_ESTIMATORS)}"
            )
        names.append(est.CLI_ESTIMATORS[key])
    if not names:
        raise argparse.ArgumentTypeError("no estimators given")
    return names


def _emit(text: str, output: Optional[str], stdout: TextIO) -> None:
    if output is None or output == "-":
        stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _config_from_args(args: argparse.Namespace) -> SimConfig:
    config = load_sim_config(args.config) if args.config else SimConfig()
    overrides = {}
    if getattr(args, "cardinalities", None):
        overrides["cardinalities"] = tuple(args.cardinalities)
    if getattr(args, "tensor_seed", None) is not None:
        overrides["tensor_seed"] = args.tensor_seed
    if getattr(args, "estimators", None):
        overrides["estimators"] = tuple(args.estimators)
    if overrides:
        data = config.to_dict()
        data.update(overrides)
        if "cardinalities" in overrides and config.target_slate is not None and len(config.target_slate) != len(overrides["cardinalities"]):
            data["target_slate"] = None
        config = SimConfig(**data)
    return config


def cmd_evaluate(args: argparse.Namespace, stdout: TextIO) -> int:
    dataset = read_jsonl(args.input)
    reports = [est.run_estimator(name, dataset, seed=args.seed) for name in args.estimators]
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["estimator", "estimate", "plugin_variance", "n", "weights", "flags"])
        for rep in reports:
            d = rep.to_dict()
            writer.writerow([
                d["estimator"],
                "" if d["estimate"] is None else repr(d["estimate"]),
                "" if d["plugin_variance"] is None else repr(d["plugin_variance"]),
                d["n"],
                "" if d["weights"] is None else ";".join(repr(w) for w in d["weights"]),
                ";".join(d["flags"]),
            ])
        text = buf.getvalue()
    else:
        text = "".join(json.dumps(rep.to_dict(), allow_nan=False) + "\n" for rep in reports)
    _emit(text, args.output, stdout)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, stdout: TextIO) -> int:
    config = _config_from_args(args)
    model = config.tensor(args.tensor)
    n = args.n if args.n is not None else config.sample_sizes[0]
    dataset = generate_logs(model, config.logging_policy(), config.target_policy(), n, args.seed)
    buf = io.StringIO()
    write_jsonl(dataset, buf)
    _emit(buf.getvalue(), args.output, stdout)
    if args.model_output:
        model.save(args.model_output)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, stdout: TextIO) -> int:
    config = _config_from_args(args)
    if args.seed is not None:
        data = config.to_dict()
        data["data_seed"] = args.seed
        config = SimConfig(**data)
    report = run_benchmark(config, jobs=args.jobs)
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.output, stdout)
    return EXIT_OK


def _oracle_policies(args: argparse.Namespace, schema: SlateSchema):
    logging = make_uniform_policy(schema)
    if args.logging:
        with open(args.logging, encoding="utf-8") as fh:
            logging = FactoredPolicy(schema, json.load(fh))
    if args.target == "logging":
        target = logging
    else:
        slate = args.target_slate if args.target_slate is not None else [0] * schema.num_slots
        target = make_deterministic_policy(schema, slate)
    return logging, target


def cmd_oracle(args: argparse.Namespace, stdout: TextIO) -> int:
    if args.model:
        model = RewardModel.load(args.model)
    else:
        config = _config_from_args(args)
        model = config.tensor(args.tensor)
    logging, target = _oracle_policies(args, model.schema)
    truth = enumerate_ground_truth(model, logging, target)
    moments = enumerate_moments(model, logging, target)
    out = {
        "ground_truth": truth.to_dict(),
        "moments": moments.to_dict(),
        "variance": est.variance_report(moments).to_dict(),
        "model": {"kind": model.kind, "combination": model.combination, "clamped_fraction": model.clamped_fraction},
    }
    _emit(json.dumps(out, indent=1, allow_nan=False) + "\n", args.output, stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slatecv", description="Off-policy evaluation of slate policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="run estimators on a logged-data JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--estimators", type=_estimator_list, default=["PI", "wPI", "PICVs", "PICVm"])
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="cross-fitting fold seed")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    def add_model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="SimConfig JSON file")
        p.add_argument("--cardinalities", type=_int_list)
        p.add_argument("--tensor-seed", type=int)
        p.add_argument("--tensor", type=int, default=0, help="tensor index within the config")

    p = sub.add_parser("simulate", help="sample a logged dataset from a synthetic model")
    add_model_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="data stream seed")
    p.add_argument("--output")
    p.add_argument("--model-output", help="also write the reward model JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the synthetic benchmark protocol")
    p.add_argument("--config")
    p.add_argument("--cardinalities", type=_int_list)
    p.add_argument("--tensor-seed", type=int)
    p.add_argument("--estimators", type=_estimator_list)
    p.add_argument("--seed", type=int, help="data seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="exact ground truth, moments and variance constants")
    add_model_flags(p)
    p.add_argument("--model", help="RewardModel JSON file")
    p.add_argument("--logging", help="JSON list of per-slot logging distributions (default uniform)")
    p.add_argument("--target", choices=["deterministic", "logging"], default="deterministic")
    p.add_argument("--target-slate", type=_int_list)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        return args.func(args, stdout)
    except CapacityError as exc:
        print(f"slatecv: {exc}", file=stderr)
        return EXIT_CAPACITY
    except ValidationError as exc:
        print(f"slatecv: {exc.message}", file=stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"slatecv: {exc}", file=stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
