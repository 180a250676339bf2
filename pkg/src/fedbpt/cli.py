"""Command-line interface: run / account / eval / plot."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .data import load_jsonl
from .harness import (
    ExperimentConfig,
    comm_accounting,
    read_metrics_csv,
    run_experiment,
    write_accuracy_svg,
)
from .oracle import RemoteOracle
from .subspace import ProjectionSpec, generate_projection, project


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (keys = ExperimentConfig fields)")
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--clients", type=int)
    parser.add_argument("--sub-dim", type=int, dest="sub_dim")
    parser.add_argument("--prompt-tokens", type=int, dest="prompt_tokens")
    parser.add_argument("--embed-dim", type=int, dest="embed_dim")
    parser.add_argument("--vocab-size", type=int, dest="vocab_size")
    parser.add_argument("--num-classes", type=int, dest="num_classes")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--partition", choices=["iid", "dirichlet"])
    parser.add_argument("--per-class", type=int, dest="per_class")
    parser.add_argument("--local-iterations", type=int, dest="local_iterations")
    parser.add_argument("--population", type=int)
    parser.add_argument("--sigma0", type=float)
    parser.add_argument("--r-p", type=float, dest="r_p")
    parser.add_argument("--aggregator", choices=["fedbpt", "fedavg_bbt"])
    parser.add_argument(
        "--uncorrected-sigma",
        action="store_const",
        const=True,
        dest="uncorrected_sigma",
        help="debug: normalize the server update with the broadcast step instead of the corrected one",
    )
    parser.add_argument("--oracle", choices=["synthetic", "remote"])
    parser.add_argument("--endpoint")
    parser.add_argument("--train-path", dest="train_path")
    parser.add_argument("--test-path", dest="test_path")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--eval-stride", type=int, dest="eval_stride")
    parser.add_argument("--confusion", choices=["final", "all", "none"])


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    overrides = {
        name: getattr(args, name)
        for name in names
        if getattr(args, name, None) is not None
    }
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = run_experiment(cfg)
    last = result.metrics[-1]
    print(
        f"rounds={last.round} test_accuracy={last.test_accuracy:.4f} "
        f"test_loss={last.test_loss:.4f}"
        + (f" floor={result.floor_accuracy:.4f}" if result.floor_accuracy is not None else "")
    )
    if cfg.out:
        print(f"artifacts written to {cfg.out}")
    return 0


def _parse_baseline(pairs: list[str]) -> dict[str, int]:
    out = {}
    for item in pairs:
        name, _, count = item.partition("=")
        if not count:
            raise ValueError(f"baseline must look like name=count, got {item!r}")
        out[name] = int(count)
    return out


def _cmd_account(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    baselines = _parse_baseline(args.baseline or [])
    report = comm_accounting(cfg, baselines)
    print(f"trainable_params={report.trainable_params}")
    print(f"uplink_floats_per_client_round={report.uplink_floats}")
    print(f"downlink_floats_per_client_round={report.downlink_floats}")
    for name, ratio in report.ratios.items():
        print(f"ratio_vs_{name}={ratio}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    with open(args.z, encoding="utf-8") as fh:
        saved = json.load(fh)
    z = np.asarray(saved["z"], dtype=np.float64)
    proj = saved["projection"]
    spec = ProjectionSpec(
        full_dim=proj["D"], sub_dim=proj["d"], seed=proj["seed"], gamma=proj["gamma"]
    )
    prompt = project(generate_projection(spec), z)

    cfg = _config_from_args(args)
    if cfg.oracle == "remote":
        oracle = RemoteOracle(cfg.endpoint)
        data = load_jsonl(args.data or cfg.test_path, vocab_size=cfg.vocab_size)
    else:
        from .harness import _build_task

        oracle, _, _, _, test_set, _, _ = _build_task(cfg)
        data = load_jsonl(args.data, vocab_size=cfg.vocab_size) if args.data else test_set
    report = oracle.evaluate(prompt, data)
    print(f"loss={report.loss:.6f} accuracy={report.accuracy:.4f} n={len(data)}")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    metrics = read_metrics_csv(args.csv)
    write_accuracy_svg(args.out, [(m.round, m.test_accuracy) for m in metrics])
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbpt",
        description="Federated black-box prompt tuning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a federated experiment")
    _add_override_flags(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_account = sub.add_parser("account", help="per-round communication accounting")
    _add_override_flags(p_account)
    p_account.add_argument(
        "--baseline",
        action="append",
        metavar="NAME=PARAMS",
        help="baseline trainable-parameter count to compare against (repeatable)",
    )
    p_account.set_defaults(fn=_cmd_account)

    p_eval = sub.add_parser("eval", help="evaluate a saved subspace vector")
    _add_override_flags(p_eval)
    p_eval.add_argument("--z", required=True, help="final_z.json from a run")
    p_eval.add_argument("--data", help="JSONL file to evaluate on (defaults to the task's test set)")
    p_eval.set_defaults(fn=_cmd_eval)

    p_plot = sub.add_parser("plot", help="render metrics.csv to an SVG")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
