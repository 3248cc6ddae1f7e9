"""Command-line entry point: ``riskgraph <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .encoder import LABEL_DIM
from .errors import ConfigInvalid, RiskGraphError
from .network import Architecture, load_checkpoint, save_checkpoint
from .scenario import generate_pattern_set

log = logging.getLogger("riskgraph")


def _emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


def _arch_pair(text: str) -> tuple[int, int]:
    try:
        m, h = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected m,h such as 10,40")
    return m, h


def cmd_generate(args) -> None:
    config = harness.load_scenario_config(args.config)
    ps = generate_pattern_set(config, args.count, args.seed)
    harness.save_pattern_set(args.out, ps)
    _emit({"kind": "generate", "out": args.out, "count": len(ps),
           "collision_fraction": ps.collision_fraction})


def cmd_encode(args) -> None:
    graph = harness.encode_scene_file(args.scene)
    harness.write_json(args.out, harness.graph_document(graph))
    _emit({"kind": "encode", "out": args.out, "nodes": graph.n_nodes, "depth": graph.depth()})


def cmd_train(args) -> None:
    options = harness.read_json(args.config) if args.config else {}
    for key in ("optimizer", "seed"):
        options[key] = getattr(args, key)
    if args.epochs is not None:
        options["max_epochs"] = args.epochs
    if args.learning_rate is not None:
        options["learning_rate"] = args.learning_rate
    if args.tolerance is not None:
        options["tolerance"] = args.tolerance
    config = harness.TrainConfig.from_dict(options)

    ps = harness.load_pattern_set(args.patterns)
    if len(ps) == 0:
        raise ConfigInvalid("pattern set is empty")
    patterns = harness.training_patterns(ps)
    m, h = args.arch
    k = ps.patterns[0].graph.k
    params, report = harness.train(patterns, Architecture(m, LABEL_DIM, k, h), config)
    save_checkpoint(args.out, params, seed=config.seed, epoch=report.epochs)
    harness.write_jsonl(args.report, harness.report_records(
        report, {"optimizer": config.optimizer, "seed": config.seed, "architecture": f"{m}x{h}x1"}))
    record = {"kind": "train", "checkpoint": args.out, "report": args.report,
              "epochs": report.epochs, "final_error": report.final_error,
              "stop_reason": report.stop_reason}
    if not args.no_figures:
        from .plotting import plot_training_curve

        figure = str(Path(args.report).with_suffix(".png"))
        plot_training_curve(report.to_records(), figure, title=f"{config.optimizer} {m}x{h}x1")
        record["figure"] = figure
    _emit(record)


def cmd_eval(args) -> None:
    params, _ = load_checkpoint(args.model)
    ps = harness.load_pattern_set(args.patterns)
    metrics = harness.evaluate(ps, params, args.threshold)
    _emit({"kind": "eval", **metrics.to_dict()})


def cmd_gradcheck(args) -> None:
    _emit({"kind": "gradcheck", **harness.gradcheck(args.seed, args.trials)})


def cmd_repro(args) -> None:
    scenario = harness.load_scenario_config(args.config)
    result = harness.repro_table3(args.seed, out_dir=args.out_dir, count=args.count,
                                  epochs=args.epochs, scenario=scenario,
                                  figures=not args.no_figures)
    for row in result["published"]:
        _emit({"kind": "table3_row", "source": "published", **row})
    _emit({"kind": "table3_row", "source": "this run", **result["row"]})
    _emit({"kind": "summary", "seed": args.seed, "stop_reason": result["stop_reason"],
           "validation": result["validation_metrics"], "out_dir": args.out_dir})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskgraph", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a labeled pattern set")
    g.add_argument("--config", help="scenario config JSON (default: built-in scenarios)")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("encode", help="encode one scene document into a graph")
    e.add_argument("--scene", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    t = sub.add_parser("train", help="train a network on a pattern set")
    t.add_argument("--patterns", required=True)
    t.add_argument("--arch", type=_arch_pair, default=(10, 40), help="state and hidden size, m,h")
    t.add_argument("--optimizer", choices=("qnts", "bpts"), default="qnts")
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--tolerance", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--config", help="training options JSON; flags take precedence")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", required=True, help="JSONL training report")
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="generalization metrics of a checkpoint")
    v.add_argument("--patterns", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--threshold", type=float, default=0.5)
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="compare gradients with finite differences")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=50)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("repro-tableIII", help="desk-scale generate/train/evaluate pipeline")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--count", type=int, default=1000)
    r.add_argument("--epochs", type=int, default=200)
    r.add_argument("--config", help="scenario config JSON")
    r.add_argument("--out-dir", help="write patterns, model, reports and figures here")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except RiskGraphError as exc:
        return _fail(exc.exit_code, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(4, type(exc).__name__, str(exc))
    except (ValueError, TypeError, KeyError) as exc:
        return _fail(2, type(exc).__name__, str(exc))
    except (FloatingPointError, ArithmeticError) as exc:
        return _fail(3, type(exc).__name__, str(exc))
    return 0


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code
