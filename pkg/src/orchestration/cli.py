"""
Command-line pipeline - one executable from synthetic records to experiment reports

This module:
- Parses the subcommands synth-gen, build-graphs, train, eval, ablate,
  alpha-sweep and gradcheck
- Resolves the run configuration (file values, then flags) and logs it with the seed
- Writes every artifact under --out; structured logs go to stderr
- Maps pipeline errors to exit codes (1 input/config, 2 numerical)
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import structlog
import yaml
from pydantic import ValidationError

from common.errors import ConfigError, GritLPError, InsufficientDataError, NumericalError, UsageError
from common.logging_config import configure_logging
from dataio.records import DatasetSplit, filter_complete, load_records, save_records, split_ids, to_thickness
from dataio.synth import DEFAULT_BOUNDARIES, synth_generate
from evaluation.experiments import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BLOCK_GRID,
    AblationVariant,
    ablation_grid,
    run_ablation,
    run_alpha_sweep,
    variant_of,
)
from evaluation.metrics import error_profile
from evaluation.reports import (
    TrialReport,
    config_fingerprint,
    write_error_profile,
    write_reports_csv,
    write_reports_json,
)
from graphbuild.partition import (
    GraphSettings,
    TemporalGraphSequence,
    build_sequences,
    read_graph_dir,
    write_graph_dir,
)
from model.gritlp import gradcheck_model
from numcore.gradcheck import GRAD_TOLERANCE, RELATIVE_FLOOR, run_op_suite
from orchestration.config import RunConfig, config_error, dump_run_config, resolve_run_config
from training.trainer import evaluate, load_checkpoint, save_checkpoint, train_one, write_loss_trace

logger = structlog.get_logger(__name__)

GRAPH_SETTINGS_FILE = "graph_settings.yaml"


class PipelineArgumentParser(argparse.ArgumentParser):
    """Argument errors become UsageError so they exit with the validation code"""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _common_flags() -> argparse.ArgumentParser:
    parent = PipelineArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON or YAML run config; flags override its values")
    parent.add_argument("--seed", type=int, help="root seed for every random stream (default 0)")
    parent.add_argument("--log-level", default="INFO", help="log level for stderr (default INFO)")
    return parent


def _graph_flags() -> argparse.ArgumentParser:
    parent = PipelineArgumentParser(add_help=False)
    group = parent.add_argument_group("graph")
    group.add_argument("--window", type=int, help="sliding window size W (default 5)")
    group.add_argument("--stride", type=int, help="window stride S (default 3)")
    group.add_argument("--l", type=int, help="shallow input layers per sequence (default 5)")
    group.add_argument("--m", type=int, help="deep layers to predict (default 15)")
    group.add_argument(
        "--standard-haversine",
        action="store_const",
        const=True,
        help="use the square root inside arcsin for edge distances",
    )
    group.add_argument(
        "--fully-connected", action="store_const", const=True, help="connect every node pair (W = n)"
    )
    return parent


def _model_flags() -> argparse.ArgumentParser:
    parent = PipelineArgumentParser(add_help=False)
    group = parent.add_argument_group("model and training")
    group.add_argument("--d", type=int, help="embedding width (default 64)")
    group.add_argument("--n-blocks", type=int, help="temporal attention blocks (default 8)")
    group.add_argument("--n-heads", type=int, help="attention heads (default 8)")
    group.add_argument("--alpha0", type=float, help="initial skip mixing weight (default 0.25)")
    group.add_argument("--epochs", type=int, help="training epochs (default 100)")
    group.add_argument("--lr", type=float, help="initial learning rate (default 3e-4)")
    group.add_argument("--batch-size", type=int, help="records per batch (default 4)")
    group.add_argument("--scheduler", choices=["auto", "plateau", "step"], help="learning-rate schedule")
    group.add_argument("--trials", type=int, help="seeded permutation splits per configuration (default 5)")
    return parent


def _eval_flags() -> argparse.ArgumentParser:
    parent = PipelineArgumentParser(add_help=False)
    group = parent.add_argument_group("evaluation")
    group.add_argument("--boundary-p", type=_int_list, help="boundary widths, e.g. 1,2,5,10")
    group.add_argument(
        "--per-record-rmse", action="store_const", const=True, help="average per-record RMSE instead of pooling"
    )
    return parent


def _input_flags(parent: argparse.ArgumentParser, graphs: bool = True) -> None:
    parent.add_argument("--in", dest="records", help="radargram JSON Lines file")
    if graphs:
        parent.add_argument("--graphs", help="graph cache directory written by build-graphs")


def build_parser() -> argparse.ArgumentParser:
    common, graph, model, evaluation = _common_flags(), _graph_flags(), _model_flags(), _eval_flags()
    parser = PipelineArgumentParser(prog="gritlp", description="Ice-layer thickness prediction pipeline")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    synth = commands.add_parser("synth-gen", parents=[common], help="write a synthetic radargram file")
    synth.add_argument("--count", type=int, required=True, help="number of records")
    synth.add_argument("--width", type=int, default=256, help="columns per record (default 256)")
    synth.add_argument(
        "--boundaries", type=int, default=DEFAULT_BOUNDARIES, help=f"boundary lines per record (default {DEFAULT_BOUNDARIES})"
    )
    synth.add_argument("--out", required=True, help="output JSON Lines file")

    graphs = commands.add_parser("build-graphs", parents=[common, graph], help="build and cache graph sequences")
    _input_flags(graphs, graphs=False)
    graphs.add_argument("--out", required=True, help="output directory for graph cache files")

    train = commands.add_parser("train", parents=[common, graph, model], help="train one model on a seeded split")
    _input_flags(train)
    train.add_argument("--out", required=True, help="directory for checkpoint, loss trace and split")

    ev = commands.add_parser("eval", parents=[common, evaluation], help="evaluate a checkpoint on the test split")
    _input_flags(ev)
    ev.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    ev.add_argument("--split", help="split file (default: split.json beside the checkpoint)")
    ev.add_argument("--out", required=True, help="directory for the report and error profile")

    ablate = commands.add_parser("ablate", parents=[common, graph, model, evaluation], help="run the component ablation")
    _input_flags(ablate, graphs=False)
    ablate.add_argument("--variants", help="comma-separated variant flags, e.g. graph+localized (default: all ten)")
    ablate.add_argument("--out", required=True, help="directory for reports and per-trial artifacts")

    sweep = commands.add_parser(
        "alpha-sweep", parents=[common, graph, model, evaluation], help="sweep initial skip weights and block counts"
    )
    _input_flags(sweep)
    sweep.add_argument("--block-counts", type=_int_list, help="block counts, e.g. 1,8")
    sweep.add_argument("--alpha0s", type=_float_list, help="initial weights, e.g. 0.25,0.5,0.75")
    sweep.add_argument("--out", required=True, help="directory for reports and per-trial artifacts")

    check = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    check.add_argument("--out", help="optional directory for gradcheck.json")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    def arg(name: str) -> Any:
        return getattr(args, name, None)

    return {
        "model": {
            "d": arg("d"),
            "n_blocks": arg("n_blocks"),
            "n_heads": arg("n_heads"),
            "alpha0": arg("alpha0"),
            "k": arg("l"),
            "m": arg("m"),
        },
        "train": {
            "seed": arg("seed"),
            "epochs": arg("epochs"),
            "lr0": arg("lr"),
            "batch_size": arg("batch_size"),
            "scheduler": arg("scheduler"),
            "trials": arg("trials"),
        },
        "graph": {
            "l": arg("l"),
            "m": arg("m"),
            "window": arg("window"),
            "stride": arg("stride"),
            "standard_haversine": arg("standard_haversine"),
            "fully_connected": arg("fully_connected"),
        },
        "data": {"records": arg("records"), "graphs": arg("graphs")},
        "eval": {"boundary_ps": arg("boundary_p"), "per_record_rmse": arg("per_record_rmse")},
    }


def _records_for(config: RunConfig) -> list:
    if config.data.records is None:
        raise UsageError("no radargram file given (use --in or data.records)")
    records = [to_thickness(r) for r in load_records(config.data.records)]
    kept = filter_complete(records, max(config.graph.min_layers, config.graph.l + config.graph.m))
    if not kept:
        raise InsufficientDataError(f"no complete records in {config.data.records}")
    return kept


def _read_graph_settings(path: Path) -> GraphSettings:
    try:
        return GraphSettings.model_validate(yaml.safe_load(path.read_text(encoding="utf-8")))
    except yaml.YAMLError as e:
        raise ConfigError(f"graph settings {path} are not valid YAML: {e}") from e
    except ValidationError as e:
        raise config_error(e, source=f"graph settings {path}") from e


def _read_split(path: Path) -> DatasetSplit:
    try:
        return DatasetSplit.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise ConfigError(f"split file {path} is not valid JSON: {e.msg}") from e
    except KeyError as e:
        raise ConfigError(f"split file {path} is missing {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"split file {path} is malformed: {e}") from e


def _sequences_for(config: RunConfig) -> Tuple[List[TemporalGraphSequence], GraphSettings]:
    """Graph sequences from the cache directory if given, otherwise built from records"""
    if config.data.graphs is None:
        return build_sequences(_records_for(config), config.graph), config.graph
    directory = Path(config.data.graphs)
    graph = config.graph
    settings_path = directory / GRAPH_SETTINGS_FILE
    if settings_path.exists():
        graph = _read_graph_settings(settings_path)
        if (graph.l, graph.m) != (config.model.k, config.model.m):
            raise ConfigError(
                f"graph cache has l={graph.l}, m={graph.m} but model expects k={config.model.k}, m={config.model.m}"
            )
    return read_graph_dir(directory), graph


def _write_reports(reports: Sequence[TrialReport], out: Path, config: RunConfig, command: str) -> None:
    # widths wider than half the narrowest record are skipped during evaluation
    measured = set.intersection(*(set(r.boundary_rmse) for r in reports)) if reports else set()
    write_reports_json(reports, out / "reports.json", extra={"command": command})
    write_reports_csv(reports, out / "reports.csv", [p for p in config.eval.boundary_ps if p in measured])
    dump_run_config(config, out / "config.yaml")


def cmd_synth_gen(args: argparse.Namespace, config: RunConfig) -> None:
    records = synth_generate(args.count, config.train.seed, width=args.width, n_layers=args.boundaries)
    save_records(records, args.out)


def cmd_build_graphs(args: argparse.Namespace, config: RunConfig) -> None:
    out = Path(args.out)
    write_graph_dir(build_sequences(_records_for(config), config.graph), out)
    (out / GRAPH_SETTINGS_FILE).write_text(
        yaml.safe_dump(config.graph.model_dump(mode="json"), sort_keys=True), encoding="utf-8"
    )


def cmd_train(args: argparse.Namespace, config: RunConfig) -> None:
    sequences, graph = _sequences_for(config)
    by_id = {s.record_id: s for s in sequences}
    seed = config.train.seed
    partition = split_ids([s.record_id for s in sequences], seed)
    out = Path(args.out)
    try:
        result = train_one(
            [by_id[i] for i in partition.train],
            [by_id[i] for i in partition.val],
            config.model,
            config.train,
            seed,
            graph,
        )
    except NumericalError as e:
        if e.last_good_checkpoint is not None:
            save_checkpoint(e.last_good_checkpoint, out / "last_good_checkpoint.json")
        raise
    save_checkpoint(result.checkpoint, out / "checkpoint.json")
    write_loss_trace(result.trace, out / "loss_trace.csv")
    (out / "split.json").write_text(json.dumps(partition.to_dict(), indent=2) + "\n", encoding="utf-8")
    dump_run_config(config, out / "config.yaml")


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    config = config.model_copy(update={"model": checkpoint.model_config, "graph": checkpoint.graph})
    sequences, _ = _sequences_for(config)
    split_path = Path(args.split) if args.split else Path(args.checkpoint).parent / "split.json"
    if split_path.exists():
        partition = _read_split(split_path)
        wanted = set(partition.test)
        sequences = [s for s in sequences if s.record_id in wanted]
        if len(sequences) != len(wanted):
            raise InsufficientDataError(f"{len(wanted) - len(sequences)} test records from {split_path} are missing")
    else:
        logger.warning("no split file, evaluating every record", split=str(split_path))

    metrics = evaluate(checkpoint, sequences, config.eval.boundary_ps, config.eval.per_record_rmse)
    report = TrialReport(
        variant_flags=variant_of(checkpoint.model_config, checkpoint.graph).flags,
        n_blocks=checkpoint.model_config.n_blocks,
        alpha0=checkpoint.model_config.alpha0,
        trial=0,
        seed=checkpoint.train_config.seed,
        rmse=metrics["rmse"],
        boundary_rmse=metrics["boundary_rmse"],
        alpha_values=checkpoint.alpha_values,
        config_fingerprint=config_fingerprint(checkpoint.model_config, checkpoint.train_config, checkpoint.graph),
        epochs=checkpoint.train_config.epochs,
        best_val_mse=checkpoint.best_val_mse or 0.0,
    )
    out = Path(args.out)
    write_reports_json([report], out / "reports.json", extra={"command": "eval", "checkpoint": str(args.checkpoint)})
    write_reports_csv([report], out / "reports.csv", sorted(report.boundary_rmse))
    if config.eval.error_profile:
        targets = [s.targets for s in sequences]
        write_error_profile(error_profile(metrics["predictions"], targets), out / "error_profile.csv")
    logger.info("evaluation finished", rmse=report.rmse, boundary_rmse=report.boundary_rmse)


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> None:
    try:
        variants = (
            [AblationVariant.from_flags(flags) for flags in args.variants.split(",")] if args.variants else ablation_grid()
        )
    except ValueError as e:
        raise ConfigError(f"--variants: {e}") from e
    reports = run_ablation(
        _records_for(config),
        config.model,
        config.train,
        config.graph,
        variants=variants,
        boundary_ps=config.eval.boundary_ps,
        per_record=config.eval.per_record_rmse,
        out_dir=Path(args.out),
    )
    _write_reports(reports, Path(args.out), config, "ablate")


def cmd_alpha_sweep(args: argparse.Namespace, config: RunConfig) -> None:
    sequences, graph = _sequences_for(config)
    reports = run_alpha_sweep(
        sequences,
        config.model,
        config.train,
        graph,
        block_counts=args.block_counts or DEFAULT_BLOCK_GRID,
        alpha0s=args.alpha0s or DEFAULT_ALPHA_GRID,
        boundary_ps=config.eval.boundary_ps,
        per_record=config.eval.per_record_rmse,
        out_dir=Path(args.out),
    )
    _write_reports(reports, Path(args.out), config, "alpha-sweep")


def cmd_gradcheck(args: argparse.Namespace, config: RunConfig) -> None:
    seed = config.train.seed
    results = run_op_suite(seed) + gradcheck_model(seed)
    report = {
        "seed": seed,
        "tolerance": GRAD_TOLERANCE,
        "relative_floor": RELATIVE_FLOOR,
        "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    text = json.dumps(report, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(text, encoding="utf-8")
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        raise NumericalError(
            f"{len(failed)} gradient checks failed, worst {worst.name} with relative error {worst.max_rel_error:.3e}",
            param_name=worst.name,
        )


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], None]] = {
    "synth-gen": cmd_synth_gen,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "alpha-sweep": cmd_alpha_sweep,
    "gradcheck": cmd_gradcheck,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code (0 ok, 1 input/config, 2 numerical)"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        configure_logging()
        logger.error("invalid arguments", error=str(e))
        return e.exit_code
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    try:
        configure_logging(args.log_level)
    except ValueError as e:
        configure_logging()
        logger.error("invalid arguments", error=str(e))
        return UsageError.exit_code

    try:
        config = resolve_run_config(args.config, _overrides(args))
        logger.info(
            "run started", command=args.command, seed=config.train.seed, config=config.model_dump(mode="json")
        )
        COMMANDS[args.command](args, config)
    except GritLPError as e:
        logger.error("run failed", command=args.command, error_type=type(e).__name__, error=str(e))
        return e.exit_code
    except OSError as e:
        logger.error("run failed", command=args.command, error_type=type(e).__name__, error=str(e))
        return 1
    logger.info("run finished", command=args.command)
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
