"""
Frogger Advice Workbench - Command Line

Subcommands:

    gen-map        Generate a map file from the default row template
    collect        Collect one-row-forward demonstrations on a map
    build-dataset  Annotate demonstrations through the grammar at an accuracy
    train-model    Train a sequence-to-sequence model on a dataset
    advise         One-shot query: local view -> selected utterance + critique distribution
    run            Run one (map, dynamics, agent) experiment and write its learning curve
    compare        Summarise learning curves that share an episode grid
    pipeline       Run every stage end to end with a content-hash manifest

Configuration:
    Every command reads the single YAML configuration (``data/config/default.yml`` unless
    ``--config`` is given); ``--set section.key=value`` overrides individual settings and
    ``--full-scale`` switches to the full-size experiment settings.

Usage:
    python -m frogger_advice pipeline --output-dir artifacts
"""

import argparse
import json
import os
import sys
from datetime import datetime
from typing import List, Optional

from .advice_policy import AdviceError, AdviceIndex, language_critique, select_advice
from .critique_shaping import ObservationCritique, ShapingError, observation_critique
from .experiment_harness import (
    ALL_PIPELINE_STAGES,
    AGENT_KINDS,
    ExperimentConfig,
    ExperimentError,
    LearningCurve,
    Pipeline,
    PipelineError,
    compare,
    resolve_map_path,
    run_experiment,
)
from .frogger_env import (
    Action,
    EnvironmentContractError,
    LocalView,
    MapParseError,
    MapValidationError,
    dump_map,
    generate_map,
    load_map,
)
from .helpers.config import ConfigError, load_config
from .helpers.utils import data_path, log, print_stage_summary, read_file_content, set_quiet, write_file_content
from .rl_core import DistributionError, TemperatureSchedule
from .seq2seq import (
    CheckpointError,
    DivergenceError,
    TrainConfig,
    UnknownTokenError,
    load_checkpoint,
    save_checkpoint,
    save_loss_trace,
    token_accuracy,
    train,
)
from .trainer_sim import (
    DatasetFormatError,
    GrammarError,
    build_dataset,
    collect_demonstrations,
    load_dataset,
    load_grammar,
    load_pairs,
    save_dataset,
    save_pairs,
)

SOLUTION_NAME = "Frogger Advice Workbench"

LIBRARY_ERRORS = (
    AdviceError,
    CheckpointError,
    DatasetFormatError,
    DistributionError,
    DivergenceError,
    EnvironmentContractError,
    ExperimentError,
    GrammarError,
    MapParseError,
    MapValidationError,
    ShapingError,
    UnknownTokenError,
    FileNotFoundError,
)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_map(args, config) -> None:
    frogger_map = generate_map(args.width, args.height, args.density, args.seed)
    write_file_content(args.output, dump_map(frogger_map))
    log(f"✅ Wrote {frogger_map.width}x{frogger_map.height} map (density {args.density}) to {args.output}")


def cmd_collect(args, config) -> None:
    trainer, rl = config["trainer"], config["rl"]
    map_path = resolve_map_path(args.map or trainer["training_map"])
    pairs = collect_demonstrations(load_map(read_file_content(map_path)),
                                   args.agents or int(trainer["n_agents"]), int(trainer["seed"]),
                                   episodes=int(trainer["episodes_per_agent"]), horizon=int(trainer["horizon"]),
                                   alpha=float(rl["alpha"]), gamma=float(rl["gamma"]), q_tau=float(rl["q_tau"]))
    write_file_content(args.output, save_pairs(pairs))
    actions = sorted({a.name for _, a in pairs})
    log(f"✅ Wrote {len(pairs)} demonstration pairs to {args.output} (actions: {', '.join(actions)})")


def _grammar_path(config) -> str:
    name = config["trainer"]["grammar"]
    return name if os.path.exists(name) else data_path("grammar", name)


def cmd_build_dataset(args, config) -> None:
    grammar = load_grammar(read_file_content(_grammar_path(config)))
    pairs = load_pairs(read_file_content(args.demonstrations))
    dataset = build_dataset(pairs, args.accuracy, int(config["trainer"]["seed"]), grammar)
    write_file_content(args.output, save_dataset(dataset))
    stats = dataset.stats
    log(f"✅ Wrote {stats.size} examples (raw {stats.raw_size}) to {args.output}")
    log(f"   top sentence share {stats.top_sentence_share:.4f}, "
        f"mean repetition share {stats.mean_repetition_share:.5f}")


def cmd_train_model(args, config) -> None:
    dataset = load_dataset(read_file_content(args.dataset))
    model = train(dataset, TrainConfig.from_config(config["seq2seq"]), verbose=True)
    model.metadata["token_accuracy"] = token_accuracy(model, dataset.examples)
    save_checkpoint(model, args.output)
    if args.loss_csv:
        save_loss_trace(model, args.loss_csv)
    log(f"✅ Saved model to {args.output} (token accuracy {model.metadata['token_accuracy']:.4f})")


def cmd_advise(args, config) -> None:
    view = LocalView.from_tokens(args.view.replace(",", " ").split())
    schedule = TemperatureSchedule.constant(args.tau)
    if args.demonstrations:
        critique = ObservationCritique.from_pairs(load_pairs(read_file_content(args.demonstrations)), schedule)
        distribution = observation_critique(view, critique, 0)
        print("source:   demonstration counts")
    else:
        if not (args.model and args.dataset):
            raise ConfigError("advise needs --model and --dataset (or --demonstrations)")
        index = AdviceIndex(load_checkpoint(args.model), load_dataset(read_file_content(args.dataset)).utterances,
                            bool(config["advice"]["length_normalize"]))
        best, scores = select_advice(view, index)
        distribution = language_critique(view, index, 0, schedule)
        print(f"utterance [{best}]: {' '.join(index.utterances[best])}")
        print("scores:   " + "  ".join(f"{a.name}={s:.4f}" for a, s in zip(Action, scores)))
    print(f"view:     {view}")
    print("critique: " + "  ".join(f"{a.name}={p:.4f}" for a, p in zip(Action, distribution.probs)))


def cmd_run(args, config) -> None:
    artifacts = {k: v for k, v in (("demonstrations", args.demonstrations), ("dataset", args.dataset),
                                   ("model", args.model)) if v}
    experiment = ExperimentConfig.from_config(config, args.map, args.dynamics, args.agent, artifacts)
    workers = args.workers or int(config["experiment"]["workers"])
    curve, provenance = run_experiment(experiment, workers=workers, cache_path=args.cache)
    curve.to_csv(args.output)
    write_file_content(os.path.splitext(args.output)[0] + ".provenance.json",
                       json.dumps(provenance, sort_keys=True, indent=2) + "\n")
    log(f"✅ Wrote {len(curve)} curve rows to {args.output} (final mean {curve.mean[-1]:.3f})")


def cmd_compare(args, config) -> None:
    curves = [LearningCurve.from_csv(path) for path in args.curves]
    summary = compare(curves)
    text = summary.to_text()
    print(text)
    if args.output:
        write_file_content(args.output, text)


def cmd_pipeline(args, config) -> None:
    """Run every pipeline stage, printing a stage summary on success or failure."""
    output_dir = args.output_dir or config["pipeline"]["output_dir"]

    print(f"🐸 {SOLUTION_NAME} - Pipeline")
    print("=" * 60)
    print(f"Output directory:  {output_dir}")
    print(f"Training map:      {config['trainer']['training_map']}")
    print(f"Experiment maps:   {', '.join(config['experiment']['maps'])}")
    print(f"Agents:            {', '.join(config['experiment']['agents'])}")
    print(f"Replicates:        {config['experiment']['replicates']}")
    print(f"Start time:        {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 60)

    pipeline = Pipeline(config, output_dir, workers=args.workers)
    try:
        executed, skipped = pipeline.run()
    except PipelineError as exc:
        print(f"❌ Exception while executing {exc.stage}: {exc}")
        print_stage_summary(SOLUTION_NAME, ALL_PIPELINE_STAGES, pipeline.executed, pipeline.skipped,
                            failure=(exc.stage, str(exc)))
        sys.exit(1)

    print_stage_summary(SOLUTION_NAME, ALL_PIPELINE_STAGES, executed, skipped)
    print(f"📅 Completed:  {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print(f"📄 Manifest:   {pipeline.manifest_path}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frogger_advice",
        description="Language-guided exploration workbench for Frogger Q-learning agents.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full desk-scale reproduction
  python -m frogger_advice pipeline --output-dir artifacts

  # Step by step
  python -m frogger_advice collect --output demos.tsv
  python -m frogger_advice build-dataset --demonstrations demos.tsv --accuracy 0.8 --output d80.tsv
  python -m frogger_advice train-model --dataset d80.tsv --output m80.ckpt --loss-csv loss80.csv
  python -m frogger_advice run --map map50.map --agent language80 --dataset d80.tsv --model m80.ckpt --output curve.csv

  # Override settings
  python -m frogger_advice pipeline --set experiment.replicates=3 --set seq2seq.epochs=20
        """,
    )
    parser.add_argument("--config", help="YAML configuration file (default: data/config/default.yml)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one setting, e.g. --set rl.alpha=0.2 (repeatable)")
    parser.add_argument("--full-scale", action="store_true", help="Use the full-size experiment settings")
    parser.add_argument("--quiet", action="store_true", help="Only print warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="Generate a map file")
    p.add_argument("--width", type=int, default=9)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_gen_map)

    p = sub.add_parser("collect", help="Collect demonstration pairs")
    p.add_argument("--map", help="Map file (default: trainer.training_map)")
    p.add_argument("--agents", type=int, help="Number of demonstration agents (default: trainer.n_agents)")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_collect)

    p = sub.add_parser("build-dataset", help="Annotate demonstrations through the grammar")
    p.add_argument("--demonstrations", required=True)
    p.add_argument("--accuracy", type=float, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_build_dataset)

    p = sub.add_parser("train-model", help="Train a sequence-to-sequence model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--loss-csv")
    p.set_defaults(handler=cmd_train_model)

    p = sub.add_parser("advise", help="Query the critique for one local view")
    p.add_argument("--view", required=True, help="Nine cell tokens, row-major (space or comma separated)")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--demonstrations", help="Use the observation critique instead of a model")
    p.set_defaults(handler=cmd_advise)

    p = sub.add_parser("run", help="Run one experiment")
    p.add_argument("--map", required=True)
    p.add_argument("--dynamics", default="deterministic")
    p.add_argument("--agent", required=True, choices=AGENT_KINDS)
    p.add_argument("--demonstrations")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--cache", help="Advice cache file (language agents)")
    p.add_argument("--workers", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("compare", help="Compare learning curves")
    p.add_argument("curves", nargs="+")
    p.add_argument("--output")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("pipeline", help="Run every stage end to end")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    set_quiet(args.quiet)
    try:
        config = load_config(args.config, args.overrides, full_scale=args.full_scale)
    except (ConfigError, FileNotFoundError) as exc:
        log(f"Configuration error: {exc}", "ERROR")
        sys.exit(2)

    try:
        args.handler(args, config)
    except ConfigError as exc:
        log(f"Configuration error: {exc}", "ERROR")
        sys.exit(2)
    except LIBRARY_ERRORS as exc:
        log(f"{type(exc).__name__}: {exc}", "ERROR")
        sys.exit(1)

