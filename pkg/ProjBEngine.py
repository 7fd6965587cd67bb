"""ProjBEngine v1.0.0: knowledge graph completion with cluster-engineered features."""
import argparse
import functools
import json
import os
import sys
from pathlib import Path

import pandas as pd

from func.base_logger import attach_run_log, detach_run_log, logger
from func.checkpoint import load_checkpoint, save_checkpoint
from func.downloader import download_dataset
from func.evaluation import VarianceTrace, evaluate, metrics_document
from func.experiments import EXPERIMENTS, local_optima_experiment, table4_grid, timing_sweep
from func.feature_eng import featurize, featurize_paper_grid, load_features, save_features
from func.kg_store import dataset_checksums, load_dataset, write_dataset
from func.manifest import RunManifest
from func.model_core import init_params, param_count
from func.run_config import parse_config
from func.synthetic import random_kg, rule_kg, tiny_kg
from func.timer import RunTimer
from func.trainer import train
from data.configs import EnvVars, EvaluationSettings, ExitCodes
from data.exceptions import CheckpointError, DataError, NumericalFailure, UsageError


class CommandLineParser(argparse.ArgumentParser):
    """Argument parser that reports bad usage as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def command_error_handler(func):
    """
    Runs a subcommand and maps its failure to the process exit code.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        """Wrapper."""
        try:
            func(*args, **kwargs)
            return ExitCodes.OK
        except UsageError as usage_err:
            logger.error("Usage error: " + str(usage_err))
            print(f"Usage error: {usage_err}", file=sys.stderr)
            return ExitCodes.USAGE
        except (DataError, OSError) as data_err:
            logger.error("Data error: " + str(data_err))
            print(f"Data error: {data_err}", file=sys.stderr)
            return ExitCodes.DATA
        except NumericalFailure as num_err:
            logger.critical("Numerical failure: " + str(num_err))
            print(f"Numerical failure: {num_err}", file=sys.stderr)
            return ExitCodes.NUMERICAL
    return wrapper


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError as e:
        raise UsageError(f"Expected comma-separated integers, got {text!r}") from e


def _name_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(',') if part.strip())


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    """Config file values with the command-line overrides applied."""
    return parse_config(args.config).with_overrides(
        seed=args.seed, mode=getattr(args, 'mode', None), loss=getattr(args, 'loss', None),
        sampler=getattr(args, 'sampler', None), batch_size=getattr(args, 'batch_size', None),
        epochs=getattr(args, 'epochs', None))


def _threads(args) -> int:
    """--threads, else the environment default, else 1."""
    if args.threads is not None:
        threads = args.threads
    else:
        text = os.environ.get(EnvVars.THREADS, '1')
        try:
            threads = int(text)
        except ValueError as e:
            raise UsageError(f"{EnvVars.THREADS} must be an integer, got {text!r}") from e
    if threads < 1:
        raise UsageError(f"Thread count must be at least 1, got {threads}")
    return threads


def _features(args, required: bool):
    if args.features is None:
        if required:
            raise UsageError("--features is required for ProjB.")
        return None
    return load_features(Path(args.features))


def cmd_featurize(args):
    config = _config(args)
    out = _out_dir(args)
    timer = RunTimer()
    kg = load_dataset(args.data_dir)
    manifest = RunManifest('featurize', config.snapshot(), dataset_checksums(args.data_dir), config.seed)

    if args.paper_grid:
        features, report = featurize_paper_grid(kg, config.clustering_seed())
    else:
        features, report = featurize(kg, config.clustering_seed(),
                                     methods=_name_list(args.methods) if args.methods else (config.feature_method,),
                                     kernels=_name_list(args.kernels) if args.kernels else (config.feature_kernel,),
                                     entity_ks=_int_list(args.entity_ks) if args.entity_ks else (config.dims_entity,),
                                     relation_ks=_int_list(args.relation_ks) if args.relation_ks
                                     else (config.dims_relation,),
                                     n_neighbors=config.knn_neighbors)

    features_path = out.joinpath('features.bin')
    save_features(features, features_path)
    report_path = out.joinpath('featurize_report.csv')
    _write_rows(report, report_path)
    for path in (features_path, report_path):
        manifest.add_output(path)
    manifest.write(out, timer)
    print(f"Features written: {features}")


def _write_rows(rows: list[dict], path: Path):
    pd.DataFrame(rows).to_csv(path, index=False)


def cmd_train(args):
    config = _config(args)
    out = _out_dir(args)
    timer = RunTimer()
    kg = load_dataset(args.data_dir)
    features = _features(args, required=config.mode == 'projb')
    manifest = RunManifest('train', config.snapshot(), dataset_checksums(args.data_dir), config.seed)

    streams = config.seed_streams()
    params = init_params(kg.n_entities, kg.n_relations, features, streams['init'], config.mode, config.dims_entity,
                         config.dims_relation, config.activation, config.feature_scale)
    counted = param_count(params)
    logger.info(f"Trainable parameters: {counted.total} ({counted.breakdown}); {counted.formula_text} = "
                f"{counted.formula}")

    trace = VarianceTrace()
    print("Training...")
    history = train(kg, params, config, streams['sampler'], trace)

    outputs = {'checkpoint.bin': lambda path: save_checkpoint(params, path),
               'loss_log.csv': history.write_csv,
               'variance_trace.csv': trace.write_csv,
               'train.conf': lambda path: path.write_text(config.dumps(), encoding='utf-8')}
    for name, writer in outputs.items():
        writer(out.joinpath(name))
        manifest.add_output(out.joinpath(name))

    if history.diverged:
        manifest.exit_code = ExitCodes.NUMERICAL
        manifest.write(out, timer)
        raise NumericalFailure(f"{history.failure}; last good checkpoint saved to {out.joinpath('checkpoint.bin')}")
    manifest.write(out, timer)
    print(f"...training complete: {history}")


def cmd_eval(args):
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required.")
    threads = _threads(args)
    config = _config(args)
    out = _out_dir(args)
    timer = RunTimer()
    params = load_checkpoint(Path(args.checkpoint))
    kg = load_dataset(args.data_dir)
    if (params.n_entities, params.n_relations) != (kg.n_entities, kg.n_relations):
        raise CheckpointError(f"Checkpoint covers {params.n_entities} entities and {params.n_relations} relations, "
                              f"{kg.name} has {kg.n_entities} and {kg.n_relations}")
    config = config.with_overrides(mode=params.mode)
    manifest = RunManifest('eval', config.snapshot(), dataset_checksums(args.data_dir), config.seed)

    report = evaluate(params, kg, args.split, 'both', threads)
    document = metrics_document(report, kg.name, config, config.eval_directions)
    metrics_path = out.joinpath('metrics.json')
    metrics_path.write_text(json.dumps(document, indent=2), encoding='utf-8')
    manifest.add_output(metrics_path)
    manifest.write(out, timer)
    print(json.dumps(document, indent=2))


def cmd_experiment(args):
    threads = _threads(args)
    config = _config(args)
    out = _out_dir(args)
    timer = RunTimer()
    kg = load_dataset(args.data_dir)
    features = _features(args, required=True)
    manifest = RunManifest(f"experiment {args.kind}", config.snapshot(), dataset_checksums(args.data_dir),
                           config.seed)

    if args.kind == 'local_optima':
        trial_stats, frame = local_optima_experiment(kg, features, config, args.trials, config.seed,
                                                     args.baseline_mode)
        frame.to_csv(out.joinpath('local_optima.csv'), index=False)
        out.joinpath('local_optima.json').write_text(json.dumps(trial_stats.as_dict(), indent=2), encoding='utf-8')
        written = ['local_optima.csv', 'local_optima.json']
        print(trial_stats)
    elif args.kind == 'timing_sweep':
        batch_sizes = _int_list(args.batch_sizes) if args.batch_sizes else EvaluationSettings.SWEEP_BATCH_SIZES
        frame, faster = timing_sweep(kg, features, config, batch_sizes)
        frame['largest_batch_faster'] = faster
        frame.to_csv(out.joinpath('timing_sweep.csv'), index=False)
        written = ['timing_sweep.csv']
        print(frame.to_string(index=False))
    else:
        batch_sizes = _int_list(args.batch_sizes) if args.batch_sizes else EvaluationSettings.TABLE4_BATCH_SIZES
        frame = table4_grid(kg, features, config, batch_sizes, threads)
        frame.to_csv(out.joinpath('table4_grid.csv'), index=False)
        written = ['table4_grid.csv']
        print(frame.to_string(index=False))

    for name in written:
        manifest.add_output(out.joinpath(name))
    manifest.write(out, timer)


def cmd_download(args):
    timer = RunTimer()
    written = download_dataset(args.name, Path(args.data_dir))
    manifest = RunManifest('download', {'dataset': args.name}, dataset_checksums(args.data_dir))
    for path in written.values():
        manifest.add_output(path)
    manifest.write(Path(args.data_dir), timer)
    print(f"Downloaded {args.name} into {args.data_dir}")


def cmd_synthesize(args):
    timer = RunTimer()
    if args.kind == 'tiny':
        kg = tiny_kg()
    elif args.kind == 'rules':
        kg = rule_kg(args.seed or 0)
    else:
        kg = random_kg(args.entities, args.relations, args.triples, args.seed or 0)
    write_dataset(kg, Path(args.data_dir))
    manifest = RunManifest('synthesize', {'kind': args.kind}, dataset_checksums(args.data_dir), args.seed)
    for name in ('train.txt', 'valid.txt', 'test.txt', 'entities.txt', 'relations.txt'):
        manifest.add_output(Path(args.data_dir).joinpath(name))
    manifest.write(Path(args.data_dir), timer)
    print(f"Wrote {kg} to {args.data_dir}")


def build_parser() -> CommandLineParser:
    parser = CommandLineParser(prog='ProjBEngine', description=__doc__)
    commands = parser.add_subparsers(dest='command', required=True, parser_class=CommandLineParser)

    common = CommandLineParser(add_help=False)
    common.add_argument('--data-dir', required=True, help="Directory with train.txt, valid.txt and test.txt")
    common.add_argument('--config', help="Training config file (key = value lines)")
    common.add_argument('--out', default='out', help="Output directory")
    common.add_argument('--seed', type=int, help="Root seed, overrides the config")
    common.add_argument('--threads', type=int,
                        help=f"Worker threads (default from {EnvVars.THREADS})")

    training = CommandLineParser(add_help=False)
    training.add_argument('--features', help="Engineered feature file")
    training.add_argument('--mode', choices=('projb', 'proje'))
    training.add_argument('--loss', choices=('pointwise', 'listwise'))
    training.add_argument('--sampler', choices=('candidate', 'weighted', 'adaptive'))
    training.add_argument('--batch-size', type=int)
    training.add_argument('--epochs', type=int)

    featurize_cmd = commands.add_parser('featurize', parents=[common], help="Cluster-engineered features")
    featurize_cmd.add_argument('--paper-grid', action='store_true', help="Search every method, kernel and K")
    featurize_cmd.add_argument('--methods', help="Comma-separated clustering methods")
    featurize_cmd.add_argument('--kernels', help="Comma-separated kernels")
    featurize_cmd.add_argument('--entity-ks', help="Comma-separated entity cluster counts")
    featurize_cmd.add_argument('--relation-ks', help="Comma-separated relation cluster counts")
    featurize_cmd.set_defaults(handler=cmd_featurize)

    train_cmd = commands.add_parser('train', parents=[common, training], help="Train a model")
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = commands.add_parser('eval', parents=[common], help="Rank a split with a checkpoint")
    eval_cmd.add_argument('--checkpoint', help="Checkpoint file")
    eval_cmd.add_argument('--split', default='test', choices=('train', 'valid', 'test'))
    eval_cmd.set_defaults(handler=cmd_eval)

    experiment_cmd = commands.add_parser('experiment', parents=[common, training], help="Run an experiment")
    experiment_cmd.add_argument('kind', choices=EXPERIMENTS)
    experiment_cmd.add_argument('--trials', type=int, default=EvaluationSettings.LOCAL_OPTIMA_TRIALS)
    experiment_cmd.add_argument('--baseline-mode', default='proje', choices=('proje', 'projb'))
    experiment_cmd.add_argument('--batch-sizes', help="Comma-separated batch sizes")
    experiment_cmd.set_defaults(handler=cmd_experiment)

    download_cmd = commands.add_parser('download', help="Download a benchmark dataset")
    download_cmd.add_argument('name', choices=('fb15k', 'wn18'))
    download_cmd.add_argument('--data-dir', required=True)
    download_cmd.set_defaults(handler=cmd_download)

    synthesize_cmd = commands.add_parser('synthesize', help="Write a synthetic dataset")
    synthesize_cmd.add_argument('kind', choices=('tiny', 'rules', 'random'))
    synthesize_cmd.add_argument('--data-dir', required=True)
    synthesize_cmd.add_argument('--seed', type=int)
    synthesize_cmd.add_argument('--entities', type=int, default=100)
    synthesize_cmd.add_argument('--relations', type=int, default=5)
    synthesize_cmd.add_argument('--triples', type=int, default=500)
    synthesize_cmd.set_defaults(handler=cmd_synthesize)
    return parser


@command_error_handler
def run(argv=None):
    args = build_parser().parse_args(argv)
    run_log = attach_run_log(Path(getattr(args, 'out', None) or args.data_dir))
    try:
        logger.info(f"Command {args.command} start.")
        args.handler(args)
        logger.info(f"Command {args.command} complete.")
    except Exception as e:
        logger.error(f"Command {args.command} failed: {e}")
        raise
    finally:
        detach_run_log(run_log)


def main(argv=None) -> int:
    """Main."""
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
