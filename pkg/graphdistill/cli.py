import contextlib
import json
import logging
import pathlib
import sys
from dataclasses import replace
from typing import Iterator, List, Optional, Sequence, Tuple

import click
import torch

from graphdistill.data import (
    FeatureSet,
    LabeledDataset,
    SplitSpec,
    augment_with_synthetic,
    dataset_stats,
    featurize_dataset,
    generate_synthetic,
    load_dataset,
    load_features,
    parse_tu,
    save_dataset,
    save_features,
    split,
)
from graphdistill.errors import (
    ConfigError,
    DataError,
    GraphDistillError,
    SpectralError,
    TrainingError,
)
from graphdistill.experiments import (
    CURVE_HEADER,
    CV_HEADER,
    MULTI_TASK,
    SINGLE_TASK,
    VARIANTS,
    LearningCurveSpec,
    SearchSpace,
    cross_validate,
    learning_curve,
    random_search,
    run_model,
    variant_tasks,
)
from graphdistill.network import evaluate as evaluate_net
from graphdistill.network import load_checkpoint, metric_name, save_checkpoint
from graphdistill.settings import ExperimentConfig, get_active_config, load_config
from graphdistill.tasks import CLASS, DIAMETER, METRIC_TASKS, TaskSpec
from graphdistill.utils import parse_list, worker_count, write_csv, write_json

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataFailure(click.ClickException):
    exit_code = EXIT_DATA


class NumericFailure(click.ClickException):
    exit_code = EXIT_NUMERIC


@contextlib.contextmanager
def _reporting_errors() -> Iterator[None]:
    try:
        yield
    except (SpectralError, TrainingError) as e:
        raise NumericFailure(str(e))
    except GraphDistillError as e:
        raise DataFailure(str(e))


def _config(path: Optional[pathlib.Path]) -> ExperimentConfig:
    if path is None:
        return get_active_config()
    return load_config(path)


def _echo(ctx: click.Context, message: str) -> None:
    if not ctx.obj["quiet"]:
        click.echo(message, err=True)


def _load_graphs(path: pathlib.Path) -> LabeledDataset:
    if path.suffix == ".npz":
        raise DataError(f"{path} holds features only; this command needs a graph dataset")
    return load_dataset(path)


def _load_features(path: pathlib.Path, config: ExperimentConfig) -> FeatureSet:
    if path.suffix == ".npz":
        return load_features(path)
    return featurize_dataset(load_dataset(path), config.hks, worker_count())


def _default_main(tasks: Sequence[TaskSpec]) -> str:
    names = [t.name for t in tasks]
    return CLASS if CLASS in names else DIAMETER


def _default_aux(tasks: Sequence[TaskSpec], main: str) -> Tuple[str, ...]:
    names = [t.name for t in tasks]
    return tuple(name for name in METRIC_TASKS if name in names and name != main)


def _tasks_arg(text: Optional[str]) -> Optional[Tuple[str, ...]]:
    if text is None:
        return None
    return tuple(parse_list(text, str.strip))


def _paired_paths(out: pathlib.Path) -> Tuple[pathlib.Path, pathlib.Path]:
    """(csv, json) output paths for a table and its summary"""
    if out.suffix == ".json":
        return out.with_suffix(".csv"), out
    return out, out.with_suffix(".json")


def _list_option(text: Optional[str], convert: type, name: str) -> List:
    if text is None:
        return []
    try:
        return parse_list(text, convert)
    except ValueError:
        raise click.BadParameter(f"{text!r} is not a comma separated list", param_hint=name)


@click.group(context_settings=dict(help_option_names=["-h", "--help"]))
@click.option("--quiet", "-q", is_flag=True, help="Only print warnings and errors")
@click.option("--verbose", "-v", is_flag=True, help="Log per-epoch progress")
@click.pass_context
def cli(ctx: click.Context, quiet: bool, verbose: bool) -> None:
    "Multi-task graph learning with network-metric auxiliary tasks"
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    torch.set_num_threads(min(torch.get_num_threads(), worker_count()))


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    default=None,
    help="Experiment configuration JSON [default: ./graphdistill.json or packaged]",
)


@click.command()
@click.option("--model", type=click.Choice(["er", "ba"]), required=True)
@click.option("--count", type=int, default=None, help="[default: learning_curve.corpus_size]")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def generate(
    ctx: click.Context,
    model: str,
    count: Optional[int],
    seed: int,
    out: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """Generate a synthetic graph corpus labelled with density and diameter"""
    with _reporting_errors():
        if count is None:
            count = _config(config_path).corpus_size
        ds = generate_synthetic(model, count, seed)
        _echo(ctx, f"Writing {len(ds)} graphs to {out}")
        save_dataset(ds, out)


@click.command("parse-tu")
@click.option("--dir", "directory", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--name", type=str, required=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@click.pass_context
def parse_tu_command(
    ctx: click.Context, directory: pathlib.Path, name: str, out: pathlib.Path
) -> None:
    """Convert a TU benchmark directory into a graph dataset"""
    with _reporting_errors():
        ds = parse_tu(directory, name)
        _echo(ctx, f"Writing {len(ds)} graphs to {out}")
        save_dataset(ds, out)


@click.command()
@click.option("--in", "in_path", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--bins", type=int, default=None, help="Histogram bins B")
@click.option("--steps", type=int, default=None, help="Time samples T")
@click.option("--tmin", type=float, default=None)
@click.option("--tmax", type=float, default=None)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def hks(
    ctx: click.Context,
    in_path: pathlib.Path,
    bins: Optional[int],
    steps: Optional[int],
    tmin: Optional[float],
    tmax: Optional[float],
    out: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """Featurize a graph dataset into HKS histograms (.npz)"""
    with _reporting_errors():
        config = _config(config_path)
        changes = {"num_bins": bins, "num_steps": steps, "t_min": tmin, "t_max": tmax}
        config = config.with_hks(**{k: v for k, v in changes.items() if v is not None})
        ds = load_dataset(in_path)
        features = featurize_dataset(ds, config.hks, worker_count())
        _echo(ctx, f"Writing {len(features)} histograms to {out}")
        save_features(features, out)


@click.command()
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--main", type=str, default=None, help="Main task [default: class or diameter]")
@click.option("--aux", type=str, default=None, help="Comma separated auxiliary tasks")
@click.option("--budget", type=int, default=None, help="Train examples keeping the main label")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-model", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--out-metrics", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def train(
    ctx: click.Context,
    data: pathlib.Path,
    main: Optional[str],
    aux: Optional[str],
    budget: Optional[int],
    seed: int,
    out_model: pathlib.Path,
    out_metrics: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """Train one model on an 8:1:1 split and report per-task metrics"""
    with _reporting_errors():
        config = _config(config_path)
        features = _load_features(data, config)
        main = main or _default_main(features.tasks)
        aux_tasks = _tasks_arg(aux)
        if aux_tasks is None:
            aux_tasks = ()
        variant = MULTI_TASK if aux_tasks else SINGLE_TASK
        tasks = variant_tasks(
            features.tasks, main, aux_tasks, variant, config.main_weight, config.aux_weight
        )
        train_set, val_set, test_set = split(
            features, SplitSpec(main_task_budget=budget, shuffle_seed=seed, main_task=main)
        )
        _echo(ctx, f"Training {variant} model for {main} on {len(train_set)} graphs")
        record, net = run_model(
            train_set, val_set, test_set, tasks, replace(config, hks=features.hks), seed, variant
        )
        _echo(ctx, f"Writing model to {out_model}")
        save_checkpoint(net, out_model, hks=features.hks)
        write_json(out_metrics, record.as_dict())
        _echo(ctx, f"Test {main}: {record.main_metric('test')!r}")


@click.command()
@click.option("--model", "model_path", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@click.pass_context
def evaluate(
    ctx: click.Context, model_path: pathlib.Path, data: pathlib.Path, out: pathlib.Path
) -> None:
    """Score a trained model on every task a dataset labels"""
    with _reporting_errors():
        net, hks_config = load_checkpoint(model_path)
        if data.suffix == ".npz":
            features = load_features(data)
        else:
            if hks_config is None:
                raise ConfigError(
                    f"{model_path} has no HKS configuration; pass featurized .npz data"
                )
            features = featurize_dataset(load_dataset(data), hks_config, worker_count())
        names = [
            t.name
            for t in net.config.tasks
            if t.name in features.labels and features.label_count(t.name) > 0
        ]
        if not names:
            raise DataError(f"{data} labels none of the model's tasks")
        metrics = evaluate_net(net, features, names)
        csv_path, json_path = _paired_paths(out)
        write_csv(
            csv_path,
            ("task", "metric_name", "metric_value"),
            [(name, metric_name(net.config.task(name)), metrics[name]) for name in names],
        )
        write_json(json_path, {"examples": len(features), "metrics": metrics})
        _echo(ctx, f"Wrote metrics for {len(names)} tasks to {csv_path} and {json_path}")


@click.command("learning-curve")
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--main", type=str, default=None)
@click.option("--aux", type=str, default=None, help="Comma separated auxiliary tasks")
@click.option("--sizes", type=str, default=None, help="Comma separated main-label budgets")
@click.option("--fractions", type=str, default=None, help="Comma separated budget fractions")
@click.option("--seeds", type=int, default=None, help="Seeds per point")
@click.option("--seed", type=int, default=0, show_default=True, help="First seed")
@click.option("--timings", is_flag=True, help="Fill the wall_seconds CSV column")
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def learning_curve_command(
    ctx: click.Context,
    data: pathlib.Path,
    main: Optional[str],
    aux: Optional[str],
    sizes: Optional[str],
    fractions: Optional[str],
    seeds: Optional[int],
    seed: int,
    timings: bool,
    out: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """Single-task vs multi-task test metric over a main-label budget ladder"""
    size_list = _list_option(sizes, int, "--sizes")
    fraction_list = _list_option(fractions, float, "--fractions")
    if size_list and fraction_list:
        raise click.UsageError("--sizes and --fractions are mutually exclusive")
    with _reporting_errors():
        config = _config(config_path)
        features = _load_features(data, config)
        main = main or _default_main(features.tasks)
        aux_tasks = _tasks_arg(aux)
        if aux_tasks is None:
            aux_tasks = _default_aux(features.tasks, main)
        if not size_list and not fraction_list:
            size_list = list(config.curve_sizes)
        seed_count = config.curve_seeds if seeds is None else seeds
        spec = LearningCurveSpec(
            main_task=main,
            aux_tasks=aux_tasks,
            sizes=tuple(size_list),
            fractions=tuple(fraction_list),
            seeds=tuple(range(seed, seed + seed_count)),
        )
        result = learning_curve(spec, features, config, worker_count())
        csv_path, json_path = _paired_paths(out)
        _echo(ctx, f"Writing {len(result.rows)} rows to {csv_path}")
        write_csv(csv_path, CURVE_HEADER, [row.csv_row(timings) for row in result.rows])
        write_json(json_path, result.as_dict())
        failed = [row for row in result.rows if row.error is not None]
        if failed:
            click.echo(f"{len(failed)} cells failed, see {json_path}", err=True)


@click.command()
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--main", type=str, default=None)
@click.option("--aux", type=str, default=None, help="Comma separated auxiliary tasks")
@click.option("--variant", type=click.Choice(VARIANTS), default=MULTI_TASK, show_default=True)
@click.option("--trials", type=int, default=None, help="Number of sampled configurations")
@click.option("--budget", type=int, default=None, help="Train examples keeping the main label")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def search(
    ctx: click.Context,
    data: pathlib.Path,
    main: Optional[str],
    aux: Optional[str],
    variant: str,
    trials: Optional[int],
    budget: Optional[int],
    seed: int,
    out: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """Random hyperparameter search on the validation split"""
    with _reporting_errors():
        config = _config(config_path)
        ds = _load_graphs(data)
        main = main or _default_main(ds.tasks)
        aux_tasks = _tasks_arg(aux)
        aux_choices: Tuple[str, ...] = ()
        if aux_tasks is None:
            aux_tasks = _default_aux(ds.tasks, main)
            if main == CLASS:
                # real data: the auxiliary task itself is searched
                aux_choices = aux_tasks
        space = SearchSpace(
            aux_choices=aux_choices,
            aux_weight_choices=config.aux_weight_choices,
            num_trials=config.search_trials if trials is None else trials,
        )
        splits = split(ds, SplitSpec(main_task_budget=budget, shuffle_seed=seed, main_task=main))
        _echo(ctx, f"Searching {space.num_trials} {variant} configurations for {main}")
        result = random_search(space, splits, main, aux_tasks, seed, config, variant)
        csv_path, json_path = _paired_paths(out)
        write_csv(
            csv_path,
            ("trial", "seed", "metric_name", "val_metric", "test_metric", "best_epoch", "error"),
            [
                (
                    index,
                    record.seed,
                    metric_name(ds.task(main)),
                    record.main_metric("val"),
                    record.main_metric("test"),
                    record.best_epoch,
                    record.error,
                )
                for index, record in enumerate(result.records)
            ],
        )
        write_json(json_path, result.as_dict())
        _echo(ctx, f"Best trial {result.best_trial.index}: val {main} {result.best.main_metric('val')!r}")


@click.command()
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--main", type=str, default=None)
@click.option("--aux", type=str, default=None, help="Comma separated auxiliary tasks")
@click.option("--folds", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--search/--no-search", "tune", default=False, help="Tune on the first fold")
@click.option("--trials", type=int, default=None)
@click.option("--fraction", type=float, default=None, help="Share of train folds keeping the main label")
@click.option("--timings", is_flag=True, help="Fill the wall_seconds CSV column")
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@config_option
@click.pass_context
def cv(
    ctx: click.Context,
    data: pathlib.Path,
    main: Optional[str],
    aux: Optional[str],
    folds: Optional[int],
    seed: int,
    tune: bool,
    trials: Optional[int],
    fraction: Optional[float],
    timings: bool,
    out: pathlib.Path,
    config_path: Optional[pathlib.Path],
) -> None:
    """k-fold cross validation of both variants"""
    with _reporting_errors():
        config = _config(config_path)
        ds = _load_graphs(data)
        main = main or _default_main(ds.tasks)
        aux_tasks = _tasks_arg(aux)
        aux_choices: Tuple[str, ...] = ()
        if aux_tasks is None:
            aux_tasks = _default_aux(ds.tasks, main)
            if main == CLASS:
                aux_choices = aux_tasks
        space = None
        if tune:
            space = SearchSpace(
                aux_choices=aux_choices,
                aux_weight_choices=config.aux_weight_choices,
                num_trials=config.search_trials if trials is None else trials,
            )
        k = config.folds if folds is None else folds
        _echo(ctx, f"Cross validating {main} over {k} folds")
        result = cross_validate(
            ds,
            main,
            aux_tasks,
            config,
            k=k,
            seed=seed,
            search_space=space,
            label_fraction=fraction,
            workers=worker_count(),
        )
        csv_path, json_path = _paired_paths(out)
        write_csv(csv_path, CV_HEADER, result.csv_rows(timings))
        write_json(json_path, result.as_dict())
        for variant, entry in result.summary().items():
            _echo(ctx, f"{variant}: {entry['mean']!r} +- {entry['stderr']!r}")


@click.command()
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), required=True)
@click.pass_context
def augment(
    ctx: click.Context, data: pathlib.Path, count: int, seed: int, out: pathlib.Path
) -> None:
    """Append ER graphs fitted to a dataset, labelled with metrics only"""
    with _reporting_errors():
        ds = augment_with_synthetic(_load_graphs(data), count, seed)
        _echo(ctx, f"Writing {len(ds)} graphs to {out}")
        save_dataset(ds, out)


@click.command()
@click.option("--data", type=click.Path(path_type=pathlib.Path), required=True)
@click.option("--out", type=click.Path(path_type=pathlib.Path), default=None)
def stats(data: pathlib.Path, out: Optional[pathlib.Path]) -> None:
    """Summarize a graph dataset"""
    with _reporting_errors():
        summary = dataset_stats(_load_graphs(data))
        if out is None:
            click.echo(json.dumps(summary, indent=2, sort_keys=True))
        else:
            write_json(out, summary)


cli.add_command(generate)
cli.add_command(parse_tu_command)
cli.add_command(hks)
cli.add_command(train)
cli.add_command(evaluate)
cli.add_command(learning_curve_command)
cli.add_command(search)
cli.add_command(cv)
cli.add_command(augment)
cli.add_command(stats)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the CLI and maps failures to exit codes (usage 1, data 2, numeric 3)"""
    try:
        args = list(argv) if argv is not None else None
        cli.main(args=args, prog_name="graphdistill", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
