"""Command-line harness: ``gen``, ``train``, ``affinity``, ``cluster`` and ``report``.

Exit codes: 0 success, 1 usage or configuration problem, 2 bad data or file
format, 3 numeric failure (divergence, degenerate statistics).
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import click
import numpy as np
import yaml

from . import errors
from .affinity import compute_indicators, read_affinity_csv, task_affinity, write_affinity_csv
from .architecture import ArchitectureTree
from .config import TrainConfig, load_yaml, parse_config, serialize_config
from .datagen import PlantedSpec, gen_synthetic, load_dataset, save_dataset
from .metrics import paired_t_test
from .mvclustering import select_branching
from .widening import deep_mtmv, evaluate

logger = logging.getLogger("deep_mtmv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ROUND_LOG = "rounds.jsonl"
ARCHITECTURE = "architecture.json"
PARAMS = "params.npz"
REPORT = "report.json"

_EXIT_CODES = [
    ((errors.ConfigurationError, errors.UsageError), EXIT_USAGE),
    ((errors.FormatError, errors.ValidationError, errors.DimensionError, errors.StructuralError), EXIT_DATA),
    ((errors.NumericError, errors.TrainingError, errors.StatisticsError), EXIT_NUMERIC),
]


def exit_code_for(exc: BaseException) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return EXIT_NUMERIC if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)) else EXIT_DATA


def parse_views(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        ids = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise errors.UsageError(f"--views must be a comma-separated list of integers, got {text!r}") from exc
    if not ids or len(set(ids)) != len(ids) or min(ids) < 0:
        raise errors.UsageError(f"--views must list distinct nonnegative view ids, got {text!r}")
    return ids


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _out_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_model(model: ArchitectureTree, directory: Path):
    (directory / ARCHITECTURE).write_text(model.to_json())
    np.savez(directory / PARAMS, **model.state_dict())


def load_model(directory) -> ArchitectureTree:
    directory = Path(directory)
    try:
        text = (directory / ARCHITECTURE).read_text()
    except OSError as exc:
        raise errors.FormatError(f"cannot read {directory / ARCHITECTURE}: {exc}", path=directory / ARCHITECTURE)
    try:
        with np.load(directory / PARAMS) as npz:
            state = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise errors.FormatError(f"cannot read {directory / PARAMS}: {exc}", path=directory / PARAMS)
    return ArchitectureTree.from_json(text, state)


def _load_yaml(path) -> dict:
    try:
        data = load_yaml(Path(path).read_text())
    except OSError as exc:
        raise errors.ConfigurationError(f"cannot read {path}: {exc}", key="config") from exc
    except yaml.YAMLError as exc:
        raise errors.ConfigurationError(f"{path} is not valid YAML/JSON: {exc}", key="config") from exc
    if not isinstance(data, dict):
        raise errors.ConfigurationError(f"{path} must hold a mapping", key="config")
    return data


def _train_config(config: str, seed: int | None, views: str | None) -> TrainConfig:
    cfg = parse_config(config)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    selected = parse_views(views)
    if selected is not None:
        cfg = replace(cfg, views=selected)
    return cfg


def _dataset_for(cfg: TrainConfig):
    ds = load_dataset(cfg.dataset)
    return ds.select_views(cfg.views) if cfg.views is not None else ds


# --------------------------------------------------------------------------
# commands


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress to stderr (-vv for debug).")
def cli(verbose: int):
    """Multi-view multi-task network widening."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
              help="YAML/JSON planted-data description.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Dataset directory to write.")
@click.option("--seed", type=int, default=None, help="Overrides the seed in the config.")
def gen(config, out, seed):
    """Generate a synthetic dataset with planted task groups."""
    data = _load_yaml(config)
    try:
        n_per_task = int(data.pop("n_per_task"))
        dims = data.pop("dims")
    except KeyError as exc:
        raise errors.ConfigurationError(f"missing required key {exc.args[0]!r}", key=exc.args[0]) from exc
    if seed is not None:
        data["seed"] = seed
    try:
        spec = PlantedSpec(**data)
    except TypeError as exc:
        raise errors.ConfigurationError(f"bad planted-data config: {exc}", key="config") from exc
    ds = gen_synthetic(spec, n_per_task, dims)
    manifest = save_dataset(ds, _out_dir(out))
    click.echo(str(manifest))


@cli.command()
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides the seed in the config.")
@click.option("--views", default=None, help="Comma-separated view ids to train on.")
def train(config, out, seed, views):
    """Run the widening rounds and write the round log, model and report."""
    code = cmd_train(config, out, seed=seed, views=views)
    if code != EXIT_OK:
        raise click.exceptions.Exit(code)


def cmd_train(config, out, seed: int | None = None, views: str | None = None) -> int:
    """Train from a config file into ``out``; returns the process exit code."""
    try:
        _train(config, out, seed, views)
    except errors.MTMVError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exit_code_for(exc)
    return EXIT_OK


def _train(config, out, seed, views):
    cfg = _train_config(config, seed, views)
    ds = _dataset_for(cfg)
    out = _out_dir(out)
    model, rounds, final = deep_mtmv(ds, cfg)
    with open(out / ROUND_LOG, "w") as fh:
        for record in rounds:
            fh.write(_dumps(record) + "\n")
    save_model(model, out)
    serialize_config(cfg, out / "config.json")
    raw, shares = model.view_weights()
    report = {
        "rounds": [{"round": r["round"], "depth": r["depth"], "chosen_d": r["chosen_d"], "groups": r["groups"]}
                   for r in rounds],
        "final_partition": [list(g) for g in model.leaf_partition()],
        "metrics": {split: evaluate(model, ds, split) for split in ("train", "valid", "test")
                    if ds.indices(split).size},
        "view_weights": {"raw": raw.tolist(), "shares": shares.tolist()},
        "training": {"epochs": final["epochs"], "validation_loss": final["validation_loss"]},
        "architecture": ARCHITECTURE,
        "seed": cfg.seed,
        "views": cfg.views,
    }
    (out / REPORT).write_text(json.dumps(report, indent=1, sort_keys=True))
    click.echo(str(out / REPORT))


@cli.command()
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
              help="Training config naming the dataset.")
@click.option("--model", "model_dir", required=True, type=click.Path(file_okay=False),
              help="Directory written by `train`.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--views", default=None, help="Comma-separated view ids the model was trained on.")
@click.option("--split", default="valid", type=click.Choice(["train", "valid", "test"]))
def affinity(config, model_dir, out, seed, views, split):
    """Write per-view and fused task-affinity CSVs for a trained model."""
    cfg = _train_config(config, seed, views)
    ds = _dataset_for(cfg)
    model = load_model(model_dir)
    if model.m != ds.m or model.n_tasks != ds.T:
        raise errors.ValidationError(f"model expects {model.m} views and {model.n_tasks} tasks, "
                                     f"dataset has {ds.m} and {ds.T}")
    inputs, labels = ds.part(split)
    if labels.shape[0] == 0:
        raise errors.ValidationError(f"dataset has no {split!r} examples")
    out = _out_dir(out)
    ids = list(range(ds.T))
    written = []
    for v in range(ds.m):
        aff = task_affinity(compute_indicators(labels, model.predict_view(inputs, v)), view_id=v)
        write_affinity_csv(aff, out / f"affinity_view{v}.csv", ids)
        written.append(out / f"affinity_view{v}.csv")
    fused = task_affinity(compute_indicators(labels, model.predict(inputs)))
    write_affinity_csv(fused, out / "affinity_fused.csv", ids)
    written.append(out / "affinity_fused.csv")
    for path in written:
        click.echo(str(path))


@cli.command()
@click.argument("csvs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config", default=None, type=click.Path(dir_okay=False),
              help="Training config supplying alpha, base_cost, split_exponent, d_max.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--weights", default=None, help="Comma-separated per-view lambda weights (default uniform).")
def cluster(csvs, config, out, seed, weights):
    """Choose a branch count from affinity CSVs and write the assignment."""
    cfg = parse_config(config) if config else TrainConfig(dataset="-", seed=0)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    mats, ids = [], None
    for path in csvs:
        these, mat = read_affinity_csv(path)
        if ids is not None and these != ids:
            raise errors.FormatError(f"{path}: ids {these} differ from {ids}", path=path)
        ids = these
        mats.append(mat)
    if weights is None:
        lam = [1.0 / len(mats)] * len(mats)
    else:
        try:
            lam = [float(x) for x in weights.split(",")]
        except ValueError as exc:
            raise errors.UsageError(f"--weights must be numbers, got {weights!r}") from exc
        if len(lam) != len(mats) or min(lam) < 0:
            raise errors.UsageError(f"--weights needs {len(mats)} nonnegative values")
    p_t = 0 if cfg.split_exponent is None else cfg.split_exponent
    decision = select_branching(mats, lam, cfg.base_cost, cfg.alpha, p_t, (1, cfg.d_max), seed=cfg.seed,
                                reduce=cfg.separation_reduce)
    out = _out_dir(out)
    assignment = {sid: int(c) for sid, c in zip(ids, decision.assignment.labels)}
    (out / "assignment.json").write_text(json.dumps(assignment, indent=1, sort_keys=True))
    with open(out / "loss_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "structural", "separation", "loss", "chosen"])
        for row in decision.candidates:
            w.writerow([row["d"], repr(row["structural"]), repr(row["separation"]), repr(row["loss"]),
                        int(row["d"] == decision.d)])
    click.echo(f"d={decision.d} {json.dumps(decision.assignment.groups())}")


def _collect_reports(root: Path) -> dict[str, dict]:
    found = {}
    for path in sorted(root.rglob(REPORT)):
        try:
            found[str(path.parent.relative_to(root))] = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.FormatError(f"cannot read {path}: {exc}", path=path) from exc
    if not found:
        raise errors.FormatError(f"no {REPORT} under {root}", path=root)
    return found


def paired_scores(a: dict[str, dict], b: dict[str, dict], split: str = "test") -> tuple[list[str], list, list]:
    """Pair runs by relative directory; a single run on each side pairs its tasks instead."""
    try:
        if len(a) == 1 and len(b) == 1:
            ra, rb = next(iter(a.values())), next(iter(b.values()))
            xs, ys = ra["metrics"][split]["per_task_accuracy"], rb["metrics"][split]["per_task_accuracy"]
            if len(xs) != len(ys):
                raise errors.ValidationError("runs cover different task counts")
            return [f"task{j}" for j in range(len(xs))], xs, ys
        keys = sorted(set(a) & set(b))
        if keys != sorted(a) or keys != sorted(b):
            raise errors.ValidationError(f"run directories do not pair up: {sorted(a)} vs {sorted(b)}")
        return keys, [a[k]["metrics"][split]["accuracy"] for k in keys], \
            [b[k]["metrics"][split]["accuracy"] for k in keys]
    except KeyError as exc:
        raise errors.FormatError(f"report lacks {exc.args[0]!r} metrics") from exc


@cli.command()
@click.argument("run_a", type=click.Path(exists=True, file_okay=False))
@click.argument("run_b", type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--split", default="test", type=click.Choice(["train", "valid", "test"]))
def report(run_a, run_b, out, split):
    """Compare two run directories with a paired t-test on accuracy."""
    keys, xs, ys = paired_scores(_collect_reports(Path(run_a)), _collect_reports(Path(run_b)), split)
    t, p = paired_t_test(xs, ys)
    out = _out_dir(out)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "a", "b", "difference"])
        for k, x, y in zip(keys, xs, ys):
            w.writerow([k, repr(float(x)), repr(float(y)), repr(float(x - y))])
    summary = {"n": len(keys), "mean_a": float(np.mean(xs)), "mean_b": float(np.mean(ys)),
               "t": t, "p": p, "significant_at_0.05": bool(p < 0.05), "split": split}
    (out / "ttest.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    click.echo(f"t={t:.4f} p={p:.4g}")


# --------------------------------------------------------------------------
# entry point


def run(argv: Sequence[str] | None = None) -> int:
    """Invoke the CLI and return its exit code instead of exiting."""
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="deep-mtmv",
                        standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.Abort) as exc:
        if isinstance(exc, click.UsageError):
            exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except errors.MTMVError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exit_code_for(exc)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    # without standalone mode click hands back an Exit code instead of raising
    return code if isinstance(code, int) else EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
