"""Operator command line: caption, score, rank, simulate, train, serve, export.

Exit codes: 0 success, 1 usage error, 2 data/state error. Every subcommand
offers --json with canonical formatting (sorted keys, fixed separators) so
identical inputs produce byte-identical output.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .captioner import (
    ModelWeights,
    TrainingConfig,
    generate,
    history_csv,
    load_feature_map,
    train as train_model,
)
from .downlink import POLICIES, Scenario, compare_policies, curve_csv, run_scenario
from .errors import CapsiftError, ParameterError
from .pipeline import (
    Pipeline,
    PipelineConfig,
    export_dataset,
    export_weights,
    import_dataset,
    import_weights,
    rank_store_images,
)
from .similarity import ScoreConfig, SearchTaskSet, score as score_caption
from .store import Store
from .synth import make_corpus
from .text import Vocabulary, decode, tokenize


def emit_json(payload) -> None:
    click.echo(json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False))


def read_tasks_file(path: str) -> list[str]:
    lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    texts = [line for line in lines if line]
    if not texts:
        raise ParameterError(f"tasks file {path} has no non-empty lines")
    return texts


def load_weights_with_vocab(path: str):
    weights, sidecar = ModelWeights.load(path)
    if "vocab" not in sidecar:
        raise ParameterError(f"weights sidecar {path}.json lacks a vocabulary")
    return weights, Vocabulary(tuple(sidecar["vocab"][4:])), sidecar


def encoder_for(weights: ModelWeights, sidecar: dict, seed: int = 0):
    """Rebuild the feature extractor: prefer the sidecar's persisted config."""
    from .captioner import TinyEncoder

    if "encoder" in sidecar:
        return TinyEncoder.from_dict(sidecar["encoder"])
    grid = int(round(weights.config.num_locations ** 0.5))
    return TinyEncoder(feature_dim=weights.config.feature_dim, grid_size=grid,
                       input_size=8 * grid, seed=seed)


@click.group(name="capsift")
@click.version_option(__version__)
def cli():
    """Caption-driven image triage toolkit."""


@cli.command()
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--features", "features_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["greedy", "beam"]), default="greedy",
              show_default=True)
@click.option("--beam-width", type=int, default=3, show_default=True)
@click.option("--encoder-seed", type=int, default=0, show_default=True,
              help="Seed of the frozen feature extractor (must match training).")
@click.option("--json", "as_json", is_flag=True)
def caption(image_path, features_path, weights_path, mode, beam_width, encoder_seed, as_json):
    """Generate a caption for one image or injected feature map."""
    if (image_path is None) == (features_path is None):
        raise click.UsageError("provide exactly one of --image or --features")
    weights, vocab, sidecar = load_weights_with_vocab(weights_path)
    if features_path is not None:
        features = load_feature_map(
            features_path,
            expected_shape=(weights.config.num_locations, weights.config.feature_dim),
        )
    else:
        encoder = encoder_for(weights, sidecar, seed=encoder_seed)
        features = encoder.encode_image(Path(image_path).read_bytes())
    result = generate(features, weights, mode=mode, beam_width=beam_width)
    text = " ".join(decode(list(result.ids), vocab))
    if as_json:
        emit_json(
            {
                "caption": text,
                "token_ids": list(result.ids),
                "log_prob": result.log_prob,
                "degenerate": result.degenerate,
            }
        )
    else:
        click.echo(text if text else "(degenerate: no content tokens)")


@cli.command()
@click.option("--caption", "caption_text", required=True)
@click.option("--tasks", "tasks_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="File with one search task per line.")
@click.option("--smooth", is_flag=True, help="Epsilon-smooth zero precisions.")
@click.option("--json", "as_json", is_flag=True)
def score(caption_text, tasks_path, smooth, as_json):
    """Similarity between one caption and a search-task file."""
    tokens = tokenize(caption_text)
    if not tokens:
        raise ParameterError("caption is empty after tokenization")
    tasks = SearchTaskSet.from_texts(read_tasks_file(tasks_path))
    result = score_caption(tokens, tasks, ScoreConfig(smooth=smooth))
    if as_json:
        emit_json(result.to_dict())
    else:
        click.echo(f"value={result.value!r} eta={result.brevity_penalty!r}")
        for n, p in enumerate(result.precisions, start=1):
            click.echo(f"p{n}={p!r}")


@cli.command()
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--tasks", "tasks_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task-set", "task_set_id")
@click.option("--json", "as_json", is_flag=True)
def rank(data_dir, tasks_path, task_set_id, as_json):
    """Rank every stored image against search tasks."""
    if (tasks_path is None) == (task_set_id is None):
        raise click.UsageError("provide exactly one of --tasks or --task-set")
    store = Store(data_dir)
    texts = read_tasks_file(tasks_path) if tasks_path else store.get_task_set(task_set_id)
    listing = rank_store_images(store, texts)
    if as_json:
        emit_json({"images": listing, "tasks": texts})
    else:
        for row in listing:
            value = row["score"]["value"] if row["score"] else None
            click.echo(f"{row['id']}  {value!r}  {row['caption'] or ''}")


@cli.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", type=click.Choice([*POLICIES, "both"]), default="both",
              show_default=True)
@click.option("--out-json", type=click.Path(dir_okay=False))
@click.option("--out-csv", type=click.Path(dir_okay=False))
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False),
              help="Caption scenario rows that carry image paths.")
@click.option("--json", "as_json", is_flag=True)
def simulate(scenario_path, policy, out_json, out_csv, weights_path, as_json):
    """Run the downlink simulation and write report artifacts."""
    scenario = Scenario.load(scenario_path)
    captioner = None
    if weights_path is not None:
        weights, vocab, sidecar = load_weights_with_vocab(weights_path)
        encoder = encoder_for(weights, sidecar)

        def captioner(path):
            features = encoder.encode_image(Path(path).read_bytes())
            return decode(list(generate(features, weights).ids), vocab)

    if policy == "both":
        reports = compare_policies(scenario, captioner=captioner)
    else:
        reports = {policy: run_scenario(scenario, policy=policy, captioner=captioner)}
    summary = {name: report.to_dict() for name, report in reports.items()}
    if out_json:
        Path(out_json).write_text(
            json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8"
        )
    if out_csv:
        Path(out_csv).write_text(curve_csv(reports), encoding="utf-8")
    if as_json:
        emit_json(
            {
                name: {
                    "total_bytes": rep["total_bytes"],
                    "completed": len(rep["completions"]),
                    "unfinished": rep["unfinished"],
                    "final_relevance": rep["delivered_curve"][-1][1]
                    if rep["delivered_curve"] else 0.0,
                }
                for name, rep in summary.items()
            }
        )
    else:
        for name, rep in sorted(summary.items()):
            done = len(rep["completions"])
            click.echo(f"{name}: transmitted {done} images, {rep['total_bytes']} bytes")


@cli.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--dropout", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="Write the per-epoch BLEU-1..4 learning curve here.")
@click.option("--json", "as_json", is_flag=True)
def train(data_dir, epochs, patience, learning_rate, batch_size, dropout, seed,
          csv_path, as_json):
    """Retrain the captioner on the store's reviewed annotations."""
    store = Store(data_dir)
    training = TrainingConfig(
        learning_rate=learning_rate, batch_size=batch_size, dropout=dropout,
        patience=patience, max_epochs=epochs, seed=seed,
    )
    base = store.state.get("model") or {}
    pipeline = Pipeline(
        store,
        PipelineConfig(
            training=training,
            embed_dim=base.get("embed_dim", 32),
            hidden_dim=base.get("hidden_dim", 64),
            feature_dim=base.get("feature_dim", 32),
            grid_size=int(round(base.get("num_locations", 16) ** 0.5)),
            max_caption_len=base.get("max_caption_len", 20),
        ),
    )
    if not pipeline.should_retrain():
        raise CapsiftError("retrain condition not met (dataset has not grown enough)")
    entry = pipeline.retrain()
    if csv_path:
        Path(csv_path).write_text(history_csv(entry.get("history", [])), encoding="utf-8")
    if as_json:
        emit_json({k: v for k, v in entry.items() if k != "history"})
    else:
        click.echo(
            f"checkpoint w{entry['index']:04d}: {entry['dataset_size']} pairs, "
            f"{entry.get('epochs', '?')} epochs, best bleu {entry.get('bleu')}"
        )


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data-dir", type=click.Path(file_okay=False))
@click.option("--port", type=int)
@click.option("--tokens", "tokens_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--frontend", "frontend_dir", type=click.Path(file_okay=False))
def serve(config_path, data_dir, port, tokens_path, frontend_dir):
    """Run the HTTP service."""
    from .service import ServiceConfig, serve as run_server

    if config_path:
        config = ServiceConfig.load(config_path)
    elif data_dir:
        config = ServiceConfig(data_dir=Path(data_dir))
    else:
        raise click.UsageError("provide --config or --data-dir")
    if port:
        config.port = port
    if tokens_path:
        config.tokens_path = Path(tokens_path)
    if frontend_dir:
        config.frontend_dir = Path(frontend_dir)
    run_server(config)


@cli.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--what", type=click.Choice(["dataset", "weights"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def export(data_dir, what, out_path, as_json):
    """Write a dataset or weights bundle."""
    store = Store(data_dir)
    builder = export_dataset if what == "dataset" else export_weights
    path = builder(store, out_path)
    if as_json:
        emit_json({"bundle": str(path), "what": what})
    else:
        click.echo(f"wrote {what} bundle to {path}")


@cli.command(name="import")
@click.option("--bundle", "bundle_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--what", type=click.Choice(["dataset", "weights"]), required=True)
@click.option("--json", "as_json", is_flag=True)
def import_bundle(bundle_path, data_dir, what, as_json):
    """Load a dataset bundle into a fresh directory, or append a weights
    bundle to an existing store."""
    if what == "dataset":
        store = import_dataset(bundle_path, data_dir)
        result = {"images": len(store.image_order), "data_dir": str(store.root)}
    else:
        store = Store(data_dir)
        entry = import_weights(bundle_path, store)
        result = {"checkpoint": entry["index"], "data_dir": str(store.root)}
    if as_json:
        emit_json(result)
    else:
        click.echo(json.dumps(result, sort_keys=True))


@cli.command(name="demo-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--train/--no-train", "do_train", default=False,
              help="Also fit an initial checkpoint on the demo captions.")
@click.option("--epochs", type=int, default=150, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def demo_data(out_dir, count, seed, do_train, epochs, as_json):
    """Create a demo store of synthetic shape images with reviewed captions."""
    store = Store(out_dir)
    pipeline = Pipeline(store, PipelineConfig(
        training=TrainingConfig(learning_rate=3e-3, max_epochs=epochs,
                                patience=0, seed=seed),
    ))
    samples = make_corpus(count, seed=seed)
    image_ids = []
    for sample in samples:
        image_id, _ = store.ingest_blob(sample.png_bytes(), source="synthetic")
        store.add_annotation(image_id, sample.caption, author="synthetic",
                             reviewed=True)
        image_ids.append(image_id)
    entry = None
    if do_train:
        entry = pipeline.retrain()
    if as_json:
        emit_json(
            {
                "data_dir": str(store.root),
                "images": len(image_ids),
                "trained": entry["index"] if entry else None,
            }
        )
    else:
        click.echo(f"created {len(image_ids)} demo images in {store.root}")
        if entry:
            click.echo(f"trained checkpoint w{entry['index']:04d}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except CapsiftError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
