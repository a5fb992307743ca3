"""Reviewed-data aggregation and model retraining.

The loop: ingest images, machine-caption them with the latest checkpoint,
collect human reviews and votes, and retrain once the reviewed dataset has
grown by the aggregation factor:

    retrain pending  <=>  |training cache| * (1 + rate) <= |reviewed images|

The training cache starts empty, so the first check always fires and the
initial fit runs on whatever reviewed data exists. Checkpoints are committed
atomically together with the cache snapshot at training completion; a crash
mid-training leaves the previous consistent state.
"""

from __future__ import annotations

import json
import threading
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .captioner import (
    ModelConfig,
    ModelWeights,
    TinyEncoder,
    TrainingConfig,
    generate,
    load_feature_map,
    train,
)
from .captioner.training import history_rows
from .errors import BusyError, ParameterError, StateError
from .similarity import ScoreConfig, SearchTaskSet
from .store import SCHEMA_VERSION, Store
from .text import Vocabulary, decode, encode, tokenize

DEFAULT_AGGREGATION_RATE = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    aggregation_rate: float = DEFAULT_AGGREGATION_RATE
    warm_start: bool = True
    training: TrainingConfig = field(default_factory=TrainingConfig)
    embed_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 32
    grid_size: int = 4
    input_size: int = 32
    max_caption_len: int = 20
    encoder_seed: int = 0
    min_count: int = 1

    def __post_init__(self):
        if self.aggregation_rate <= 0:
            raise ParameterError("aggregation_rate must be > 0")


@dataclass
class IngestResult:
    image_id: str
    duplicate: bool
    caption_id: str
    caption_text: str
    degenerate: bool


def adapt_weights_to_vocab(
    old: ModelWeights,
    old_tokens: list[str],
    new_tokens: list[str],
    seed: int = 0,
) -> ModelWeights:
    """Carry embedding columns and output rows over to a rebuilt vocabulary.

    Tokens present in both vocabularies keep their learned vectors; new
    tokens get fresh small-random init; dropped tokens are discarded.
    """
    new_config = ModelConfig(
        vocab_size=len(new_tokens), **{
            k: getattr(old.config, k)
            for k in ("embed_dim", "hidden_dim", "feature_dim", "num_locations",
                      "max_caption_len", "output_uses_prev_hidden")
        }
    )
    fresh = ModelWeights.initialize(new_config, seed=seed)
    old_index = {t: i for i, t in enumerate(old_tokens)}
    for new_i, token in enumerate(new_tokens):
        old_i = old_index.get(token)
        if old_i is not None:
            fresh.tensors["embedding"][:, new_i] = old.tensors["embedding"][:, old_i]
            fresh.tensors["out_w"][new_i, :] = old.tensors["out_w"][old_i, :]
    for name in old.tensors:
        if name not in ("embedding", "out_w"):
            fresh.tensors[name] = old.tensors[name].copy()
    return ModelWeights(new_config, fresh.tensors)


class Pipeline:
    """Aggregation, annotation and retraining against one data directory."""

    def __init__(self, store: Store, config: PipelineConfig | None = None):
        self.store = store
        self.config = config or PipelineConfig()
        self._training_lock = threading.Lock()
        if store.state.get("encoder") is None:
            store.state["encoder"] = TinyEncoder(
                feature_dim=self.config.feature_dim,
                grid_size=self.config.grid_size,
                input_size=self.config.input_size,
                seed=self.config.encoder_seed,
            ).to_dict()
            store.state["model"] = {
                "embed_dim": self.config.embed_dim,
                "hidden_dim": self.config.hidden_dim,
                "feature_dim": self.config.feature_dim,
                "num_locations": self.config.grid_size**2,
                "max_caption_len": self.config.max_caption_len,
                "output_uses_prev_hidden": False,
            }
            store._write_state()
        self.encoder = TinyEncoder.from_dict(store.state["encoder"])
        if store.latest_checkpoint() is None:
            self._bootstrap_checkpoint()

    # --- model plumbing ---

    def _model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.store.state["model"])

    def _bootstrap_checkpoint(self):
        """W_0: random init over the specials-only vocabulary."""
        vocab = Vocabulary()
        weights = ModelWeights.initialize(
            self._model_config(vocab.size), seed=self.config.training.seed
        )
        self.store.add_checkpoint(
            lambda path: weights.save(path, vocab_tokens=list(vocab.tokens)),
            {"dataset_size": 0, "kind": "random-init"},
        )

    def latest_weights(self) -> tuple[ModelWeights, Vocabulary, dict]:
        entry = self.store.latest_checkpoint()
        if entry is None:
            raise StateError("no checkpoint available")
        path = self.store.checkpoint_dir / entry["path"]
        weights, sidecar = ModelWeights.load(path)
        vocab = Vocabulary(tuple(sidecar["vocab"][4:])) if "vocab" in sidecar else Vocabulary()
        return weights, vocab, entry

    def features_for(self, image_id: str) -> np.ndarray:
        entry = self.store.images.get(image_id)
        if entry is None:
            raise ParameterError(f"unknown image {image_id}")
        data = self.store.blob_bytes(image_id)
        shape = (self.encoder.num_locations, self.encoder.feature_dim)
        if entry.kind == "features":
            return load_feature_map(data, expected_shape=shape)
        return self.encoder.encode_image(data)

    # --- the retrain condition ---

    def should_retrain(self) -> bool:
        cached = self.store.training_cache_size
        reviewed = self.store.reviewed_image_count()
        return cached * (1.0 + self.config.aggregation_rate) <= reviewed

    def retrain(self, trainer=None) -> dict:
        """Snapshot the reviewed pairs, fit, and append a checkpoint.

        `trainer(dataset, vocab, initial_weights, model_config) ->
        (weights, metadata)` may be injected; the default runs the real
        training loop. Raises BusyError when a run is already in flight and
        StateError when the growth condition does not hold.
        """
        if not self._training_lock.acquire(blocking=False):
            raise BusyError("a training run is already in progress")
        try:
            if not self.should_retrain():
                raise StateError("retrain condition not met")
            pairs = self.store.training_pairs()
            if not pairs:
                raise ParameterError("no reviewed annotations to train on")
            token_lists = [tokenize(text) for _, text in pairs]
            vocab = Vocabulary.build(token_lists, min_count=self.config.min_count)
            dataset = []
            for (image_id, _), tokens in zip(pairs, token_lists):
                ids = encode(tokens, vocab).ids[: self.config.max_caption_len]
                if not ids:
                    continue
                dataset.append((self.features_for(image_id), ids))
            if not dataset:
                raise ParameterError("no usable training pairs")

            initial = None
            if self.config.warm_start:
                old_weights, old_vocab, _ = self.latest_weights()
                initial = adapt_weights_to_vocab(
                    old_weights, list(old_vocab.tokens), list(vocab.tokens),
                    seed=self.config.training.seed,
                )
            model_config = self._model_config(vocab.size)
            if trainer is None:
                # datasets too small for a real 0.90/0.10 split validate on
                # themselves instead of failing
                n_val = int(round(len(dataset) * self.config.training.validation_fraction))
                splittable = 0 < n_val < len(dataset)
                result = train(
                    dataset,
                    vocab,
                    self.config.training,
                    initial_weights=initial,
                    model_config=model_config,
                    validation=None if splittable else dataset,
                )
                weights = result.weights
                metadata = {
                    "epochs": len(result.history),
                    "best_epoch": result.best_epoch,
                    "bleu": list(result.history[result.best_epoch - 1].bleu)
                    if result.history else None,
                    "history": history_rows(result.history),
                }
            else:
                weights, metadata = trainer(dataset, vocab, initial, model_config)

            # commit: snapshot + checkpoint land together
            self.store.set_training_cache(pairs)
            return self.store.add_checkpoint(
                lambda path: weights.save(
                    path,
                    vocab_tokens=list(vocab.tokens),
                    extra={"encoder": self.store.state["encoder"]},
                ),
                {"dataset_size": len(pairs), "kind": "trained", **metadata},
            )
        finally:
            self._training_lock.release()

    @property
    def training_in_progress(self) -> bool:
        return self._training_lock.locked()

    # --- ingestion, review, votes ---

    def ingest_and_annotate(self, payloads: list[bytes], media: str = "image") -> list[IngestResult]:
        """Store images and machine-caption them with the latest checkpoint."""
        if not payloads:
            return []
        weights, vocab, entry = self.latest_weights()
        results = []
        for data in payloads:
            image_id, duplicate = self.store.ingest_blob(data, media=media)
            features = self.features_for(image_id)
            generated = generate(features, weights, mode="greedy")
            text = " ".join(decode(list(generated.ids), vocab))
            record = self.store.add_annotation(
                image_id, text, author=f"machine:w{entry['index']:04d}",
                reviewed=False, allow_empty=True,
            )
            results.append(
                IngestResult(
                    image_id=image_id,
                    duplicate=duplicate,
                    caption_id=record.caption_id,
                    caption_text=text,
                    degenerate=generated.degenerate,
                )
            )
        return results

    def submit_review(self, image_id: str, captions: list[str], reviewer: str):
        """Append reviewed captions from one reviewer; returns the image's
        full annotation list."""
        if image_id not in self.store.images:
            raise ParameterError(f"unknown image {image_id}")
        if not captions:
            raise ParameterError("at least one caption is required")
        for text in captions:
            self.store.add_annotation(image_id, text, author=reviewer, reviewed=True)
        return self.store.captions_for(image_id)

    def vote(self, caption_id: str, voter: str) -> int:
        return self.store.add_vote(caption_id, voter)


# --- ranking shared by the CLI and the service ---


def rank_store_images(
    store: Store, task_texts: list[str], config: ScoreConfig | None = None
) -> list[dict]:
    """Deterministic score-ordered listing of every stored image.

    Images whose display caption is missing or empty cannot be scored and
    sort after all scored images, by id.
    """
    from .similarity import rank as rank_captions

    tasks = SearchTaskSet.from_texts(task_texts)
    scorable = []
    unscorable = []
    captions = {}
    for image_id in store.image_order:
        caption = store.display_caption(image_id)
        tokens = tokenize(caption.text) if caption else []
        captions[image_id] = caption
        if tokens:
            scorable.append((image_id, tokens))
        else:
            unscorable.append(image_id)
    ranked = rank_captions(scorable, tasks, config)
    listing = []
    for image_id, sim in ranked:
        caption = captions[image_id]
        listing.append(
            {
                "id": image_id,
                "caption": caption.text,
                "caption_id": caption.caption_id,
                "reviewed": caption.reviewed,
                "score": sim.to_dict(),
            }
        )
    for image_id in sorted(unscorable):
        caption = captions[image_id]
        listing.append(
            {
                "id": image_id,
                "caption": caption.text if caption else None,
                "caption_id": caption.caption_id if caption else None,
                "reviewed": caption.reviewed if caption else False,
                "score": None,
            }
        )
    return listing


# --- export / import bundles ---


def export_dataset(store: Store, out_path: str | Path) -> Path:
    """Zip of everything needed to rebuild the dataset in a fresh instance."""
    out_path = Path(out_path)
    with zipfile.ZipFile(out_path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(
            "manifest.json",
            json.dumps({"schema_version": SCHEMA_VERSION, "kind": "dataset"}, sort_keys=True),
        )
        zf.write(store.events_path, "events.jsonl")
        zf.writestr(
            "task_sets.json", json.dumps(store.state["task_sets"], sort_keys=True)
        )
        for image_id in store.image_order:
            zf.write(store.blob_dir / image_id, f"blobs/{image_id}")
    return out_path


def export_weights(store: Store, out_path: str | Path) -> Path:
    entry = store.latest_checkpoint()
    if entry is None:
        raise StateError("no checkpoint to export")
    out_path = Path(out_path)
    weights_path = store.checkpoint_dir / entry["path"]
    with zipfile.ZipFile(out_path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(
            "manifest.json",
            json.dumps(
                {"schema_version": SCHEMA_VERSION, "kind": "weights", "entry": entry},
                sort_keys=True,
            ),
        )
        zf.write(weights_path, "weights.tnsr")
        zf.write(ModelWeights.sidecar_path(weights_path), "weights.tnsr.json")
    return out_path


def import_dataset(bundle_path: str | Path, root: str | Path) -> Store:
    """Rebuild a store from a dataset bundle into an empty directory."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise ParameterError(f"import target {root} is not empty")
    with zipfile.ZipFile(bundle_path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("kind") != "dataset":
            raise ParameterError("bundle is not a dataset export")
        store = Store(root)
        for name in zf.namelist():
            if name.startswith("blobs/"):
                (store.blob_dir / Path(name).name).write_bytes(zf.read(name))
        events = zf.read("events.jsonl").decode("utf-8")
        with store.events_path.open("a", encoding="utf-8") as fh:
            fh.write(events)
        store.state["task_sets"] = json.loads(zf.read("task_sets.json"))
        store._write_state()
    return Store(root)


def import_weights(bundle_path: str | Path, store: Store) -> dict:
    """Append the bundled checkpoint to the store's weights sequence."""
    with zipfile.ZipFile(bundle_path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("kind") != "weights":
            raise ParameterError("bundle is not a weights export")
        blob = zf.read("weights.tnsr")
        sidecar = zf.read("weights.tnsr.json")

    def save(path: Path):
        Path(path).write_bytes(blob)
        ModelWeights.sidecar_path(path).write_bytes(sidecar)

    imported_meta = {
        k: v for k, v in manifest["entry"].items()
        if k not in ("index", "path", "created_at")
    }
    return store.add_checkpoint(save, {**imported_meta, "imported": True})
