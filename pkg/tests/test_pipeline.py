import random
import threading

import numpy as np
import pytest

from capsift.captioner import ModelConfig, ModelWeights, TrainingConfig, generate
from capsift.errors import BusyError, ParameterError, StateError
from capsift.pipeline import (
    IngestResult,
    Pipeline,
    PipelineConfig,
    adapt_weights_to_vocab,
    export_dataset,
    export_weights,
    import_dataset,
    import_weights,
    rank_store_images,
)
from capsift.store import Store
from capsift.synth import make_corpus
from capsift.text import SPECIAL_TOKENS, Vocabulary


def stub_trainer(dataset, vocab, initial, model_config):
    weights = initial if initial is not None else ModelWeights.initialize(model_config, seed=0)
    if weights.config.vocab_size != model_config.vocab_size:
        weights = ModelWeights.initialize(model_config, seed=0)
    return weights, {"stub": True}


def tiny_png(k: int) -> bytes:
    import io

    from PIL import Image

    img = Image.new("RGB", (8, 8), color=(k % 256, (k // 256) % 256, 64))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def quick_config(**overrides):
    defaults = dict(
        embed_dim=8, hidden_dim=12, feature_dim=8, grid_size=2, input_size=16,
        training=TrainingConfig(max_epochs=2, patience=0, batch_size=4, seed=0),
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


@pytest.fixture
def pipe(tmp_path):
    return Pipeline(Store(tmp_path / "data"), quick_config())


def add_reviewed(pipe, n, start=0):
    ids = []
    for k in range(start, start + n):
        image_id, _ = pipe.store.ingest_blob(tiny_png(k))
        pipe.store.add_annotation(image_id, f"rock sample {k}", "alice", reviewed=True)
        ids.append(image_id)
    return ids


class TestBootstrap:
    def test_w0_exists_on_init(self, pipe):
        assert len(pipe.store.checkpoints) == 1
        weights, vocab, entry = pipe.latest_weights()
        assert entry["kind"] == "random-init"
        assert vocab.tokens == SPECIAL_TOKENS

    def test_encoder_config_persisted(self, tmp_path):
        pipe = Pipeline(Store(tmp_path / "d"), quick_config(encoder_seed=9))
        again = Pipeline(Store(tmp_path / "d"), quick_config(encoder_seed=1234))
        # the persisted encoder wins over the fresh config
        assert again.encoder.seed == 9


class TestShouldRetrain:
    def test_boundary_cases(self, pipe):
        # |cache| = 0 fires for any |D| including 0
        assert pipe.should_retrain()

    def test_exact_threshold(self, pipe):
        add_reviewed(pipe, 150)
        pipe.store.set_training_cache([("x", "y")] * 100)
        assert pipe.should_retrain()  # 100 * 1.5 = 150 <= 150

    def test_just_below_threshold(self, pipe):
        add_reviewed(pipe, 149)
        pipe.store.set_training_cache([("x", "y")] * 100)
        assert not pipe.should_retrain()  # 150 > 149


class TestRetrain:
    def test_increments_sequence_and_caches(self, pipe):
        add_reviewed(pipe, 3)
        before = len(pipe.store.checkpoints)
        entry = pipe.retrain(trainer=stub_trainer)
        assert len(pipe.store.checkpoints) == before + 1
        assert entry["dataset_size"] == 3
        assert pipe.store.training_cache_size == 3

    def test_rejects_when_condition_false(self, pipe):
        add_reviewed(pipe, 4)
        pipe.retrain(trainer=stub_trainer)
        add_reviewed(pipe, 1, start=100)  # 4 * 1.5 = 6 > 5
        with pytest.raises(StateError):
            pipe.retrain(trainer=stub_trainer)

    def test_rejects_empty_dataset(self, pipe):
        with pytest.raises(ParameterError):
            pipe.retrain(trainer=stub_trainer)

    def test_busy_error_when_training(self, pipe):
        add_reviewed(pipe, 2)
        release = threading.Event()
        started = threading.Event()

        def slow_trainer(dataset, vocab, initial, model_config):
            started.set()
            release.wait(timeout=10)
            return stub_trainer(dataset, vocab, initial, model_config)

        worker = threading.Thread(target=lambda: pipe.retrain(trainer=slow_trainer))
        worker.start()
        started.wait(timeout=10)
        assert pipe.training_in_progress
        with pytest.raises(BusyError):
            pipe.retrain(trainer=stub_trainer)
        release.set()
        worker.join(timeout=10)
        assert len(pipe.store.checkpoints) == 2

    def test_snapshot_is_immutable_during_run(self, pipe):
        add_reviewed(pipe, 2)
        observed = {}

        def observing_trainer(dataset, vocab, initial, model_config):
            # reviews arriving mid-run must not alter this run's data
            add_reviewed(pipe, 5, start=50)
            observed["size"] = len(dataset)
            return stub_trainer(dataset, vocab, initial, model_config)

        entry = pipe.retrain(trainer=observing_trainer)
        assert observed["size"] == 2
        assert entry["dataset_size"] == 2
        assert pipe.store.reviewed_image_count() == 7

    def test_two_cycle_growth_walkthrough(self, pipe):
        # first fit at 40 reviewed images, second once 40 * 1.5 = 60 arrive
        add_reviewed(pipe, 40)
        assert pipe.should_retrain()
        pipe.retrain(trainer=stub_trainer)
        assert not pipe.should_retrain()
        add_reviewed(pipe, 19, start=1000)  # 59 < 60
        assert not pipe.should_retrain()
        add_reviewed(pipe, 1, start=2000)   # exactly 60
        assert pipe.should_retrain()
        entry = pipe.retrain(trainer=stub_trainer)
        assert entry["dataset_size"] == 60

    def test_trigger_exactness_randomized(self, tmp_path):
        rate = 0.5
        for seed in range(10):
            rng = random.Random(seed)
            pipe = Pipeline(Store(tmp_path / f"d{seed}"), quick_config())
            reviewed = 0
            cached = 0
            for event in range(rng.randint(10, 60)):
                if rng.random() < 0.7:
                    add_reviewed(pipe, 1, start=event + 10_000 * seed)
                    reviewed += 1
                expected = cached * (1 + rate) <= reviewed
                assert pipe.should_retrain() == expected, (seed, event)
                if expected and reviewed:
                    pipe.retrain(trainer=stub_trainer)
                    cached = reviewed

    def test_real_training_round(self, tmp_path):
        pipe = Pipeline(Store(tmp_path / "d"), quick_config())
        samples = make_corpus(4, seed=3, image_size=16)
        for s in samples:
            image_id, _ = pipe.store.ingest_blob(s.png_bytes())
            pipe.store.add_annotation(image_id, s.caption, "alice", reviewed=True)
        entry = pipe.retrain()
        assert entry["kind"] == "trained"
        weights, vocab, _ = pipe.latest_weights()
        assert vocab.size > 4
        features = pipe.features_for(pipe.store.image_order[0])
        out = generate(features, weights, mode="greedy")
        assert out.alphas.shape[1] == weights.config.num_locations


class TestWarmStart:
    def test_vocab_adaptation_preserves_shared_rows(self):
        old_vocab = Vocabulary(("rock", "sand"))
        cfg = ModelConfig(vocab_size=old_vocab.size, embed_dim=4, hidden_dim=6,
                          feature_dim=4, num_locations=4)
        old = ModelWeights.initialize(cfg, seed=1)
        new_vocab = Vocabulary(("dust", "rock"))
        adapted = adapt_weights_to_vocab(old, list(old_vocab.tokens), list(new_vocab.tokens))
        old_rock = list(old_vocab.tokens).index("rock")
        new_rock = list(new_vocab.tokens).index("rock")
        assert np.array_equal(adapted.tensors["embedding"][:, new_rock],
                              old.tensors["embedding"][:, old_rock])
        assert np.array_equal(adapted.tensors["out_w"][new_rock, :],
                              old.tensors["out_w"][old_rock, :])
        assert np.array_equal(adapted.tensors["lstm_Wi"], old.tensors["lstm_Wi"])

    def test_warm_start_feeds_previous_checkpoint(self, pipe):
        add_reviewed(pipe, 2)
        seen = {}

        def trainer(dataset, vocab, initial, model_config):
            seen["initial"] = initial
            return stub_trainer(dataset, vocab, initial, model_config)

        pipe.retrain(trainer=trainer)
        assert seen["initial"] is not None

    def test_cold_start_flag(self, tmp_path):
        pipe = Pipeline(Store(tmp_path / "d"), quick_config(warm_start=False))
        add_reviewed(pipe, 2)
        seen = {}

        def trainer(dataset, vocab, initial, model_config):
            seen["initial"] = initial
            return stub_trainer(dataset, vocab, initial, model_config)

        pipe.retrain(trainer=trainer)
        assert seen["initial"] is None


class TestIngestAndAnnotate:
    def test_batch_creates_k_annotations(self, pipe):
        payloads = [tiny_png(k) for k in range(5)]
        results = pipe.ingest_and_annotate(payloads)
        assert len(results) == 5
        for res in results:
            assert isinstance(res, IngestResult)
            assert res.caption_id in pipe.store.captions
            assert not pipe.store.captions[res.caption_id].reviewed

    def test_duplicate_flagged_but_still_annotated(self, pipe):
        first = pipe.ingest_and_annotate([tiny_png(1)])[0]
        second = pipe.ingest_and_annotate([tiny_png(1)])[0]
        assert not first.duplicate and second.duplicate
        assert first.image_id == second.image_id
        assert len(pipe.store.captions_for(first.image_id)) == 2

    def test_empty_batch_is_noop(self, pipe):
        assert pipe.ingest_and_annotate([]) == []

    def test_bootstrap_model_produces_degenerate_captions(self, pipe):
        res = pipe.ingest_and_annotate([tiny_png(2)])[0]
        assert res.degenerate
        assert res.caption_text == ""


class TestReviewsAndVotes:
    def test_review_flow(self, pipe):
        res = pipe.ingest_and_annotate([tiny_png(3)])[0]
        records = pipe.submit_review(res.image_id, ["a layered rock"], "alice")
        assert any(r.reviewed for r in records)
        assert pipe.store.reviewed_image_count() == 1

    def test_vote_changes_training_target(self, pipe):
        res = pipe.ingest_and_annotate([tiny_png(3)])[0]
        pipe.submit_review(res.image_id, ["caption one"], "alice")
        pipe.submit_review(res.image_id, ["caption two"], "bob")
        recs = [r for r in pipe.store.captions_for(res.image_id) if r.reviewed]
        pipe.vote(recs[1].caption_id, "u1")
        pipe.vote(recs[1].caption_id, "u2")
        assert pipe.store.training_target(res.image_id).caption_id == recs[1].caption_id

    def test_unknown_image_rejected(self, pipe):
        with pytest.raises(ParameterError):
            pipe.submit_review("missing", ["text"], "alice")


class TestRankStoreImages:
    def test_order_and_unscorable_tail(self, pipe):
        a, _ = pipe.store.ingest_blob(tiny_png(10))
        b, _ = pipe.store.ingest_blob(tiny_png(11))
        c, _ = pipe.store.ingest_blob(tiny_png(12))
        pipe.store.add_annotation(a, "layered bedrock near dust", "alice", reviewed=True)
        pipe.store.add_annotation(b, "unrelated words entirely here", "alice", reviewed=True)
        listing = rank_store_images(pipe.store, ["layered bedrock near dust"])
        assert [row["id"] for row in listing[:2]] == [a, b]
        assert listing[0]["score"]["value"] == 1.0
        assert listing[2]["id"] == c
        assert listing[2]["score"] is None


class TestExportImport:
    def test_dataset_round_trip(self, tmp_path, pipe):
        samples = make_corpus(3, seed=1, image_size=16)
        for s in samples:
            image_id, _ = pipe.store.ingest_blob(s.png_bytes())
            pipe.store.add_annotation(image_id, s.caption, "alice", reviewed=True)
        pipe.store.create_task_set(["a large red circle in the top left"])
        bundle = export_dataset(pipe.store, tmp_path / "dataset.zip")

        fresh = import_dataset(bundle, tmp_path / "fresh")
        assert fresh.image_order == pipe.store.image_order
        assert fresh.get_task_set("ts0000") == pipe.store.get_task_set("ts0000")
        tasks = fresh.get_task_set("ts0000")
        assert rank_store_images(fresh, tasks) == rank_store_images(pipe.store, tasks)

    def test_import_refuses_nonempty_target(self, tmp_path, pipe):
        add_reviewed(pipe, 1)
        bundle = export_dataset(pipe.store, tmp_path / "d.zip")
        target = tmp_path / "occupied"
        target.mkdir()
        (target / "junk").write_text("x")
        with pytest.raises(ParameterError):
            import_dataset(bundle, target)

    def test_weights_round_trip(self, tmp_path, pipe):
        add_reviewed(pipe, 2)
        pipe.retrain(trainer=stub_trainer)
        bundle = export_weights(pipe.store, tmp_path / "w.zip")

        other = Pipeline(Store(tmp_path / "other"), quick_config())
        entry = import_weights(bundle, other.store)
        assert entry["imported"]
        theirs, their_vocab, _ = other.latest_weights()
        ours, our_vocab, _ = pipe.latest_weights()
        assert theirs.allclose(ours)
        assert their_vocab == our_vocab
