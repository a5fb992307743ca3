import io
import json
import time
import zipfile

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from capsift.captioner import TrainingConfig
from capsift.pipeline import PipelineConfig, rank_store_images
from capsift.service import ServiceConfig, create_app

ADMIN = {"Authorization": "Bearer admin-token"}
REVIEWER = {"Authorization": "Bearer reviewer-token"}


def tiny_png(k: int) -> bytes:
    img = Image.new("RGB", (8, 8), color=(k % 256, (k // 256) % 256, 80))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def quick_pipeline_config():
    return PipelineConfig(
        embed_dim=8, hidden_dim=12, feature_dim=8, grid_size=2, input_size=16,
        training=TrainingConfig(max_epochs=2, patience=0, batch_size=4, seed=0),
    )


@pytest.fixture
def client(tmp_path):
    config = ServiceConfig(
        data_dir=tmp_path / "data",
        synchronous_jobs=True,
        pipeline=quick_pipeline_config(),
    )
    app = create_app(config)
    with TestClient(app, raise_server_exceptions=False) as test_client:
        test_client.app = app
        yield test_client


def upload(client, k=0):
    return client.post(
        "/images", headers=REVIEWER, files={"file": ("x.png", tiny_png(k), "image/png")}
    )


class TestAuth:
    def test_missing_token(self, client):
        assert client.get("/tasks").status_code == 401

    def test_unknown_token(self, client):
        r = client.get("/tasks", headers={"Authorization": "Bearer nope"})
        assert r.status_code == 401

    def test_known_token(self, client):
        assert client.get("/tasks", headers=REVIEWER).status_code == 200


class TestImages:
    def test_upload_png(self, client):
        r = upload(client)
        assert r.status_code == 201
        body = r.json()
        assert body["schema_version"] == 1
        assert len(body["id"]) == 64

    def test_duplicate_upload_conflicts_with_original_id(self, client):
        first = upload(client, k=1).json()["id"]
        r = upload(client, k=1)
        assert r.status_code == 409
        assert r.json()["id"] == first

    def test_undecodable_image_rejected(self, client):
        r = client.post(
            "/images", headers=REVIEWER, files={"file": ("x.png", b"not an image", "image/png")}
        )
        assert r.status_code == 400

    def test_feature_upload_with_wrong_shape_rejected(self, client):
        import numpy as np

        from capsift.tensorio import dump_tensors

        data = dump_tensors({"features": np.zeros((3, 3))})
        r = client.post(
            "/images", headers=REVIEWER,
            files={"features": ("f.tnsr", data, "application/octet-stream")},
        )
        assert r.status_code == 400

    def test_feature_upload_with_right_shape(self, client):
        import numpy as np

        from capsift.tensorio import dump_tensors

        data = dump_tensors({"features": np.random.default_rng(0).normal(size=(4, 8))})
        r = client.post(
            "/images", headers=REVIEWER,
            files={"features": ("f.tnsr", data, "application/octet-stream")},
        )
        assert r.status_code == 201

    def test_listing_empty_store(self, client):
        r = client.get("/images", headers=REVIEWER)
        assert r.status_code == 200
        assert r.json()["images"] == []

    def test_score_order_requires_known_task_set(self, client):
        r = client.get("/images", headers=REVIEWER,
                       params={"order": "score", "task_set": "ts9999"})
        assert r.status_code == 404

    def test_score_order_matches_rank(self, client):
        a = upload(client, k=1).json()["id"]
        b = upload(client, k=2).json()["id"]
        client.post(f"/images/{a}/reviews", headers=REVIEWER,
                    json={"caption": "layered bedrock near dust"})
        client.post(f"/images/{b}/reviews", headers=REVIEWER,
                    json={"caption": "unrelated words entirely here"})
        ts = client.post("/tasks", headers=REVIEWER,
                         json={"texts": ["layered bedrock near dust"]}).json()["id"]
        listing = client.get(
            "/images", headers=REVIEWER, params={"order": "score", "task_set": ts}
        ).json()["images"]
        store = client.app.state.store
        expected = rank_store_images(store, store.get_task_set(ts))
        assert [row["id"] for row in listing] == [row["id"] for row in expected]

    def test_pagination_is_deterministic(self, client):
        ids = sorted(upload(client, k=k).json()["id"] for k in range(5))
        page1 = client.get("/images", headers=REVIEWER,
                           params={"page": 1, "page_size": 2}).json()
        page2 = client.get("/images", headers=REVIEWER,
                           params={"page": 2, "page_size": 2}).json()
        assert page1["total"] == 5
        assert len(page1["images"]) == 2 and len(page2["images"]) == 2
        assert page1["images"] != page2["images"]

    def test_detail_and_blob(self, client):
        image_id = upload(client, k=3).json()["id"]
        detail = client.get(f"/images/{image_id}", headers=REVIEWER)
        assert detail.status_code == 200
        assert len(detail.json()["captions"]) == 1  # machine annotation
        blob = client.get(f"/images/{image_id}/blob", headers=REVIEWER)
        assert blob.status_code == 200
        assert blob.content == tiny_png(3)


class TestTasks:
    def test_round_trip(self, client):
        created = client.post("/tasks", headers=REVIEWER,
                              json={"texts": ["layered bedrock", "dark dunes"]})
        assert created.status_code == 201
        listing = client.get("/tasks", headers=REVIEWER).json()["task_sets"]
        assert listing[0]["texts"] == ["layered bedrock", "dark dunes"]

    def test_unicode_survives_byte_exact(self, client):
        text = "cañón émission 岩石"
        client.post("/tasks", headers=REVIEWER, json={"texts": [text]})
        got = client.get("/tasks", headers=REVIEWER).json()["task_sets"][0]["texts"][0]
        assert got == text

    def test_empty_list_rejected(self, client):
        assert client.post("/tasks", headers=REVIEWER, json={"texts": []}).status_code == 400

    def test_blank_text_rejected(self, client):
        r = client.post("/tasks", headers=REVIEWER, json={"texts": ["..."]})
        assert r.status_code == 400


class TestReviewsAndVotes:
    def test_review_marks_reviewed(self, client):
        image_id = upload(client).json()["id"]
        r = client.post(f"/images/{image_id}/reviews", headers=REVIEWER,
                        json={"caption": "a layered rock"})
        assert r.status_code == 201
        captions = r.json()["captions"]
        assert any(c["reviewed"] for c in captions)

    def test_review_unknown_image_404(self, client):
        r = client.post("/images/feedbeef/reviews", headers=REVIEWER,
                        json={"caption": "x y"})
        assert r.status_code == 404

    def test_empty_caption_400(self, client):
        image_id = upload(client).json()["id"]
        r = client.post(f"/images/{image_id}/reviews", headers=REVIEWER,
                        json={"caption": "?!"})
        assert r.status_code == 400

    def test_vote_once_then_409(self, client):
        image_id = upload(client).json()["id"]
        caption_id = client.post(
            f"/images/{image_id}/reviews", headers=REVIEWER,
            json={"caption": "a layered rock"},
        ).json()["captions"][-1]["caption_id"]
        first = client.post(f"/captions/{caption_id}/votes", headers=REVIEWER)
        assert first.status_code == 201
        assert first.json()["votes"] == 1
        second = client.post(f"/captions/{caption_id}/votes", headers=REVIEWER)
        assert second.status_code == 409

    def test_vote_unknown_caption_404(self, client):
        assert client.post("/captions/c9/votes", headers=REVIEWER).status_code == 404

    def test_votes_switch_training_target(self, client):
        image_id = upload(client).json()["id"]
        first = client.post(f"/images/{image_id}/reviews", headers=REVIEWER,
                            json={"caption": "caption one here"}).json()["captions"][-1]
        second = client.post(f"/images/{image_id}/reviews", headers=ADMIN,
                             json={"caption": "caption two there"}).json()["captions"][-1]
        client.post(f"/captions/{second['caption_id']}/votes", headers=REVIEWER)
        client.post(f"/captions/{second['caption_id']}/votes", headers=ADMIN)
        store = client.app.state.store
        assert store.training_target(image_id).caption_id == second["caption_id"]


class TestExportsAndAdmin:
    def seed_reviewed(self, client, n=2):
        ids = []
        for k in range(n):
            image_id = upload(client, k=k + 10).json()["id"]
            client.post(f"/images/{image_id}/reviews", headers=REVIEWER,
                        json={"caption": f"rock sample number {k}"})
            ids.append(image_id)
        return ids

    def test_export_dataset_is_zip(self, client):
        self.seed_reviewed(client)
        r = client.get("/export/dataset", headers=REVIEWER)
        assert r.status_code == 200
        archive = zipfile.ZipFile(io.BytesIO(r.content))
        names = archive.namelist()
        assert "events.jsonl" in names and "manifest.json" in names

    def test_export_weights_is_zip(self, client):
        r = client.get("/export/weights", headers=REVIEWER)
        assert r.status_code == 200
        archive = zipfile.ZipFile(io.BytesIO(r.content))
        assert "weights.tnsr" in archive.namelist()

    def test_retrain_requires_admin(self, client):
        assert client.post("/admin/retrain", headers=REVIEWER).status_code == 403

    def test_retrain_409_when_condition_false(self, client):
        self.seed_reviewed(client, n=2)
        first = client.post("/admin/retrain", headers=ADMIN)
        assert first.status_code == 202
        job = client.get(f"/admin/jobs/{first.json()['job_id']}", headers=ADMIN).json()
        assert job["status"] == "completed"
        # cache=2, reviewed=2: 2*1.5=3 > 2
        second = client.post("/admin/retrain", headers=ADMIN)
        assert second.status_code == 409

    def test_job_status_unknown_404(self, client):
        assert client.get("/admin/jobs/job-9999", headers=ADMIN).status_code == 404

    def test_job_status_requires_admin(self, client):
        assert client.get("/admin/jobs/job-0001", headers=REVIEWER).status_code == 403


class TestAtomicity:
    def test_failed_vote_leaves_state(self, client):
        image_id = upload(client).json()["id"]
        store = client.app.state.store
        events_before = store.events_path.read_bytes()
        assert client.post("/captions/c404/votes", headers=REVIEWER).status_code == 404
        assert store.events_path.read_bytes() == events_before

    def test_failed_review_leaves_state(self, client):
        image_id = upload(client).json()["id"]
        store = client.app.state.store
        events_before = store.events_path.read_bytes()
        client.post(f"/images/{image_id}/reviews", headers=REVIEWER, json={"caption": ""})
        client.post("/images/unknown/reviews", headers=REVIEWER, json={"caption": "x y"})
        assert store.events_path.read_bytes() == events_before

    def test_failed_upload_leaves_state(self, client):
        store = client.app.state.store
        events_before = store.events_path.read_bytes()
        client.post("/images", headers=REVIEWER,
                    files={"file": ("x.png", b"garbage", "image/png")})
        assert store.events_path.read_bytes() == events_before

    def test_injected_store_fault_rolls_back(self, client, monkeypatch):
        image_id = upload(client).json()["id"]
        store = client.app.state.store
        events_before = store.events_path.read_bytes()

        def boom(records):
            raise RuntimeError("disk failure")

        monkeypatch.setattr(store, "_append_events", boom)
        response = client.post(
            f"/images/{image_id}/reviews", headers=REVIEWER,
            json={"caption": "valid caption text"},
        )
        assert response.status_code == 500
        monkeypatch.undo()
        assert store.events_path.read_bytes() == events_before
        # the store remains fully usable afterwards
        ok = client.post(f"/images/{image_id}/reviews", headers=REVIEWER,
                         json={"caption": "valid caption text"})
        assert ok.status_code == 201


class TestServiceConfig:
    def test_file_plus_env_overrides(self, tmp_path):
        config_file = tmp_path / "config.json"
        config_file.write_text(json.dumps({
            "data_dir": str(tmp_path / "from-file"),
            "port": 9000,
            "pipeline": {"grid_size": 2, "feature_dim": 8, "input_size": 16},
        }), encoding="utf-8")
        cfg = ServiceConfig.load(config_file, env={})
        assert cfg.port == 9000
        assert cfg.data_dir == tmp_path / "from-file"
        assert cfg.pipeline.grid_size == 2

        overridden = ServiceConfig.load(config_file, env={
            "CAPSIFT_PORT": "7777",
            "CAPSIFT_DATA_DIR": str(tmp_path / "from-env"),
        })
        assert overridden.port == 7777
        assert overridden.data_dir == tmp_path / "from-env"

    def test_data_dir_required(self):
        import pytest as _pytest

        from capsift.errors import ParameterError

        with _pytest.raises(ParameterError):
            ServiceConfig.load(None, env={})


class TestGoldenShapes:
    """Response shells are pinned; additions require updating the goldens."""

    def test_status_shape(self, client):
        body = client.get("/status", headers=ADMIN).json()
        assert sorted(body) == [
            "checkpoints", "images", "reviewed", "role", "schema_version",
            "should_retrain", "training_in_progress", "user",
        ]

    def test_upload_shape(self, client):
        body = upload(client, k=42).json()
        assert sorted(body) == ["caption", "caption_id", "degenerate", "id", "schema_version"]

    def test_listing_shape(self, client):
        upload(client, k=43)
        body = client.get("/images", headers=REVIEWER).json()
        assert sorted(body) == [
            "images", "order", "page", "page_size", "schema_version", "task_set", "total",
        ]
        assert sorted(body["images"][0]) == ["caption", "caption_id", "id", "reviewed", "score"]

    def test_every_response_carries_schema_version(self, client):
        image_id = upload(client, k=44).json()["id"]
        responses = [
            client.get("/status", headers=ADMIN),
            client.get("/images", headers=REVIEWER),
            client.get(f"/images/{image_id}", headers=REVIEWER),
            client.get("/tasks", headers=REVIEWER),
        ]
        for r in responses:
            assert r.json()["schema_version"] == 1
