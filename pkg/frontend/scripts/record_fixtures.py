"""Record API fixtures for the frontend contract tests.

Spins up the service in-process, performs the canonical reviewer flows, and
freezes the JSON responses under frontend/fixtures/. Also records the CLI
rank ordering for the same store so the UI's gallery-order tests are tied to
the ranker, not to a hand-written expectation.

Run from the repository root:  python frontend/scripts/record_fixtures.py
"""

import io
import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from capsift.captioner import TrainingConfig
from capsift.cli import main as cli_main
from capsift.pipeline import PipelineConfig
from capsift.service import ServiceConfig, create_app
from capsift.synth import make_corpus

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
ADMIN = {"Authorization": "Bearer admin-token"}
REVIEWER = {"Authorization": "Bearer reviewer-token"}

CAPTIONS = [
    "a large red circle in the top left",
    "a small blue square in the bottom right",
    "a large gray stripe in the top right",
    "a small green triangle in the bottom left",
]


def record(name: str, payload) -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / f"{name}.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"recorded {name}.json")


def main() -> int:
    tmp = tempfile.mkdtemp(prefix="capsift-fixtures-")
    data_dir = Path(tmp) / "data"
    config = ServiceConfig(
        data_dir=data_dir,
        synchronous_jobs=True,
        pipeline=PipelineConfig(
            embed_dim=8, hidden_dim=12, feature_dim=8, grid_size=2, input_size=16,
            training=TrainingConfig(max_epochs=2, patience=0, seed=0),
        ),
    )
    client = TestClient(create_app(config))

    samples = make_corpus(4, seed=11, image_size=16)
    image_ids = []
    for sample in samples:
        response = client.post(
            "/images", headers=REVIEWER,
            files={"file": ("img.png", sample.png_bytes(), "image/png")},
        )
        assert response.status_code == 201, response.text
        image_ids.append(response.json()["id"])

    for image_id, caption in zip(image_ids, CAPTIONS):
        response = client.post(
            f"/images/{image_id}/reviews", headers=REVIEWER, json={"caption": caption}
        )
        assert response.status_code == 201, response.text

    review = client.post(
        f"/images/{image_ids[0]}/reviews", headers=ADMIN,
        json={"caption": "a big red circle near the top left corner"},
    )
    record("review_response", review.json())
    reviewed_caption_id = review.json()["captions"][-1]["caption_id"]

    vote = client.post(f"/captions/{reviewed_caption_id}/votes", headers=ADMIN)
    record("vote_response", vote.json())
    double = client.post(f"/captions/{reviewed_caption_id}/votes", headers=ADMIN)
    record("vote_conflict", {"status": double.status_code, "body": double.json()})

    tasks = client.post(
        "/tasks", headers=REVIEWER,
        json={"texts": ["a large red circle in the top left"]},
    )
    task_set_id = tasks.json()["id"]
    record("task_created", tasks.json())
    record("task_list", client.get("/tasks", headers=REVIEWER).json())

    record("gallery_by_date", client.get("/images", headers=REVIEWER).json())
    gallery = client.get(
        "/images", headers=REVIEWER, params={"order": "score", "task_set": task_set_id}
    ).json()
    record("gallery_by_score", gallery)
    record("image_detail", client.get(f"/images/{image_ids[0]}", headers=REVIEWER).json())
    record(
        "image_missing",
        {
            "status": client.get("/images/0000deadbeef", headers=REVIEWER).status_code,
        },
    )
    record("status_admin", client.get("/status", headers=ADMIN).json())
    record("status_reviewer", client.get("/status", headers=REVIEWER).json())

    retrain = client.post("/admin/retrain", headers=ADMIN)
    assert retrain.status_code == 202, retrain.text
    record("retrain_accepted", retrain.json())
    record(
        "job_completed",
        client.get(f"/admin/jobs/{retrain.json()['job_id']}", headers=ADMIN).json(),
    )
    record(
        "retrain_forbidden",
        {"status": client.post("/admin/retrain", headers=REVIEWER).status_code},
    )

    # tie the recorded gallery ordering to the CLI ranker on the same store
    tasks_file = Path(tmp) / "tasks.txt"
    tasks_file.write_text("a large red circle in the top left\n", encoding="utf-8")
    import contextlib

    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        assert cli_main(["rank", "--data-dir", str(data_dir), "--tasks",
                         str(tasks_file), "--json"]) == 0
    cli_rank = json.loads(buffer.getvalue())
    gallery_order = [row["id"] for row in gallery["images"]]
    cli_order = [row["id"] for row in cli_rank["images"]]
    assert gallery_order == cli_order, (gallery_order, cli_order)
    record("rank_cross_check", {"gallery_order": gallery_order, "cli_rank_order": cli_order})
    print(f"fixtures recorded from store at {data_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
