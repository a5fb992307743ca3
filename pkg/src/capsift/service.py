"""HTTP/JSON API over the pipeline, scorer, ranker and exports.

Every response body carries a top-level "schema_version". Authentication is
a static bearer-token table mapping token -> (user, role); the admin role
gates retraining. Mutations validate before touching the store, so a failed
request leaves state unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request, Response, UploadFile
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .errors import BusyError, CapsiftError, DataFormatError, ParameterError, StateError
from .pipeline import Pipeline, PipelineConfig, export_dataset, export_weights, rank_store_images
from .store import SCHEMA_VERSION, Store
from .text import tokenize

logger = logging.getLogger("capsift.service")

DEFAULT_TOKENS = {
    "admin-token": {"user": "admin", "role": "admin"},
    "reviewer-token": {"user": "reviewer", "role": "reviewer"},
}


@dataclass(frozen=True)
class ApiSession:
    user: str
    role: str

    @property
    def is_admin(self) -> bool:
        return self.role == "admin"


@dataclass
class ServiceConfig:
    data_dir: Path
    tokens_path: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    frontend_dir: Path | None = None
    synchronous_jobs: bool = False
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def load(cls, config_file: str | Path | None = None, env=None) -> "ServiceConfig":
        """Read the JSON config file, then apply CAPSIFT_* env overrides."""
        env = os.environ if env is None else env
        payload: dict = {}
        if config_file is not None:
            payload = json.loads(Path(config_file).read_text(encoding="utf-8"))
        data_dir = env.get("CAPSIFT_DATA_DIR", payload.get("data_dir"))
        if data_dir is None:
            raise ParameterError("data_dir must be set via config file or CAPSIFT_DATA_DIR")
        tokens = env.get("CAPSIFT_TOKENS", payload.get("tokens_path"))
        frontend = env.get("CAPSIFT_FRONTEND", payload.get("frontend_dir"))
        return cls(
            data_dir=Path(data_dir),
            tokens_path=Path(tokens) if tokens else None,
            host=env.get("CAPSIFT_HOST", payload.get("host", "127.0.0.1")),
            port=int(env.get("CAPSIFT_PORT", payload.get("port", 8080))),
            frontend_dir=Path(frontend) if frontend else None,
            pipeline=PipelineConfig(**payload.get("pipeline", {})),
        )

    def token_table(self) -> dict[str, dict]:
        if self.tokens_path is None:
            logger.warning("no token table configured; using built-in development tokens")
            return dict(DEFAULT_TOKENS)
        return json.loads(Path(self.tokens_path).read_text(encoding="utf-8"))


class JobRegistry:
    """Background training jobs, at most one running at a time."""

    def __init__(self):
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def create(self) -> str:
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:04d}"
            self._jobs[job_id] = {"job_id": job_id, "status": "running"}
            return job_id

    def finish(self, job_id: str, checkpoint: dict):
        with self._lock:
            self._jobs[job_id].update(status="completed", checkpoint=checkpoint)

    def fail(self, job_id: str, error: str):
        with self._lock:
            self._jobs[job_id].update(status="failed", error=error)

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None


def payload(**fields) -> dict:
    return {"schema_version": SCHEMA_VERSION, **fields}


def create_app(config: ServiceConfig) -> FastAPI:
    store = Store(config.data_dir)
    pipeline = Pipeline(store, config.pipeline)
    tokens = config.token_table()
    jobs = JobRegistry()
    app = FastAPI(title="capsift", version=__version__)

    def session(request: Request) -> ApiSession:
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        entry = tokens.get(header.removeprefix("Bearer "))
        if entry is None:
            raise HTTPException(401, "unknown token")
        return ApiSession(user=entry["user"], role=entry.get("role", "reviewer"))

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.monotonic()
        response = await call_next(request)
        logger.info(
            "request method=%s path=%s status=%s duration_ms=%.1f",
            request.method, request.url.path, response.status_code,
            (time.monotonic() - started) * 1000.0,
        )
        return response

    @app.exception_handler(CapsiftError)
    async def domain_error(request: Request, exc: CapsiftError):
        status = 400
        if isinstance(exc, BusyError):
            status = 409
        elif isinstance(exc, StateError):
            status = 409
        elif isinstance(exc, DataFormatError):
            status = 400
        return JSONResponse(status_code=status, content=payload(error=str(exc)))

    # --- images ---

    @app.post("/images", status_code=201)
    async def upload_image(
        request: Request,
        file: UploadFile | None = None,
        features: UploadFile | None = None,
        who: ApiSession = Depends(session),
    ):
        if (file is None) == (features is None):
            raise HTTPException(400, "upload exactly one of 'file' or 'features'")
        upload = file if file is not None else features
        data = await upload.read()
        media = "image" if file is not None else "features"
        if not data:
            raise HTTPException(400, "empty upload")
        # validate before any mutation
        if media == "image":
            pipeline.encoder.preprocess(data)
        else:
            from .captioner import load_feature_map

            load_feature_map(
                data,
                expected_shape=(pipeline.encoder.num_locations, pipeline.encoder.feature_dim),
            )
        image_id = hashlib.sha256(data).hexdigest()
        if image_id in store.images:
            return JSONResponse(
                status_code=409,
                content=payload(id=image_id, error="duplicate content hash"),
            )
        result = pipeline.ingest_and_annotate([data], media=media)[0]
        return payload(
            id=result.image_id,
            caption=result.caption_text,
            caption_id=result.caption_id,
            degenerate=result.degenerate,
        )

    @app.get("/images")
    def list_images(
        task_set: str | None = None,
        order: str = "date",
        page: int = 1,
        page_size: int = 24,
        who: ApiSession = Depends(session),
    ):
        if page < 1 or page_size < 1:
            raise HTTPException(400, "page and page_size must be >= 1")
        if order == "score":
            if task_set is None:
                raise HTTPException(400, "order=score requires task_set")
            try:
                texts = store.get_task_set(task_set)
            except ParameterError as exc:
                raise HTTPException(404, str(exc))
            listing = rank_store_images(store, texts)
        elif order == "date":
            listing = []
            for image_id in store.image_order:
                caption = store.display_caption(image_id)
                listing.append(
                    {
                        "id": image_id,
                        "caption": caption.text if caption else None,
                        "caption_id": caption.caption_id if caption else None,
                        "reviewed": caption.reviewed if caption else False,
                        "score": None,
                    }
                )
        else:
            raise HTTPException(400, f"unknown order {order!r}")
        start = (page - 1) * page_size
        return payload(
            images=listing[start : start + page_size],
            page=page,
            page_size=page_size,
            total=len(listing),
            order=order,
            task_set=task_set,
        )

    @app.get("/images/{image_id}")
    def image_detail(image_id: str, who: ApiSession = Depends(session)):
        if image_id not in store.images:
            raise HTTPException(404, f"unknown image {image_id}")
        return payload(
            id=image_id,
            media=store.images[image_id].kind,
            captions=[c.to_dict() for c in store.captions_for(image_id)],
        )

    @app.get("/images/{image_id}/blob")
    def image_blob(image_id: str, who: ApiSession = Depends(session)):
        if image_id not in store.images:
            raise HTTPException(404, f"unknown image {image_id}")
        media = store.images[image_id].kind
        return Response(
            content=store.blob_bytes(image_id),
            media_type="image/png" if media == "image" else "application/octet-stream",
        )

    # --- tasks ---

    @app.post("/tasks", status_code=201)
    async def create_tasks(request: Request, who: ApiSession = Depends(session)):
        body = await request.json()
        texts = body.get("texts")
        if not isinstance(texts, list) or not texts:
            raise HTTPException(400, "body needs a non-empty 'texts' list")
        for text in texts:
            if not isinstance(text, str) or not tokenize(text):
                raise HTTPException(400, f"task text {text!r} is empty after tokenization")
        task_set_id = store.create_task_set(texts)
        return payload(id=task_set_id, texts=texts)

    @app.get("/tasks")
    def list_tasks(who: ApiSession = Depends(session)):
        return payload(
            task_sets=[
                {"id": ts_id, "texts": entry["texts"], "created_at": entry["created_at"]}
                for ts_id, entry in sorted(store.list_task_sets().items())
            ]
        )

    # --- reviews and votes ---

    @app.post("/images/{image_id}/reviews", status_code=201)
    async def submit_review(image_id: str, request: Request, who: ApiSession = Depends(session)):
        if image_id not in store.images:
            raise HTTPException(404, f"unknown image {image_id}")
        body = await request.json()
        caption = body.get("caption", "")
        if not isinstance(caption, str) or not tokenize(caption):
            raise HTTPException(400, "caption is empty after tokenization")
        records = pipeline.submit_review(image_id, [caption], reviewer=who.user)
        return payload(image_id=image_id, captions=[c.to_dict() for c in records])

    @app.post("/captions/{caption_id}/votes", status_code=201)
    def vote(caption_id: str, who: ApiSession = Depends(session)):
        if caption_id not in store.captions:
            raise HTTPException(404, f"unknown caption {caption_id}")
        try:
            votes = pipeline.vote(caption_id, voter=who.user)
        except StateError as exc:
            raise HTTPException(409, str(exc))
        return payload(caption_id=caption_id, votes=votes)

    # --- exports and admin ---

    def _export(builder, stem: str):
        handle, tmp_name = tempfile.mkstemp(suffix=".zip", prefix=f"{stem}-")
        os.close(handle)
        try:
            builder(store, tmp_name)
            blob = Path(tmp_name).read_bytes()
        finally:
            os.unlink(tmp_name)
        return Response(
            content=blob,
            media_type="application/zip",
            headers={"content-disposition": f'attachment; filename="{stem}.zip"'},
        )

    @app.get("/export/dataset")
    def export_dataset_endpoint(who: ApiSession = Depends(session)):
        return _export(export_dataset, "dataset")

    @app.get("/export/weights")
    def export_weights_endpoint(who: ApiSession = Depends(session)):
        return _export(export_weights, "weights")

    @app.post("/admin/retrain", status_code=202)
    def retrain(who: ApiSession = Depends(session)):
        if not who.is_admin:
            raise HTTPException(403, "admin role required")
        if pipeline.training_in_progress:
            raise HTTPException(409, "a training run is already in progress")
        if not pipeline.should_retrain():
            raise HTTPException(409, "retrain condition not met")
        job_id = jobs.create()

        def run():
            try:
                entry = pipeline.retrain()
                jobs.finish(job_id, entry)
            except Exception as exc:  # surfaced via the job status
                jobs.fail(job_id, str(exc))

        if config.synchronous_jobs:
            run()
        else:
            threading.Thread(target=run, name=f"capsift-{job_id}", daemon=True).start()
        return payload(job_id=job_id)

    @app.get("/admin/jobs/{job_id}")
    def job_status(job_id: str, who: ApiSession = Depends(session)):
        if not who.is_admin:
            raise HTTPException(403, "admin role required")
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return payload(**job)

    @app.get("/status")
    def status(who: ApiSession = Depends(session)):
        return payload(
            images=len(store.image_order),
            reviewed=store.reviewed_image_count(),
            checkpoints=len(store.checkpoints),
            should_retrain=pipeline.should_retrain(),
            training_in_progress=pipeline.training_in_progress,
            user=who.user,
            role=who.role,
        )

    if config.frontend_dir is not None and Path(config.frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True), name="ui")

    app.state.store = store
    app.state.pipeline = pipeline
    app.state.jobs = jobs
    return app


def serve(config: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
