"""On-disk dataset store.

Layout under the data directory:

    blobs/<sha256>            raw image or feature-file bytes (content-addressed)
    events.jsonl              append-only log: image registrations, annotations, votes
    state.json                task sets, training cache, checkpoint index (atomic rewrites)
    checkpoints/w<k>.tnsr(.json)  model weights sequence

All mutable state derives from the event log plus state.json; a torn final
log line (crash mid-append) is ignored on reload. Mutations are serialized
by an in-process lock; multi-record mutations are written as a single append
so readers never observe half an operation.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError, StateError
from .text import tokenize

SCHEMA_VERSION = 1


@dataclass
class ImageEntry:
    image_id: str
    kind: str                 # "image" | "features"
    added_at: float
    source: str = ""


@dataclass
class CaptionRecord:
    caption_id: str
    image_id: str
    text: str
    author: str
    reviewed: bool
    timestamp: float
    seq: int
    voters: set[str] = field(default_factory=set)

    @property
    def votes(self) -> int:
        return len(self.voters)

    def to_dict(self) -> dict:
        return {
            "caption_id": self.caption_id,
            "image_id": self.image_id,
            "caption": self.text,
            "author": self.author,
            "reviewed": self.reviewed,
            "votes": self.votes,
            "timestamp": self.timestamp,
        }


class Store:
    """Single-directory persistence for images, annotations, tasks, weights."""

    def __init__(self, root: str | Path, clock=time.time):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.checkpoint_dir = self.root / "checkpoints"
        self.events_path = self.root / "events.jsonl"
        self.state_path = self.root / "state.json"
        self._lock = threading.RLock()
        self._clock = clock
        for d in (self.root, self.blob_dir, self.checkpoint_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.images: dict[str, ImageEntry] = {}
        self.captions: dict[str, CaptionRecord] = {}
        self.image_order: list[str] = []
        self._caption_seq = 0
        self.state: dict = {
            "schema_version": SCHEMA_VERSION,
            "task_sets": {},
            "training_cache": {"pairs": [], "cached_at": None},
            "checkpoints": [],
            "encoder": None,
            "model": None,
        }
        self._load()

    # --- loading ---

    def _load(self):
        if self.state_path.exists():
            self.state = json.loads(self.state_path.read_text(encoding="utf-8"))
        if not self.events_path.exists():
            self.events_path.touch()
            return
        raw = self.events_path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            # torn tail from an interrupted append: drop the partial line so
            # future appends land on a clean boundary
            cut = raw.rfind(b"\n") + 1
            raw = raw[:cut]
            with self.events_path.open("r+b") as fh:
                fh.truncate(len(raw))
        for line in raw.decode("utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            self._apply(record)

    def _apply(self, record: dict):
        kind = record.get("kind")
        if kind == "image":
            entry = ImageEntry(
                image_id=record["image_id"],
                kind=record.get("media", "image"),
                added_at=record.get("timestamp", 0.0),
                source=record.get("source", ""),
            )
            if entry.image_id not in self.images:
                self.images[entry.image_id] = entry
                self.image_order.append(entry.image_id)
        elif kind == "annotation":
            rec = CaptionRecord(
                caption_id=record["caption_id"],
                image_id=record["image_id"],
                text=record["caption"],
                author=record["author"],
                reviewed=bool(record["reviewed"]),
                timestamp=record.get("timestamp", 0.0),
                seq=record.get("seq", self._caption_seq),
            )
            self.captions[rec.caption_id] = rec
            self._caption_seq = max(self._caption_seq, rec.seq + 1)
        elif kind == "vote":
            caption = self.captions.get(record["caption_id"])
            if caption is not None:
                caption.voters.add(record["voter"])

    # --- low-level writes ---

    def _append_events(self, records: list[dict]):
        payload = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        with self.events_path.open("a", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        for record in records:
            self._apply(record)

    def _write_state(self):
        tmp = self.state_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.state, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.state_path)

    # --- images ---

    def ingest_blob(self, data: bytes, media: str = "image", source: str = "") -> tuple[str, bool]:
        """Store content-addressed bytes; returns (image_id, was_duplicate)."""
        if not data:
            raise ParameterError("empty payload")
        image_id = hashlib.sha256(data).hexdigest()
        with self._lock:
            if image_id in self.images:
                return image_id, True
            blob_path = self.blob_dir / image_id
            if not blob_path.exists():
                tmp = blob_path.with_suffix(".tmp")
                tmp.write_bytes(data)
                os.replace(tmp, blob_path)
            self._append_events(
                [
                    {
                        "kind": "image",
                        "image_id": image_id,
                        "media": media,
                        "source": source,
                        "timestamp": self._clock(),
                    }
                ]
            )
            return image_id, False

    def blob_bytes(self, image_id: str) -> bytes:
        entry = self.images.get(image_id)
        if entry is None:
            raise ParameterError(f"unknown image {image_id}")
        return (self.blob_dir / image_id).read_bytes()

    # --- annotations and votes ---

    def add_annotation(
        self, image_id: str, caption: str, author: str, reviewed: bool,
        allow_empty: bool = False,
    ) -> CaptionRecord:
        """Append one caption. Machine annotations may be empty (a freshly
        bootstrapped model produces degenerate captions); reviewed ones
        never are."""
        if image_id not in self.images:
            raise ParameterError(f"unknown image {image_id}")
        if not tokenize(caption) and not (allow_empty and not reviewed):
            raise ParameterError("caption is empty after tokenization")
        with self._lock:
            caption_id = f"c{self._caption_seq:08d}"
            self._append_events(
                [
                    {
                        "kind": "annotation",
                        "caption_id": caption_id,
                        "image_id": image_id,
                        "caption": caption,
                        "author": author,
                        "reviewed": reviewed,
                        "votes": 0,
                        "timestamp": self._clock(),
                        "seq": self._caption_seq,
                    }
                ]
            )
            return self.captions[caption_id]

    def add_vote(self, caption_id: str, voter: str) -> int:
        with self._lock:
            caption = self.captions.get(caption_id)
            if caption is None:
                raise ParameterError(f"unknown caption {caption_id}")
            if voter in caption.voters:
                raise StateError(f"{voter} already voted for {caption_id}")
            self._append_events(
                [
                    {
                        "kind": "vote",
                        "caption_id": caption_id,
                        "voter": voter,
                        "timestamp": self._clock(),
                    }
                ]
            )
            return caption.votes

    def captions_for(self, image_id: str) -> list[CaptionRecord]:
        return sorted(
            (c for c in self.captions.values() if c.image_id == image_id),
            key=lambda c: c.seq,
        )

    def training_target(self, image_id: str) -> CaptionRecord | None:
        """Highest-voted reviewed caption; ties go to the earliest submitted."""
        reviewed = [c for c in self.captions_for(image_id) if c.reviewed]
        if not reviewed:
            return None
        return min(reviewed, key=lambda c: (-c.votes, c.seq))

    def display_caption(self, image_id: str) -> CaptionRecord | None:
        """Caption shown in listings: the training target when the image has
        been reviewed, otherwise the newest machine annotation."""
        target = self.training_target(image_id)
        if target is not None:
            return target
        machine = self.captions_for(image_id)
        return machine[-1] if machine else None

    def reviewed_image_ids(self) -> list[str]:
        return [i for i in self.image_order if self.training_target(i) is not None]

    def reviewed_image_count(self) -> int:
        return len(self.reviewed_image_ids())

    def training_pairs(self) -> list[tuple[str, str]]:
        """(image_id, target caption text) for every reviewed image."""
        return [(i, self.training_target(i).text) for i in self.reviewed_image_ids()]

    # --- task sets ---

    def create_task_set(self, texts: list[str]) -> str:
        cleaned = [t for t in texts if isinstance(t, str)]
        if not cleaned or len(cleaned) != len(texts):
            raise ParameterError("task set needs a list of text strings")
        for text in cleaned:
            if not tokenize(text):
                raise ParameterError(f"task text {text!r} is empty after tokenization")
        with self._lock:
            task_set_id = f"ts{len(self.state['task_sets']):04d}"
            self.state["task_sets"][task_set_id] = {
                "texts": list(cleaned),
                "created_at": self._clock(),
            }
            self._write_state()
            return task_set_id

    def get_task_set(self, task_set_id: str) -> list[str]:
        entry = self.state["task_sets"].get(task_set_id)
        if entry is None:
            raise ParameterError(f"unknown task set {task_set_id}")
        return list(entry["texts"])

    def list_task_sets(self) -> dict[str, dict]:
        return dict(self.state["task_sets"])

    # --- training cache and checkpoints ---

    @property
    def training_cache_size(self) -> int:
        return len(self.state["training_cache"]["pairs"])

    def training_cache_pairs(self) -> list[tuple[str, str]]:
        return [tuple(p) for p in self.state["training_cache"]["pairs"]]

    def set_training_cache(self, pairs: list[tuple[str, str]]):
        with self._lock:
            self.state["training_cache"] = {
                "pairs": [list(p) for p in pairs],
                "cached_at": self._clock(),
            }
            self._write_state()

    def checkpoint_path(self, index: int) -> Path:
        return self.checkpoint_dir / f"w{index:04d}.tnsr"

    def add_checkpoint(self, save_fn, metadata: dict) -> dict:
        """Persist a checkpoint atomically: weights file first (tmp+rename via
        save_fn target), then the state entry; a crash in between leaves an
        orphan file but never a dangling index entry."""
        with self._lock:
            index = len(self.state["checkpoints"])
            path = self.checkpoint_path(index)
            save_fn(path)
            entry = {
                "index": index,
                "path": path.name,
                "created_at": self._clock(),
                **metadata,
            }
            self.state["checkpoints"].append(entry)
            self._write_state()
            return entry

    @property
    def checkpoints(self) -> list[dict]:
        return list(self.state["checkpoints"])

    def latest_checkpoint(self) -> dict | None:
        return self.state["checkpoints"][-1] if self.state["checkpoints"] else None
