"""Constrained-downlink transmission simulator.

Discrete-event loop over integer ticks. The link is only usable inside
scheduled windows; an image's transfer survives blackouts (progress is kept)
and is never preempted once started. At every decision point (window start,
transfer completion, or arrival while the link idles) the policy picks the
next queued image: highest similarity score under `priority`, oldest capture
under `fifo`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import ParameterError, StateError
from .similarity import ScoreConfig, SearchTaskSet, SimilarityScore, score
from .text import tokenize

POLICIES = ("priority", "fifo")


class ImageStatus(str, Enum):
    CAPTURED = "captured"
    CAPTIONED = "captioned"
    QUEUED = "queued"
    TRANSMITTING = "transmitting"
    TRANSMITTED = "transmitted"


_ORDER = [
    ImageStatus.CAPTURED,
    ImageStatus.CAPTIONED,
    ImageStatus.QUEUED,
    ImageStatus.TRANSMITTING,
    ImageStatus.TRANSMITTED,
]


@dataclass
class ImageRecord:
    """One captured image moving through the transmission state machine."""

    image_id: str
    captured_at: int
    size: int
    caption: tuple[str, ...] | None = None
    relevance: SimilarityScore | None = None
    status: ImageStatus = ImageStatus.CAPTURED

    def __post_init__(self):
        if self.captured_at < 0:
            raise ParameterError("captured_at must be non-negative")
        if self.size < 1:
            raise ParameterError("size must be positive")

    def _advance(self, new: ImageStatus):
        if _ORDER.index(new) != _ORDER.index(self.status) + 1:
            raise StateError(f"invalid transition {self.status.value} -> {new.value}")
        self.status = new

    def mark_captioned(self, caption: Sequence[str]) -> "ImageRecord":
        if not caption:
            raise ParameterError("caption must be non-empty")
        self.caption = tuple(caption)
        self._advance(ImageStatus.CAPTIONED)
        return self


def enqueue(
    record: ImageRecord, tasks: SearchTaskSet, config: ScoreConfig | None = None
) -> ImageRecord:
    """Score a captioned image against the tasks and mark it queued.

    Zero-score images stay queued; they transmit last but are never dropped.
    """
    if record.status != ImageStatus.CAPTIONED or record.caption is None:
        raise StateError("record must be captioned before enqueueing")
    record.relevance = score(record.caption, tasks, config)
    record._advance(ImageStatus.QUEUED)
    return record


@dataclass(frozen=True)
class LinkWindow:
    start: int
    duration: int
    bandwidth: int  # size units per tick

    def __post_init__(self):
        if self.start < 0 or self.duration < 1 or self.bandwidth < 1:
            raise ParameterError("window needs start >= 0, duration >= 1, bandwidth >= 1")

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass(frozen=True)
class LinkSchedule:
    windows: tuple[LinkWindow, ...]

    def __post_init__(self):
        ordered = sorted(self.windows, key=lambda w: w.start)
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise ParameterError("windows must not overlap")
        object.__setattr__(self, "windows", tuple(ordered))

    @classmethod
    def from_dicts(cls, rows: Sequence[dict]) -> "LinkSchedule":
        return cls(tuple(LinkWindow(r["start"], r["duration"], r["bandwidth"]) for r in rows))


@dataclass
class SimEvent:
    time: int
    kind: str  # decision | complete | window_open | window_close
    image_id: str | None = None
    detail: dict = field(default_factory=dict)


@dataclass
class SimReport:
    policy: str
    completions: dict[str, int]                  # image id -> completion tick
    delivered_curve: list[tuple[int, float]]     # (tick, cumulative relevance)
    delivered_bytes_curve: list[tuple[int, int]]
    total_bytes: int
    bytes_per_window: list[int]
    unfinished: list[str]
    events: list[SimEvent]

    def delivered_relevance_at(self, t: int) -> float:
        out = 0.0
        for tick, cum in self.delivered_curve:
            if tick <= t:
                out = cum
            else:
                break
        return out

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "completions": dict(sorted(self.completions.items())),
            "delivered_curve": [list(p) for p in self.delivered_curve],
            "delivered_bytes_curve": [list(p) for p in self.delivered_bytes_curve],
            "total_bytes": self.total_bytes,
            "bytes_per_window": self.bytes_per_window,
            "unfinished": sorted(self.unfinished),
            "events": [
                {"t": e.time, "kind": e.kind, "image_id": e.image_id, **(
                    {"detail": e.detail} if e.detail else {}
                )}
                for e in self.events
            ],
        }


def _policy_key(policy: str):
    if policy == "priority":
        return lambda rec: (-rec.relevance.value, rec.captured_at, rec.image_id)
    if policy == "fifo":
        return lambda rec: (rec.captured_at, rec.image_id)
    raise ParameterError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def run_simulation(
    records: Sequence[ImageRecord],
    schedule: LinkSchedule,
    policy: str,
    tasks: SearchTaskSet,
    config: ScoreConfig | None = None,
) -> SimReport:
    """Transmit queued images through the windowed link under one policy.

    Records still in `captioned` state are scored on entry; every image
    becomes eligible at its captured_at tick. Deterministic for fixed inputs.
    """
    select_key = _policy_key(policy)
    if not schedule.windows:
        raise ParameterError("schedule must contain at least one window")
    pool = []
    for rec in records:
        if rec.status == ImageStatus.CAPTIONED:
            enqueue(rec, tasks, config)
        if rec.status != ImageStatus.QUEUED:
            raise StateError(f"record {rec.image_id} not transmittable: {rec.status.value}")
        pool.append(rec)

    events: list[SimEvent] = []
    completions: dict[str, int] = {}
    delivered_curve: list[tuple[int, float]] = []
    delivered_bytes_curve: list[tuple[int, int]] = []
    bytes_per_window: list[int] = []
    cumulative_relevance = 0.0
    cumulative_bytes = 0
    active: ImageRecord | None = None
    remaining = 0

    waiting = sorted(pool, key=lambda r: (r.captured_at, r.image_id))
    arrivals = iter(waiting)
    next_arrival = next(arrivals, None)
    available: list[ImageRecord] = []

    def admit_up_to(t: int):
        nonlocal next_arrival
        while next_arrival is not None and next_arrival.captured_at <= t:
            available.append(next_arrival)
            next_arrival = next(arrivals, None)

    def pick(t: int) -> ImageRecord | None:
        if not available:
            return None
        choice = min(available, key=select_key)
        available.remove(choice)
        events.append(
            SimEvent(
                t,
                "decision",
                choice.image_id,
                detail={
                    "policy": policy,
                    "chosen_score": choice.relevance.value,
                    "queued": [
                        {"id": r.image_id, "score": r.relevance.value,
                         "captured_at": r.captured_at}
                        for r in sorted(available, key=lambda r: r.image_id)
                    ],
                },
            )
        )
        choice._advance(ImageStatus.TRANSMITTING)
        return choice

    for window in schedule.windows:
        window_bytes = 0
        events.append(SimEvent(window.start, "window_open"))
        t = window.start
        while t < window.end:
            admit_up_to(t)
            if active is None:
                candidate = pick(t)
                if candidate is None:
                    # idle until the next arrival or the window closes
                    if next_arrival is None:
                        break
                    t = max(t, min(next_arrival.captured_at, window.end))
                    continue
                active = candidate
                remaining = active.size
            # advance as far as this window allows without any new decision
            ticks_to_complete = -(-remaining // window.bandwidth)  # ceil division
            span = min(ticks_to_complete, window.end - t)
            sent = min(remaining, window.bandwidth * span)
            remaining -= sent
            window_bytes += sent
            cumulative_bytes += sent
            t += span
            if remaining == 0:
                active._advance(ImageStatus.TRANSMITTED)
                completions[active.image_id] = t
                cumulative_relevance += active.relevance.value
                delivered_curve.append((t, cumulative_relevance))
                delivered_bytes_curve.append((t, cumulative_bytes))
                events.append(SimEvent(t, "complete", active.image_id))
                active = None
        events.append(SimEvent(window.end, "window_close", detail={"bytes": window_bytes}))
        bytes_per_window.append(window_bytes)

    unfinished = [r.image_id for r in available]
    if active is not None:
        unfinished.append(active.image_id)
    while next_arrival is not None:
        unfinished.append(next_arrival.image_id)
        next_arrival = next(arrivals, None)
    return SimReport(
        policy=policy,
        completions=completions,
        delivered_curve=delivered_curve,
        delivered_bytes_curve=delivered_bytes_curve,
        total_bytes=cumulative_bytes,
        bytes_per_window=bytes_per_window,
        unfinished=unfinished,
        events=events,
    )


# --- scenario files ---


@dataclass
class Scenario:
    images: list[dict]
    windows: list[dict]
    tasks: list[str]
    policy: str = "priority"
    seed: int = 0

    @classmethod
    def from_json(cls, payload: str | dict) -> "Scenario":
        data = json.loads(payload) if isinstance(payload, str) else payload
        for key in ("images", "windows", "tasks"):
            if key not in data:
                raise ParameterError(f"scenario missing {key!r}")
        return cls(
            images=list(data["images"]),
            windows=list(data["windows"]),
            tasks=list(data["tasks"]),
            policy=data.get("policy", "priority"),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def build(self, captioner=None) -> tuple[list[ImageRecord], LinkSchedule, SearchTaskSet]:
        """Materialize records; rows may carry a caption directly or an image
        path, in which case `captioner(path) -> token list` must be given."""
        records = []
        for row in self.images:
            rec = ImageRecord(
                image_id=str(row["id"]),
                captured_at=int(row["arrival"]),
                size=int(row["size"]),
            )
            if "caption" in row:
                rec.mark_captioned(tokenize(row["caption"]))
            elif "image" in row:
                if captioner is None:
                    raise ParameterError(
                        f"image {row['id']}: scenario row has an image path; "
                        "supply model weights to caption it"
                    )
                rec.mark_captioned(captioner(row["image"]))
            else:
                raise ParameterError(f"image {row['id']}: needs 'caption' or 'image'")
            records.append(rec)
        return records, LinkSchedule.from_dicts(self.windows), SearchTaskSet.from_texts(self.tasks)


def run_scenario(scenario: Scenario, policy: str | None = None, captioner=None) -> SimReport:
    records, schedule, tasks = scenario.build(captioner=captioner)
    return run_simulation(records, schedule, policy or scenario.policy, tasks)


def compare_policies(scenario: Scenario, captioner=None) -> dict[str, SimReport]:
    """Run the same scenario under both policies on independent record copies."""
    return {p: run_scenario(scenario, policy=p, captioner=captioner) for p in POLICIES}


def curve_csv(reports: dict[str, SimReport]) -> str:
    """Delivered-over-time curves for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["policy", "time", "delivered_relevance", "delivered_bytes"])
    for policy in sorted(reports):
        report = reports[policy]
        bytes_at = dict(report.delivered_bytes_curve)
        for t, relevance in report.delivered_curve:
            writer.writerow([policy, t, repr(relevance), bytes_at.get(t, "")])
    return buf.getvalue()
