/**
 * View models: pure functions from API payloads to render-ready data.
 *
 * Ordering discipline: the gallery NEVER re-sorts what the service returns;
 * score ordering is the server's ranking contract and must match the CLI's.
 * Filters only hide rows.
 */

import { CaptionRecord, GalleryImage, ImageDetail, ImageList, TaskSet } from "./types.js";

export type ReviewFilter = "all" | "reviewed" | "unreviewed";

export interface GalleryEntry {
  id: string;
  shortId: string;
  caption: string;
  scoreBadge: string | null;
  reviewed: boolean;
  rank: number; // 1-based position in the server ordering
}

export interface GalleryViewModel {
  entries: GalleryEntry[];
  page: number;
  pageCount: number;
  total: number;
  order: string;
  taskSet: string | null;
  emptyMessage: string | null;
}

export function buildGallery(payload: ImageList, filter: ReviewFilter = "all"): GalleryViewModel {
  const offset = (payload.page - 1) * payload.page_size;
  const entries = payload.images
    .map((image, index) => toEntry(image, offset + index + 1))
    .filter((entry) => matchesFilter(entry, filter));
  return {
    entries,
    page: payload.page,
    pageCount: Math.max(1, Math.ceil(payload.total / payload.page_size)),
    total: payload.total,
    order: payload.order,
    taskSet: payload.task_set,
    emptyMessage:
      payload.total === 0
        ? "No images yet. Upload captured images to get started."
        : entries.length === 0
          ? "No images match the current filter."
          : null,
  };
}

function toEntry(image: GalleryImage, rank: number): GalleryEntry {
  return {
    id: image.id,
    shortId: image.id.slice(0, 12),
    caption: image.caption || "(no caption yet)",
    scoreBadge: image.score ? image.score.value.toFixed(4) : null,
    reviewed: image.reviewed,
    rank,
  };
}

function matchesFilter(entry: GalleryEntry, filter: ReviewFilter): boolean {
  if (filter === "reviewed") return entry.reviewed;
  if (filter === "unreviewed") return !entry.reviewed;
  return true;
}

export interface AnnotationViewModel {
  imageId: string;
  machineCaptions: CaptionRecord[];
  reviewedCaptions: CaptionRecord[]; // sorted: votes desc, then submission order
  trainingTargetId: string | null;
}

export function buildAnnotation(detail: ImageDetail): AnnotationViewModel {
  const machine = detail.captions.filter((c) => !c.reviewed);
  const reviewed = [...detail.captions.filter((c) => c.reviewed)].sort(
    (a, b) => b.votes - a.votes || a.caption_id.localeCompare(b.caption_id),
  );
  return {
    imageId: detail.id,
    machineCaptions: machine,
    reviewedCaptions: reviewed,
    trainingTargetId: reviewed.length ? reviewed[0]!.caption_id : null,
  };
}

/** Applies an optimistic +1 that can be rolled back if the request fails. */
export function optimisticVote(model: AnnotationViewModel, captionId: string): AnnotationViewModel {
  return adjustVotes(model, captionId, +1);
}

export function rollbackVote(model: AnnotationViewModel, captionId: string): AnnotationViewModel {
  return adjustVotes(model, captionId, -1);
}

function adjustVotes(
  model: AnnotationViewModel,
  captionId: string,
  delta: number,
): AnnotationViewModel {
  const adjusted = model.reviewedCaptions.map((c) =>
    c.caption_id === captionId ? { ...c, votes: c.votes + delta } : c,
  );
  adjusted.sort((a, b) => b.votes - a.votes || a.caption_id.localeCompare(b.caption_id));
  return {
    ...model,
    reviewedCaptions: adjusted,
    trainingTargetId: adjusted.length ? adjusted[0]!.caption_id : null,
  };
}

export interface TasksViewModel {
  taskSets: TaskSet[];
  canRetrain: boolean;
  showAdminControls: boolean;
}

export function buildTasks(
  taskSets: TaskSet[],
  role: string,
  shouldRetrain: boolean,
): TasksViewModel {
  return {
    taskSets: [...taskSets].sort((a, b) => a.id.localeCompare(b.id)),
    canRetrain: role === "admin" && shouldRetrain,
    showAdminControls: role === "admin",
  };
}

/** Client-side validation mirror of the service's task rules: reject blank
 * or punctuation-only texts before any request is made. */
export function validateTaskTexts(raw: string): { texts: string[]; error: string | null } {
  const texts = raw
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
  if (texts.length === 0) {
    return { texts: [], error: "Enter at least one search task." };
  }
  const emptyAfterTokenize = texts.filter(
    (t) => t.replace(/[.,;:!?"()\s]/g, "").length === 0,
  );
  if (emptyAfterTokenize.length > 0) {
    return { texts: [], error: `Task has no words: "${emptyAfterTokenize[0]}"` };
  }
  return { texts, error: null };
}
