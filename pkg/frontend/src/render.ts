/**
 * Pure HTML renderers. They return strings so the views are testable in
 * plain node; app.ts owns all DOM wiring and event delegation.
 */

import { AnnotationViewModel, GalleryViewModel, TasksViewModel } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function renderGallery(model: GalleryViewModel, blobUrl: (id: string) => string): string {
  if (model.emptyMessage) {
    return `<p class="empty-state">${escapeHtml(model.emptyMessage)}</p>`;
  }
  const cards = model.entries
    .map((entry) => {
      const badge = entry.scoreBadge
        ? `<span class="badge score" title="similarity">${entry.scoreBadge}</span>`
        : "";
      const reviewed = entry.reviewed
        ? `<span class="badge reviewed">reviewed</span>`
        : `<span class="badge pending">needs review</span>`;
      return [
        `<article class="card" data-image-id="${entry.id}">`,
        `<img src="${blobUrl(entry.id)}" alt="image ${entry.shortId}" loading="lazy">`,
        `<div class="card-body">`,
        `<p class="caption">${escapeHtml(entry.caption)}</p>`,
        `<p class="meta">#${entry.rank} · ${entry.shortId} ${badge} ${reviewed}</p>`,
        `</div></article>`,
      ].join("");
    })
    .join("\n");
  const pager =
    `<nav class="pager" data-page="${model.page}" data-page-count="${model.pageCount}">` +
    `<button data-action="prev-page" ${model.page <= 1 ? "disabled" : ""}>&laquo; prev</button>` +
    `<span>page ${model.page} / ${model.pageCount} (${model.total} images)</span>` +
    `<button data-action="next-page" ${model.page >= model.pageCount ? "disabled" : ""}>next &raquo;</button>` +
    `</nav>`;
  return `<div class="gallery">${cards}</div>${pager}`;
}

export function renderAnnotation(
  model: AnnotationViewModel,
  blobUrl: (id: string) => string,
): string {
  const machine = model.machineCaptions.length
    ? model.machineCaptions
        .map(
          (c) =>
            `<li class="machine"><em>${escapeHtml(c.caption || "(degenerate caption)")}</em>` +
            ` <span class="author">${escapeHtml(c.author)}</span></li>`,
        )
        .join("")
    : "<li class='machine none'>no machine caption</li>";
  const reviewed = model.reviewedCaptions
    .map((c) => {
      const target =
        c.caption_id === model.trainingTargetId
          ? ` <span class="badge target" title="training target">target</span>`
          : "";
      return (
        `<li class="reviewed" data-caption-id="${c.caption_id}">` +
        `${escapeHtml(c.caption)} <span class="author">${escapeHtml(c.author)}</span>` +
        `<button data-action="vote" data-caption-id="${c.caption_id}">▲ ${c.votes}</button>` +
        `${target}</li>`
      );
    })
    .join("");
  return [
    `<section class="annotation" data-image-id="${model.imageId}">`,
    `<img src="${blobUrl(model.imageId)}" alt="image under review">`,
    `<h3>Machine captions</h3><ul class="machine-captions">${machine}</ul>`,
    `<h3>Reviewed captions</h3><ul class="reviewed-captions">${reviewed}</ul>`,
    `<form data-action="submit-review">`,
    `<input name="caption" placeholder="Write a corrected caption" autocomplete="off">`,
    `<button type="submit">Submit review</button>`,
    `<span class="form-error" role="alert"></span>`,
    `</form>`,
    `</section>`,
  ].join("\n");
}

export function renderTasks(model: TasksViewModel, exportUrl: (what: string) => string): string {
  const rows = model.taskSets.length
    ? model.taskSets
        .map(
          (ts) =>
            `<li data-task-set="${ts.id}"><button data-action="use-task-set" data-task-set="${ts.id}">` +
            `${ts.id}</button> ${ts.texts.map(escapeHtml).join(" · ")}</li>`,
        )
        .join("")
    : "<li class='none'>no task sets uploaded yet</li>";
  const retrain = model.showAdminControls
    ? `<button data-action="retrain" ${model.canRetrain ? "" : "disabled"}>Retrain model</button>`
    : "";
  return [
    `<section class="tasks">`,
    `<h3>Search tasks</h3><ul class="task-sets">${rows}</ul>`,
    `<form data-action="create-task-set">`,
    `<textarea name="texts" placeholder="One search task per line"></textarea>`,
    `<button type="submit">Upload tasks</button>`,
    `<span class="form-error" role="alert"></span>`,
    `</form>`,
    `<div class="exports">`,
    `<a href="${exportUrl("dataset")}" download>Export dataset</a>`,
    `<a href="${exportUrl("weights")}" download>Export weights</a>`,
    `${retrain}`,
    `</div>`,
    `</section>`,
  ].join("\n");
}

export function renderNotFound(imageId: string): string {
  return `<p class="empty-state">Image ${escapeHtml(imageId)} was not found.</p>`;
}

export function renderError(message: string): string {
  return `<p class="flash-error" role="alert">${escapeHtml(message)}</p>`;
}

export function renderNotice(message: string): string {
  return `<p class="flash-notice" role="status">${escapeHtml(message)}</p>`;
}
