/**
 * Browser bootstrap: tab navigation, polling refresh, event delegation.
 * All data flows through ApiClient; view state is re-derived from server
 * responses after every mutation (append-only server keeps this safe).
 */

import { ApiClient, ApiError } from "./api.js";
import {
  AnnotationViewModel,
  ReviewFilter,
  buildAnnotation,
  buildGallery,
  buildTasks,
  optimisticVote,
  rollbackVote,
  validateTaskTexts,
} from "./state.js";
import {
  renderAnnotation,
  renderError,
  renderGallery,
  renderNotFound,
  renderNotice,
  renderTasks,
} from "./render.js";

interface UiState {
  view: "gallery" | "annotation" | "tasks";
  taskSet: string | null;
  order: "score" | "date";
  filter: ReviewFilter;
  page: number;
  imageId: string | null;
  annotation: AnnotationViewModel | null;
  role: string;
  shouldRetrain: boolean;
  pollMs: number;
}

const state: UiState = {
  view: "gallery",
  taskSet: null,
  order: "date",
  filter: "all",
  page: 1,
  imageId: null,
  annotation: null,
  role: "reviewer",
  shouldRetrain: false,
  pollMs: 5000,
};

function token(): string {
  const stored = localStorage.getItem("capsift-token");
  if (stored) return stored;
  const entered = window.prompt("API token:") ?? "";
  localStorage.setItem("capsift-token", entered);
  return entered;
}

const api = new ApiClient(token());
const root = () => document.getElementById("app")!;
const flash = () => document.getElementById("flash")!;

function notify(html: string) {
  flash().innerHTML = html;
  window.setTimeout(() => {
    flash().innerHTML = "";
  }, 4000);
}

async function refresh(): Promise<void> {
  try {
    if (state.view === "gallery") {
      const payload = await api.listImages({
        taskSet: state.order === "score" ? (state.taskSet ?? undefined) : undefined,
        order: state.order === "score" && !state.taskSet ? "date" : state.order,
        page: state.page,
        pageSize: 24,
      });
      root().innerHTML = renderGallery(buildGallery(payload, state.filter), (id) =>
        api.imageBlobUrl(id),
      );
    } else if (state.view === "annotation" && state.imageId) {
      try {
        const detail = await api.imageDetail(state.imageId);
        state.annotation = buildAnnotation(detail);
        root().innerHTML = renderAnnotation(state.annotation, (id) => api.imageBlobUrl(id));
      } catch (error) {
        if (error instanceof ApiError && error.status === 404) {
          root().innerHTML = renderNotFound(state.imageId);
          return;
        }
        throw error;
      }
    } else if (state.view === "tasks") {
      const [tasks, status] = await Promise.all([api.listTasks(), api.status()]);
      state.role = status.role;
      state.shouldRetrain = status.should_retrain;
      root().innerHTML = renderTasks(
        buildTasks(tasks.task_sets, state.role, state.shouldRetrain),
        (what) => api.exportUrl(what as "dataset" | "weights"),
      );
    }
  } catch (error) {
    root().innerHTML = renderError(error instanceof Error ? error.message : String(error));
  }
}

async function handleVote(captionId: string): Promise<void> {
  if (!state.annotation) return;
  const before = state.annotation;
  state.annotation = optimisticVote(state.annotation, captionId);
  root().innerHTML = renderAnnotation(state.annotation, (id) => api.imageBlobUrl(id));
  try {
    await api.vote(captionId);
    await refresh();
  } catch (error) {
    state.annotation = rollbackVote(state.annotation ?? before, captionId);
    root().innerHTML = renderAnnotation(state.annotation, (id) => api.imageBlobUrl(id));
    if (error instanceof ApiError && error.status === 409) {
      notify(renderNotice("You already voted for this caption."));
    } else {
      notify(renderError(error instanceof Error ? error.message : String(error)));
    }
  }
}

async function handleSubmitReview(form: HTMLFormElement): Promise<void> {
  const input = form.querySelector<HTMLInputElement>("input[name=caption]")!;
  const errorSlot = form.querySelector<HTMLElement>(".form-error")!;
  const caption = input.value.trim();
  if (!caption || caption.replace(/[.,;:!?"()\s]/g, "").length === 0) {
    errorSlot.textContent = "Caption needs at least one word.";
    return;
  }
  try {
    await api.submitReview(state.imageId!, caption);
    input.value = "";
    await refresh();
    notify(renderNotice("Caption submitted."));
  } catch (error) {
    errorSlot.textContent = error instanceof Error ? error.message : String(error);
  }
}

async function handleCreateTaskSet(form: HTMLFormElement): Promise<void> {
  const area = form.querySelector<HTMLTextAreaElement>("textarea[name=texts]")!;
  const errorSlot = form.querySelector<HTMLElement>(".form-error")!;
  const { texts, error } = validateTaskTexts(area.value);
  if (error) {
    errorSlot.textContent = error; // validated client-side: no request issued
    return;
  }
  try {
    const id = await api.createTaskSet(texts);
    state.taskSet = id;
    state.order = "score";
    area.value = "";
    notify(renderNotice(`Task set ${id} uploaded; gallery now sorts by score.`));
    await refresh();
  } catch (err) {
    errorSlot.textContent = err instanceof Error ? err.message : String(err);
  }
}

async function handleRetrain(): Promise<void> {
  try {
    const jobId = await api.triggerRetrain();
    notify(renderNotice(`Training started (${jobId}).`));
    const poll = window.setInterval(async () => {
      const job = await api.jobStatus(jobId);
      if (job.status !== "running") {
        window.clearInterval(poll);
        notify(
          job.status === "completed"
            ? renderNotice("Training finished.")
            : renderError(`Training failed: ${job.error ?? "unknown error"}`),
        );
        await refresh();
      }
    }, 2000);
  } catch (error) {
    notify(renderError(error instanceof Error ? error.message : String(error)));
  }
}

function wire(): void {
  document.body.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.closest<HTMLElement>("[data-action]")?.dataset.action;
    const card = target.closest<HTMLElement>("article.card");
    if (card && !action) {
      state.view = "annotation";
      state.imageId = card.dataset.imageId ?? null;
      void refresh();
      return;
    }
    if (!action) return;
    if (action === "vote") {
      void handleVote(target.closest<HTMLElement>("[data-caption-id]")!.dataset.captionId!);
    } else if (action === "prev-page") {
      state.page = Math.max(1, state.page - 1);
      void refresh();
    } else if (action === "next-page") {
      state.page += 1;
      void refresh();
    } else if (action === "use-task-set") {
      state.taskSet = target.dataset.taskSet ?? null;
      state.order = "score";
      state.view = "gallery";
      void refresh();
    } else if (action === "retrain") {
      void handleRetrain();
    }
  });

  document.body.addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    const action = form.dataset.action;
    if (!action) return;
    event.preventDefault();
    if (action === "submit-review") void handleSubmitReview(form);
    if (action === "create-task-set") void handleCreateTaskSet(form);
  });

  for (const tab of document.querySelectorAll<HTMLElement>("[data-view]")) {
    tab.addEventListener("click", () => {
      state.view = tab.dataset.view as UiState["view"];
      state.page = 1;
      void refresh();
    });
  }

  const filterSelect = document.querySelector<HTMLSelectElement>("#filter-review");
  filterSelect?.addEventListener("change", () => {
    state.filter = filterSelect.value as ReviewFilter;
    void refresh();
  });
  const orderSelect = document.querySelector<HTMLSelectElement>("#order-by");
  orderSelect?.addEventListener("change", () => {
    state.order = orderSelect.value as UiState["order"];
    void refresh();
  });

  window.setInterval(() => {
    if (state.view === "gallery") void refresh();
  }, state.pollMs);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  wire();
  void refresh();
}
