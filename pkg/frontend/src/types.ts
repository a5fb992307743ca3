/**
 * API payload types.
 *
 * The runtime contract (zod schemas validated against responses recorded
 * from a live service) lives in tests/schemas.ts; the browser bundle stays
 * dependency-free and trusts these shapes after a schema_version check.
 */

export const SCHEMA_VERSION = 1;

export interface Score {
  value: number;
  log_value: number | null;
  p: number[];
  eta: number;
}

export interface GalleryImage {
  id: string;
  caption: string | null;
  caption_id: string | null;
  reviewed: boolean;
  score: Score | null;
}

export interface ImageList {
  schema_version: number;
  images: GalleryImage[];
  page: number;
  page_size: number;
  total: number;
  order: string;
  task_set: string | null;
}

export interface CaptionRecord {
  caption_id: string;
  image_id: string;
  caption: string;
  author: string;
  reviewed: boolean;
  votes: number;
  timestamp: number;
}

export interface ImageDetail {
  schema_version: number;
  id: string;
  media: string;
  captions: CaptionRecord[];
}

export interface TaskSet {
  id: string;
  texts: string[];
  created_at: number;
}

export interface TaskList {
  schema_version: number;
  task_sets: TaskSet[];
}

export interface ReviewResponse {
  schema_version: number;
  image_id: string;
  captions: CaptionRecord[];
}

export interface VoteResponse {
  schema_version: number;
  caption_id: string;
  votes: number;
}

export interface Status {
  schema_version: number;
  images: number;
  reviewed: number;
  checkpoints: number;
  should_retrain: boolean;
  training_in_progress: boolean;
  user: string;
  role: string;
}

export interface RetrainResponse {
  schema_version: number;
  job_id: string;
}

export interface JobStatus {
  schema_version: number;
  job_id: string;
  status: "running" | "completed" | "failed";
  error?: string;
  checkpoint?: unknown;
}
