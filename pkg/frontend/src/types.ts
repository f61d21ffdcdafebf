/** Payload shapes of the annotation QC service API. */

export type DimensionName = "quality" | "alignment";

export const DIMENSIONS: readonly DimensionName[] = ["quality", "alignment"];

/** Rating vocabulary in ascending order; score = index + 1. */
export const RATING_WORDS = ["Bad", "Poor", "Fair", "Good", "Excellent"] as const;

export type RatingWord = (typeof RATING_WORDS)[number];

export function scoreOf(word: RatingWord): number {
  return RATING_WORDS.indexOf(word) + 1;
}

export interface InstanceView {
  instance_id: string;
  prompt: string;
  media: string[];
  kind: "image" | "video";
}

export interface BatchView {
  batch_id: string | null;
  rater_id: string;
  instances: InstanceView[];
}

export interface AnnotationRow {
  instance_id: string;
  dimension: DimensionName;
  score: number;
}

export interface Verdict {
  verdict: "accepted" | "rejected";
  srcc: number | null;
  overlap_n: number | null;
  reason: string | null;
}

export interface Draft {
  quality?: number;
  alignment?: number;
}
