/** Rater session state machine.
 *
 * Holds the current batch, local draft ratings, and the running acceptance
 * history. All gate math happens server-side; this module only relays the
 * verdict the service returned. Submission is single-flight per batch (the
 * batch id is the idempotency key: the service gates a batch exactly once
 * and duplicate submits read back the stored verdict).
 */

import type { QcApiClient } from "./api.js";
import {
  DIMENSIONS,
  type AnnotationRow,
  type BatchView,
  type DimensionName,
  type Draft,
  type RatingWord,
  type Verdict,
  scoreOf,
} from "./types.js";

export const DEFAULT_BREAK_MINUTES = 30;

export class BreakActiveError extends Error {
  constructor(readonly msRemaining: number) {
    super(`mandatory break: ${Math.ceil(msRemaining / 60000)} minutes remaining`);
    this.name = "BreakActiveError";
  }
}

export interface SessionOptions {
  /** Advisory break length after each submitted batch. */
  breakMinutes?: number;
  /** Clock injection for tests. */
  now?: () => number;
}

export interface Progress {
  rated: number;
  total: number;
  missing: number;
}

export class RaterSession {
  readonly raterId: string;
  batch: BatchView | null = null;
  verdict: Verdict | null = null;
  readonly history: Verdict[] = [];
  breakUntil: number | null = null;

  private readonly api: QcApiClient;
  private readonly breakMs: number;
  private readonly now: () => number;
  private drafts = new Map<string, Draft>();
  private mediaFailed = new Set<string>();
  private submitPromise: Promise<Verdict> | null = null;

  constructor(api: QcApiClient, raterId: string, options: SessionOptions = {}) {
    this.api = api;
    this.raterId = raterId;
    this.breakMs = (options.breakMinutes ?? DEFAULT_BREAK_MINUTES) * 60_000;
    this.now = options.now ?? Date.now;
  }

  breakRemainingMs(): number {
    if (this.breakUntil === null) return 0;
    return Math.max(0, this.breakUntil - this.now());
  }

  async fetchNextBatch(options: { skipBreak?: boolean } = {}): Promise<BatchView> {
    const remaining = this.breakRemainingMs();
    if (remaining > 0 && !options.skipBreak) {
      throw new BreakActiveError(remaining);
    }
    const batch = await this.api.nextBatch(this.raterId);
    this.batch = batch;
    this.verdict = null;
    this.drafts = new Map();
    this.mediaFailed = new Set();
    this.submitPromise = null;
    this.breakUntil = null;
    return batch;
  }

  private instanceInBatch(instanceId: string): boolean {
    return this.batch?.instances.some((v) => v.instance_id === instanceId) ?? false;
  }

  draftFor(instanceId: string): Draft {
    return this.drafts.get(instanceId) ?? {};
  }

  isMediaFailed(instanceId: string): boolean {
    return this.mediaFailed.has(instanceId);
  }

  /** Flag an instance whose media did not load; rating it is blocked. */
  markMediaFailed(instanceId: string): void {
    if (!this.instanceInBatch(instanceId)) {
      throw new Error(`instance ${instanceId} is not in the current batch`);
    }
    this.mediaFailed.add(instanceId);
    this.drafts.delete(instanceId);
  }

  rate(instanceId: string, dimension: DimensionName, level: RatingWord): void {
    if (!this.instanceInBatch(instanceId)) {
      throw new Error(`instance ${instanceId} is not in the current batch`);
    }
    if (this.mediaFailed.has(instanceId)) {
      throw new Error(`instance ${instanceId} is flagged (media failed); rating is blocked`);
    }
    if (this.verdict !== null || this.submitPromise !== null) {
      throw new Error("batch already submitted");
    }
    const draft = this.drafts.get(instanceId) ?? {};
    draft[dimension] = scoreOf(level);
    this.drafts.set(instanceId, draft);
  }

  progress(): Progress {
    const total = this.batch?.instances.length ?? 0;
    let rated = 0;
    for (const view of this.batch?.instances ?? []) {
      const draft = this.drafts.get(view.instance_id);
      if (draft && DIMENSIONS.every((d) => draft[d] !== undefined)) {
        rated += 1;
      }
    }
    return { rated, total, missing: total - rated };
  }

  canSubmit(): boolean {
    const { total, missing } = this.progress();
    return this.batch?.batch_id != null && total > 0 && missing === 0 && this.verdict === null;
  }

  private annotationRows(): AnnotationRow[] {
    const rows: AnnotationRow[] = [];
    for (const view of this.batch?.instances ?? []) {
      const draft = this.drafts.get(view.instance_id);
      if (!draft) continue;
      for (const dimension of DIMENSIONS) {
        const score = draft[dimension];
        if (score !== undefined) {
          rows.push({ instance_id: view.instance_id, dimension, score });
        }
      }
    }
    return rows;
  }

  /** Post the ratings and gate the batch. Duplicate calls share one flight;
   * a network failure clears the flight so the same drafts can be retried. */
  submitBatch(): Promise<Verdict> {
    if (this.submitPromise) {
      return this.submitPromise;
    }
    if (!this.canSubmit()) {
      const { missing } = this.progress();
      return Promise.reject(new Error(`batch is not fully rated: ${missing} instances remaining`));
    }
    const batchId = this.batch!.batch_id!;
    this.submitPromise = (async () => {
      try {
        await this.api.postAnnotations(batchId, this.annotationRows());
        const verdict = await this.api.submitBatch(batchId);
        this.verdict = verdict;
        this.history.push(verdict);
        this.breakUntil = this.now() + this.breakMs;
        return verdict;
      } catch (err) {
        this.submitPromise = null; // drafts intact; caller may retry
        throw err;
      }
    })();
    return this.submitPromise;
  }

  acceptanceSummary(): { accepted: number; total: number } {
    return {
      accepted: this.history.filter((v) => v.verdict === "accepted").length,
      total: this.history.length,
    };
  }
}
