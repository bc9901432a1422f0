/** Client-side state: batch selections, the answer payload, progress.
 *
 * Every displayed number originates from a service payload; this module
 * only holds selection state (local until submit) and derived view flags.
 */

import type { AnswerPayload, QueryBatch, SessionSummary } from "./types.js";

/** Selection for one open batch; submitted batches become immutable. */
export class BatchSelection {
  readonly batchId: number;
  private readonly count: number;
  private readonly picked = new Set<number>();
  private submitted = false;

  constructor(batch: QueryBatch) {
    this.batchId = batch.batch_id;
    this.count = batch.candidates.length;
  }

  toggle(index: number): boolean {
    if (this.submitted) return false;
    if (!Number.isInteger(index) || index < 0 || index >= this.count) return false;
    if (this.picked.has(index)) {
      this.picked.delete(index);
    } else {
      this.picked.add(index);
    }
    return true;
  }

  isSelected(index: number): boolean {
    return this.picked.has(index);
  }

  get isSubmitted(): boolean {
    return this.submitted;
  }

  lock(): void {
    this.submitted = true;
  }

  /** Exactly the POST body the service applies. */
  payload(): AnswerPayload {
    return {
      batch_id: this.batchId,
      selections: [...this.picked].sort((a, b) => a - b),
    };
  }
}

/** Completion hint: the component count has come down to the class count. */
export function completionHint(summary: SessionSummary): boolean {
  return summary.component_count === summary.class_count;
}

/** Accumulates the live error curve, one point per answered-query count. */
export class ErrorCurve {
  private readonly byQueries = new Map<number, number>();

  observe(summary: SessionSummary): void {
    if (summary.latest_probe_error !== null) {
      this.byQueries.set(summary.queries_answered, summary.latest_probe_error.test_mse);
    }
  }

  points(): Array<[number, number]> {
    return [...this.byQueries.entries()].sort((a, b) => a[0] - b[0]);
  }
}
