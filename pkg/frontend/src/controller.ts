/** Polling controller: owns the open batch selection and pushes server
 * state into the render layer.  All state shown originates from service
 * payloads; the only local state is the not-yet-submitted selection. */

import { ApiClient } from "./api.js";
import { BatchSelection, ErrorCurve } from "./state.js";
import { renderBatch, renderProgress, renderStaleNotice } from "./render.js";
import type { QueryBatch } from "./types.js";

export interface ControllerOptions {
  pollMs?: number;
  batchContainer: HTMLElement;
  progressContainer: HTMLElement;
}

export class AnnotationController {
  readonly curve = new ErrorCurve();
  private batch: QueryBatch | null = null;
  private selection: BatchSelection | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private refreshing = false;

  constructor(
    private readonly api: ApiClient,
    private readonly options: ControllerOptions,
  ) {}

  start(): void {
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.options.pollMs ?? 1000);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  get openSelection(): BatchSelection | null {
    return this.selection;
  }

  toggle(index: number): void {
    this.selection?.toggle(index);
  }

  async refresh(): Promise<void> {
    if (this.refreshing) return;
    this.refreshing = true;
    try {
      const summary = await this.api.getSession();
      this.curve.observe(summary);
      const embedding = await this.api.getEmbedding();
      renderProgress(this.options.progressContainer, summary, this.curve, embedding);

      if (summary.lifecycle === "done") {
        this.stop();
        this.batch = null;
        this.selection = null;
        this.options.batchContainer.replaceChildren();
        return;
      }
      if (summary.lifecycle !== "awaiting_answers") return;

      const result = await this.api.getNextBatch();
      if (result.kind !== "batch") return;
      if (this.batch === null || this.batch.batch_id !== result.batch.batch_id) {
        this.batch = result.batch;
        this.selection = new BatchSelection(result.batch);
        this.renderOpenBatch();
      }
    } finally {
      this.refreshing = false;
    }
  }

  private renderOpenBatch(): void {
    if (this.batch === null || this.selection === null) return;
    renderBatch(this.options.batchContainer, this.batch, this.selection, {
      onToggle: (index) => this.toggle(index),
      onSubmit: () => void this.submit(),
    });
  }

  async submit(): Promise<void> {
    if (this.batch === null || this.selection === null || this.selection.isSubmitted) {
      return;
    }
    const payload = this.selection.payload();
    this.selection.lock();
    const result = await this.api.postAnswers(payload);
    if (result.kind === "stale") {
      const staleId = payload.batch_id;
      this.batch = null;
      this.selection = null;
      await this.refresh();
      renderStaleNotice(this.options.batchContainer, staleId);
      return;
    }
    await this.refresh();
  }

  /** Keyboard operation: digits toggle tiles (1..9, 0 is the tenth),
   * Enter submits. */
  handleKey(key: string): void {
    if (key === "Enter") {
      void this.submit();
      return;
    }
    if (/^[0-9]$/.test(key)) {
      const index = key === "0" ? 9 : Number(key) - 1;
      this.toggle(index);
      this.renderOpenBatch();
    }
  }
}
