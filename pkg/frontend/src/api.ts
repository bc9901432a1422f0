/** Thin fetch client over the /api/v1 endpoints. */

import type {
  AnswerAck,
  AnswerPayload,
  EmbeddingPayload,
  QueryBatch,
  SessionSummary,
} from "./types.js";

export type BatchResult =
  | { kind: "batch"; batch: QueryBatch }
  | { kind: "solving" }
  | { kind: "done" };

export type PostResult =
  | { kind: "accepted"; ack: AnswerAck }
  | { kind: "stale" }
  | { kind: "invalid"; detail: string };

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async getSession(): Promise<SessionSummary> {
    const res = await fetch(this.url("/api/v1/session"));
    if (!res.ok) {
      throw new Error(`session request failed: ${res.status}`);
    }
    return (await res.json()) as SessionSummary;
  }

  async getNextBatch(): Promise<BatchResult> {
    const res = await fetch(this.url("/api/v1/queries/next"));
    if (res.status === 409) return { kind: "solving" };
    if (res.status === 410) return { kind: "done" };
    if (!res.ok) throw new Error(`batch request failed: ${res.status}`);
    return { kind: "batch", batch: (await res.json()) as QueryBatch };
  }

  async postAnswers(payload: AnswerPayload): Promise<PostResult> {
    const res = await fetch(this.url("/api/v1/answers"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (res.status === 409) return { kind: "stale" };
    if (res.status === 422) {
      return { kind: "invalid", detail: await res.text() };
    }
    if (!res.ok) throw new Error(`answer post failed: ${res.status}`);
    return { kind: "accepted", ack: (await res.json()) as AnswerAck };
  }

  async getEmbedding(): Promise<EmbeddingPayload | null> {
    const res = await fetch(this.url("/api/v1/embedding"));
    if (res.status === 404) return null;
    if (!res.ok) throw new Error(`embedding request failed: ${res.status}`);
    return (await res.json()) as EmbeddingPayload;
  }
}
