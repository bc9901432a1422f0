/** Wire types for the annotation service (all payloads carry version: 1). */

export interface SessionSummary {
  version: number;
  run_id: string;
  lifecycle: "awaiting_answers" | "solving" | "done";
  batch_id: number | null;
  class_count: number;
  train_size: number;
  done_reason: string | null;
  queries_answered: number;
  known_entry_fraction: number;
  component_count: number;
  latest_probe_error: {
    train_mse: number;
    test_mse: number;
    train_zero_one: number;
    test_zero_one: number;
  } | null;
}

export interface Candidate {
  index: number;
  node: number;
  point: [number, number];
  payload: string | null;
}

export interface QueryBatch {
  version: number;
  batch_id: number;
  kind: string;
  template_class: number | null;
  template_point: [number, number] | null;
  template_payload: string | null;
  candidates: Candidate[];
}

export interface AnswerAck {
  version: number;
  accepted: boolean;
  batch_id: number;
}

export interface AnswerPayload {
  batch_id: number;
  selections: number[];
}

export interface EmbeddingPoint {
  node: number;
  input: [number, number];
  embedding: [number, number];
  component: number;
  deduced_class: number | null;
}

export interface EmbeddingPayload {
  version: number;
  points: EmbeddingPoint[];
}
