"""HTTP annotation service for human-in-the-loop runs.

One background thread owns the oracle, graph, and solver and drives the
exact same trial loop as simulated runs; HTTP handlers only read immutable
snapshots under a lock and feed answers through a batch-id-fenced queue.
A scripted client answering truthfully therefore reproduces the simulated
manifest bit for bit (timing aside).
"""

from __future__ import annotations

import json
import queue
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .config import ConfigError, RunConfig
from .graph import save_graph
from .harness import aggregate_trials, build_trial_data, manifest_json, run_single_trial
from .oracles import AnswerSet, HumanLabelerAdapter
from . import __version__

AWAITING = "awaiting_answers"
SOLVING = "solving"
DONE = "done"


class AnswerPayload(BaseModel):
    batch_id: int
    selections: list[int]


class AnnotationSession:
    """Owns a single human-labeled run and its publishable state."""

    def __init__(
        self,
        config: RunConfig,
        out_dir=None,
        answer_timeout: float = 3600.0,
        resume_from=None,
    ):
        if config.oracle is None or config.oracle.kind not in ("captcha", "pruning"):
            raise ConfigError("serving requires a captcha or pruning oracle")
        if config.trials != 1:
            from dataclasses import replace
            config = replace(config, trials=1)
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.answer_queue: queue.Queue = queue.Queue()
        self.adapter = HumanLabelerAdapter(self.answer_queue, timeout=answer_timeout)
        self.data = build_trial_data(config, trial=0)
        self.resume = None
        if resume_from is not None:
            resume_dir = Path(resume_from)
            from .graph import load_graph

            payload = json.loads((resume_dir / "checkpoint.json").read_text(encoding="utf-8"))
            self.data.base_graph = load_graph(resume_dir / "checkpoint.graph.txt")
            self.resume = {
                "oracle": payload["oracle"],
                "rows": payload["rows"],
                "warnings": payload.get("warnings", []),
            }
        self.run_id = f"pal-run-{config.base_seed}"
        self._lock = threading.Lock()
        self._lifecycle = SOLVING
        self._batch_payload = None
        self._open_batch_id = None
        self._answered = 0
        self._progress = {
            "queries_answered": 0,
            "known_entry_fraction": 0.0,
            "component_count": self.data.base_graph.n,
            "latest_probe_error": None,
        }
        self._embedding_payload = None
        self._manifest = None
        self._done_reason = None
        self._thread = threading.Thread(target=self._run, name="pal-run-loop", daemon=True)

    # -- run-loop side ---------------------------------------------------

    def start(self) -> None:
        self._thread.start()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout=timeout)

    def _observer(self, event: str, **payload) -> None:
        if event == "batch":
            batch = payload["batch"]
            state = payload["state"]
            template_node = batch.template_node
            point = None
            if template_node is not None:
                point = [float(v) for v in self.data.train.x[template_node][:2]]
            body = {
                "version": 1,
                "batch_id": batch.batch_id,
                "kind": batch.kind,
                "template_class": batch.template_class,
                "template_point": point,
                "template_payload": None,
                "candidates": [
                    {
                        "index": pos,
                        "node": int(node),
                        "point": [float(v) for v in self.data.train.x[node][:2]],
                        "payload": None,
                    }
                    for pos, node in enumerate(batch.candidates)
                ],
            }
            with self._lock:
                self._batch_payload = body
                self._open_batch_id = batch.batch_id
                self._lifecycle = AWAITING
        elif event == "answers":
            with self._lock:
                self._lifecycle = SOLVING
                self._answered += len(payload["answers"].answers)
        elif event == "checkpoint":
            record = payload["record"]
            embedding = payload["embedding"]
            body = None
            if embedding is not None:
                body = self._embedding_body(embedding, payload["graph"], payload["state"])
            with self._lock:
                self._progress = {
                    "queries_answered": int(record["queries"]),
                    "known_entry_fraction": float(record["known_fraction"]),
                    "component_count": int(record["components"]),
                    "latest_probe_error": {
                        "train_mse": record["train_mse"],
                        "test_mse": record["test_mse"],
                        "train_zero_one": record["train_zero_one"],
                        "test_zero_one": record["test_zero_one"],
                    },
                }
                if body is not None:
                    self._embedding_payload = body

    def _embedding_body(self, embedding: np.ndarray, graph, state) -> dict:
        """Full per-point payload, built in the run thread at solve time."""
        from .graph import connected_components

        _, assignment = connected_components(graph)
        deduced = state.deduced_labels() if state is not None else None
        x = self.data.train.x
        points = []
        for node in range(x.shape[0]):
            cls = None
            if deduced is not None and deduced[node] >= 0:
                cls = int(deduced[node])
            points.append({
                "node": node,
                "input": [float(v) for v in x[node][:2]],
                "embedding": [float(v) for v in embedding[node][:2]],
                "component": int(assignment[node]),
                "deduced_class": cls,
            })
        return {"version": 1, "points": points}

    def _run(self) -> None:
        result = run_single_trial(
            self.config,
            trial=0,
            labeler=self.adapter,
            data=self.data,
            observer=self._observer,
            resume=self.resume,
        )
        if result["paused"]:
            self._persist_checkpoint(result)
            with self._lock:
                self._lifecycle = DONE
                self._done_reason = "timeout"
            return
        schedule = self.config.checkpoint_schedule()
        manifest = {
            "version": __version__,
            "config": self.config.resolve(),
            "trials": [result],
            "aggregates": aggregate_trials([result], schedule),
            "failed_trials": [],
            "warnings": sorted(set(result["warnings"])),
            "timing": {"wall_time_total": 0.0},
        }
        with self._lock:
            self._manifest = manifest
            self._lifecycle = DONE
            self._done_reason = "completed"
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "run.manifest.json").write_text(
                manifest_json(manifest), encoding="utf-8"
            )

    def _persist_checkpoint(self, result: dict) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_graph(result["paused"]["graph"], self.out_dir / "checkpoint.graph.txt")
        payload = {
            "run_id": self.run_id,
            "oracle": result["paused"]["oracle"],
            "rows": result["rows"],
            "warnings": [w for w in result["warnings"] if "paused" not in w],
            "queries_answered": self._answered,
        }
        (self.out_dir / "checkpoint.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    # -- HTTP side ---------------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "lifecycle": self._lifecycle,
                "batch": self._batch_payload,
                "open_batch_id": self._open_batch_id,
                "progress": dict(self._progress),
                "manifest": self._manifest,
                "done_reason": self._done_reason,
                "embedding": self._embedding_payload,
            }

    def submit_answers(self, batch_id: int, selections: list[int]) -> dict:
        with self._lock:
            if self._lifecycle == DONE:
                raise HTTPException(status_code=410, detail="run is done")
            if self._lifecycle != AWAITING or batch_id != self._open_batch_id:
                raise HTTPException(status_code=409, detail=f"batch {batch_id} is not open")
            batch = self._batch_payload
            count = len(batch["candidates"])
            uniq = set()
            for s in selections:
                if not isinstance(s, int) or not 0 <= s < count or s in uniq:
                    raise HTTPException(status_code=422, detail=f"bad selection index {s!r}")
                uniq.add(s)
            answers = [pos in uniq for pos in range(count)]
            self._lifecycle = SOLVING
        self.answer_queue.put(AnswerSet(batch_id=batch_id, answers=answers, responder="human"))
        return {"version": 1, "accepted": True, "batch_id": batch_id}

    @property
    def manifest(self) -> dict | None:
        with self._lock:
            return self._manifest

    @property
    def done_reason(self):
        with self._lock:
            return self._done_reason


def create_app(session: AnnotationSession, cors_origin: str | None = None) -> FastAPI:
    app = FastAPI(title="pal annotation service", version=__version__)
    if cors_origin:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.get("/api/v1/session")
    def get_session():
        snap = session.snapshot()
        if snap["lifecycle"] is None:
            raise HTTPException(status_code=404, detail="no active run")
        classes = session.config.dataset.classes
        return {
            "version": 1,
            "run_id": session.run_id,
            "lifecycle": snap["lifecycle"],
            "batch_id": snap["open_batch_id"],
            "class_count": classes,
            "train_size": session.data.train.n,
            "done_reason": snap["done_reason"],
            **snap["progress"],
        }

    @app.get("/api/v1/queries/next")
    def get_next_batch():
        snap = session.snapshot()
        if snap["lifecycle"] == DONE:
            raise HTTPException(status_code=410, detail="run is done")
        if snap["lifecycle"] != AWAITING or snap["batch"] is None:
            raise HTTPException(status_code=409, detail="solving; no open batch")
        return snap["batch"]

    @app.post("/api/v1/answers")
    def post_answers(payload: AnswerPayload):
        return session.submit_answers(payload.batch_id, payload.selections)

    @app.get("/api/v1/embedding")
    def get_embedding():
        snap = session.snapshot()
        if snap["embedding"] is None:
            raise HTTPException(status_code=404, detail="no solve completed yet")
        return snap["embedding"]

    return app
