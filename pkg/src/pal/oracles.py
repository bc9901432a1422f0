"""Query strategies and labelers that discover the similarity graph.

An oracle pairs a *sampler* (which graph entries to ask about next) with a
*labeler* (who answers).  Passive oracles fix their query sequence up
front; the captcha oracle adaptively queries candidate nodes against class
templates and deduces graph entries from the membership knowledge it
accumulates; snapshot-based oracles (nearest-neighbour, pruning) need no
human at all.  Every oracle is deterministic given its state and seed.
"""

from __future__ import annotations

import queue
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    MEMBER_NO,
    MEMBER_UNKNOWN,
    MEMBER_YES,
    AugmentationLayout,
    DeductionResult,
    SimilarityGraph,
    deduce_from_membership,
)
from .rng import make_rng

_STREAM_ORACLE = 21
_STREAM_KMEANS = 22
_STREAM_NOISE = 23


class OracleExhausted(Exception):
    """Every node's class membership is already determined."""


class StaleBatchError(ValueError):
    """Answers arrived for a batch that is no longer open."""


class LabelerTimeoutError(TimeoutError):
    """No human answers arrived within the configured timeout."""


class DegenerateClusteringError(RuntimeError):
    """k-means produced an empty cluster even after one re-seed."""


PAIR = "pair"
TEMPLATE = "template"


@dataclass
class QueryBatch:
    """One emitted batch of queries awaiting boolean answers."""

    batch_id: int
    kind: str                                  # PAIR or TEMPLATE
    pairs: list = field(default_factory=list)  # (i, j) node pairs for PAIR
    template_class: int | None = None
    template_node: int | None = None
    candidates: list = field(default_factory=list)
    reg_pairs: list = field(default_factory=list)   # J set for the SGD path
    auto_answers: list | None = None                # filled for labeler-free oracles

    def size(self) -> int:
        return len(self.pairs) if self.kind == PAIR else len(self.candidates)


@dataclass
class AnswerSet:
    batch_id: int
    answers: list
    responder: str = "simulated"


@dataclass
class OracleState:
    """Everything a query strategy is allowed to look at."""

    graph: SimilarityGraph
    membership: np.ndarray                 # (n, classes) of MEMBER_* codes
    templates: list                        # per-class node index or None
    embedding_snapshot: np.ndarray | None = None
    queries_made: int = 0
    step: int = 0
    rng: np.random.Generator = None
    next_batch_id: int = 0
    open_batch_id: int | None = None

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_classes(self) -> int:
        return self.membership.shape[1]

    def determined(self) -> np.ndarray:
        """Nodes whose class is settled (a Yes in some column)."""
        return (self.membership == MEMBER_YES).any(axis=1)

    def deduced_labels(self) -> np.ndarray:
        """Per-node class from membership, -1 where still unknown."""
        yes = self.membership == MEMBER_YES
        return np.where(yes.any(axis=1), yes.argmax(axis=1), -1)

    def issue_batch(self, **kwargs) -> QueryBatch:
        batch = QueryBatch(batch_id=self.next_batch_id, **kwargs)
        self.next_batch_id += 1
        self.open_batch_id = batch.batch_id
        return batch

    def check_batch(self, batch_id: int) -> None:
        if batch_id != self.open_batch_id:
            raise StaleBatchError(
                f"batch {batch_id} is not the open batch ({self.open_batch_id})"
            )


def new_oracle_state(
    n: int,
    num_classes: int,
    seed: int,
    graph: SimilarityGraph | None = None,
    templates: list | None = None,
) -> OracleState:
    graph = graph if graph is not None else SimilarityGraph(n)
    if graph.n != n:
        raise ValueError(f"graph has {graph.n} nodes, expected {n}")
    membership = np.full((n, num_classes), MEMBER_UNKNOWN, dtype=np.int8)
    state = OracleState(
        graph=graph,
        membership=membership,
        templates=list(templates) if templates is not None else [None] * num_classes,
        rng=make_rng(seed, _STREAM_ORACLE),
    )
    for cls, node in enumerate(state.templates):
        if node is not None:
            membership[node, :] = MEMBER_NO
            membership[node, cls] = MEMBER_YES
    return state


# -- passive oracles ---------------------------------------------------


def passive_ssl_oracle(
    state: OracleState,
    layout: AugmentationLayout,
    reg_batch_size: int = 16,
) -> QueryBatch:
    """Emit the next positive pair known by construction, plus a random
    node minibatch whose ordered pairs serve as the regularization set.

    Step t picks original sample t mod n0 and the first two views of epoch
    (t // n0) mod epochs; the answer is always positive, so no labeler is
    consumed.
    """
    if layout.views < 2:
        raise ValueError("need at least 2 views for positive pairs")
    t = state.step
    sample = t % layout.n0
    epoch = (t // layout.n0) % layout.epochs
    views = layout.views_of(sample)
    pair = (int(views[epoch * layout.views]), int(views[epoch * layout.views + 1]))
    nodes = state.rng.integers(0, state.n, size=reg_batch_size)
    reg = [(int(a), int(b)) for a in nodes for b in nodes]
    return state.issue_batch(kind=PAIR, pairs=[pair], reg_pairs=reg, auto_answers=[True])


def passive_supervised_oracle(state: OracleState, n: int) -> QueryBatch:
    """One uniform random pair from [N]^2 (diagonal allowed); the same pair
    doubles as the regularization set."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    i = int(state.rng.integers(0, n))
    j = int(state.rng.integers(0, n))
    return state.issue_batch(kind=PAIR, pairs=[(i, j)], reg_pairs=[(i, j)])


def ingest_pair_answers(state: OracleState, batch: QueryBatch, answers: AnswerSet) -> DeductionResult:
    """Write pair answers straight into the graph as +1 / 0 entries."""
    state.check_batch(answers.batch_id)
    if len(answers.answers) != len(batch.pairs):
        raise ValueError("one answer per emitted pair required")
    result = DeductionResult()
    for (i, j), ans in zip(batch.pairs, answers.answers):
        value = 1.0 if ans else 0.0
        existing = state.graph.value(i, j)
        if existing is None:
            state.graph.set_known(i, j, value)
            result.new_entries.append((min(i, j), max(i, j), value))
        elif (existing > 0) != (value > 0):
            result.conflicts.append((min(i, j), max(i, j), existing, value))
    if batch.auto_answers is None:
        state.queries_made += len(answers.answers)
    state.step += 1
    state.open_batch_id = None
    return result


# -- captcha oracle ----------------------------------------------------


def uniform_candidate_sampler(state: OracleState, eligible: np.ndarray, m: int):
    """Default batch selection: uniform without replacement."""
    if len(eligible) <= m:
        return [int(i) for i in eligible]
    picked = state.rng.choice(eligible, size=m, replace=False)
    return [int(i) for i in picked]


def captcha_oracle_next(
    state: OracleState,
    batch_size: int,
    candidate_sampler=None,
    class_prior: np.ndarray | None = None,
) -> QueryBatch:
    """Template query against the class with the fewest confirmed members.

    Candidates are nodes whose membership in the target class is still
    unknown and whose class is not already determined; ties in the class
    argmin break toward the lowest class id.  With ``class_prior`` the
    confirmed counts are divided by the prior before the argmin, which
    favours under-covered rare classes.  Raises :class:`OracleExhausted`
    when no queryable (node, class) cell remains.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sampler = candidate_sampler or uniform_candidate_sampler
    yes_counts = (state.membership == MEMBER_YES).sum(axis=0).astype(float)
    if class_prior is not None:
        prior = np.asarray(class_prior, dtype=float)
        if prior.shape != (state.num_classes,) or (prior <= 0).any():
            raise ValueError("class_prior must be positive with one entry per class")
        yes_counts = yes_counts / prior
    undetermined = ~state.determined()
    eligible_by_class = (state.membership == MEMBER_UNKNOWN) & undetermined[:, None]
    has_candidates = eligible_by_class.any(axis=0)
    if not has_candidates.any():
        raise OracleExhausted("every node's class membership is determined")
    scores = np.where(has_candidates, yes_counts, np.inf)
    target = int(np.argmin(scores))
    eligible = np.nonzero(eligible_by_class[:, target])[0]
    candidates = sampler(state, eligible, batch_size)
    return state.issue_batch(
        kind=TEMPLATE,
        template_class=target,
        template_node=state.templates[target] if target < len(state.templates) else None,
        candidates=candidates,
    )


def captcha_oracle_ingest(
    state: OracleState, batch: QueryBatch, answers: AnswerSet
) -> DeductionResult:
    """Record template answers into the membership matrix, deduce graph
    entries, and advance the query counter."""
    state.check_batch(answers.batch_id)
    if batch.kind != TEMPLATE:
        raise ValueError("captcha ingest expects a template batch")
    if len(answers.answers) != len(batch.candidates):
        raise ValueError("one answer per candidate required")
    cls = batch.template_class
    for node, ans in zip(batch.candidates, answers.answers):
        if ans:
            state.membership[node, :] = MEMBER_NO
            state.membership[node, cls] = MEMBER_YES
        else:
            state.membership[node, cls] = MEMBER_NO
    result = deduce_from_membership(state.membership, state.graph)
    state.queries_made += len(answers.answers)
    state.step += 1
    state.open_batch_id = None
    result.new_entries = list(result.new_entries)
    return result


def discover_templates(state: OracleState, labeler, nodes=None) -> int:
    """Find one template per class by sequential pairwise probes.

    Node 0 (or the first of ``nodes``) seeds the first template for free; a
    later node is probed against the existing templates in class order and
    either joins the first matching template's class or becomes the next
    template.  Returns the number of pairwise probes spent; probes also
    count into ``state.queries_made``.
    """
    order = list(range(state.n)) if nodes is None else list(nodes)
    probes = 0
    for node in order:
        if state.determined()[node]:
            continue
        assigned = False
        for cls, template in enumerate(state.templates):
            if template is None:
                continue
            batch = state.issue_batch(kind=PAIR, pairs=[(node, template)])
            reply = labeler.answer(batch)
            state.check_batch(reply.batch_id)
            state.open_batch_id = None
            probes += 1
            state.queries_made += 1
            if reply.answers[0]:
                state.membership[node, :] = MEMBER_NO
                state.membership[node, cls] = MEMBER_YES
                assigned = True
                break
        if not assigned:
            free = [c for c, t in enumerate(state.templates) if t is None]
            if not free:
                raise OracleExhausted("more template candidates than class slots")
            cls = free[0]
            state.templates[cls] = node
            state.membership[node, :] = MEMBER_NO
            state.membership[node, cls] = MEMBER_YES
    deduce_from_membership(state.membership, state.graph)
    return probes


# -- snapshot-based oracles --------------------------------------------


def nnclr_oracle(state: OracleState, minibatch) -> QueryBatch:
    """Mark each batch member positive with its nearest neighbour in the
    batch (self excluded, ties to the lowest node index); answers are
    auto-filled, no labeler involved."""
    if state.embedding_snapshot is None:
        raise ValueError("nnclr oracle needs an embedding snapshot")
    batch = [int(i) for i in minibatch]
    if len(batch) < 2:
        raise ValueError("minibatch must contain at least 2 nodes")
    z = state.embedding_snapshot
    # ties resolved by scanning candidates in node-index order
    pairs = []
    for j in batch:
        best_node, best_dist = None, np.inf
        for k in sorted(batch):
            if k == j:
                continue
            dist = float(np.linalg.norm(z[k] - z[j]))
            if dist < best_dist:
                best_node, best_dist = k, dist
        pairs.append((best_node, j))
    reg = [(a, b) for a in batch for b in batch]
    return state.issue_batch(
        kind=PAIR, pairs=pairs, reg_pairs=reg, auto_answers=[True] * len(pairs)
    )


def kmeans(z: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    """Plain Lloyd iterations with one seeded init; an empty cluster gets a
    single re-seed before the degenerate-clustering signal fires."""
    z = np.asarray(z, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(z) < k:
        raise DegenerateClusteringError(f"cannot form {k} clusters from {len(z)} points")
    for attempt in range(2):
        centers = z[rng.choice(len(z), size=k, replace=False)].copy()
        assignment = np.zeros(len(z), dtype=int)
        empty = False
        for it in range(max_iter):
            d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_assignment = d2.argmin(axis=1)
            empty = len(np.unique(new_assignment)) < k
            if empty:
                break
            if it > 0 and (new_assignment == assignment).all():
                break
            assignment = new_assignment
            for c in range(k):
                centers[c] = z[assignment == c].mean(axis=0)
        if not empty:
            return centers, assignment
    raise DegenerateClusteringError("empty cluster after re-seeding once")


def cosine_distance_to_center(z: np.ndarray, centers: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """1 - cosine similarity between each point and its cluster center;
    zero-norm vectors score the maximal distance 1."""
    own = centers[assignment]
    num = (z * own).sum(axis=1)
    denom = np.linalg.norm(z, axis=1) * np.linalg.norm(own, axis=1)
    cos = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return 1.0 - cos


def pruning_rank(state: OracleState, k: int, labeled_fraction_threshold: float):
    """Rank undetermined nodes for querying: nearest to their cluster
    center while few labels are known, farthest afterwards.  Order ties are
    stable by node index."""
    if state.embedding_snapshot is None:
        raise ValueError("pruning oracle needs an embedding snapshot")
    rng = make_rng(int(state.rng.integers(2**62)), _STREAM_KMEANS)
    centers, assignment = kmeans(state.embedding_snapshot, k, rng)
    scores = cosine_distance_to_center(state.embedding_snapshot, centers, assignment)
    determined = state.determined()
    labeled_fraction = determined.mean()
    unlabeled = np.nonzero(~determined)[0]
    keys = scores[unlabeled]
    if labeled_fraction >= labeled_fraction_threshold:
        keys = -keys
    order = unlabeled[np.argsort(keys, kind="stable")]
    return [int(i) for i in order]


def make_pruning_sampler(k: int, labeled_fraction_threshold: float = 0.1):
    """Captcha batch sampler backed by the cluster-distance ranking."""

    def sampler(state: OracleState, eligible: np.ndarray, m: int):
        ranked = pruning_rank(state, k, labeled_fraction_threshold)
        eligible_set = set(int(i) for i in eligible)
        picked = [i for i in ranked if i in eligible_set]
        return picked[:m]

    return sampler


def pruning_oracle(
    state: OracleState,
    k: int,
    labeled_fraction_threshold: float = 0.1,
    batch_size: int = 10,
) -> QueryBatch:
    """Template query whose batch comes from the cluster-distance ranking."""
    sampler = make_pruning_sampler(k, labeled_fraction_threshold)
    return captcha_oracle_next(state, batch_size, candidate_sampler=sampler)


# -- labelers ----------------------------------------------------------


def oracle_state_to_dict(state: OracleState) -> dict:
    """JSON-safe snapshot of everything needed to resume a paused run.

    The graph is serialized separately (see pal.graph.save_graph); a
    pending unanswered batch is dropped, so the resumed oracle reissues a
    fresh one under strictly increasing batch ids.
    """
    rng_state = state.rng.bit_generator.state
    return {
        "membership": state.membership.tolist(),
        "templates": [None if t is None else int(t) for t in state.templates],
        "queries_made": int(state.queries_made),
        "step": int(state.step),
        "next_batch_id": int(state.next_batch_id),
        "rng": {
            "bit_generator": rng_state["bit_generator"],
            "state": {
                "counter": np.asarray(rng_state["state"]["counter"]).tolist(),
                "key": np.asarray(rng_state["state"]["key"]).tolist(),
            },
            "buffer": np.asarray(rng_state["buffer"]).tolist(),
            "buffer_pos": int(rng_state["buffer_pos"]),
            "has_uint32": int(rng_state["has_uint32"]),
            "uinteger": int(rng_state["uinteger"]),
        },
    }


def oracle_state_from_dict(payload: dict, graph: SimilarityGraph) -> OracleState:
    membership = np.asarray(payload["membership"], dtype=np.int8)
    bitgen = np.random.Philox()
    bitgen.state = {
        "bit_generator": payload["rng"]["bit_generator"],
        "state": {
            "counter": np.asarray(payload["rng"]["state"]["counter"], dtype=np.uint64),
            "key": np.asarray(payload["rng"]["state"]["key"], dtype=np.uint64),
        },
        "buffer": np.asarray(payload["rng"]["buffer"], dtype=np.uint64),
        "buffer_pos": int(payload["rng"]["buffer_pos"]),
        "has_uint32": int(payload["rng"]["has_uint32"]),
        "uinteger": int(payload["rng"]["uinteger"]),
    }
    return OracleState(
        graph=graph,
        membership=membership,
        templates=[None if t is None else int(t) for t in payload["templates"]],
        queries_made=int(payload["queries_made"]),
        step=int(payload["step"]),
        rng=np.random.Generator(bitgen),
        next_batch_id=int(payload["next_batch_id"]),
        open_batch_id=None,
    )


class SimulatedLabeler:
    """Truthful answers backed by hidden ground-truth labels."""

    responder = "simulated"

    def __init__(self, hidden_labels):
        self.labels = np.asarray(hidden_labels, dtype=int)

    def answer(self, batch: QueryBatch) -> AnswerSet:
        if batch.kind == PAIR:
            answers = [bool(self.labels[i] == self.labels[j]) for i, j in batch.pairs]
        else:
            if batch.template_node is not None:
                target = int(self.labels[batch.template_node])
            else:
                target = int(batch.template_class)
            answers = [bool(self.labels[i] == target) for i in batch.candidates]
        return AnswerSet(batch_id=batch.batch_id, answers=answers, responder=self.responder)


class NoisyLabeler:
    """Noise wrapper: flip answers independently, or corrupt a fixed share
    of the hidden labels once up front."""

    responder = "simulated"

    def __init__(self, inner: SimulatedLabeler, flip_probability: float, mode: str, seed: int):
        if not 0.0 <= flip_probability <= 1.0:
            raise ValueError("flip_probability must be in [0, 1]")
        if mode not in ("per-answer", "corrupt-labels"):
            raise ValueError(f"unknown noise mode {mode!r}")
        self.inner = inner
        self.p = flip_probability
        self.mode = mode
        self.rng = make_rng(seed, _STREAM_NOISE)
        if mode == "corrupt-labels" and self.p > 0:
            labels = self.inner.labels.copy()
            n = len(labels)
            classes = int(labels.max()) + 1
            count = int(np.floor(self.p * n))
            if count and classes > 1:
                idx = self.rng.choice(n, size=count, replace=False)
                shift = self.rng.integers(1, classes, size=count)
                labels[idx] = (labels[idx] + shift) % classes
            self.inner = SimulatedLabeler(labels)

    def answer(self, batch: QueryBatch) -> AnswerSet:
        reply = self.inner.answer(batch)
        if self.mode == "per-answer":
            flips = self.rng.uniform(size=len(reply.answers)) < self.p
            reply.answers = [bool(a) ^ bool(f) for a, f in zip(reply.answers, flips)]
        return reply


class HumanLabelerAdapter:
    """Bridges an oracle loop to answers arriving over a queue.

    Blocks until an :class:`AnswerSet` for the outstanding batch shows up;
    answers for other batch ids are rejected with a diagnostic and the wait
    continues.  A timeout surfaces as :class:`LabelerTimeoutError` so the
    run can persist its state and pause.
    """

    responder = "human"

    def __init__(self, answer_queue: "queue.Queue", timeout: float = 3600.0):
        self.queue = answer_queue
        self.timeout = timeout
        self.rejected: list = []

    def answer(self, batch: QueryBatch) -> AnswerSet:
        deadline = self.timeout
        while True:
            try:
                reply = self.queue.get(timeout=deadline)
            except queue.Empty as exc:
                raise LabelerTimeoutError(
                    f"no answers for batch {batch.batch_id} within {self.timeout}s"
                ) from exc
            if reply.batch_id != batch.batch_id:
                self.rejected.append(reply.batch_id)
                continue
            if len(reply.answers) != batch.size():
                raise ValueError(
                    f"batch {batch.batch_id} needs {batch.size()} answers, "
                    f"got {len(reply.answers)}"
                )
            reply.responder = self.responder
            return reply
