"""Similarity graphs over a dataset and the operations that build and read them.

The central object is :class:`SimilarityGraph`: a symmetric matrix over
samples in which every entry is either *unknown* or *known* with a real
value.  By convention a known value of ``+1`` records an observed positive
(same-class) relation and ``-1`` an observed negative one; supervised graphs
built from one-hot labels carry ``0`` for cross-class pairs, and mixed
graphs carry fractional weights.  Unknown is deliberately distinct from a
known zero: the contrastive graph variant remaps observed zeros to ``-1``
while unknown entries stay neutral.

Densification maps unknown entries to ``0`` so the matrix can feed spectral
solvers and graph-form losses directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Membership matrix cell states (node-vs-class knowledge).
MEMBER_UNKNOWN = 0
MEMBER_YES = 1
MEMBER_NO = -1

CONTIGUOUS = "contiguous"
STRIDED = "strided"


class GraphFormatError(ValueError):
    """Raised when parsing a serialized graph fails."""


class TemplateError(ValueError):
    """Raised when class templates do not map one-to-one onto components."""


class SimilarityGraph:
    """Symmetric n-by-n store of {unknown, known(value)} entries.

    Entries are held in dense value/known arrays (the design envelope is a
    few thousand nodes, where dense storage is both simpler and faster than
    coordinate maps).  Symmetry is enforced by construction: every write
    lands on ``(i, j)`` and ``(j, i)``.
    """

    __slots__ = ("n", "_values", "_known")

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"node count must be >= 1, got {n}")
        self.n = int(n)
        self._values = np.zeros((n, n), dtype=np.float64)
        self._known = np.zeros((n, n), dtype=bool)

    # -- basic access -------------------------------------------------

    def _check_index(self, i: int, j: int) -> None:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"entry ({i}, {j}) out of range for n={self.n}")

    def is_known(self, i: int, j: int) -> bool:
        self._check_index(i, j)
        return bool(self._known[i, j])

    def value(self, i: int, j: int):
        """Known value at (i, j), or None when the entry is unknown."""
        self._check_index(i, j)
        if not self._known[i, j]:
            return None
        return float(self._values[i, j])

    def set_known(self, i: int, j: int, value: float) -> bool:
        """Record a known entry (symmetrically). Returns True if it was new."""
        self._check_index(i, j)
        was_new = not self._known[i, j]
        self._values[i, j] = value
        self._values[j, i] = value
        self._known[i, j] = True
        self._known[j, i] = True
        return was_new

    def forget(self, i: int, j: int) -> None:
        """Drop an entry back to unknown (used by the missing-entry sweep)."""
        self._check_index(i, j)
        self._known[i, j] = False
        self._known[j, i] = False
        self._values[i, j] = 0.0
        self._values[j, i] = 0.0

    # -- whole-matrix views -------------------------------------------

    def dense(self) -> np.ndarray:
        """Dense matrix with unknown entries mapped to 0."""
        return np.where(self._known, self._values, 0.0)

    def known_mask(self) -> np.ndarray:
        return self._known.copy()

    def known_count(self) -> int:
        """Number of known canonical entries (i <= j)."""
        return int(np.triu(self._known).sum())

    def known_fraction(self) -> float:
        total = self.n * (self.n + 1) // 2
        return self.known_count() / total

    def entries(self):
        """Yield (i, j, value) for every known canonical entry, row-major."""
        ii, jj = np.nonzero(np.triu(self._known))
        vals = self._values[ii, jj]
        for i, j, v in zip(ii.tolist(), jj.tolist(), vals.tolist()):
            yield i, j, v

    def positive_edges(self) -> np.ndarray:
        """(m, 2) array of i < j pairs whose known value is > 0."""
        mask = np.triu(self._known & (self._values > 0.0), k=1)
        ii, jj = np.nonzero(mask)
        return np.stack([ii, jj], axis=1) if len(ii) else np.empty((0, 2), dtype=int)

    def copy(self) -> "SimilarityGraph":
        g = SimilarityGraph(self.n)
        g._values = self._values.copy()
        g._known = self._known.copy()
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimilarityGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self._known, other._known)
            and np.array_equal(
                np.where(self._known, self._values, 0.0),
                np.where(other._known, other._values, 0.0),
            )
        )

    def __repr__(self) -> str:
        return f"SimilarityGraph(n={self.n}, known={self.known_count()})"

    @classmethod
    def from_arrays(cls, values: np.ndarray, known: np.ndarray) -> "SimilarityGraph":
        values = np.asarray(values, dtype=np.float64)
        known = np.asarray(known, dtype=bool)
        if values.shape != known.shape or values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("values and known must be matching square matrices")
        if not np.array_equal(known, known.T):
            raise ValueError("known mask must be symmetric")
        if not np.array_equal(np.where(known, values, 0.0), np.where(known, values, 0.0).T):
            raise ValueError("known values must be symmetric")
        g = cls(values.shape[0])
        g._values = np.where(known, values, 0.0)
        g._known = known.copy()
        return g


@dataclass(frozen=True)
class LabelMatrix:
    """One-hot label rows; an all-zero row means the label is unknown."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("label matrix must be 2-d")
        if not np.isin(rows, (0.0, 1.0)).all():
            raise ValueError("label matrix entries must be 0 or 1")
        sums = rows.sum(axis=1)
        if not np.isin(sums, (0.0, 1.0)).all():
            raise ValueError("each label row must sum to 0 or 1")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_labels(cls, labels, num_classes: int | None = None) -> "LabelMatrix":
        labels = np.asarray(labels, dtype=int)
        c = int(num_classes) if num_classes is not None else int(labels.max()) + 1
        rows = np.zeros((len(labels), c))
        rows[np.arange(len(labels)), labels] = 1.0
        return cls(rows)

    @classmethod
    def from_partial(cls, labels, mask, num_classes: int | None = None) -> "LabelMatrix":
        labels = np.asarray(labels, dtype=int)
        mask = np.asarray(mask, dtype=bool)
        c = int(num_classes) if num_classes is not None else int(labels.max()) + 1
        rows = np.zeros((len(labels), c))
        idx = np.nonzero(mask)[0]
        rows[idx, labels[idx]] = 1.0
        return cls(rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def c(self) -> int:
        return self.rows.shape[1]

    def labeled_mask(self) -> np.ndarray:
        return self.rows.sum(axis=1) > 0

    def to_labels(self) -> np.ndarray:
        """Per-row class id, -1 where the row is unlabeled."""
        out = np.where(self.labeled_mask(), self.rows.argmax(axis=1), -1)
        return out.astype(int)


@dataclass(frozen=True)
class AugmentationLayout:
    """Index layout of n0 original samples expanded into views and epochs.

    ``contiguous`` groups all views of a sample in consecutive rows; the
    ``strided`` layout interleaves samples so that view a of sample s sits
    at row ``s + a * n0``.  Both describe the same multiset of positive
    groups up to a node permutation.
    """

    n0: int
    views: int
    epochs: int = 1
    layout: str = CONTIGUOUS

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.views < 1:
            raise ValueError("views must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.layout not in (CONTIGUOUS, STRIDED):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def group_size(self) -> int:
        return self.views * self.epochs

    @property
    def node_count(self) -> int:
        return self.n0 * self.group_size

    def group_of(self, node: int) -> int:
        """Original-sample id of a node."""
        if not 0 <= node < self.node_count:
            raise IndexError(f"node {node} out of range")
        if self.layout == CONTIGUOUS:
            return node // self.group_size
        return node % self.n0

    def views_of(self, sample: int) -> np.ndarray:
        """Node ids of a sample's views, ordered by (epoch, view)."""
        if not 0 <= sample < self.n0:
            raise IndexError(f"sample {sample} out of range")
        a = np.arange(self.group_size)
        if self.layout == CONTIGUOUS:
            return sample * self.group_size + a
        return sample + a * self.n0


def build_ssl_graph(layout: AugmentationLayout) -> SimilarityGraph:
    """Positive-pair graph of augmented views: +1 between distinct views of
    the same original sample, everything else (diagonal included) unknown."""
    if layout.views < 2:
        raise ValueError("need at least 2 views per sample to form positive pairs")
    n = layout.node_count
    g = SimilarityGraph(n)
    if layout.layout == CONTIGUOUS:
        groups = np.arange(n) // layout.group_size
    else:
        groups = np.arange(n) % layout.n0
    same = groups[:, None] == groups[None, :]
    np.fill_diagonal(same, False)
    g._values = np.where(same, 1.0, 0.0)
    g._known = same.copy()
    return g


def build_sup_graph(labels: LabelMatrix) -> SimilarityGraph:
    """Fully-known graph of one-hot labels: +1 for same class (diagonal
    included), 0 for different classes."""
    if not labels.labeled_mask().all():
        raise ValueError("all rows must be labeled; use build_partial_sup_graph")
    g = SimilarityGraph(labels.n)
    g._values = labels.rows @ labels.rows.T
    g._known = np.ones((labels.n, labels.n), dtype=bool)
    return g


def build_partial_sup_graph(labels: LabelMatrix) -> SimilarityGraph:
    """Supervised graph restricted to pairs whose rows are both labeled."""
    g = SimilarityGraph(labels.n)
    m = labels.labeled_mask()
    g._values = labels.rows @ labels.rows.T
    g._known = m[:, None] & m[None, :]
    g._values[~g._known] = 0.0
    return g


def mix_graphs(g_ssl: SimilarityGraph, labels: LabelMatrix, alpha: float) -> SimilarityGraph:
    """Convex combination of a positive-pair graph with the partial
    supervised graph of the known labels.

    The densified output equals ``(1 - alpha) * dense(g_ssl) + alpha * Y Y^T``
    exactly; an entry is known wherever either input contributes one.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if g_ssl.n != labels.n:
        raise ValueError(f"node counts differ: graph {g_ssl.n} vs labels {labels.n}")
    g_sup = build_partial_sup_graph(labels)
    out = SimilarityGraph(g_ssl.n)
    out._known = g_ssl._known | g_sup._known
    out._values = (1.0 - alpha) * g_ssl.dense() + alpha * g_sup.dense()
    out._values[~out._known] = 0.0
    return out


def to_contrastive(g: SimilarityGraph) -> SimilarityGraph:
    """Remap observed zeros to -1 so dissimilarity is explicit; unknown
    entries stay unknown, every other known value is untouched."""
    out = g.copy()
    zero = out._known & (out._values == 0.0)
    out._values[zero] = -1.0
    return out


def degree_matrix(g: SimilarityGraph) -> np.ndarray:
    """Row sums of the densified graph (the diagonal of D = diag(G 1))."""
    return g.dense().sum(axis=1)


class UnionFind:
    """Union-find with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.count = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.count -= 1
        return True


def connected_components(g: SimilarityGraph) -> tuple[int, np.ndarray]:
    """Components of the positive part of the graph.

    Edges are entries known with value > 0; negatives and unknowns are
    non-edges, isolated nodes are singletons.  Component ids are 0-based in
    order of each component's smallest member.
    """
    uf = UnionFind(g.n)
    for i, j in g.positive_edges():
        uf.union(int(i), int(j))
    ids: dict[int, int] = {}
    assignment = np.empty(g.n, dtype=int)
    for node in range(g.n):
        root = uf.find(node)
        if root not in ids:
            ids[root] = len(ids)
        assignment[node] = ids[root]
    return len(ids), assignment


@dataclass
class DeductionResult:
    """Entries a deduction pass added, plus any contradictions it hit."""

    new_entries: list = field(default_factory=list)   # (i, j, value), i <= j
    conflicts: list = field(default_factory=list)     # (i, j, existing, implied)


def _determined_classes(membership: np.ndarray) -> np.ndarray:
    """Per-node class id from a Yes cell, -1 where undetermined."""
    yes = membership == MEMBER_YES
    if (yes.sum(axis=1) > 1).any():
        raise ValueError("membership has a row with more than one Yes")
    return np.where(yes.any(axis=1), yes.argmax(axis=1), -1)


def deduce_from_membership(
    membership: np.ndarray,
    g: SimilarityGraph,
    policy: str = "keep-first",
    votes: dict | None = None,
) -> DeductionResult:
    """Fill graph entries implied by node-vs-class knowledge.

    For nodes i, j with membership evidence: same confirmed class gives
    entry +1; different confirmed classes give -1; a confirmed class for i
    together with a No for j at that class gives -1.  Only entries that were
    unknown are written; a known entry whose sign contradicts the implied
    one is reported as a conflict.  Policies: ``keep-first`` (default) never
    overwrites, ``overwrite`` takes the newly implied value, ``majority``
    tallies sign votes in the caller-owned ``votes`` dict ((i, j) ->
    [positive, negative]) and stores whichever sign leads, ties keeping the
    current value.
    """
    membership = np.asarray(membership)
    n, c = membership.shape
    if n != g.n:
        raise ValueError(f"membership rows {n} != graph nodes {g.n}")
    if policy not in ("keep-first", "overwrite", "majority"):
        raise ValueError(f"unknown conflict policy {policy!r}")
    if policy == "majority" and votes is None:
        votes = {}
    det = _determined_classes(membership)
    has = det >= 0
    no = membership == MEMBER_NO

    both = has[:, None] & has[None, :]
    same = both & (det[:, None] == det[None, :])
    diff = both & (det[:, None] != det[None, :])
    # i determined with class c, j answered No at c.
    safe = np.where(has, det, 0)
    no_at_det = has[:, None] & no[:, safe].T
    implied_neg = diff | no_at_det | no_at_det.T
    implied = same | implied_neg
    target = np.where(same, 1.0, np.where(implied_neg, -1.0, 0.0))

    known = g._known
    result = DeductionResult()

    conflict_mask = implied & known & ((g._values > 0) != (target > 0))
    for i, j in np.argwhere(np.triu(conflict_mask)):
        key = (int(i), int(j))
        existing = float(g._values[i, j])
        implied_value = float(target[i, j])
        result.conflicts.append((key[0], key[1], existing, implied_value))
        if policy == "overwrite":
            g.set_known(key[0], key[1], implied_value)
        elif policy == "majority":
            tally = votes.setdefault(key, [0, 0])
            if tally == [0, 0]:
                tally[0 if existing > 0 else 1] += 1  # standing value's vote
            tally[0 if implied_value > 0 else 1] += 1
            leading = 1.0 if tally[0] > tally[1] else (-1.0 if tally[1] > tally[0] else None)
            if leading is not None and (existing > 0) != (leading > 0):
                g.set_known(key[0], key[1], leading)

    new_mask = implied & ~known
    for i, j in np.argwhere(np.triu(new_mask)):
        v = float(target[i, j])
        g.set_known(int(i), int(j), v)
        result.new_entries.append((int(i), int(j), v))
        if votes is not None:
            votes.setdefault((int(i), int(j)), [0, 0])[0 if v > 0 else 1] += 1
    return result


def recover_labels(g: SimilarityGraph, templates) -> LabelMatrix:
    """Read exact labels off a complete supervised graph.

    ``templates`` is a list of (node, class id) pairs, one node per class
    present.  Each positive-edge component inherits its template's class.
    Component labeling keeps the recovery in integer arithmetic, so the
    result is exact rather than up to a rotation.
    """
    if not g.known_mask().all():
        raise ValueError("graph must be complete (every entry known)")
    count, assignment = connected_components(g)
    comp_class: dict[int, int] = {}
    for node, cls in templates:
        comp = int(assignment[node])
        if comp in comp_class:
            raise TemplateError(
                f"templates for classes {comp_class[comp]} and {cls} fall in one component"
            )
        comp_class[comp] = int(cls)
    missing = [comp for comp in range(count) if comp not in comp_class]
    if missing:
        raise TemplateError(f"components without a template: {missing}")
    labels = np.array([comp_class[int(a)] for a in assignment], dtype=int)
    return LabelMatrix.from_labels(labels, num_classes=max(labels) + 1)


@dataclass(frozen=True)
class EigenSquareRoot:
    """Top-k eigen square root Z of a symmetric matrix, with Z Z^T ~= G."""

    z: np.ndarray
    eigenvalues: np.ndarray   # top-k, descending, before clipping
    clipped: int              # count of negative eigenvalues clipped to 0


def eigen_square_root(g: SimilarityGraph, k: int) -> EigenSquareRoot:
    """Z = V sqrt(max(w, 0)) over the top-k eigenpairs (descending), padded
    with zero columns when k exceeds the node count."""
    if k < 1:
        raise ValueError("k must be >= 1")
    w, v = np.linalg.eigh(g.dense())
    order = np.argsort(w)[::-1][: min(k, g.n)]
    top_w = w[order]
    top_v = v[:, order]
    clipped = int((top_w < 0).sum())
    z = top_v * np.sqrt(np.clip(top_w, 0.0, None))
    if k > g.n:
        z = np.hstack([z, np.zeros((g.n, k - g.n))])
        top_w = np.concatenate([top_w, np.zeros(k - g.n)])
    return EigenSquareRoot(z=z, eigenvalues=top_w, clipped=clipped)


# -- serialization ----------------------------------------------------

GRAPH_FORMAT_VERSION = "v1"


def save_graph(g: SimilarityGraph, path) -> None:
    """Write the graph as text: header then one line per known entry."""
    lines = [f"pal-graph {GRAPH_FORMAT_VERSION} n={g.n}"]
    for i, j, v in g.entries():
        lines.append(f"{i} {j} {v!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path) -> SimilarityGraph:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 3 or parts[0] != "pal-graph":
            raise GraphFormatError(f"bad header: {header!r}")
        if parts[1] != GRAPH_FORMAT_VERSION:
            raise GraphFormatError(f"unsupported graph format version {parts[1]!r}")
        if not parts[2].startswith("n="):
            raise GraphFormatError(f"bad node count field: {parts[2]!r}")
        n = int(parts[2][2:])
        g = SimilarityGraph(n)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise GraphFormatError(f"line {lineno}: expected 'i j value', got {line!r}")
            i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
            if i > j:
                raise GraphFormatError(f"line {lineno}: entries must be stored with i <= j")
            g.set_known(i, j, v)
    return g
