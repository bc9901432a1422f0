"""Graph-form SSL losses, their two-view originals, and hand-derived gradients.

All losses are pure functions of an embedding ``z`` (N x K) and either a
:class:`~pal.graph.SimilarityGraph` or a dense symmetric matrix.  Unknown
graph entries contribute 0 everywhere; contrastive behaviour comes from
remapping the graph with :func:`pal.graph.to_contrastive` beforehand, never
inside a loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SimilarityGraph


@dataclass(frozen=True)
class LossConfig:
    """Hyper-parameters shared by the loss family.

    ``tau`` is the softmax temperature, ``alpha``/``beta`` weight the
    variance hinge and covariance penalty, ``lambda_bt`` weights the
    off-diagonal cross-correlation term.
    """

    tau: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    lambda_bt: float = 1.0

    def __post_init__(self):
        for name in ("tau", "alpha", "beta", "lambda_bt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class PairIndexSets:
    """Invariance pairs I and regularization pairs J, repeats allowed."""

    i_set: np.ndarray
    j_set: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "i_set", _as_pairs(self.i_set))
        object.__setattr__(self, "j_set", _as_pairs(self.j_set))

    def validate(self, n: int) -> None:
        for name, pairs in (("I", self.i_set), ("J", self.j_set)):
            if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
                raise IndexError(f"pair set {name} has indices outside [0, {n})")


def _as_pairs(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=int)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pair sets must have shape (m, 2)")
    return arr


def _dense(g) -> np.ndarray:
    if isinstance(g, SimilarityGraph):
        return g.dense()
    return np.asarray(g, dtype=np.float64)


def _check_match(z: np.ndarray, G: np.ndarray) -> None:
    if G.shape[0] != G.shape[1] or G.shape[0] != z.shape[0]:
        raise ValueError(f"embedding rows {z.shape[0]} != graph nodes {G.shape[0]}")


def vic2_loss(z: np.ndarray, g) -> float:
    """Squared Frobenius distance between Z Z^T and the densified graph."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    d = z @ z.T - G
    return float((d * d).sum())


def spectral_contrastive_expansion(z: np.ndarray, g) -> float:
    """-2 tr(G Z Z^T) + ||Z Z^T||_F^2, which is vic2_loss minus ||G||_F^2."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    zzt = z @ z.T
    return float(-2.0 * (G * zzt).sum() + (zzt * zzt).sum())


def spectral_contrastive_loss(z1: np.ndarray, z2: np.ndarray) -> float:
    """Two-view contrastive objective: -2 <Z1, Z2> plus the mean squared
    cross-view inner products over distinct sample pairs."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    n = z1.shape[0]
    ip = z1 @ z2.T
    diag = np.trace(ip)
    off_sq = (ip * ip).sum() - (np.diagonal(ip) ** 2).sum()
    return float(-2.0 * diag + off_sq / n)


def simclr_graph_loss(
    z: np.ndarray,
    g,
    tau: float = 1.0,
    exclude_diagonal: bool = True,
) -> float:
    """Graph-weighted InfoNCE on row-normalized embeddings.

    Cosine similarities are divided by ``tau``; each row's log-sum-exp
    denominator excludes the self term by default (set
    ``exclude_diagonal=False`` for the sum-over-all-k variant).
    """
    if tau <= 0:
        raise ValueError("tau must be strictly positive")
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("simclr loss undefined for zero-norm rows")
    s = (z / norms) @ (z / norms).T / tau
    logits = s.copy()
    if exclude_diagonal:
        np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(logits - row_max).sum(axis=1))
    return float(-(G * (s - lse[:, None])).sum())


def barlow_twins_graph_loss(z: np.ndarray, g) -> float:
    """||Ztilde^T G Ztilde - I||_F^2 with Ztilde column-normalized."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    col_norms = np.linalg.norm(z, axis=0, keepdims=True)
    if (col_norms == 0).any():
        raise ValueError("barlow twins loss undefined for zero-norm columns")
    zt = z / col_norms
    d = zt.T @ G @ zt - np.eye(z.shape[1])
    return float((d * d).sum())


def vicreg_original_loss(
    z1: np.ndarray,
    z2: np.ndarray,
    cfg: LossConfig,
    cov_ddof: int = 1,
) -> float:
    """Two-view variance/invariance/covariance objective.

    The covariance matrix is taken over the stacked views with divisor
    ``2N - cov_ddof`` (sample covariance by default).
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    n, k = z1.shape
    if n < 2:
        raise ValueError("need at least 2 samples for the covariance term")
    stacked = np.vstack([z1, z2])
    cov = np.atleast_2d(np.cov(stacked, rowvar=False, ddof=cov_ddof))
    variance_hinge = np.clip(1.0 - np.sqrt(np.clip(np.diag(cov), 0.0, None)), 0.0, None).sum()
    off = cov - np.diag(np.diag(cov))
    covariance = (off * off).sum()
    invariance = ((z1 - z2) ** 2).sum() / n
    return float(cfg.alpha * variance_hinge + cfg.beta * covariance + invariance)


def pair_regularizer(a: np.ndarray, b: np.ndarray) -> float:
    """R(a, b) = (a . b)^2 - ||a||^2 - ||b||^2."""
    ab = float(np.dot(a, b))
    return ab * ab - float(np.dot(a, a)) - float(np.dot(b, b))


def vic2_stochastic(z: np.ndarray, g, pairs: PairIndexSets) -> float:
    """Minibatch estimator: graph-weighted squared distances over I plus
    the pairwise regularizer over J; unknown entries weigh 0."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    pairs.validate(z.shape[0])
    total = 0.0
    if pairs.i_set.size:
        i, j = pairs.i_set[:, 0], pairs.i_set[:, 1]
        d = z[i] - z[j]
        total += float((G[i, j] * (d * d).sum(axis=1)).sum())
    if pairs.j_set.size:
        i, j = pairs.j_set[:, 0], pairs.j_set[:, 1]
        ip = (z[i] * z[j]).sum(axis=1)
        total += float((ip * ip - (z[i] * z[i]).sum(axis=1) - (z[j] * z[j]).sum(axis=1)).sum())
    return total


def vic2_gradient(z: np.ndarray, g) -> np.ndarray:
    """d/dZ of vic2_loss: 4 (Z Z^T - G) Z for symmetric G."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    return 4.0 * (z @ z.T - G) @ z


def stochastic_gradient(z: np.ndarray, g, pairs: PairIndexSets) -> np.ndarray:
    """d/dZ of vic2_stochastic; rows outside I union J stay zero."""
    z = np.asarray(z, dtype=np.float64)
    G = _dense(g)
    _check_match(z, G)
    pairs.validate(z.shape[0])
    grad = np.zeros_like(z)
    if pairs.i_set.size:
        i, j = pairs.i_set[:, 0], pairs.i_set[:, 1]
        d = z[i] - z[j]
        w = (2.0 * G[i, j])[:, None] * d
        np.add.at(grad, i, w)
        np.add.at(grad, j, -w)
    if pairs.j_set.size:
        i, j = pairs.j_set[:, 0], pairs.j_set[:, 1]
        ip = (z[i] * z[j]).sum(axis=1)[:, None]
        np.add.at(grad, i, 2.0 * ip * z[j] - 2.0 * z[i])
        np.add.at(grad, j, 2.0 * ip * z[i] - 2.0 * z[j])
    return grad
