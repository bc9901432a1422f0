"""Closed-form kernel embeddings, linear probing, and the SGD training path.

The closed-form route embeds a similarity graph by taking the top
eigenpairs of ``G - ridge * (K + jitter I)^{-1}`` for a Gaussian kernel
matrix K, scaling eigenvectors by the square roots of the clipped
eigenvalues so that Z Z^T approximates G, and extending out of sample
through the kernel's dual coefficients.  The SGD route trains a linear head
on random Fourier features with minibatch pair gradients instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graph import SimilarityGraph, LabelMatrix
from .losses import PairIndexSets, stochastic_gradient, vic2_stochastic
from .rng import make_rng

_STREAM_RFF = 11
_STREAM_SGD = 12

DIVERGENCE_LIMIT = 1e12


class SolverError(RuntimeError):
    """Raised when an embedding solve cannot proceed."""


class ProbeSingularError(SolverError):
    """Normal equations singular; retry with a positive probe ridge."""


class SgdDivergenceError(SolverError):
    """Stochastic training diverged past the loss guard."""


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian-kernel solver settings."""

    bandwidth: float = 0.5
    ridge: float = 1e-6
    jitter: float = 1e-8
    embed_dim: int = 5

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be strictly positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.jitter <= 0:
            raise ValueError("jitter must be strictly positive")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")


@dataclass
class KernelModel:
    """Trained embedding plus everything needed to extend it out of sample."""

    train_points: np.ndarray
    dual_coefficients: np.ndarray
    config: KernelConfig
    embedding: np.ndarray
    eigenvalues: np.ndarray   # top embed_dim, descending, before clipping
    eigengap: float           # last kept eigenvalue minus first dropped
    clipped: int


def gaussian_kernel_matrix(x: np.ndarray, bandwidth: float) -> np.ndarray:
    """K_ij = exp(-||x_i - x_j||^2 / (2 bandwidth^2)); symmetric, unit diagonal."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be strictly positive")
    x = np.asarray(x, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.clip(d2, 0.0, None, out=d2)
    k = np.exp(-d2 / (2.0 * bandwidth * bandwidth))
    np.fill_diagonal(k, 1.0)
    return k


def gaussian_kernel_cross(x_new: np.ndarray, x_train: np.ndarray, bandwidth: float) -> np.ndarray:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be strictly positive")
    x_new = np.atleast_2d(np.asarray(x_new, dtype=np.float64))
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_new.shape[1] != x_train.shape[1]:
        raise ValueError(
            f"dimension mismatch: new points have {x_new.shape[1]} features, "
            f"train points have {x_train.shape[1]}"
        )
    d2 = (
        (x_new * x_new).sum(axis=1)[:, None]
        + (x_train * x_train).sum(axis=1)[None, :]
        - 2.0 * (x_new @ x_train.T)
    )
    np.clip(d2, 0.0, None, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def _dense(g) -> np.ndarray:
    if isinstance(g, SimilarityGraph):
        return g.dense()
    return np.asarray(g, dtype=np.float64)


def solve_embedding(g, x: np.ndarray, cfg: KernelConfig) -> KernelModel:
    """Closed-form embedding from a graph: top eigenpairs of the kernel-
    regularized graph matrix, square-root scaled, with dual coefficients
    for out-of-sample evaluation."""
    G = _dense(g)
    x = np.asarray(x, dtype=np.float64)
    if G.shape[0] != x.shape[0]:
        raise ValueError(f"graph nodes {G.shape[0]} != point count {x.shape[0]}")
    if not (np.isfinite(G).all() and np.isfinite(x).all()):
        raise SolverError("non-finite inputs to the embedding solve")
    n = x.shape[0]
    kmat = gaussian_kernel_matrix(x, cfg.bandwidth)
    kmat[np.diag_indices_from(kmat)] += cfg.jitter
    try:
        cho = scipy.linalg.cho_factor(kmat, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SolverError(f"kernel matrix not positive definite: {exc}") from exc
    if cfg.ridge > 0:
        kinv = scipy.linalg.cho_solve(cho, np.eye(n))
        m = G - cfg.ridge * kinv
    else:
        m = G.copy()
    m = (m + m.T) / 2.0
    w, v = np.linalg.eigh(m)
    k = min(cfg.embed_dim, n)
    order = np.argsort(w)[::-1]
    top = order[:k]
    lam = w[top]
    z = v[:, top] * np.sqrt(np.clip(lam, 0.0, None))
    if cfg.embed_dim > n:
        z = np.hstack([z, np.zeros((n, cfg.embed_dim - n))])
        lam = np.concatenate([lam, np.zeros(cfg.embed_dim - n)])
    eigengap = float(lam[k - 1] - w[order[k]]) if k < n else float("inf")
    dual = scipy.linalg.cho_solve(cho, z)
    return KernelModel(
        train_points=x,
        dual_coefficients=dual,
        config=cfg,
        embedding=z,
        eigenvalues=lam,
        eigengap=eigengap,
        clipped=int((lam < 0).sum()),
    )


def evaluate_embedding(model: KernelModel, x_new: np.ndarray) -> np.ndarray:
    """f(x) = k(x, train points) @ dual coefficients, row-wise."""
    cross = gaussian_kernel_cross(x_new, model.train_points, model.config.bandwidth)
    return cross @ model.dual_coefficients


@dataclass
class LinearProbe:
    """Ridge least-squares map from embeddings to one-hot targets."""

    weights: np.ndarray    # (C, K)
    intercept: np.ndarray  # (C,)

    def predict(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.weights.T + self.intercept


def fit_linear_probe(z: np.ndarray, labels: LabelMatrix, ridge: float) -> LinearProbe:
    """Fit W, b minimizing ||Z W^T + b - Y||^2 + ridge ||W||^2.

    The intercept is unpenalized (fit via centering), so a zero embedding
    yields the class-frequency predictor.  A singular system is signaled
    rather than silently least-squared; it can only happen at ridge = 0
    with rank-deficient Z.
    """
    z = np.asarray(z, dtype=np.float64)
    y = labels.rows
    if z.shape[0] != y.shape[0]:
        raise ValueError(f"embedding rows {z.shape[0]} != label rows {y.shape[0]}")
    if not labels.labeled_mask().all():
        raise ValueError("probe training requires every row to be labeled")
    z_mean = z.mean(axis=0)
    y_mean = y.mean(axis=0)
    zc = z - z_mean
    normal = zc.T @ zc + ridge * np.eye(z.shape[1])
    try:
        cho = scipy.linalg.cho_factor(normal, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ProbeSingularError(
            f"normal equations singular at ridge={ridge}; raise the probe ridge"
        ) from exc
    wt = scipy.linalg.cho_solve(cho, zc.T @ (y - y_mean))
    weights = wt.T
    intercept = y_mean - weights @ z_mean
    return LinearProbe(weights=weights, intercept=intercept)


def probe_error(probe: LinearProbe, z_test: np.ndarray, labels_test: LabelMatrix):
    """(mse, zero_one): mean squared error over samples and coordinates, and
    the argmax misclassification rate (ties resolve to the lowest class)."""
    pred = probe.predict(z_test)
    y = labels_test.rows
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {y.shape}")
    mse = float(((pred - y) ** 2).mean())
    zero_one = float((pred.argmax(axis=1) != y.argmax(axis=1)).mean())
    return mse, zero_one


@dataclass(frozen=True)
class FourierFeatureMap:
    """Random Fourier features approximating the Gaussian kernel."""

    frequencies: np.ndarray  # (D, F)
    phases: np.ndarray       # (F,)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        f = self.frequencies.shape[1]
        return np.sqrt(2.0 / f) * np.cos(x @ self.frequencies + self.phases)


def random_fourier_features(
    input_dim: int, feature_count: int, bandwidth: float, seed: int
) -> FourierFeatureMap:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be strictly positive")
    if feature_count < 1:
        raise ValueError("feature_count must be >= 1")
    rng = make_rng(seed, _STREAM_RFF)
    freqs = rng.standard_normal((input_dim, feature_count)) / bandwidth
    phases = rng.uniform(0.0, 2.0 * np.pi, size=feature_count)
    return FourierFeatureMap(frequencies=freqs, phases=phases)


@dataclass
class SgdResult:
    embedding: np.ndarray  # features @ theta after the last step
    theta: np.ndarray      # (F, K)
    final_loss: float      # last minibatch objective value


def uniform_pair_sampler(n: int, pairs_per_step: int):
    """I and J are the same uniform minibatch of index pairs from [N]^2."""

    def sample(rng: np.random.Generator, t: int) -> PairIndexSets:
        pairs = rng.integers(0, n, size=(pairs_per_step, 2))
        return PairIndexSets(pairs, pairs)

    return sample


def debiased_pair_sampler(g, pairs_per_step: int):
    """I uniform over known-positive entries, J uniform over [N]^2.

    With equal batch sizes the norm terms of the pair regularizer cancel
    the invariance term's degree weighting in expectation, so the
    stationary points have the graph's eigenvector structure instead of
    the norm-inflated one the plain uniform sampler converges to.
    """
    dense = _dense(g)
    n = dense.shape[0]
    positives = np.argwhere(dense > 0)
    if len(positives) == 0:
        raise ValueError("graph has no positive entries to sample from")

    def sample(rng: np.random.Generator, t: int) -> PairIndexSets:
        i_set = positives[rng.integers(0, len(positives), size=pairs_per_step)]
        j_set = rng.integers(0, n, size=(pairs_per_step, 2))
        return PairIndexSets(i_set, j_set)

    return sample


def sgd_train(
    g,
    features: np.ndarray,
    schedule,
    steps: int,
    pair_sampler,
    embed_dim: int,
    seed: int = 0,
    theta0: np.ndarray | None = None,
    tail_average_fraction: float = 0.0,
) -> SgdResult:
    """Train a linear head theta on fixed features by minibatch pair descent.

    ``schedule`` is a scalar step size, an array of per-step sizes, or a
    callable t -> gamma_t.  The sampler returns the pair sets for step t;
    unknown graph entries contribute zero.  With a positive
    ``tail_average_fraction`` the returned theta is the running average over
    that final share of the steps, which removes most minibatch noise.
    Training aborts with a diagnostic if the minibatch objective passes the
    divergence guard.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= tail_average_fraction <= 1.0:
        raise ValueError("tail_average_fraction must be in [0, 1]")
    features = np.asarray(features, dtype=np.float64)
    if not np.isfinite(features).all():
        raise ValueError("features must be finite")
    if callable(schedule):
        gamma = schedule
    elif np.ndim(schedule) == 0:
        gamma = lambda t: float(schedule)
    else:
        arr = np.asarray(schedule, dtype=np.float64)
        if len(arr) < steps:
            raise ValueError("schedule shorter than the step count")
        gamma = lambda t: float(arr[t])
    rng = make_rng(seed, _STREAM_SGD)
    if theta0 is None:
        theta = 0.1 * rng.standard_normal((features.shape[1], embed_dim))
    else:
        theta = np.array(theta0, dtype=np.float64, copy=True)
    tail_start = steps - int(np.ceil(tail_average_fraction * steps))
    tail_sum = np.zeros_like(theta)
    tail_count = 0
    loss = float("nan")
    for t in range(steps):
        pairs = pair_sampler(rng, t)
        z = features @ theta
        loss = vic2_stochastic(z, g, pairs)
        if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
            raise SgdDivergenceError(f"objective {loss:.3e} at step {t} passed the guard")
        grad_z = stochastic_gradient(z, g, pairs)
        theta = theta - gamma(t) * (features.T @ grad_z)
        if tail_average_fraction > 0 and t >= tail_start:
            tail_sum += theta
            tail_count += 1
    if tail_count:
        theta = tail_sum / tail_count
    return SgdResult(embedding=features @ theta, theta=theta, final_loss=loss)
