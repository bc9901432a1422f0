"""Deterministic synthetic dataset generators with augmentation and corruption.

Every generator is a pure function of its parameters and seed (Philox
streams, see :mod:`pal.rng`), and stamps full provenance into the returned
dataset so any figure built from it is self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .graph import CONTIGUOUS, AugmentationLayout
from .rng import derive_seed, make_rng

_STREAM_POINTS = 1
_STREAM_AUGMENT = 2
_STREAM_CORRUPT = 3
_STREAM_REVEAL = 4

DATASET_FORMAT_VERSION = "v1"


class DatasetFormatError(ValueError):
    """Raised when parsing a serialized dataset fails."""


@dataclass(frozen=True)
class LabeledDataset:
    """Points with hidden ground-truth labels and a revealed-label mask."""

    x: np.ndarray
    hidden_labels: np.ndarray
    revealed_mask: np.ndarray
    seed: int
    provenance: dict

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        labels = np.asarray(self.hidden_labels, dtype=int)
        mask = np.asarray(self.revealed_mask, dtype=bool)
        if x.ndim != 2 or len(labels) != len(x) or len(mask) != len(x):
            raise ValueError("inconsistent dataset arrays")
        if not np.isfinite(x).all():
            raise ValueError("points must be finite")
        if labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative class ids")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "hidden_labels", labels)
        object.__setattr__(self, "revealed_mask", mask)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.provenance.get("classes", self.hidden_labels.max() + 1))


def _balanced_counts(n: int, classes: int) -> np.ndarray:
    """Per-class counts as equal as possible, earlier classes get the extra."""
    base, rem = divmod(n, classes)
    return np.array([base + (1 if c < rem else 0) for c in range(classes)])


def concentric_circles(n: int, classes: int, noise_std: float, seed: int) -> LabeledDataset:
    """Points on ``classes`` concentric circles, class c at radius (c+1)/classes.

    Angles are uniform and the radius carries Gaussian noise of the given
    standard deviation, so classes stay radially separable for small noise.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = make_rng(seed, _STREAM_POINTS)
    counts = _balanced_counts(n, classes)
    labels = np.repeat(np.arange(classes), counts)
    radii = (labels + 1) / classes + noise_std * rng.standard_normal(n)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    x = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    prov = {
        "generator": "circles",
        "n": int(n),
        "classes": int(classes),
        "noise_std": float(noise_std),
        "seed": int(seed),
    }
    return LabeledDataset(x, labels, np.zeros(n, dtype=bool), seed, prov)


def gaussian_mixture(n: int, classes: int, sigma: float, seed: int) -> LabeledDataset:
    """Isotropic Gaussian blobs centered on the canonical basis vectors of
    R^classes, so class means sit at pairwise distance sqrt(2)."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = make_rng(seed, _STREAM_POINTS)
    counts = _balanced_counts(n, classes)
    labels = np.repeat(np.arange(classes), counts)
    x = np.eye(classes)[labels] + sigma * rng.standard_normal((n, classes))
    prov = {
        "generator": "gaussian",
        "n": int(n),
        "classes": int(classes),
        "sigma": float(sigma),
        "seed": int(seed),
    }
    return LabeledDataset(x, labels, np.zeros(n, dtype=bool), seed, prov)


def augment(
    ds: LabeledDataset,
    views: int,
    epochs: int = 1,
    aug_std: float = 0.0,
    seed: int | None = None,
) -> tuple[LabeledDataset, AugmentationLayout]:
    """Expand each sample into views-by-epochs Gaussian-jittered copies.

    Output rows are grouped contiguously per sample (rows v*e*i .. v*e*(i+1)-1
    belong to sample i); augmented rows inherit the parent's hidden label and
    revealed flag.
    """
    if views < 1:
        raise ValueError("views must be >= 1")
    seed = ds.seed if seed is None else seed
    rng = make_rng(derive_seed(seed, "augment"), _STREAM_AUGMENT)
    layout = AugmentationLayout(n0=ds.n, views=views, epochs=epochs, layout=CONTIGUOUS)
    reps = layout.group_size
    x = np.repeat(ds.x, reps, axis=0)
    x = x + aug_std * rng.standard_normal(x.shape)
    labels = np.repeat(ds.hidden_labels, reps)
    mask = np.repeat(ds.revealed_mask, reps)
    prov = dict(ds.provenance)
    prov.update({"views": int(views), "epochs": int(epochs), "aug_std": float(aug_std)})
    return LabeledDataset(x, labels, mask, ds.seed, prov), layout


def corrupt_labels(ds: LabeledDataset, fraction: float, seed: int | None = None) -> LabeledDataset:
    """Reassign floor(fraction * N) uniformly chosen labels to a uniformly
    random *different* class. fraction=0 returns the dataset unchanged."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    count = int(np.floor(fraction * ds.n))
    if count == 0:
        return ds
    seed = ds.seed if seed is None else seed
    rng = make_rng(derive_seed(seed, "corrupt"), _STREAM_CORRUPT)
    classes = ds.num_classes
    idx = rng.choice(ds.n, size=count, replace=False)
    labels = ds.hidden_labels.copy()
    shift = rng.integers(1, classes, size=count)
    labels[idx] = (labels[idx] + shift) % classes
    prov = dict(ds.provenance)
    prov["corrupt_fraction"] = float(fraction)
    return replace(ds, hidden_labels=labels, provenance=prov)


def reveal_labels(ds: LabeledDataset, count: int, seed: int | None = None) -> LabeledDataset:
    """Mark a uniform random subset of ``count`` samples as having a known label."""
    if not 0 <= count <= ds.n:
        raise ValueError(f"count must be in [0, {ds.n}]")
    seed = ds.seed if seed is None else seed
    rng = make_rng(derive_seed(seed, "reveal"), _STREAM_REVEAL)
    mask = np.zeros(ds.n, dtype=bool)
    if count:
        mask[rng.choice(ds.n, size=count, replace=False)] = True
    prov = dict(ds.provenance)
    prov["revealed"] = int(count)
    return replace(ds, revealed_mask=mask, provenance=prov)


def save_dataset(ds: LabeledDataset, path) -> None:
    """Text table: provenance header, then one `x_0,..,x_{D-1},label,revealed`
    row per sample."""
    header = f"pal-dataset {DATASET_FORMAT_VERSION} " + json.dumps(
        {**ds.provenance, "d": ds.d, "base_seed": ds.seed}, sort_keys=True
    )
    lines = [header]
    for row, label, revealed in zip(ds.x, ds.hidden_labels, ds.revealed_mask):
        coords = ",".join(repr(float(v)) for v in row)
        lines.append(f"{coords},{int(label)},{int(revealed)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(" ", 2)
        if len(parts) != 3 or parts[0] != "pal-dataset":
            raise DatasetFormatError(f"bad header: {header!r}")
        if parts[1] != DATASET_FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported dataset format version {parts[1]!r}")
        try:
            prov = json.loads(parts[2])
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"bad provenance JSON: {exc}") from exc
        d = int(prov.pop("d"))
        base_seed = int(prov.pop("base_seed"))
        xs, labels, mask = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != d + 2:
                raise DatasetFormatError(
                    f"line {lineno}: expected {d + 2} columns, got {len(fields)}"
                )
            xs.append([float(v) for v in fields[:d]])
            labels.append(int(fields[d]))
            mask.append(bool(int(fields[d + 1])))
    labels_arr = np.array(labels, dtype=int)
    classes = int(prov.get("classes", labels_arr.max() + 1))
    if labels_arr.size and (labels_arr.min() < 0 or labels_arr.max() >= classes):
        raise DatasetFormatError("label outside the declared class range")
    return LabeledDataset(
        np.array(xs), labels_arr, np.array(mask, dtype=bool), base_seed, prov
    )
