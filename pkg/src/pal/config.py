"""Run configuration: strict JSON schema, defaults, and validation.

Unknown keys are rejected everywhere so a typo in a config file fails loudly
instead of silently running with a default.  ``resolve`` materializes every
default into a plain dict that the manifest echoes back, making each run
self-describing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


class ConfigError(ValueError):
    """Invalid or unparseable run configuration."""


GRAPH_MODES = ("supervised", "partial", "ssl", "mixed")
ORACLE_KINDS = ("captcha", "passive_supervised", "passive_ssl", "nnclr", "pruning")
SOLVER_KINDS = ("kernel", "sgd")
PROBE_LABEL_MODES = ("all", "deduced")
NOISE_MODES = ("per-answer", "corrupt-labels")
TEMPLATE_MODES = ("classes", "nodes", "discover")


def _take(d: dict, context: str, allowed: dict) -> dict:
    """Pop known keys with defaults; reject anything unexpected."""
    if not isinstance(d, dict):
        raise ConfigError(f"{context}: expected an object, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    return {k: d.get(k, default) for k, default in allowed.items()}


@dataclass(frozen=True)
class DatasetSpec:
    generator: str = "circles"
    n: int = 100
    classes: int = 4
    noise_std: float = 0.02
    sigma: float = 0.3
    test_size: int = 1000

    def __post_init__(self):
        if self.generator not in ("circles", "gaussian"):
            raise ConfigError(f"dataset.generator must be circles|gaussian, got {self.generator!r}")
        if self.n < 1 or self.test_size < 1:
            raise ConfigError("dataset sizes must be positive")
        if self.classes < 2:
            raise ConfigError("dataset.classes must be >= 2")


@dataclass(frozen=True)
class AugmentSpec:
    views: int = 2
    epochs: int = 1
    aug_std: float = 0.01

    def __post_init__(self):
        if self.views < 2:
            raise ConfigError("augmentation.views must be >= 2")
        if self.epochs < 1:
            raise ConfigError("augmentation.epochs must be >= 1")


@dataclass(frozen=True)
class LabelSpec:
    revealed: int = 0
    corrupt_fraction: float = 0.0

    def __post_init__(self):
        if self.revealed < 0:
            raise ConfigError("labels.revealed must be >= 0")
        if not 0.0 <= self.corrupt_fraction <= 1.0:
            raise ConfigError("labels.corrupt_fraction must be in [0, 1]")


@dataclass(frozen=True)
class GraphSpec:
    mode: str = "partial"
    alpha: float = 0.5
    contrastive: bool = False

    def __post_init__(self):
        if self.mode not in GRAPH_MODES:
            raise ConfigError(f"graph.mode must be one of {GRAPH_MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("graph.alpha must be in [0, 1]")


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "per-answer"
    p: float = 0.0

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ConfigError(f"oracle.noise.mode must be one of {NOISE_MODES}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("oracle.noise.p must be in [0, 1]")


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "captcha"
    batch_size: int = 10
    reg_batch: int = 16
    templates: str = "classes"
    kmeans_k: int | None = None
    labeled_fraction_threshold: float = 0.1
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ConfigError(f"oracle.kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if self.batch_size < 1:
            raise ConfigError("oracle.batch_size must be >= 1")
        if self.templates not in TEMPLATE_MODES:
            raise ConfigError(f"oracle.templates must be one of {TEMPLATE_MODES}")


@dataclass(frozen=True)
class SolverSpec:
    kind: str = "kernel"
    bandwidth: float = 0.5
    ridge: float = 1e-6
    jitter: float = 1e-8
    embed_dim: int | None = None      # default classes + 1
    rff_features: int = 256
    step_size: float = 1e-3
    steps_per_batch: int = 1

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigError(f"solver.kind must be one of {SOLVER_KINDS}, got {self.kind!r}")
        if self.bandwidth <= 0 or self.jitter <= 0:
            raise ConfigError("solver.bandwidth and solver.jitter must be positive")
        if self.ridge < 0:
            raise ConfigError("solver.ridge must be >= 0")
        if self.rff_features < 1 or self.steps_per_batch < 1:
            raise ConfigError("solver.rff_features and solver.steps_per_batch must be >= 1")


@dataclass(frozen=True)
class ProbeSpec:
    ridge: float = 1e-6
    labels: str = "all"

    def __post_init__(self):
        if self.ridge < 0:
            raise ConfigError("probe.ridge must be >= 0")
        if self.labels not in PROBE_LABEL_MODES:
            raise ConfigError(f"probe.labels must be one of {PROBE_LABEL_MODES}")


@dataclass(frozen=True)
class SweepSpec:
    alphas: tuple = (0.0, 0.1, 0.3, 0.5, 1.0)
    label_counts: tuple = (0, 50, 200)
    missing_fractions: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    noise_levels: tuple = (0.0, 0.1, 0.3, 0.5)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    augmentation: AugmentSpec | None = None
    labels: LabelSpec = field(default_factory=LabelSpec)
    graph: GraphSpec = field(default_factory=GraphSpec)
    oracle: OracleSpec | None = field(default_factory=OracleSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    checkpoints: tuple | None = None
    trials: int = 1
    base_seed: int = 0
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.graph.mode in ("ssl", "mixed") and self.augmentation is None:
            raise ConfigError(f"graph.mode {self.graph.mode!r} requires an augmentation block")
        if self.oracle is not None and self.oracle.kind == "passive_ssl" and self.augmentation is None:
            raise ConfigError("passive_ssl oracle requires an augmentation block")
        if self.checkpoints is not None:
            cps = tuple(self.checkpoints)
            if any(int(c) != c or c < 0 for c in cps):
                raise ConfigError("checkpoints must be non-negative integers")
            if any(b <= a for a, b in zip(cps, cps[1:])):
                raise ConfigError("checkpoint schedule must be strictly increasing")
            object.__setattr__(self, "checkpoints", tuple(int(c) for c in cps))

    # -- derived defaults ------------------------------------------------

    @property
    def node_count(self) -> int:
        n = self.dataset.n
        if self.augmentation is not None:
            n *= self.augmentation.views * self.augmentation.epochs
        return n

    @property
    def embed_dim(self) -> int:
        if self.solver.embed_dim is not None:
            return self.solver.embed_dim
        return self.dataset.classes + 1

    def checkpoint_schedule(self) -> tuple:
        """Explicit schedule, or every oracle batch up to 2 N C answers."""
        if self.checkpoints is not None:
            return self.checkpoints
        if self.oracle is None:
            return (0,)
        step = self.oracle.batch_size
        limit = 2 * self.dataset.n * self.dataset.classes
        return (0,) + tuple(range(step, limit + 1, step))

    def resolve(self) -> dict:
        """Plain dict with every default materialized, for the manifest.
        Normalized through JSON so containers round-trip exactly."""
        out = asdict(self)
        out["checkpoints"] = list(self.checkpoint_schedule())
        out["resolved"] = {
            "node_count": self.node_count,
            "embed_dim": self.embed_dim,
            "mse_normalization": "mean over samples and output coordinates",
            "eigenvector_scaling": "sqrt of clipped eigenvalues",
        }
        return json.loads(json.dumps(out))


def config_from_dict(raw: dict) -> RunConfig:
    top = _take(
        raw,
        "config",
        {
            "dataset": {},
            "augmentation": None,
            "labels": {},
            "graph": {},
            "oracle": {},
            "solver": {},
            "probe": {},
            "checkpoints": None,
            "trials": 1,
            "base_seed": 0,
            "sweep": {},
        },
    )
    dataset = DatasetSpec(**_take(top["dataset"], "dataset", {
        "generator": "circles", "n": 100, "classes": 4,
        "noise_std": 0.02, "sigma": 0.3, "test_size": 1000,
    }))
    augmentation = None
    if top["augmentation"] is not None:
        augmentation = AugmentSpec(**_take(top["augmentation"], "augmentation", {
            "views": 2, "epochs": 1, "aug_std": 0.01,
        }))
    labels = LabelSpec(**_take(top["labels"], "labels", {
        "revealed": 0, "corrupt_fraction": 0.0,
    }))
    graph = GraphSpec(**_take(top["graph"], "graph", {
        "mode": "partial", "alpha": 0.5, "contrastive": False,
    }))
    oracle = None
    if top["oracle"] is not None:
        fields = _take(top["oracle"], "oracle", {
            "kind": "captcha", "batch_size": 10, "reg_batch": 16,
            "templates": "classes", "kmeans_k": None,
            "labeled_fraction_threshold": 0.1, "noise": {},
        })
        fields["noise"] = NoiseSpec(**_take(fields["noise"], "oracle.noise", {
            "mode": "per-answer", "p": 0.0,
        }))
        oracle = OracleSpec(**fields)
    solver = SolverSpec(**_take(top["solver"], "solver", {
        "kind": "kernel", "bandwidth": 0.5, "ridge": 1e-6, "jitter": 1e-8,
        "embed_dim": None, "rff_features": 256, "step_size": 1e-3,
        "steps_per_batch": 1,
    }))
    probe = ProbeSpec(**_take(top["probe"], "probe", {"ridge": 1e-6, "labels": "all"}))
    sweep = SweepSpec(**{
        k: tuple(v) for k, v in _take(top["sweep"], "sweep", {
            "alphas": (0.0, 0.1, 0.3, 0.5, 1.0),
            "label_counts": (0, 50, 200),
            "missing_fractions": (0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
            "noise_levels": (0.0, 0.1, 0.3, 0.5),
        }).items()
    })
    checkpoints = tuple(top["checkpoints"]) if top["checkpoints"] is not None else None
    try:
        trials = int(top["trials"])
        base_seed = int(top["base_seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"trials and base_seed must be integers: {exc}") from exc
    return RunConfig(
        dataset=dataset,
        augmentation=augmentation,
        labels=labels,
        graph=graph,
        oracle=oracle,
        solver=solver,
        probe=probe,
        checkpoints=checkpoints,
        trials=trials,
        base_seed=base_seed,
        sweep=sweep,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)
