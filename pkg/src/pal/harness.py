"""End-to-end experiment loop: query, ingest, re-solve, probe, record.

``run_pal`` drives one configuration across trials and aggregates the
per-checkpoint metrics; the sweep helpers wrap it for the mixing, noise,
missing-entry, and contrastive studies.  Everything a run produces lands in
a manifest dict that is byte-deterministic given (config, seed) apart from
wall-time fields.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .datasets import (
    LabeledDataset,
    augment,
    concentric_circles,
    corrupt_labels,
    gaussian_mixture,
    reveal_labels,
)
from .graph import (
    LabelMatrix,
    SimilarityGraph,
    UnionFind,
    build_partial_sup_graph,
    build_ssl_graph,
    build_sup_graph,
    mix_graphs,
    to_contrastive,
)
from .kernel import (
    KernelConfig,
    SolverError,
    evaluate_embedding,
    fit_linear_probe,
    probe_error,
    random_fourier_features,
    solve_embedding,
)
from .losses import PairIndexSets, stochastic_gradient
from .oracles import (
    HumanLabelerAdapter,
    LabelerTimeoutError,
    NoisyLabeler,
    OracleExhausted,
    SimulatedLabeler,
    captcha_oracle_ingest,
    captcha_oracle_next,
    discover_templates,
    ingest_pair_answers,
    make_pruning_sampler,
    new_oracle_state,
    nnclr_oracle,
    passive_ssl_oracle,
    passive_supervised_oracle,
    oracle_state_to_dict,
)
from .rng import derive_seed, make_rng

AGGREGATE_COLUMNS = ("queries", "mean_mse", "std_mse", "mean_zero_one", "std_zero_one", "mean_components")


class OracleTimeout(RuntimeError):
    """A human-labeled run timed out waiting for answers."""


@dataclass
class TrialData:
    """Materialized inputs of one trial."""

    train: LabeledDataset
    test: LabeledDataset
    layout: object | None
    labels_true: LabelMatrix
    labels_test: LabelMatrix
    base_graph: SimilarityGraph
    templates: list


def make_dataset(spec, seed: int) -> LabeledDataset:
    if spec.generator == "circles":
        return concentric_circles(spec.n, spec.classes, spec.noise_std, seed)
    return gaussian_mixture(spec.n, spec.classes, spec.sigma, seed)


def make_test_dataset(spec, seed: int) -> LabeledDataset:
    if spec.generator == "circles":
        return concentric_circles(spec.test_size, spec.classes, spec.noise_std, seed)
    return gaussian_mixture(spec.test_size, spec.classes, spec.sigma, seed)


def build_trial_data(config: RunConfig, trial: int) -> TrialData:
    """Datasets, labels, base graph, and templates for one trial."""
    data_seed = derive_seed(config.base_seed, "trial", trial, "data")
    test_seed = derive_seed(config.base_seed, "trial", trial, "test")
    ds = make_dataset(config.dataset, data_seed)
    if config.labels.corrupt_fraction > 0:
        ds = corrupt_labels(ds, config.labels.corrupt_fraction,
                            derive_seed(config.base_seed, "trial", trial, "corrupt"))
    revealed = min(config.labels.revealed, ds.n)
    ds = reveal_labels(ds, revealed, derive_seed(config.base_seed, "trial", trial, "reveal"))
    layout = None
    if config.augmentation is not None:
        ds, layout = augment(
            ds,
            config.augmentation.views,
            config.augmentation.epochs,
            config.augmentation.aug_std,
            derive_seed(config.base_seed, "trial", trial, "augment"),
        )
    test = make_test_dataset(config.dataset, test_seed)
    classes = config.dataset.classes
    labels_true = LabelMatrix.from_labels(ds.hidden_labels, classes)
    labels_test = LabelMatrix.from_labels(test.hidden_labels, classes)

    mode = config.graph.mode
    if mode == "supervised":
        base = build_sup_graph(labels_true)
    elif mode == "partial":
        base = build_partial_sup_graph(
            LabelMatrix.from_partial(ds.hidden_labels, ds.revealed_mask, classes)
        )
    elif mode == "ssl":
        base = build_ssl_graph(layout)
    else:  # mixed
        partial = LabelMatrix.from_partial(ds.hidden_labels, ds.revealed_mask, classes)
        base = mix_graphs(build_ssl_graph(layout), partial, config.graph.alpha)

    templates: list = [None] * classes
    if config.oracle is not None and config.oracle.templates == "nodes":
        for cls in range(classes):
            hits = np.nonzero(ds.hidden_labels == cls)[0]
            templates[cls] = int(hits[0]) if len(hits) else None
    return TrialData(
        train=ds,
        test=test,
        layout=layout,
        labels_true=labels_true,
        labels_test=labels_test,
        base_graph=base,
        templates=templates,
    )


def make_labeler(config: RunConfig, data: TrialData, trial: int):
    inner = SimulatedLabeler(data.train.hidden_labels)
    noise = config.oracle.noise if config.oracle else None
    if noise is not None and noise.p > 0:
        return NoisyLabeler(inner, noise.p, noise.mode,
                            derive_seed(config.base_seed, "trial", trial, "noise"))
    return inner


def effective_dense(graph: SimilarityGraph, contrastive: bool) -> np.ndarray:
    """Matrix fed to the solver: observed zeros become -1 in contrastive
    mode; in the default mode observed negatives are neutralized to 0."""
    if contrastive:
        return to_contrastive(graph).dense()
    return np.maximum(graph.dense(), 0.0)


@dataclass
class _SgdState:
    feature_map: object
    phi_train: np.ndarray
    phi_test: np.ndarray
    theta: np.ndarray


def _init_sgd(config: RunConfig, data: TrialData, trial: int) -> _SgdState:
    fmap = random_fourier_features(
        data.train.d,
        config.solver.rff_features,
        config.solver.bandwidth,
        derive_seed(config.base_seed, "trial", trial, "rff"),
    )
    phi_train = fmap.transform(data.train.x)
    phi_test = fmap.transform(data.test.x)
    rng = make_rng(derive_seed(config.base_seed, "trial", trial, "theta"))
    theta = 0.1 * rng.standard_normal((phi_train.shape[1], config.embed_dim))
    return _SgdState(fmap, phi_train, phi_test, theta)


def _probe_rows(config: RunConfig, data: TrialData, state) -> tuple[np.ndarray, LabelMatrix]:
    """Rows and labels the probe trains on; 'all' uses every hidden label,
    'deduced' only revealed rows plus oracle-confirmed memberships."""
    if config.probe.labels == "all":
        return np.arange(data.train.n), data.labels_true
    labels = np.where(data.train.revealed_mask, data.train.hidden_labels, -1)
    if state is not None:
        deduced = state.deduced_labels()
        labels = np.where(deduced >= 0, deduced, labels)
    rows = np.nonzero(labels >= 0)[0]
    mat = LabelMatrix.from_labels(labels[rows], config.dataset.classes) if len(rows) else None
    return rows, mat


def _evaluate_checkpoint(config, data, graph, state, sgd, components):
    dense = effective_dense(graph, config.graph.contrastive)
    if config.solver.kind == "kernel":
        cfg = KernelConfig(
            bandwidth=config.solver.bandwidth,
            ridge=config.solver.ridge,
            jitter=config.solver.jitter,
            embed_dim=config.embed_dim,
        )
        model = solve_embedding(dense, data.train.x, cfg)
        # Probe and test points go through the same out-of-sample map, so a
        # smoothing jitter cannot skew train/test scaling against each other.
        z_train = evaluate_embedding(model, data.train.x)
        z_test = evaluate_embedding(model, data.test.x)
        eigengap = model.eigengap if np.isfinite(model.eigengap) else None
    else:
        z_train = sgd.phi_train @ sgd.theta
        z_test = sgd.phi_test @ sgd.theta
        eigengap = None
        model = None
    rows, probe_labels = _probe_rows(config, data, state)
    if probe_labels is None or len(rows) == 0:
        pred_train = np.zeros_like(data.labels_true.rows)
        pred_test = np.zeros_like(data.labels_test.rows)
        train_mse = float(((pred_train - data.labels_true.rows) ** 2).mean())
        test_mse = float(((pred_test - data.labels_test.rows) ** 2).mean())
        train_zero_one = float((0 != data.labels_true.rows.argmax(axis=1)).mean())
        test_zero_one = float((0 != data.labels_test.rows.argmax(axis=1)).mean())
    else:
        probe = fit_linear_probe(z_train[rows], probe_labels, config.probe.ridge)
        train_mse, train_zero_one = probe_error(probe, z_train, data.labels_true)
        test_mse, test_zero_one = probe_error(probe, z_test, data.labels_test)
    record = {
        "known_fraction": graph.known_fraction(),
        "components": components,
        "train_mse": train_mse,
        "train_zero_one": train_zero_one,
        "test_mse": test_mse,
        "test_zero_one": test_zero_one,
        "eigengap": eigengap,
    }
    return record, (model, z_train)


def run_single_trial(
    config: RunConfig,
    trial: int,
    labeler=None,
    data: TrialData | None = None,
    observer=None,
    resume: dict | None = None,
) -> dict:
    """One full oracle-driven run; returns the per-checkpoint record dict.

    ``labeler`` defaults to the (possibly noise-wrapped) simulated one;
    passing a :class:`HumanLabelerAdapter` drives the identical loop from
    human answers.  ``observer``, when given, sees lifecycle events so a
    service can publish progress.  A labeler timeout pauses the run: the
    result carries a ``paused`` payload (oracle state dict plus the live
    graph) that, fed back through ``resume`` together with the persisted
    graph as ``data.base_graph``, continues where the run stopped.
    """
    from .oracles import oracle_state_from_dict, oracle_state_to_dict

    notify = observer if observer is not None else (lambda *a, **k: None)
    data = data if data is not None else build_trial_data(config, trial)
    oracle_spec = config.oracle
    state = None
    uf = UnionFind(data.base_graph.n)
    graph = data.base_graph.copy()
    for i, j in graph.positive_edges():
        uf.union(int(i), int(j))

    schedule = list(config.checkpoint_schedule())
    rows: list[dict] = []
    warnings: list[str] = []
    sgd = _init_sgd(config, data, trial) if config.solver.kind == "sgd" else None
    if resume is not None and config.solver.kind != "kernel":
        raise ConfigError("resume is supported for the closed-form solver only")

    if oracle_spec is not None:
        if resume is not None:
            state = oracle_state_from_dict(resume["oracle"], graph=graph)
            rows.extend(resume.get("rows", []))
            warnings.extend(resume.get("warnings", []))
        else:
            state = new_oracle_state(
                graph.n,
                config.dataset.classes,
                derive_seed(config.base_seed, "trial", trial, "oracle"),
                graph=graph,
                templates=data.templates,
            )
        if labeler is None:
            labeler = make_labeler(config, data, trial)
        if oracle_spec.templates == "discover" and resume is None:
            discover_templates(state, labeler)
    counts_answers = oracle_spec is not None and oracle_spec.kind in (
        "captcha", "pruning", "passive_supervised",
    )

    def progress() -> int:
        if oracle_spec is None:
            return 0
        return state.queries_made if counts_answers else state.step

    def checkpoint(scheduled: int) -> None:
        start = time.perf_counter()
        record, artifacts = _evaluate_checkpoint(config, data, graph, state, sgd, uf.count)
        record.update({
            "checkpoint": scheduled,
            "queries": progress(),
            "wall_time": time.perf_counter() - start,
        })
        rows.append(record)
        if state is not None and artifacts[1] is not None:
            state.embedding_snapshot = artifacts[1]
        notify(
            "checkpoint",
            record=record,
            model=artifacts[0],
            embedding=artifacts[1],
            graph=graph,
            state=state,
        )

    def apply_new_entries(result) -> None:
        for i, j, v in result.new_entries:
            if v > 0:
                uf.union(i, j)
        if sgd is not None and result.new_entries:
            pairs = [(i, j) for i, j, _ in result.new_entries]
            _sgd_steps(config, sgd, graph, pairs, pairs)

    def _sgd_steps(cfg, sgd_state, g, i_pairs, j_pairs):
        pair_sets = PairIndexSets(np.array(i_pairs), np.array(j_pairs))
        for _ in range(cfg.solver.steps_per_batch):
            z = sgd_state.phi_train @ sgd_state.theta
            grad = stochastic_gradient(z, g, pair_sets)
            sgd_state.theta = sgd_state.theta - cfg.solver.step_size * (sgd_state.phi_train.T @ grad)

    if resume is None:
        remaining = list(schedule)
        if remaining and remaining[0] <= progress():
            checkpoint(remaining.pop(0))
    else:
        remaining = [c for c in schedule if c > progress()]
    if oracle_spec is None:
        return {"trial": trial, "rows": rows, "warnings": warnings,
                "exhausted_at": None, "paused": None}

    exhausted_at = None
    paused = None
    kind = oracle_spec.kind
    if kind == "nnclr" and state.embedding_snapshot is None:
        checkpointless = _evaluate_checkpoint(config, data, graph, state, sgd, uf.count)
        state.embedding_snapshot = checkpointless[1][1]

    while remaining:
        try:
            if kind in ("captcha", "pruning"):
                sampler = None
                if kind == "pruning":
                    if state.embedding_snapshot is None:
                        _, artifacts = _evaluate_checkpoint(config, data, graph, state, sgd, uf.count)
                        state.embedding_snapshot = artifacts[1]
                    k = oracle_spec.kmeans_k or config.dataset.classes
                    sampler = make_pruning_sampler(k, oracle_spec.labeled_fraction_threshold)
                batch = captcha_oracle_next(state, oracle_spec.batch_size, candidate_sampler=sampler)
                notify("batch", batch=batch, state=state)
                answers = labeler.answer(batch)
                notify("answers", batch=batch, answers=answers)
                result = captcha_oracle_ingest(state, batch, answers)
            elif kind == "passive_supervised":
                batch = passive_supervised_oracle(state, graph.n)
                answers = labeler.answer(batch)
                result = ingest_pair_answers(state, batch, answers)
            elif kind == "passive_ssl":
                batch = passive_ssl_oracle(state, data.layout, oracle_spec.reg_batch)
                answers = labeler.answer(batch) if batch.auto_answers is None else None
                from .oracles import AnswerSet
                reply = answers or AnswerSet(batch.batch_id, batch.auto_answers)
                result = ingest_pair_answers(state, batch, reply)
                if sgd is not None:
                    _sgd_steps(config, sgd, graph, batch.pairs, batch.reg_pairs)
            elif kind == "nnclr":
                nodes = state.rng.choice(graph.n, size=min(oracle_spec.batch_size, graph.n), replace=False)
                batch = nnclr_oracle(state, nodes)
                from .oracles import AnswerSet
                reply = AnswerSet(batch.batch_id, batch.auto_answers)
                result = ingest_pair_answers(state, batch, reply)
                if sgd is not None:
                    _sgd_steps(config, sgd, graph, batch.pairs, batch.reg_pairs)
            else:
                raise ConfigError(f"unhandled oracle kind {kind!r}")
        except OracleExhausted:
            exhausted_at = progress()
            if not rows or rows[-1]["queries"] != exhausted_at:
                checkpoint(exhausted_at)
            if remaining:
                warnings.append(
                    f"oracle exhausted at {exhausted_at} answers; "
                    f"{len(remaining)} scheduled checkpoints truncated"
                )
            remaining = []
            break
        except LabelerTimeoutError:
            paused = {"oracle": oracle_state_to_dict(state), "graph": graph}
            warnings.append(
                f"labeler timed out after {progress()} answers; run paused"
            )
            notify("paused", state=state, graph=graph, rows=rows)
            break
        if kind in ("captcha", "pruning"):
            apply_new_entries(result)
        else:
            for i, j, v in result.new_entries:
                if v > 0:
                    uf.union(i, j)
            if sgd is not None and kind == "passive_supervised":
                _sgd_steps(config, sgd, graph, batch.pairs, batch.reg_pairs)
        while remaining and progress() >= remaining[0]:
            checkpoint(remaining.pop(0))
    if paused is None:
        notify("done", rows=rows)
    return {"trial": trial, "rows": rows, "warnings": warnings,
            "exhausted_at": exhausted_at, "paused": paused}


def aggregate_trials(trial_results: list, schedule) -> list:
    """Per-scheduled-checkpoint mean and sample standard deviation over the
    trials that reached it (test-set metrics drive the aggregate curve)."""
    out = []
    for cp in schedule:
        struck = []
        for res in trial_results:
            for row in res["rows"]:
                if row["checkpoint"] == cp:
                    struck.append(row)
                    break
        if not struck:
            continue
        mses = np.array([r["test_mse"] for r in struck])
        zos = np.array([r["test_zero_one"] for r in struck])
        comps = np.array([r["components"] for r in struck])
        out.append({
            "queries": int(cp),
            "mean_mse": float(mses.mean()),
            "std_mse": float(mses.std(ddof=1)) if len(mses) > 1 else 0.0,
            "mean_zero_one": float(zos.mean()),
            "std_zero_one": float(zos.std(ddof=1)) if len(zos) > 1 else 0.0,
            "mean_components": float(comps.mean()),
            "n_trials": len(struck),
        })
    return out


def run_pal(config: RunConfig, labeler_factory=None, observer=None) -> dict:
    """Run every trial and assemble the manifest."""
    start = time.perf_counter()
    trial_results = []
    failures = []
    for trial in range(config.trials):
        labeler = labeler_factory(trial) if labeler_factory else None
        try:
            result = run_single_trial(config, trial, labeler=labeler, observer=observer)
        except SolverError as exc:
            failures.append({"trial": trial, "error": str(exc)})
            continue
        if result.get("paused"):
            raise OracleTimeout(f"trial {trial} paused waiting for answers")
        trial_results.append(result)
    schedule = config.checkpoint_schedule()
    manifest = {
        "version": __version__,
        "config": config.resolve(),
        "trials": trial_results,
        "aggregates": aggregate_trials(trial_results, schedule),
        "failed_trials": failures,
        "warnings": sorted({w for res in trial_results for w in res["warnings"]}),
        "timing": {"wall_time_total": time.perf_counter() - start},
    }
    return manifest


# -- sweeps -------------------------------------------------------------


def sweep_mixing(config: RunConfig, alphas=None, label_counts=None) -> dict:
    """Cross product of mixing coefficients and revealed-label counts on the
    mixed graph; alpha = 0 reproduces the pure positive-pair run exactly."""
    alphas = list(alphas if alphas is not None else config.sweep.alphas)
    label_counts = list(label_counts if label_counts is not None else config.sweep.label_counts)
    if config.augmentation is None:
        raise ConfigError("mixing sweep requires an augmentation block")
    cells = []
    for alpha in alphas:
        for count in label_counts:
            variant = replace(
                config,
                graph=replace(config.graph, mode="mixed", alpha=float(alpha)),
                labels=replace(config.labels, revealed=int(count)),
                oracle=None,
                checkpoints=(0,),
            )
            cells.append({
                "alpha": float(alpha),
                "label_count": int(count),
                "manifest": run_pal(variant),
            })
    return {"kind": "mixing", "cells": cells}


def sweep_noise(config: RunConfig, noise_levels=None) -> dict:
    """Full supervised graph built from increasingly corrupted labels."""
    levels = list(noise_levels if noise_levels is not None else config.sweep.noise_levels)
    cells = []
    for level in levels:
        variant = replace(
            config,
            graph=replace(config.graph, mode="supervised"),
            labels=replace(config.labels, corrupt_fraction=float(level)),
            oracle=None,
            checkpoints=(0,),
        )
        cells.append({"noise_level": float(level), "manifest": run_pal(variant)})
    return {"kind": "noise", "cells": cells}


def _strike_entries(graph: SimilarityGraph, fraction: float, seed: int) -> SimilarityGraph:
    """Forget a uniform share of the canonical (i <= j) entries."""
    out = graph.copy()
    ii, jj = np.nonzero(np.triu(out.known_mask()))
    total = len(ii)
    count = int(round(fraction * total))
    if count:
        rng = make_rng(seed)
        picked = rng.choice(total, size=count, replace=False)
        for idx in picked:
            out.forget(int(ii[idx]), int(jj[idx]))
    return out


def sweep_missing_entries(config: RunConfig, missing_fractions=None) -> dict:
    """Remove a share of supervised-graph entries uniformly at random and
    record component counts next to downstream error."""
    fractions = list(
        missing_fractions if missing_fractions is not None else config.sweep.missing_fractions
    )
    cells = []
    for fraction in fractions:
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError("missing fractions must be in [0, 1]")
        variant = replace(
            config,
            graph=replace(config.graph, mode="supervised"),
            oracle=None,
            checkpoints=(0,),
        )
        trial_results = []
        for trial in range(variant.trials):
            data = build_trial_data(variant, trial)
            data.base_graph = _strike_entries(
                data.base_graph,
                float(fraction),
                derive_seed(variant.base_seed, "trial", trial, "strike", repr(float(fraction))),
            )
            trial_results.append(run_single_trial(variant, trial, data=data))
        manifest = {
            "version": __version__,
            "config": variant.resolve(),
            "trials": trial_results,
            "aggregates": aggregate_trials(trial_results, (0,)),
            "failed_trials": [],
            "warnings": [],
            "timing": {"wall_time_total": 0.0},
        }
        cells.append({"missing_fraction": float(fraction), "manifest": manifest})
    return {"kind": "missing", "cells": cells}


def compare_contrastive(config: RunConfig) -> dict:
    """Same seeds and oracle trace, solved once with unknowns-as-zero and
    once with observed dissimilarity mapped to -1."""
    plain = replace(config, graph=replace(config.graph, contrastive=False))
    signed = replace(config, graph=replace(config.graph, contrastive=True))
    return {
        "kind": "contrastive",
        "noncontrastive": run_pal(plain),
        "contrastive": run_pal(signed),
    }


# -- export -------------------------------------------------------------


def aggregate_csv(manifest: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_COLUMNS)
    for row in manifest["aggregates"]:
        writer.writerow([row[c] for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def export_results(manifest: dict, fmt: str, out_path) -> None:
    """Write the plot-ready aggregate CSV or the full JSON manifest."""
    if fmt == "csv":
        payload = aggregate_csv(manifest)
    elif fmt == "json":
        payload = manifest_json(manifest)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {fmt} export to {out_path}: {exc}") from exc
