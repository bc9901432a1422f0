"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 oracle timeout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .datasets import concentric_circles, gaussian_mixture, save_dataset
from .harness import (
    OracleTimeout,
    aggregate_csv,
    compare_contrastive,
    export_results,
    manifest_json,
    run_pal,
    sweep_missing_entries,
    sweep_mixing,
    sweep_noise,
)
from .kernel import SolverError
from .oracles import LabelerTimeoutError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TIMEOUT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    gen.add_argument("--generator", choices=("circles", "gaussian"), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--noise", type=float, default=0.02,
                     help="radial noise std (circles) or blob sigma (gaussian)")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", type=Path, required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--out", type=Path, default=Path("pal-out"))
    run.add_argument("--seed", type=int, default=None, help="override base_seed")

    sweep = sub.add_parser("sweep", help="run a configured sweep")
    sweep.add_argument("kind", choices=("mixing", "noise", "missing", "contrastive"))
    sweep.add_argument("--config", type=Path, required=True)
    sweep.add_argument("--out", type=Path, required=True)

    serve = sub.add_parser("serve", help="serve a human-labeled run over HTTP")
    serve.add_argument("--config", type=Path, required=True)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--host", type=str, default="127.0.0.1")
    serve.add_argument("--out", type=Path, default=Path("pal-out"))
    serve.add_argument("--timeout", type=float, default=3600.0,
                       help="seconds to wait for human answers per batch")
    serve.add_argument("--cors-origin", type=str, default=None)
    serve.add_argument("--resume", type=Path, default=None,
                       help="directory holding a paused run's checkpoint files")

    export = sub.add_parser("export", help="re-export a saved manifest")
    export.add_argument("--manifest", type=Path, required=True)
    export.add_argument("--format", choices=("csv", "json"), required=True)
    export.add_argument("--out", type=Path, default=None)
    return parser


def _load(path: Path):
    config = load_config(path)
    return config


def _write_run_outputs(manifest: dict, out_dir: Path, stem: str = "run") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.manifest.json").write_text(manifest_json(manifest), encoding="utf-8")
    (out_dir / f"{stem}.aggregate.csv").write_text(aggregate_csv(manifest), encoding="utf-8")


def _cmd_gen_data(args) -> int:
    if args.generator == "circles":
        ds = concentric_circles(args.n, args.classes, args.noise, args.seed)
    else:
        ds = gaussian_mixture(args.n, args.classes, args.noise, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} samples to {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _load(args.config)
    if args.seed is not None:
        from dataclasses import replace
        config = replace(config, base_seed=args.seed)
    manifest = run_pal(config)
    _write_run_outputs(manifest, args.out)
    print(f"manifest and aggregate written to {args.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load(args.config)
    if args.kind == "mixing":
        result = sweep_mixing(config)
    elif args.kind == "noise":
        result = sweep_noise(config)
    elif args.kind == "missing":
        result = sweep_missing_entries(config)
    else:
        result = compare_contrastive(config)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.kind == "contrastive":
        for name in ("noncontrastive", "contrastive"):
            _write_run_outputs(result[name], args.out, stem=name)
    else:
        for idx, cell in enumerate(result["cells"]):
            params = {k: v for k, v in cell.items() if k != "manifest"}
            stem = f"{args.kind}-{idx:03d}"
            _write_run_outputs(cell["manifest"], args.out, stem=stem)
            (args.out / f"{stem}.params.json").write_text(
                json.dumps(params, sort_keys=True) + "\n", encoding="utf-8"
            )
    print(f"sweep outputs written to {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import AnnotationSession, create_app

    config = _load(args.config)
    port = args.port if args.port is not None else int(os.environ.get("PAL_PORT", "8000"))
    cors = args.cors_origin or os.environ.get("PAL_CORS_ORIGIN")
    session = AnnotationSession(
        config, out_dir=args.out, answer_timeout=args.timeout, resume_from=args.resume
    )
    app = create_app(session, cors_origin=cors)
    session.start()
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_TIMEOUT if session.done_reason == "timeout" else EXIT_OK


def _cmd_export(args) -> int:
    try:
        manifest = json.loads(args.manifest.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from exc
    out = args.out
    if out is None:
        suffix = ".csv" if args.format == "csv" else ".json"
        out = args.manifest.with_suffix(suffix + ".export")
    export_results(manifest, args.format, out)
    print(f"wrote {args.format} export to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "serve": _cmd_serve,
        "export": _cmd_export,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OracleTimeout, LabelerTimeoutError) as exc:
        print(f"oracle timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT


if __name__ == "__main__":
    sys.exit(main())
