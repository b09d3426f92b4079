"""Headless command-line driver.

Subcommands: generate (synthetic dataset), ingest (image directory), run
(experiment presets or config file), compare (two metrics logs), summary
(last-query statistics), serve (HTTP annotation service).

Exit codes: 0 success, 2 usage error, 3 data error, 4 run failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import datasets
from .engine import ExperimentConfig, run_experiment
from .errors import (ConfigurationError, DataError, DefectLoopError,
                     TrainingDivergedError, ValidationError)
from .metrics import (compare_runs, last_query_summary, read_metrics_csv,
                      write_comparison_csv, write_metrics_csv)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUN = 4

# experiment presets: two query-size tradeoffs at initial 100, and three
# initial sizes processing 200 samples in 5-sample queries
PRESETS = {
    "expA-test1": dict(initial_n=100, queries=20, batch_n=5),
    "expA-test2": dict(initial_n=100, queries=5, batch_n=20),
    "expB-init20": dict(initial_n=20, queries=36, batch_n=5),
    "expB-init60": dict(initial_n=60, queries=28, batch_n=5),
    "expB-init100": dict(initial_n=100, queries=20, batch_n=5),
}
PRESET_DEFAULTS = dict(epochs_per_query=25, test_fraction=1 / 3, seed=7)


def preset_config(name: str, seed: int | None = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    fields = {**PRESET_DEFAULTS, **PRESETS[name]}
    if seed is not None:
        fields["seed"] = seed
    return ExperimentConfig.from_dict(fields)


def _write_atomic(path: Path, write_fn) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _int_pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi or lo))


def _float_pair(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi or lo))


def cmd_generate(args) -> int:
    params = datasets.SynthParams(
        height=args.size, width=args.size, seed=args.seed, balance=args.balance,
        void_count=args.void_count, void_radius=args.void_radius,
        void_contrast=args.void_contrast, mark_count=args.mark_count,
        pixel_noise=args.pixel_noise)
    ds = datasets.generate_synthetic(params, args.n)
    manifest = ds.save(args.out)
    print(manifest)
    return EXIT_OK


def cmd_ingest(args) -> int:
    ds, errors = datasets.ingest_directory(
        args.directory, labeling=args.labeling,
        resize_to=(args.resize, args.resize) if args.resize else None,
        dataset_id=args.dataset_id)
    for line in errors:
        print(f"warning: {line}", file=sys.stderr)
    manifest = ds.save(args.out)
    print(manifest)
    return EXIT_OK


def cmd_run(args) -> int:
    if args.preset and args.config:
        raise UsageError("--preset and --config are mutually exclusive")
    if not args.preset and not args.config:
        raise UsageError("one of --preset or --config is required")
    if args.preset:
        cfg = preset_config(args.preset, seed=args.seed)
    else:
        doc = json.loads(Path(args.config).read_text())
        if args.seed is not None:
            doc["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(doc)
    ds = datasets.Dataset.load(args.dataset)
    log, summary = run_experiment(cfg, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    summary_path = out / "summary.json"
    _write_atomic(metrics_path, lambda p: write_metrics_csv(log, p))
    _write_atomic(summary_path, lambda p: p.write_text(summary.to_json() + "\n"))
    print(metrics_path)
    print(summary_path)
    return EXIT_OK


def cmd_compare(args) -> int:
    log_a = read_metrics_csv(args.log_a)
    log_b = read_metrics_csv(args.log_b)
    rows = compare_runs(log_a, log_b)
    out = Path(args.out)
    _write_atomic(out, lambda p: write_comparison_csv(rows, p))
    print(out)
    return EXIT_OK


def cmd_summary(args) -> int:
    log = read_metrics_csv(args.log)
    log.validate_complete()
    summary = last_query_summary(log)
    text = summary.to_json()
    if args.out:
        _write_atomic(Path(args.out), lambda p: p.write_text(text + "\n"))
        print(args.out)
    else:
        print(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(data_dir=args.data_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, workers=1,
                log_level="info")
    return EXIT_OK


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defectloop",
        description="Active-learning defect classification: datasets, "
                    "experiments, annotation service.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True, help="dataset directory to create")
    gen.add_argument("--n", type=int, required=True, help="sample count (>= 2)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=64, help="image height and width")
    gen.add_argument("--balance", type=float, default=0.5, help="defect fraction")
    gen.add_argument("--void-count", type=_int_pair, default=(1, 2), metavar="LO:HI")
    gen.add_argument("--void-radius", type=_float_pair, default=(2.0, 6.0), metavar="LO:HI")
    gen.add_argument("--void-contrast", type=_float_pair, default=(0.5, 0.5), metavar="LO:HI")
    gen.add_argument("--mark-count", type=_int_pair, default=(0, 0), metavar="LO:HI")
    gen.add_argument("--pixel-noise", type=float, default=6.0)
    gen.set_defaults(fn=cmd_generate)

    ing = sub.add_parser("ingest", help="ingest a directory of PNG/PGM images")
    ing.add_argument("directory")
    ing.add_argument("--out", required=True, help="dataset directory to create")
    ing.add_argument("--labeling", choices=("from-subdirectories", "unlabeled"),
                     default="from-subdirectories")
    ing.add_argument("--resize", type=int, default=None,
                     help="resize all images to this square size")
    ing.add_argument("--dataset-id", default=None)
    ing.set_defaults(fn=cmd_ingest)

    run = sub.add_parser("run", help="run an experiment with the simulated oracle")
    run.add_argument("--dataset", required=True, help="dataset directory")
    run.add_argument("--preset", choices=sorted(PRESETS), default=None)
    run.add_argument("--config", default=None, help="experiment config JSON file")
    run.add_argument("--seed", type=int, default=None, help="override config seed")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(fn=cmd_run)

    cmp_ = sub.add_parser("compare", help="align two runs at equal queried-sample counts")
    cmp_.add_argument("log_a")
    cmp_.add_argument("log_b")
    cmp_.add_argument("--out", required=True, help="comparison CSV path")
    cmp_.set_defaults(fn=cmd_compare)

    summ = sub.add_parser("summary", help="last-query mean/std after outlier removal")
    summ.add_argument("log")
    summ.add_argument("--out", default=None, help="write JSON here instead of stdout")
    summ.set_defaults(fn=cmd_summary)

    srv = sub.add_parser("serve", help="start the HTTP annotation service")
    srv.add_argument("--host", default=os.environ.get("DEFECTLOOP_HOST", "127.0.0.1"))
    srv.add_argument("--port", type=int, default=int(os.environ.get("DEFECTLOOP_PORT", "8321")))
    srv.add_argument("--data-dir", default=os.environ.get("DEFECTLOOP_DATA_DIR", "./defectloop-data"))
    srv.add_argument("--ui-dir", default=os.environ.get("DEFECTLOOP_UI_DIR"),
                     help="serve a built annotation UI from this directory under /ui")
    srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("generate", "ingest") else EXIT_DATA
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, DefectLoopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
