"""Command-line surface: train, generate, inspect.

Diagnostics (including per-stage timing) go to stderr; passing ``--json``
emits one machine-readable summary line on stdout.  Exit code 0 means the
command fully succeeded; bad paths or configuration exit with 2.

Heavy imports happen inside the command handlers so that GENHOP_THREADS can
cap the numeric libraries' thread pools before they initialize.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_USAGE = 2


def _apply_thread_cap() -> None:
    threads = os.environ.get("GENHOP_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _fail(message: str, code: int = 1) -> int:
    print(f"genhop: error: {message}", file=sys.stderr)
    return code


def _emit_json(args, payload: dict) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))


def _dataset_source(args, config):
    from .datasets import DatasetSource

    kind = "image-directory" if config.image_channels == 3 else "idx-gzip"
    return DatasetSource(
        kind=kind,
        path=Path(args.data),
        height=config.image_h,
        width=config.image_w,
        channels=config.image_channels,
    )


def _build_config(args):
    from .pipeline import preset_config

    overrides = {}
    if args.train_seed is not None:
        overrides["train_seed"] = args.train_seed
    if args.clusters is not None:
        overrides["clusters"] = args.clusters
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.kmax is not None:
        overrides["k_max"] = args.kmax
    return preset_config(args.preset, **overrides)


def _model_report(model) -> dict:
    pca = model.seed.pca
    return {
        "preset": model.config.preset,
        "config": model.config.__dict__ | {},
        "hop1_energies": [float(e) for e in model.cascade.hop1.energies],
        "hop2_energies": [[float(e) for e in b.energies] for b in model.cascade.hop2],
        "retained_per_channel": [ch.retained for ch in pca.channels],
        "seed_dim": pca.dim,
        "cluster_priors": [float(p) for p in model.seed.clusters.priors],
        "codebooks": {
            "s4_regions": len(model.s4_books.books),
            "s4_bank_rows": model.s4_books.books[0].lf_bank.shape[0],
            "s1_regions": len(model.s1_books.books),
            "s1_bank_rows": model.s1_books.books[0].lf_bank.shape[0],
        },
    }


def _print_report(report: dict, stream) -> None:
    print(f"preset: {report['preset']}", file=stream)
    print(f"hop-1 energies: {_fmt(report['hop1_energies'])}", file=stream)
    for j, energies in enumerate(report["hop2_energies"]):
        print(f"hop-2 basis {j} energies: {_fmt(energies)}", file=stream)
    print(
        f"seed dimension: {report['seed_dim']} "
        f"(per channel: {report['retained_per_channel']})",
        file=stream,
    )
    print(f"cluster priors: {_fmt(report['cluster_priors'])}", file=stream)
    print(f"codebooks: {report['codebooks']}", file=stream)


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def cmd_train(args) -> int:
    from .datasets import DatasetError, load_dataset
    from .pipeline import save, train

    try:
        config = _build_config(args)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    data_path = Path(args.data)
    if not data_path.exists():
        return _fail(f"data path does not exist: {data_path}", EXIT_USAGE)

    started = time.perf_counter()
    try:
        images = load_dataset(_dataset_source(args, config))
    except DatasetError as exc:
        return _fail(str(exc), EXIT_USAGE)
    logging.getLogger("genhop").info(
        "loaded %d images of %dx%dx%d",
        images.shape[0], images.shape[1], images.shape[2], images.shape[3],
    )
    model = train(images, config)
    save(model, args.out)
    elapsed = time.perf_counter() - started

    report = _model_report(model)
    _print_report(report, sys.stderr)
    print(f"trained in {elapsed:.1f}s -> {args.out}", file=sys.stderr)
    _emit_json(args, {
        "command": "train", "model": str(args.out), "images": int(images.shape[0]),
        "seed_dim": report["seed_dim"], "seconds": round(elapsed, 3),
    })
    return 0


def cmd_generate(args) -> int:
    from .datasets import save_grid_png, save_png
    from .errors import GenHopError
    from .pipeline import generate, load

    model_path = Path(args.model)
    if not model_path.exists():
        return _fail(f"model file does not exist: {model_path}", EXIT_USAGE)
    try:
        model = load(model_path)
    except GenHopError as exc:
        return _fail(str(exc))
    if args.count < 0:
        return _fail("--count must be non-negative", EXIT_USAGE)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    images = generate(model, args.count, args.seed)
    for i in range(args.count):
        save_png(out_dir / f"{i:05d}.png", images[i])
    if args.count:
        save_grid_png(out_dir / "grid.png", images)
    elapsed = time.perf_counter() - started

    print(f"wrote {args.count} samples to {out_dir} in {elapsed:.1f}s", file=sys.stderr)
    _emit_json(args, {
        "command": "generate", "out": str(out_dir), "count": args.count,
        "seed": args.seed, "seconds": round(elapsed, 3),
    })
    return 0


def cmd_inspect(args) -> int:
    from .errors import GenHopError
    from .pipeline import load

    model_path = Path(args.model)
    if not model_path.exists():
        return _fail(f"model file does not exist: {model_path}", EXIT_USAGE)
    try:
        model = load(model_path)
    except GenHopError as exc:
        return _fail(str(exc))

    report = _model_report(model)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        _print_report(report, sys.stdout)
        print(f"config: {report['config']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genhop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write it to disk")
    p_train.add_argument("--preset", required=True, help="mnist, fashion, or celeba")
    p_train.add_argument("--data", required=True, help="dataset directory or IDX file")
    p_train.add_argument("--out", required=True, help="output model file")
    p_train.add_argument("--train-seed", type=int, default=None)
    p_train.add_argument("--clusters", type=int, default=None)
    p_train.add_argument("--gamma", type=float, default=None)
    p_train.add_argument("--kmax", type=int, default=None)
    p_train.add_argument("--json", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample images from a trained model")
    p_gen.add_argument("--model", required=True)
    p_gen.add_argument("--count", type=int, default=64)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output directory for PNGs")
    p_gen.add_argument("--json", action="store_true")
    p_gen.set_defaults(func=cmd_generate)

    p_inspect = sub.add_parser("inspect", help="print a human-readable model report")
    p_inspect.add_argument("--model", required=True)
    p_inspect.add_argument("--json", action="store_true")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="genhop: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
