"""Command-line driver for the graph-words pipeline.

Usage:
    graphwords --workspace ws synth --categories 3 --images 15 --train 10
    graphwords --workspace ws graphs
    graphwords --workspace ws dict
    graphwords --workspace ws encode
    graphwords --workspace ws eval
    graphwords --workspace ws query --image cat00_001 --topk 5
    graphwords --workspace ws sweep --sizes 500,1000
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .features import FeatureFormatError, SyntheticSpec, ValidationError

log = logging.getLogger("graphwords")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphwords", description="Multi-layer local graph words for image retrieval.")
    p.add_argument("--workspace", "-w", default=".", help="workspace root directory")
    p.add_argument("--config", "-c", help="key = value configuration file")
    p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--workers", type=int, help="worker pool size")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="validate a manifest and copy its features into the workspace")
    ing.add_argument("manifest")

    syn = sub.add_parser("synth", help="generate a synthetic dataset into the workspace")
    syn.add_argument("--categories", type=int, default=3)
    syn.add_argument("--images", type=int, default=15, help="images per category")
    syn.add_argument("--train", type=int, default=10, help="train images per category (random split)")
    syn.add_argument("--keypoints", type=int, default=60, help="keypoints per image")
    syn.add_argument("--dim", type=int, default=64)
    syn.add_argument("--separation", type=float, default=1.0, help="0 = shared descriptors, 1 = disjoint")
    syn.add_argument("--seed", type=int, default=7)

    sub.add_parser("graphs", help="build nested Delaunay graph features")
    sub.add_parser("dict", help="build per-layer dictionaries")
    sub.add_parser("encode", help="encode every image as signatures")
    sub.add_parser("eval", help="evaluate MAP; writes reports/report.json and reports/sweep.csv")

    q = sub.add_parser("query", help="print the top-k train images for one image")
    q.add_argument("--image", required=True)
    q.add_argument("--topk", type=int, default=10)
    q.add_argument("--method", help="method name (default: full multi-layer fusion)")

    sw = sub.add_parser("sweep", help="evaluate over several dictionary sizes")
    sw.add_argument("--sizes", help="comma-separated sizes (default: sweep_sizes from config)")
    return p


def _setup_logging(ws: pipeline.Workspace, verbose: bool) -> None:
    root = logging.getLogger("graphwords")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)
    ws.root.mkdir(parents=True, exist_ok=True)
    fh = logging.FileHandler(ws.root / "run.log")
    fh.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root.addHandler(fh)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    ws = pipeline.Workspace(Path(args.workspace))
    try:
        overrides = list(args.set)
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"graphwords: config error: {exc}", file=sys.stderr)
        return 2
    _setup_logging(ws, args.verbose)
    log.info("command %s with config %s", args.command, cfg.echo()["values"])

    try:
        if args.command == "ingest":
            m = pipeline.stage_ingest(ws, args.manifest, cfg)
            print(f"ingested {len(m.images)} images")
        elif args.command == "synth":
            spec = SyntheticSpec(n_categories=args.categories, images_per_category=args.images,
                                 keypoints_per_image=args.keypoints, descriptor_dim=args.dim,
                                 cluster_separation=args.separation, train_per_category=args.train)
            m = pipeline.stage_synth(ws, spec, args.seed)
            print(f"wrote {len(m.images)} synthetic images")
        elif args.command == "graphs":
            skipped = pipeline.stage_graphs(ws, cfg)
            print(f"graphs built; skipped seeds per layer: {skipped}")
        elif args.command == "dict":
            sizes = pipeline.stage_dicts(ws, cfg)
            print("dictionaries: " + ", ".join(f"{t}={n}" for t, n in sizes.items()))
        elif args.command == "encode":
            n = pipeline.stage_encode(ws, cfg)
            print(f"encoded {n} images")
        elif args.command == "eval":
            maps = pipeline.stage_eval(ws, cfg)
            for name, v in maps.items():
                print(f"{name}\t{v:.4f}")
        elif args.command == "query":
            for rank, iid, dist in pipeline.query(ws, cfg, args.image, args.topk, args.method):
                print(f"{rank} {iid} {dist!r}")
        elif args.command == "sweep":
            sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
            rows = pipeline.run_sweep(ws, cfg, sizes)
            print(f"wrote {ws.reports / 'sweep.csv'} ({len(rows)} rows)")
    except (pipeline.StaleArtifactError, pipeline.PipelineError, FeatureFormatError,
            ValidationError, ValueError, MemoryError, OSError) as exc:
        print(f"graphwords {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
