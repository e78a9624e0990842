"""Command-line entry point: ``mgnet <stage> [options]``.

Exit codes: 0 success, 1 invalid configuration or input, 2 an upstream
stage has not been run, 3 any other runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback

from .config import PipelineConfig
from .errors import ConfigError, MissingDependencyError, ParseError, ShapeError
from .pipeline import ORDER, STAGES, Pipeline

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("mgnet")

# flag -> config key (independent of the subcommand)
FLAG_KEYS = {
    "seed": "pipeline.seed",
    "workdir": "pipeline.workdir",
    "input": "pipeline.input",
    "manifest": "pipeline.manifest",
    "min_quality": "pipeline.min_quality",
    "k": "pipeline.k",
    "stride": "pipeline.stride",
    "lambda_min": "pipeline.lambda_min",
    "image_size": "pipeline.image_size",
    "checkpoint": "pipeline.checkpoint",
    "dims": "embed.dims",
    "walks": "embed.walks_per_node",
    "walk_length": "embed.walk_length",
    "window": "embed.window",
    "negatives": "embed.negatives",
    "batch_size": "model.batch_size",
    "labels_per_class": "finetune.labels_per_class",
    "n_clusters": "cluster.n_clusters",
}

COMMANDS = {
    "synth": "generate the synthetic labelled corpus",
    "graph": "build and export the global k-mer co-occurrence graph",
    "embed": "node2vec walks + skip-gram, write the embedding file",
    "render": "render per-read pseudo-images (PGM)",
    "pretrain": "self-supervised reconstruction pretraining",
    "features": "extract fused per-read features",
    "finetune": "train the classifier head on labelled training reads",
    "evaluate": "per-class metrics on the test split",
    "cluster-eval": "zero-label protocol: k-means + Hungarian alignment",
    "ablate": "compare autoencoder-only, late-fusion, structural-only and full features",
    "all": "run synth (unless --input) through evaluate in order",
}


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--seed", type=int)
    g.add_argument("--workdir")
    g.add_argument("--input", nargs="+", metavar="PATH", help="FASTA/FASTQ reads (default: the synth corpus)")
    g.add_argument("--manifest", help="TSV read_id/label/split (default: the synth manifest)")
    g.add_argument("--min-quality", type=float, help="drop reads with mean Phred <= this (default 7)")
    g.add_argument("--k", type=int, help="k-mer length (default 5)")
    g.add_argument("--stride", type=int, help="k-mer stride (default 10)")
    g.add_argument("--lambda-min", type=float, help="pair-count cutoff for pseudo-images (default 0)")
    g.add_argument("--image-size", type=int, help="model input side in pixels (default 64)")
    g.add_argument("--checkpoint", help="pretrained model checkpoint path")
    e = p.add_argument_group("embedding")
    e.add_argument("--dims", type=int)
    e.add_argument("--walks", type=int, help="walks per node")
    e.add_argument("--walk-length", type=int)
    e.add_argument("--window", type=int)
    e.add_argument("--negatives", type=int)
    t = p.add_argument_group("training")
    t.add_argument("--epochs", type=int, help="pretraining epochs; classifier epochs for `finetune`")
    t.add_argument("--lr", type=float, help="pretraining rate; classifier rate for `finetune`")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--labels-per-class", type=int, help="cap on labelled training reads per class (0 = all)")
    t.add_argument("--n-clusters", type=int, help="k for cluster-eval (0 = number of classes)")
    o = p.add_argument_group("control")
    o.add_argument("--force", action="store_true", help="re-run even if the completion marker is current")
    o.add_argument("-q", "--quiet", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common_options()
    for name, help_text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def overrides_from(args: argparse.Namespace) -> dict:
    out = {}
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    classifier = args.command == "finetune"
    if args.epochs is not None:
        out["model.epochs_finetune" if classifier else "model.epochs_pretrain"] = args.epochs
    if args.lr is not None:
        out["model.finetune_lr" if classifier else "model.lr"] = args.lr
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = PipelineConfig.load(args.config, overrides_from(args))
        cfg.workdir.mkdir(parents=True, exist_ok=True)
        (cfg.workdir / "resolved_config.ini").write_text(cfg.to_ini())
        pipe = Pipeline(cfg, force=args.force)
        if args.command == "all":
            pipe.run_all(ORDER)
        else:
            assert args.command in STAGES
            pipe.run(args.command)
    except (ConfigError, ParseError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except MissingDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if log.isEnabledFor(logging.DEBUG):
            traceback.print_exc()
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
