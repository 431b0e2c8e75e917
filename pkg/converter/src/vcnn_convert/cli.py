"""Converter command line: convert, emit-vectors, verify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .convert import DEFAULT_MEAN_RGB, ConversionError, convert, verify_manifest
from .vectors import emit_test_vectors


def _shape(args) -> tuple[int, int, int]:
    c, h, w = args.input_shape
    return (c, h, w)


def _cmd_convert(args) -> int:
    manifest_path = args.manifest or str(Path(args.out).with_suffix(".manifest.json"))
    manifest = convert(
        args.source, args.out,
        manifest_path=manifest_path,
        input_shape=_shape(args),
        mean_rgb=args.mean,
    )
    print(f"wrote {args.out} ({len(manifest['nodes'])} nodes) and {manifest_path}")
    return 0


def _cmd_emit_vectors(args) -> int:
    pairs = emit_test_vectors(
        args.source, args.out_dir,
        count=args.count, seed=args.seed,
        input_shape=_shape(args), mean_rgb=args.mean,
    )
    print(f"wrote {len(pairs)} input/logit pairs under {args.out_dir}")
    return 0


def _cmd_verify(args) -> int:
    verify_manifest(args.model, args.manifest)
    print(f"{args.model}: checksums match {args.manifest}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="vcnn-convert",
        description="Convert TorchScript models into the vcnn engine format",
    )
    parser.add_argument("--input-shape", type=int, nargs=3, default=[3, 224, 224],
                        metavar=("C", "H", "W"))
    parser.add_argument("--mean", type=float, nargs=3, default=list(DEFAULT_MEAN_RGB),
                        metavar=("R", "G", "B"),
                        help="per-channel means stored in the model header")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="write an engine model file")
    p.add_argument("source", help="TorchScript (.pt) source model")
    p.add_argument("out", help="output model path")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("emit-vectors", help="write PPM inputs + reference logits")
    p.add_argument("source")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_emit_vectors)

    p = sub.add_parser("verify", help="re-check a model against its manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.set_defaults(fn=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConversionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
