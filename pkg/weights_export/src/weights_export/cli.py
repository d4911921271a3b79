"""Command line entry points for the exporter."""

import argparse
import os
import sys
from pathlib import Path

from .bundle import read_bundle, reference_bundle, write_bundle
from .errors import BundleError, ExportError
from .export import export, manifest_path_for
from .manifest import ExportManifest, read_manifest, write_manifest

ASSET_REFERENCE = Path(__file__).parent / "assets" / "tiny_reference"

REFERENCE_MAPPING = {
    "conv2d": "conv1_1",
    "activation": "relu1_1",
    "pool": "pool1",
    "conv2d_1": "conv2_1",
    "activation_1": "relu2_1",
}


def reference_manifest():
    return ExportManifest(
        source_model="tiny-reference-v1",
        mapping=dict(REFERENCE_MAPPING),
        preprocessing="RGB in [0, 1], channels-last, no mean subtraction",
    )


def cmd_export(args):
    bundle = read_bundle(args.bundle)
    manifest = read_manifest(args.manifest)
    count = export(manifest, bundle, args.out)
    print(f"wrote {count} layers to {args.out} "
          f"(manifest {manifest_path_for(args.out)})")
    return 0


def cmd_make_reference(args):
    bundle = reference_bundle(seed=args.seed)
    write_bundle(bundle, args.out)
    write_manifest(reference_manifest(),
                   os.path.join(args.out, "export_manifest.json"))
    print(f"wrote reference bundle to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="weights-export",
        description="convert a layers-model bundle into the FWF weight format")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a bundle to FWF")
    p.set_defaults(func=cmd_export)
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--manifest", required=True, help="export manifest JSON")
    p.add_argument("--out", required=True, help="FWF output path")

    p = sub.add_parser("make-reference",
                       help="write the seeded tiny reference bundle")
    p.set_defaults(func=cmd_make_reference)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
