"""Console entry points: nwb-export and nwb-import."""

from __future__ import annotations

import argparse
import sys

from prunekit.bundle import BundleError

from . import convert


def export_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nwb-export",
        description="Export a PyTorch checkpoint into a neutral weight bundle.")
    parser.add_argument("checkpoint", help="input .pt/.pth state-dict checkpoint")
    parser.add_argument("bundle", help="output .nwb path")
    parser.add_argument("--arch", required=True,
                        choices=["vgg16", "resnet56", "resnet110"],
                        help="architecture the checkpoint was trained as")
    args = parser.parse_args(argv)
    try:
        bundle = convert.export_checkpoint(args.checkpoint, args.arch, args.bundle)
    except (BundleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.bundle}: {len(bundle.tensors)} tensors "
          f"({args.arch}, model={bundle.metadata.get('model')})")
    return 0


def import_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nwb-import",
        description="Import a neutral weight bundle into a PyTorch checkpoint.")
    parser.add_argument("bundle", help="input .nwb path")
    parser.add_argument("checkpoint", help="output .pt state-dict checkpoint")
    args = parser.parse_args(argv)
    try:
        model = convert.import_bundle(args.bundle, args.checkpoint)
    except (BundleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    n_params = sum(p.numel() for p in model.parameters())
    print(f"wrote {args.checkpoint}: {type(model).__name__} with {n_params} parameters")
    return 0
