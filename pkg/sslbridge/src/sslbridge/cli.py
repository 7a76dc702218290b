"""Command-line surface for the feature exporter: flags mirror BridgeConfig."""

from __future__ import annotations

import argparse
import sys

from .bridge import BridgeConfig, BridgeError, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sslbridge",
        description="Export frame-level encoder features to SPWF files, "
                    "one per manifest utterance.")
    parser.add_argument("--manifest", required=True,
                        help="corpus manifest TSV (utt_id, speaker, gender, wav)")
    parser.add_argument("--out-dir", required=True,
                        help="directory for <utt_id>.spwf outputs")
    parser.add_argument("--encoder", required=True,
                        help="pretrained encoder identifier or local directory")
    parser.add_argument("--layer-index", type=int, default=-1,
                        help="hidden-state index to export (default: final layer)")
    parser.add_argument("--device", default="cpu",
                        help="torch device string (default: cpu)")
    parser.add_argument("--expected-dim", type=int, default=1024,
                        help="required encoder output width (default: 1024)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = BridgeConfig(manifest=args.manifest, out_dir=args.out_dir,
                          encoder=args.encoder, layer_index=args.layer_index,
                          device=args.device, expected_dim=args.expected_dim)
    try:
        summary = export_features(config)
    except (BridgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(summary.lines(), end="")
    return 0 if summary.ok else 1


if __name__ == "__main__":
    sys.exit(main())
