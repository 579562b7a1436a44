"""Command-line front end mirroring ExportConfig field for field.

Exit codes: 0 ok, 1 usage error, 2 data or encoder error.
"""

import argparse
import logging
import sys

from .errors import ConfigError, DataError, EncoderError
from .export import DEFAULT_CHECKPOINTS, ExportConfig, export


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(
        prog="embed-export",
        description="Encode a JSONL post corpus with a frozen pretrained "
                    "sentence encoder and write a binary embedding store.")
    parser.add_argument("--corpus", required=True,
                        help="input corpus (JSON lines, one user per line)")
    parser.add_argument("--out", required=True,
                        help="output embedding-store path")
    parser.add_argument("--encoder", choices=sorted(DEFAULT_CHECKPOINTS),
                        default="roberta-class",
                        help="encoder family (default: %(default)s)")
    parser.add_argument("--checkpoint", default=None,
                        help="explicit model directory or id; overrides --encoder's "
                             "default and is recorded in the store header")
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=32,
                        help="posts per inference batch (default: %(default)s)")
    parser.add_argument("--no-normalize", dest="normalize", action="store_false",
                        help="keep raw mean-pooled vectors instead of unit vectors")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        config = ExportConfig(corpus_path=args.corpus, output_path=args.out,
                              encoder=args.encoder, checkpoint=args.checkpoint,
                              batch_size=args.batch_size, normalize=args.normalize)
        export(config)
    except ConfigError as e:
        print(f"embed-export: usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, EncoderError, OSError) as e:
        print(f"embed-export: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
