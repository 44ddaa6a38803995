"""Startup entry point: load the encoder once, then serve."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import create_app
from .encoders import DEFAULT_ENCODER, make_encoder


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-sidecar",
        description="Serve a frozen text encoder over the embed/count wire contract.",
    )
    parser.add_argument(
        "--encoder", default=DEFAULT_ENCODER,
        help=f"'hash', 'hash:<dim>', or a sentence-transformers model name "
             f"(default: {DEFAULT_ENCODER})",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8876)
    parser.add_argument("--max-tokens", type=int, default=8192,
                        help="Maximum input length for transformer encoders.")
    parser.add_argument("--batch-limit", type=int, default=256)
    args = parser.parse_args(argv)

    try:
        encoder = make_encoder(args.encoder, max_tokens=args.max_tokens)
    except Exception as exc:  # noqa: BLE001 - single startup failure path
        print(f"error: failed to load encoder {args.encoder!r}: {exc}", file=sys.stderr)
        return 1

    app = create_app(encoder, batch_limit=args.batch_limit)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
