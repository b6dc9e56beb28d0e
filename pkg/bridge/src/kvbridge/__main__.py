"""Entry point: serve a model over TCP or stdio."""

from __future__ import annotations

import argparse
import sys

from .hosts import load_host
from .server import BridgeServer, serve_stream


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kvbridge",
        description="Serve a causal LM behind the superprompt wire protocol",
    )
    parser.add_argument("--model", default="reference-alibi",
                        help="reference-alibi | reference-rotary | hf:<checkpoint>")
    parser.add_argument("--address", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7160)
    parser.add_argument("--stdio", action="store_true",
                        help="serve one session over stdin/stdout instead of TCP")
    args = parser.parse_args(argv)

    host = load_host(args.model)
    if args.stdio:
        serve_stream(host, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    server = BridgeServer(host, args.address, args.port)
    print(f"kvbridge serving {host.model_id} on {server.address}:{server.port}",
          file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
