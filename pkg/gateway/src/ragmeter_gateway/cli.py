"""Command line entry point.

    ragmeter-gateway --config bindings.json [--fixture suite.json]
                     [--host 0.0.0.0] [--port 8080] [--auth-token-env VAR]
"""

from __future__ import annotations

import argparse
import sys

from .bindings import load_bindings
from .errors import GatewayError
from .fixtures import FixtureStore
from .service import create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragmeter-gateway",
        description="Serve embedding, reranking, and generation models "
                    "behind the retrieval wire protocol.",
    )
    parser.add_argument("--config", required=True,
                        help="JSON file with the model bindings to serve")
    parser.add_argument("--fixture", default=None,
                        help="serve canned responses from this recorded "
                             "suite instead of loading models")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--auth-token-env", default=None,
                        help="name of the environment variable holding the "
                             "bearer token clients must present")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        bindings = load_bindings(args.config)
        fixture = FixtureStore.from_file(args.fixture) if args.fixture else None
        app = create_app(bindings, fixture=fixture,
                         auth_token_env=args.auth_token_env)
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
