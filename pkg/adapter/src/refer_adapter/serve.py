"""Run the adapter under uvicorn."""

from __future__ import annotations

import argparse
import logging

import uvicorn

from .config import AdapterConfig, load_adapter_config
from .service import create_app


def main() -> None:
    parser = argparse.ArgumentParser(description="Serve the refer-adapter endpoints.")
    parser.add_argument("--config", help="JSON config file (AdapterConfig fields).")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)
    config = load_adapter_config(args.config) if args.config else AdapterConfig()
    if args.port is not None:
        config.port = args.port
    uvicorn.run(create_app(config), host=args.host, port=config.port)


if __name__ == "__main__":
    main()
