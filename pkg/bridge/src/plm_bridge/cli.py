"""Serve a frozen masked LM over the oracle wire protocol."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import build_app
from .config import BridgeConfig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plm-bridge")
    parser.add_argument("--config", help="JSON config (BridgeConfig fields)")
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    args = parser.parse_args(argv)
    try:
        cfg = BridgeConfig.from_file(args.config) if args.config else BridgeConfig()
        if args.host:
            cfg.host = args.host
        if args.port is not None:
            cfg.port = args.port
        app = build_app(cfg)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
