from __future__ import annotations

import argparse

from .protocol import serve
from .sessions import SessionManager


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        prog="codeloop_executor",
        description="Sandboxed Python execution service speaking line JSON on stdio.",
    )
    parser.add_argument(
        "--hardened",
        action="store_true",
        help="run each session in its own subprocess",
    )
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        from .worker import child_main

        child_main()
        return

    if args.hardened:
        from .worker import HardenedSession

        serve(manager=SessionManager(session_factory=HardenedSession))
    else:
        serve(manager=SessionManager())


if __name__ == "__main__":
    main()
