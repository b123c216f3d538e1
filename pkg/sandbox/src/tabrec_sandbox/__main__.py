"""Entry point: `python -m tabrec_sandbox --worker` starts the protocol loop."""

from __future__ import annotations

import argparse


def main() -> None:
    parser = argparse.ArgumentParser(
        prog="tabrec-sandbox",
        description="Long-lived worker executing analysis scripts over a stdio JSON protocol.",
    )
    parser.add_argument("--worker", action="store_true", help="serve requests from stdin")
    args = parser.parse_args()
    if not args.worker:
        parser.error("nothing to do: pass --worker to start the protocol loop")
    from .runner import worker_loop

    worker_loop()


if __name__ == "__main__":
    main()
