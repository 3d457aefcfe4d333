"""Entry point for ``python -m gpfeed``."""
from __future__ import annotations

from gpfeed.cli import cli_main

if __name__ == "__main__":
    cli_main()
