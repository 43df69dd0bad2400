"""Main entry point for the hematch CLI.

# this_file: src/hematch/__main__.py

Usage:
    hematch keygen --config client.json --seed 7
    hematch serve --config main.json
    hematch enroll --config client.json --features alice.csv --id alice
    hematch auth --config client.json --features query.csv
    hematch bench --workers 1,2,3 --n 5000
"""

from __future__ import annotations

import fire

from .cli import COMMANDS


def main() -> None:
    """Entry point for ``python -m hematch`` and the ``hematch`` console script."""
    fire.Fire(COMMANDS)


if __name__ == "__main__":  # pragma: no cover
    main()
