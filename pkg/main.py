"""Entry point for running a benchmark campaign without installing the package.

Usage:
    python main.py --config campaign.config.yaml --jobs 4
"""

import sys

from mlio.cli import main

if __name__ == "__main__":
    sys.exit(main())
