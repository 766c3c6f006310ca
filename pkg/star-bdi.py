#!/usr/bin/env python3
"""
Star-BDI command-line entry point.

Usage:
    python star-bdi.py transient --figure 2 --k 3 --out p_fig2.csv
    python star-bdi.py validate --quick --report report.json
"""

import sys

from dotenv import load_dotenv

# Load environment variables (STAR_BDI_* overrides)
load_dotenv()

from star_bdi.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
