"""
Entry script for running the anchorstream CLI.
"""

import sys

from anchorstream.main import main

if __name__ == "__main__":
    sys.exit(main())
