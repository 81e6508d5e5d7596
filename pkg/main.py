"""
Main entry point for one-shot federated segmentation experiments.
"""

import sys

from src.core.app import main

if __name__ == "__main__":
    sys.exit(main())
