"""MED and top-2-MSB flip probability of the aged multiplier clocked at its fresh critical path."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    sys.exit(main(["age-errors", "--out", "results/age_errors", *sys.argv[1:]]))
