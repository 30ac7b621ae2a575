"""Toy-model accuracy when one of the two product MSBs is flipped with probability p."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    sys.exit(main(["inject", "--out", "results/inject", *sys.argv[1:]]))
