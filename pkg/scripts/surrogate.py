"""Pearson correlation between rankings by measured accuracy loss and by sqrt(alpha^2 + beta^2)."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    sys.exit(main(["validate-surrogate", "--out", "results/surrogate", *sys.argv[1:]]))
