"""MAC delay over every (alpha, beta), both paddings and all aging levels."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    sys.exit(main(["characterize", "--out", "results/characterize", *sys.argv[1:]]))
