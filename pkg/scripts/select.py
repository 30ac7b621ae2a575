"""Per-level compression and quantization selection, verified by timing simulation."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    sys.exit(main(["select", "--out", "results/select", "-v", *sys.argv[1:]]))
