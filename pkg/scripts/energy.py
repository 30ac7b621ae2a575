"""Normalized toggle energy of the selected configurations, uniform and trace-driven."""

import sys

from agingquant.cli import main

if __name__ == "__main__":
    extra = sys.argv[1:]
    code = main(["energy", "--out", "results/energy_uniform", *extra])
    code = code or main(["energy", "--trace-driven", "--out", "results/energy_trace", *extra])
    sys.exit(code)
