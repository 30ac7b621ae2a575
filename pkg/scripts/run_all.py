"""Run every experiment with default settings and print a short summary of each table."""

import subprocess
import sys
from pathlib import Path

from agingquant.report import read_csv

HERE = Path(__file__).parent
SCRIPTS = ["characterize", "age_errors", "inject", "select", "energy", "surrogate"]

if __name__ == "__main__":
    for name in SCRIPTS:
        print(f"== {name}", flush=True)
        proc = subprocess.run([sys.executable, str(HERE / f"{name}.py"), *sys.argv[1:]])
        if proc.returncode:
            sys.exit(proc.returncode)
    for csv in sorted(Path("results").glob("*/*.csv")):
        if csv.name == "delay_sweep.csv":
            continue
        rows = read_csv(csv)
        print(f"\n{csv}")
        print(",".join(rows[0]))
        for r in rows:
            print(",".join(r.values()))
