"""Run every pipeline stage into one output directory and print the manifest checks.

    python3 scripts/run_pipeline.py --out runs/pipeline [--override grid.N=1024 ...]
"""

import argparse
import json
import sys
from pathlib import Path

from implosion.cli_io import EXIT_CONFIG, EXIT_NUMERIC, STAGES, main


def run(out: str, overrides: list[str]) -> int:
    extra = [a for o in overrides for a in ("--override", o)]
    worst = 0
    for stage in STAGES:
        code = main([stage, "--out", out, *extra])
        worst = max(worst, code)
        if code in (EXIT_NUMERIC, EXIT_CONFIG):
            break
    manifest = Path(out) / "manifest.json"
    if manifest.exists():
        data = json.loads(manifest.read_text())
        for name, st in data["stages"].items():
            bad = [k for k, v in st["checks"].items() if not v]
            print(f"{name:9s} {'ok' if st['passed'] else 'FAILED ' + ', '.join(bad)}")
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    sys.exit(run(args.out, args.override))
