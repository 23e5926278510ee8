#!/usr/bin/env python3
"""Run the desk-scale strategy sweep end to end.

Thin wrapper over the CLI: simulates the pass, the detection chain, all
eight reconciliation strategies, and the SKL report at scale 0.02 with
pinned seeds.  Takes a few minutes on one core.
"""
import sys
from pathlib import Path

from satqkd.cli import main

REPO = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/desk"
    sys.exit(main(["sweep-strategies",
                   "--config", str(REPO / "configs" / "desk.cfg"),
                   "--out", out]))
