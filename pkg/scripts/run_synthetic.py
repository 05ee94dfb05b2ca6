#!/usr/bin/env python3
"""Generate the default synthetic corpus, train on it, and report held-out AUC.

Equivalent to chaining ``wsvad gen-synth``, ``wsvad train``, ``wsvad eval``
with matching settings; handy as a one-shot smoke run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from wsvad.cli import main as wsvad


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/synthetic", help="corpus + run output root")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--separation", type=float, default=4.0)
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    data_dir = work / "data"
    run_dir = work / f"train_seed{args.seed}"

    if not (data_dir / "train_manifest.csv").exists():
        code = wsvad(["gen-synth", "--out", str(data_dir),
                      "--seed", str(args.seed), "--separation", str(args.separation)])
        if code != 0:
            return code

    code = wsvad([
        "train",
        "--train-manifest", str(data_dir / "train_manifest.csv"),
        "--test-manifest", str(data_dir / "test_manifest.csv"),
        "--out-dir", str(run_dir),
        "--epochs", str(args.epochs),
        "--seed", str(args.seed),
        "--set", "feature_dim=64",
    ])
    if code != 0:
        return code

    return wsvad(["eval", "--checkpoint", str(run_dir / "best.lwck"),
                  "--manifest", str(data_dir / "test_manifest.csv")])


if __name__ == "__main__":
    sys.exit(run())
