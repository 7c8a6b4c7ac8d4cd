"""Shared argument handling for the demo scripts."""

import argparse
from pathlib import Path


def out_dir(description: str) -> tuple[Path, argparse.Namespace]:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default="demo_out", help="directory for CSV outputs")
    ap.add_argument("--quick", action="store_true", help="fewer epochs for a fast look")
    args = ap.parse_args()
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path, args
