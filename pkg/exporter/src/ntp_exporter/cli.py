"""Command line entry point: ntp-export MODEL TOKENS --out PATH [--top-k K]."""

import argparse
import sys

import numpy as np

from .export import ExportJob, export_trace
from .models import ModelLoadError


def _read_tokens(path) -> np.ndarray:
    toks = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                toks.append(int(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a token id: {line!r}")
    return np.array(toks, dtype=np.int64)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ntp-export",
                                 description="Export an NTP trace for a token sequence")
    ap.add_argument("model", help="model id, or path to a fixed-logit .json model")
    ap.add_argument("tokens", help="input file with one 1-based token id per line")
    ap.add_argument("--top-k", type=int, default=0,
                    help="keep only the K most probable entries per position (0 = full)")
    ap.add_argument("--out", default="trace.ntp", help="output trace path")
    args = ap.parse_args(argv)
    try:
        job = ExportJob(model_id=args.model, tokens=_read_tokens(args.tokens),
                        top_k=args.top_k, out_path=args.out)
        export_trace(job)
    except (ModelLoadError, ValueError, OSError) as e:
        print(f"ntp-export: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
