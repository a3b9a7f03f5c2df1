"""Run verify-vp on every config in configs/ and print one line per verdict.

    python3 scripts/run_configs.py [--only shift2 cat] [--out results]
"""

import argparse
import glob
import os
import time

from repball.cli import verify_variational_principle
from repball.config import load_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", nargs="*")
    ap.add_argument("--out", default=os.path.join(ROOT, "results"))
    args = ap.parse_args()
    for path in sorted(glob.glob(os.path.join(ROOT, "configs", "*.json"))):
        name = os.path.splitext(os.path.basename(path))[0]
        if args.only and name not in args.only:
            continue
        cfg = load_config(path)
        t0 = time.time()
        if not cfg.measures:
            cfg.measures = [{"kind": "periodic", "size": 2000}]
        rep = verify_variational_principle(cfg, os.path.join(args.out, name))
        print(f"== {name} ({time.time() - t0:.0f}s), packing reference {rep.packing_reference}")
        for v in rep.verdicts:
            print(f"  {'PASS' if v.passed else 'FAIL'} {v.name}: {v.lhs:.4f} vs {v.rhs:.4f}")
        for e in rep.errors:
            print(f"  error: {e}")


if __name__ == "__main__":
    main()
