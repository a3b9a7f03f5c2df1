"""Try the Frostman construction on the 2-shift suspension for several s.

    python3 scripts/frostman_sweep.py --s 0.3 0.58 --window 40 --pad 160
"""

import argparse
import logging
import time

import numpy as np

from repball.flows import make_system
from repball.measures import FrostmanError, check_mass_bounds, frostman_construct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--s", type=float, nargs="+", default=[0.3, 0.58])
    ap.add_argument("--p-max", type=int, default=3)
    ap.add_argument("--window", type=int, default=16)
    ap.add_argument("--pad", type=int, default=96)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("-v", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.v else logging.WARNING)
    system = make_system("shift2", window=args.window, pad=args.pad)
    Z = system.sample(np.random.default_rng(5), args.samples)
    for s in args.s:
        t0 = time.time()
        try:
            _, hist = frostman_construct(system, Z, s, 0.25, args.p_max, 0, n1=4.0, separation=0.125,
                                         local_draws=300)
        except FrostmanError as exc:
            print(f"s={s}: failed at level {exc.level} after {time.time() - t0:.0f}s: {exc}")
            continue
        levels = [(len(h.K), f"{h.gamma:.3g}", round(h.mu.total_mass, 4)) for h in hist]
        print(f"s={s}: levels (atoms, gamma, mass) {levels}, "
              f"{len(check_mass_bounds(system, hist))} mass violations, {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
