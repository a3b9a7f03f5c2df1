"""Mean of -log mu(B(x, t, eps)) / t over sampled atoms, per t.

Used to pick the local-entropy scale: at small eps the values carry a large
constant (c / t) and at large eps the balls stop shrinking.

    python3 scripts/local_entropy_profile.py shift2 bernoulli 160000 0.4,0.45 4,6,8,10,12,14
"""

import math
import sys
import time

import numpy as np

from repball.flows import make_system
from repball.measures import BUILTIN_MEASURES, measure_of_ball
from repball.reparam import BallSpec


def main(system, kind, n, eps_list, t_list, samples=10):
    s = make_system(system)
    mu = BUILTIN_MEASURES[kind](s, n, 0)
    rng = np.random.default_rng(1)
    idx = rng.choice(n, samples)
    for eps in eps_list:
        t0 = time.time()
        u = [[-math.log(max(measure_of_ball(s, mu, BallSpec(mu.atoms[i], t, eps)), 1e-300)) / t for t in t_list]
             for i in idx]
        print(f"eps={eps}: {np.round(np.mean(u, axis=0), 3).tolist()}  floor log(n)/t = "
              f"{np.round([math.log(n) / t for t in t_list], 3).tolist()}  ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    a = sys.argv[1:]
    main(a[0], a[1], int(a[2]), [float(x) for x in a[3].split(",")], [float(x) for x in a[4].split(",")])
