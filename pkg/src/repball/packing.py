"""Disjoint families of closed reparametrization balls and packing entropy.

Suprema over families are replaced by seeded greedy scans over finite
candidate sets, so every quantity here is a lower bound for the quantity it
approximates.  Disjointness is certified on a finite probe set (see
:mod:`repball._greedy`).
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._greedy import DISJOINT_FAST, DISJOINT_PROBED, INTERSECT, as_array, greedy_kernels
from .flows import FlowSystem
from .reparam import ETA_MARGIN, BallSpec, default_dt

log = logging.getLogger(__name__)

PROBE_COUNT = 5000
T_SPREAD = 5.0
SATURATION = 0.25


class EstimationError(RuntimeError):
    pass


class InsufficientPackingMass(RuntimeError):
    """The greedy family never exceeded the lower end of the target interval."""

    def __init__(self, msg, best: "PackingFamily", best_sum: float):
        super().__init__(msg)
        self.best = best
        self.best_sum = best_sum


@dataclass
class PackingFamily:
    balls: list[BallSpec]
    probe_set_id: str
    min_t: float
    centers_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)

    def __post_init__(self):
        if any(b.t < self.min_t - 1e-12 for b in self.balls):
            raise ValueError("ball duration below min_t")

    def __len__(self):
        return len(self.balls)

    @property
    def eps(self) -> float | None:
        return self.balls[0].eps if self.balls else None

    def revalidate(self, system: FlowSystem, probes, dt: float, eta_margin: float = ETA_MARGIN) -> bool:
        """Re-check pairwise disjointness on ``probes`` (must match probe_set_id)."""
        if probe_set_id(probes) != self.probe_set_id:
            raise ValueError("probe set does not match the family's certificate")
        for i in range(len(self.balls)):
            for j in range(i + 1, len(self.balls)):
                if not balls_disjoint(system, self.balls[i], self.balls[j], probes, dt, eta_margin):
                    return False
        return True


@dataclass
class EntropyEstimate:
    value: float
    eps: float
    t_window: tuple[float, float]
    dt: float
    method: str
    fit_residual: float
    seed: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("entropy estimate must be nonnegative")
        if not self.t_window[0] < self.t_window[1]:
            raise ValueError("t_window must satisfy t_min < t_max")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "eps": self.eps,
            "t_window": list(self.t_window),
            "dt": self.dt,
            "method": self.method,
            "fit_residual": self.fit_residual,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }


def probe_set_id(probes) -> str:
    arr = as_array(probes)
    return "probes-" + hashlib.sha1(arr.tobytes()).hexdigest()[:12]


def default_probes(system: FlowSystem, candidates, count: int = PROBE_COUNT, seed: int = 0) -> np.ndarray:
    """Candidates first, then ``count`` seeded samples of the space."""
    cands = as_array(candidates)
    extra = system.sample(np.random.default_rng([seed, 7919]), count) if count else cands[:0]
    return np.ascontiguousarray(np.concatenate([cands, as_array(extra)]))


def balls_disjoint(system, b1: BallSpec, b2: BallSpec, probes, dt: float, eta_margin: float = ETA_MARGIN) -> bool:
    if b1.eps != b2.eps:
        raise ValueError("disjointness is defined for balls of equal radius")
    probes = as_array(probes)
    if len(probes) == 0:
        raise ValueError("probes must be nonempty")
    disjoint = greedy_kernels(system)[0]
    code = disjoint(
        np.asarray(b1.center, float), float(b1.t), np.asarray(b2.center, float), float(b2.t),
        float(b1.eps), float(dt), float(eta_margin), probes,
    )
    return code in (DISJOINT_FAST, DISJOINT_PROBED)


def _run_greedy(system, cands, ts, eps, dt, probes, order, weights=None, stop_mass=np.inf, eta_margin=ETA_MARGIN):
    greedy = greedy_kernels(system)[1]
    if weights is None:
        weights = np.ones(len(cands))
    acc, blocker, overflow = greedy(
        cands, np.asarray(ts, float), order, float(eps), float(dt), float(eta_margin),
        probes, np.asarray(weights, float), float(stop_mass),
    )
    if overflow:
        raise RuntimeError("probe owner table overflowed; disjointness bookkeeping incomplete")
    return acc, blocker


def greedy_packing(
    system: FlowSystem,
    candidates,
    t: float,
    eps: float,
    probes=None,
    order_seed: int = 0,
    dt: float | None = None,
    eta_margin: float = ETA_MARGIN,
) -> PackingFamily:
    """Maximal family of disjoint closed balls of duration ``t`` centered at candidates.

    ``probes`` must start with the candidates; by default they are the
    candidates followed by ``PROBE_COUNT`` samples of the space."""
    cands = as_array(candidates) if len(candidates) else np.empty((0, 1))
    if len(cands) == 0:
        return PackingFamily([], "empty", t)
    dt = min(0.1, eps / 4.0) if dt is None else dt
    probes = default_probes(system, cands) if probes is None else as_array(probes)
    _check_probe_prefix(cands, probes)
    order = np.random.default_rng(order_seed).permutation(len(cands))
    acc, blocker = _run_greedy(system, cands, np.full(len(cands), float(t)), eps, dt, probes, order, eta_margin=eta_margin)
    _assert_maximal(acc, blocker, len(cands))
    balls = [BallSpec(cands[i], float(t), float(eps), True) for i in acc]
    return PackingFamily(balls, probe_set_id(probes), float(t), acc)


def _check_probe_prefix(cands, probes):
    if len(probes) < len(cands) or not np.array_equal(probes[: len(cands)], cands):
        raise ValueError("probes must begin with the candidate centers")


def _assert_maximal(acc, blocker, n):
    accepted = np.zeros(n, dtype=bool)
    accepted[acc] = True
    rejected = ~accepted
    if np.any(blocker[rejected] < 0) or not np.all(accepted[blocker[rejected]]):
        raise AssertionError("greedy packing is not maximal: a rejected candidate has no blocking ball")


def packing_sum(family: PackingFamily, s: float) -> float:
    if s < 0:
        raise ValueError("s must be nonnegative")
    return float(sum(math.exp(-s * b.t) for b in family.balls))


def estimate_P(
    system: FlowSystem,
    Z_samples,
    s: float,
    eps: float,
    N: float,
    restarts: int,
    seed: int,
    t_spread: float = T_SPREAD,
    dt: float | None = None,
    probes=None,
) -> float:
    """Best packing sum over seeded greedy runs with durations in [N, N + t_spread]."""
    if N < 1 or restarts < 1:
        raise ValueError("need N >= 1 and restarts >= 1")
    cands = as_array(Z_samples)
    dt = min(0.1, eps / 4.0) if dt is None else dt
    probes = default_probes(system, cands) if probes is None else as_array(probes)
    best = 0.0
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        ts = N + rng.uniform(0.0, t_spread, size=len(cands))
        order = rng.permutation(len(cands))
        acc, _ = _run_greedy(system, cands, ts, eps, dt, probes, order)
        best = max(best, float(np.exp(-s * ts[acc]).sum()))
    return best


def select_family_in_range(
    system: FlowSystem,
    Z_samples,
    s: float,
    eps: float,
    N: float,
    a: float,
    b: float,
    seed: int,
    t_spread: float = T_SPREAD,
    dt: float | None = None,
    probes=None,
) -> PackingFamily:
    """Disjoint family with durations >= N whose packing sum lies in (a, b).

    Picks N1 >= N with exp(-N1 s) < b - a, grows a greedy family until its sum
    exceeds b, then drops balls one at a time until the sum falls inside."""
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    if s > 0:
        n1 = max(float(N), math.floor(-math.log(b - a) / s) + 1.0) if b - a < 1 else float(N)
    elif b - a > 1:
        n1 = float(N)
    else:
        raise ValueError("s = 0 needs b - a > 1")
    cands = as_array(Z_samples)
    dt = min(0.1, eps / 4.0) if dt is None else dt
    probes = default_probes(system, cands) if probes is None else as_array(probes)
    _check_probe_prefix(cands, probes)
    rng = np.random.default_rng(seed)
    ts = n1 + rng.uniform(0.0, t_spread, size=len(cands))
    w = np.exp(-s * ts)
    order = rng.permutation(len(cands))
    acc, _ = _run_greedy(system, cands, ts, eps, dt, probes, order, weights=w, stop_mass=b)
    total = float(w[acc].sum())
    pid = probe_set_id(probes)
    if total <= a:
        fam = PackingFamily([BallSpec(cands[i], float(ts[i]), eps) for i in acc], pid, n1, acc)
        raise InsufficientPackingMass(
            f"greedy packing mass {total:.4g} never exceeded {a} (s={s}, N1={n1})", fam, total
        )
    keep = list(acc)
    while total >= b:
        total -= w[keep.pop()]
    if not a < total < b:
        raise AssertionError(f"discarding left sum {total} outside ({a}, {b})")
    keep = np.asarray(keep, dtype=np.int64)
    balls = [BallSpec(cands[i], float(ts[i]), float(eps)) for i in keep]
    return PackingFamily(balls, pid, n1, keep)


def run_order(n: int, seed: int, restart: int, t: float) -> np.ndarray:
    """Candidate order for one seeded run at duration ``t``; shared by the
    packing and covering estimators so paired runs see the same family."""
    return np.random.default_rng([seed, restart, int(round(t * 1000))]).permutation(n)


def t_grid(t_window, step: float = 1.0) -> np.ndarray:
    t0, t1 = t_window
    n = int(math.floor((t1 - t0) / step + 1e-9))
    return t0 + step * np.arange(n + 1)


def fit_growth(ts, counts) -> tuple[float, float]:
    """Least-squares slope of log(count) against t and the RMS residual."""
    ts = np.asarray(ts, float)
    y = np.log(np.asarray(counts, float))
    coef = np.polyfit(ts, y, 1)
    resid = y - np.polyval(coef, ts)
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def packing_counts(
    system, Z_samples, eps, t_window, dt, restarts, seed,
    t_step=1.0, probes=None, saturation=SATURATION,
):
    """R(t) on the t grid; stops once R exceeds ``saturation * len(Z)``."""
    dt = default_dt(eps) if dt is None else dt
    cands = as_array(Z_samples)
    probes = default_probes(system, cands, seed=seed) if probes is None else as_array(probes)
    _check_probe_prefix(cands, probes)
    cap = saturation * len(cands)
    rows = []
    for t in t_grid(t_window, t_step):
        best = 0
        for r in range(restarts):
            order = run_order(len(cands), seed, r, t)
            acc, blocker = _run_greedy(system, cands, np.full(len(cands), float(t)), eps, dt, probes, order)
            _assert_maximal(acc, blocker, len(cands))
            best = max(best, len(acc))
        usable = best <= cap
        rows.append({"t": float(t), "R": int(best), "usable": bool(usable)})
        log.info("eps=%g t=%g R=%d usable=%s", eps, t, best, usable)
        if not usable:
            break
    return rows


def estimate_packing_entropy(
    system: FlowSystem,
    Z_samples,
    eps: float,
    t_window,
    dt: float | None = None,
    restarts: int = 1,
    seed: int = 0,
    t_step: float = 1.0,
    probes=None,
    saturation: float = SATURATION,
    critical_s: bool = False,
    critical_samples: int = 1500,
    critical_iters: int = 5,
    rows=None,
) -> EntropyEstimate:
    """Growth rate of the greedy packing cardinality R(t) over ``t_window``.

    Grid points where R(t) exceeds ``saturation * len(Z_samples)`` are
    reported but not fitted, since a finite sample caps the count.  With
    ``critical_s`` the estimate is cross-checked by bisecting the exponent at
    which a family with packing sum in (1, 2) stops existing."""
    t0, t1 = t_window
    if t1 < t0 + 4:
        raise ValueError("t_window must span at least 4 time units")
    dt = min(0.1, eps / 4.0) if dt is None else dt
    if rows is None:
        rows = packing_counts(system, Z_samples, eps, t_window, dt, restarts, seed, t_step, probes, saturation)
    good = [r for r in rows if r["usable"] and r["R"] > 0]
    if len(good) < 3:
        raise EstimationError(
            f"only {len(good)} unsaturated t grid points (need 3); rows={rows}"
        )
    slope, resid = fit_growth([r["t"] for r in good], [r["R"] for r in good])
    diag = {"rows": rows, "fit_points": len(good), "samples": len(as_array(Z_samples)), "restarts": restarts}
    if critical_s:
        diag["critical_s_bracket"] = critical_exponent_bracket(
            system, as_array(Z_samples)[:critical_samples], eps, good[0]["t"],
            max(2.0 * slope, 0.1), dt, seed, critical_iters,
        )
    return EntropyEstimate(max(slope, 0.0), eps, (float(t0), float(t1)), dt, "packing-growth", resid, seed, diag)


def critical_exponent_bracket(system, Z_samples, eps, N, s_hi, dt, seed, iters=5):
    """Bisection bracket [lo, hi] for the exponent at which the level-one
    selection with target (1, 2) at duration floor ``N`` starts failing."""
    lo, hi = 0.0, float(s_hi)
    probes = default_probes(system, Z_samples, seed=seed)
    for k in range(iters):
        mid = 0.5 * (lo + hi)
        try:
            select_family_in_range(system, Z_samples, mid, eps, N, 1.0, 2.0, seed + k, dt=dt, probes=probes)
            lo = mid
        except InsufficientPackingMass:
            hi = mid
    return [lo, hi]
