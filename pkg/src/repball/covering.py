"""Covers by reparametrization balls: 5r selection, covers from maximal
packings, and the Bowen-side entropy estimate.

Covers are only ever built by inflating a maximal packing, so every cover
count here is an upper bound for the minimal one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._greedy import as_array, greedy_kernels
from .flows import FlowSystem
from .packing import (
    SATURATION,
    EntropyEstimate,
    EstimationError,
    PackingFamily,
    _assert_maximal,
    _run_greedy,
    balls_disjoint,
    default_probes,
    fit_growth,
    probe_set_id,
    run_order,
    t_grid,
)
from .reparam import ETA_MARGIN, BallSpec, calibrate_theta, contains_fast, default_dt

log = logging.getLogger(__name__)

DELTA = 0.01


class PreconditionError(ValueError):
    pass


class CoverageFailure(RuntimeError):
    def __init__(self, msg, witness=None, index: int | None = None):
        super().__init__(msg)
        self.witness = witness
        self.index = index


@dataclass
class CoverFamily:
    balls: list[BallSpec]
    target_probe_id: str
    coverage_verified: bool
    notes: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.balls)


def _members(system, ball: BallSpec, probes, dt, eta_margin=ETA_MARGIN) -> np.ndarray:
    members_of = greedy_kernels(system)[2]
    return members_of(np.asarray(ball.center, float), float(ball.t), float(ball.eps), float(dt), float(eta_margin), probes)


def covered_mask(system, balls, probes, dt, eta_margin=ETA_MARGIN) -> np.ndarray:
    """Which probes lie in the union of ``balls``."""
    probes = as_array(probes)
    mask = np.zeros(len(probes), dtype=bool)
    for b in balls:
        mask[_members(system, b, probes, dt, eta_margin)] = True
    return mask


def five_r_select(
    system: FlowSystem,
    family: list[BallSpec],
    eta: float,
    probes,
    dt: float | None = None,
    theta: float | None = None,
    strict: bool = True,
    calibration_trials: int = 50,
    seed: int = 0,
) -> tuple[PackingFamily, CoverFamily]:
    """Disjoint subfamily, largest balls first, and its (1-eta)^2 t / 5 eps inflation.

    With ``strict`` the radius condition eps < theta/2 is enforced, where theta
    comes from :func:`calibrate_theta` unless given.  Without it the check is
    only recorded in the returned notes."""
    if not 0 < eta < 1:
        raise PreconditionError("eta must lie in (0, 1)")
    if not family:
        raise PreconditionError("family is empty")
    shrink = (1.0 - eta) ** 2
    eps = family[0].eps
    if any(b.eps != eps for b in family):
        raise PreconditionError("all balls must share one radius")
    short = [b.t for b in family if b.t * shrink <= 1.0]
    if short:
        raise PreconditionError(f"durations must exceed 1/(1-eta)^2 = {1 / shrink:.4g}; got t={short[0]}")
    if theta is None:
        theta = calibrate_theta(system, eta, calibration_trials, seed)
    theta_ok = eps < theta / 2.0
    if strict and not theta_ok:
        raise PreconditionError(f"eps={eps} is not below theta/2 = {theta / 2:.4g} for eta={eta}")

    probes = as_array(probes)
    dt = default_dt(eps) if dt is None else dt
    order = sorted(range(len(family)), key=lambda i: family[i].t)
    kept: list[int] = []
    for i in order:
        if all(balls_disjoint(system, family[i], family[k], probes, dt) for k in kept):
            kept.append(i)
    sub = PackingFamily([family[i] for i in kept], probe_set_id(probes), min(family[i].t for i in kept), np.asarray(kept))
    inflated = [family[i].with_(t=shrink * family[i].t, eps=5.0 * eps, closed=False) for i in kept]

    target = covered_mask(system, family, probes, dt)
    got = covered_mask(system, inflated, probes, dt)
    missing = np.flatnonzero(target & ~got)
    if len(missing):
        j = int(missing[0])
        raise CoverageFailure(f"probe {j} lies in the input union but in no inflated ball", probes[j], j)
    notes = {"theta": float(theta), "theta_ok": bool(theta_ok), "covered_probes": int(target.sum()), "kept": kept}
    return sub, CoverFamily(inflated, probe_set_id(probes), True, notes)


def cover_from_packing(
    system: FlowSystem,
    Z_probes,
    t: float,
    eps: float,
    delta: float = DELTA,
    seed: int = 0,
    dt: float | None = None,
    restart: int = 0,
    probes=None,
) -> CoverFamily:
    """Centers of a maximal packing at radius eps, re-used as balls of radius
    2 eps + delta, checked to cover every point of ``Z_probes``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    Z = as_array(Z_probes)
    dt = default_dt(eps) if dt is None else dt
    probes = default_probes(system, Z, seed=seed) if probes is None else as_array(probes)
    acc, blocker = _run_greedy(system, Z, np.full(len(Z), float(t)), eps, dt, probes, run_order(len(Z), seed, restart, t))
    _assert_maximal(acc, blocker, len(Z))
    r = 2.0 * eps + delta
    balls = [BallSpec(Z[i], float(t), r, closed=False) for i in acc]
    _verify_cover(system, Z, balls, acc, blocker, dt)
    return CoverFamily(balls, probe_set_id(Z), True, {"packing_eps": eps, "radius": r, "restart": restart})


def _verify_cover(system, Z, balls, acc, blocker, dt):
    pos = {int(a): k for k, a in enumerate(acc)}
    for j in range(len(Z)):
        if j in pos:
            continue
        first = pos[int(blocker[j])]
        b = balls[first]
        if contains_fast(system, b.center, Z[j], b.t, b.eps, dt):
            continue
        if not any(contains_fast(system, c.center, Z[j], c.t, c.eps, dt) for c in balls):
            raise CoverageFailure(f"point {j} of Z is in no cover ball", Z[j], j)


def estimate_M(
    system: FlowSystem,
    Z_probes,
    s: float,
    eps: float,
    N: float,
    seed: int,
    restarts: int = 1,
    delta: float = DELTA,
    dt: float | None = None,
    probes=None,
) -> float:
    """Smallest sum of exp(-s t_i) over covers from seeded runs at duration N.

    An upper bound for the infimum over all covers."""
    if N < 1:
        raise ValueError("N must be >= 1")
    best = math.inf
    for r in range(restarts):
        cover = cover_from_packing(system, Z_probes, N, eps, delta, seed, dt, restart=r, probes=probes)
        best = min(best, len(cover) * math.exp(-s * N))
    return best


def cover_counts(system, Z_probes, eps, t_window, dt, restarts, seed, delta=DELTA, t_step=1.0, probes=None, saturation=SATURATION):
    Z = as_array(Z_probes)
    probes = default_probes(system, Z, seed=seed) if probes is None else as_array(probes)
    cap = saturation * len(Z)
    rows = []
    for t in t_grid(t_window, t_step):
        size = min(len(cover_from_packing(system, Z, t, eps, delta, seed, dt, r, probes)) for r in range(restarts))
        rows.append({"t": float(t), "cover_size": int(size), "usable": bool(size <= cap)})
        log.info("eps=%g t=%g cover=%d", eps, t, size)
        if size > cap:
            break
    return rows


def estimate_bowen_entropy(
    system: FlowSystem,
    Z_probes,
    eps: float,
    t_window,
    seed: int = 0,
    restarts: int = 1,
    delta: float = DELTA,
    dt: float | None = None,
    t_step: float = 1.0,
    probes=None,
    saturation: float = SATURATION,
    rows=None,
) -> EntropyEstimate:
    """Growth rate of the smallest cover count over ``t_window``.

    ``eps`` is the packing radius; the covers themselves have radius
    2 eps + delta (recorded in the diagnostics)."""
    t0, t1 = t_window
    if t1 < t0 + 4:
        raise ValueError("t_window must span at least 4 time units")
    dt = default_dt(eps) if dt is None else dt
    if rows is None:
        rows = cover_counts(system, Z_probes, eps, t_window, dt, restarts, seed, delta, t_step, probes, saturation)
    good = [r for r in rows if r["usable"] and r["cover_size"] > 0]
    if len(good) < 3:
        raise EstimationError(f"only {len(good)} unsaturated t grid points (need 3); rows={rows}")
    ts = [r["t"] for r in good]
    cs = [r["cover_size"] for r in good]
    slope, resid = fit_growth(ts, cs)
    # exponent at which M^s stays level between the first and last usable durations
    crit = math.log(cs[-1] / cs[0]) / (ts[-1] - ts[0])
    diag = {
        "rows": rows,
        "fit_points": len(good),
        "cover_radius": 2.0 * eps + delta,
        "critical_s_endpoints": crit,
        "restarts": restarts,
    }
    return EntropyEstimate(max(slope, 0.0), eps, (float(t0), float(t1)), dt, "bowen-cover", resid, seed, diag)
