"""Membership in reparametrization balls.

``y`` lies in the ball of ``x`` with duration ``t`` and radius ``eps`` when some
increasing time change ``alpha`` with ``alpha(0) = 0`` keeps
``phi_alpha(s) x`` within ``eps`` of ``phi_s y`` for all ``0 <= s <= t``.

On a grid this becomes reachability in a free-space matrix indexed by
(tau_i, s_j): a path starts at cell (0, 0), moves by unit steps up, right or
diagonally through admissible cells, and must reach the last column.  The
reported path keeps, in every column, the lowest tau that lies on a complete path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .flows import FlowSystem, time_grid

SLACK = 1e-12
ETA_MARGIN = 0.5
MAX_CELLS = 4e8


class GridBudgetExceeded(MemoryError):
    pass


class CalibrationFailure(RuntimeError):
    def __init__(self, msg, x=None, y=None, t=None):
        super().__init__(msg)
        self.x, self.y, self.t = x, y, t


@dataclass(frozen=True)
class BallSpec:
    center: np.ndarray
    t: float
    eps: float
    closed: bool = True

    def __post_init__(self):
        if not (self.t > 0 and self.eps > 0):
            raise ValueError(f"ball needs t > 0 and eps > 0, got t={self.t}, eps={self.eps}")

    def with_(self, **kw) -> "BallSpec":
        d = dict(center=self.center, t=self.t, eps=self.eps, closed=self.closed)
        d.update(kw)
        return BallSpec(**d)


@dataclass
class ReparamPath:
    grid_times: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        if self.tau[0] != 0.0 or np.any(np.diff(self.tau) < 0):
            raise ValueError("path must start at 0 and be nondecreasing")

    def certifies(self, system: FlowSystem, center, y, eps: float) -> bool:
        return all(
            system.dist_at(center, ta, y, s) <= eps + SLACK
            for ta, s in zip(self.tau, self.grid_times)
        )


class FreeSpaceGrid(NamedTuple):
    tau_grid: np.ndarray
    s_grid: np.ndarray
    admissible: np.ndarray  # shape (len(tau_grid), len(s_grid))


def default_dt(eps: float) -> float:
    return min(0.1, eps / 4.0)


def tau_grid(t: float, dt: float, eta_margin: float = ETA_MARGIN) -> np.ndarray:
    m = int(math.floor(t * (1.0 + eta_margin) / dt + 1e-9))
    return np.arange(m + 1) * dt


# -- kernels --------------------------------------------------------------------


@numba.njit(cache=True)
def grid_shape(t, dt, tau_max):
    """(columns, rows) of the free-space grid; matches ``time_grid``/``tau_grid``."""
    nfull = int(math.floor(t / dt + 1e-9))
    ncol = nfull + 1
    if t - nfull * dt > 1e-9 * max(1.0, t):
        ncol += 1
    nrow = int(math.floor(tau_max / dt + 1e-9)) + 1
    return ncol, nrow


@numba.njit(cache=True, inline="always")
def s_at(j, ncol, t, dt):
    if j == ncol - 1:
        return t
    return j * dt


def make_kernels(dist, within):
    """Jitted reachability kernels specialized to one system's metric."""

    @numba.njit
    def reach_ws(x, y, t, dt, tau_max, eps, tau_out, prev, cur):
        """Reachability with caller-owned all-False work buffers of length
        >= rows + 1; the buffers are all False again on return."""
        ncol, nrow = grid_shape(t, dt, tau_max)
        if not within(x, 0.0, y, 0.0, eps):
            return False
        prev[0] = True
        lo = 0
        hi = 0
        i = 1
        while i < nrow and within(x, i * dt, y, 0.0, eps):
            prev[i] = True
            hi = i
            i += 1
        if tau_out.shape[0] > 0:
            tau_out[0] = 0
        for j in range(1, ncol):
            s = s_at(j, ncol, t, dt)
            nlo = -1
            nhi = -1
            i = lo
            while i < nrow:
                if prev[i] or (i > 0 and (prev[i - 1] or cur[i - 1])):
                    if within(x, i * dt, y, s, eps):
                        cur[i] = True
                        if nlo < 0:
                            nlo = i
                        nhi = i
                elif i > hi + 1:
                    break
                i += 1
            for k in range(lo, hi + 1):
                prev[k] = False
            if nlo < 0:
                return False
            prev, cur = cur, prev
            lo = nlo
            hi = nhi
            if tau_out.shape[0] > 0:
                tau_out[j] = nlo
        for k in range(lo, hi + 1):
            prev[k] = False
        return True

    @numba.njit
    def reach(x, y, t, dt, tau_max, eps, tau_out):
        _, nrow = grid_shape(t, dt, tau_max)
        prev = np.zeros(nrow + 1, dtype=np.bool_)
        cur = np.zeros(nrow + 1, dtype=np.bool_)
        return reach_ws(x, y, t, dt, tau_max, eps, tau_out, prev, cur)

    @numba.njit
    def contains(x, y, t, dt, tau_max, eps):
        buf = np.empty(0, dtype=np.int64)
        return reach(x, y, t, dt, tau_max, eps, buf)

    @numba.njit
    def contains_ws(x, y, t, dt, tau_max, eps, prev, cur):
        buf = np.empty(0, dtype=np.int64)
        return reach_ws(x, y, t, dt, tau_max, eps, buf, prev, cur)

    @numba.njit
    def free_space(x, y, taus, ss, eps):
        out = np.empty((taus.shape[0], ss.shape[0]), dtype=np.bool_)
        for i in range(taus.shape[0]):
            for j in range(ss.shape[0]):
                out[i, j] = dist(x, taus[i], y, ss[j]) <= eps
        return out

    return reach, contains, free_space, contains_ws


def kernels(system: FlowSystem):
    ks = getattr(system, "_kernels", None)
    if ks is None:
        ks = make_kernels(system.dist_at, system.within)
        system._kernels = ks
    return ks


# -- public operations ----------------------------------------------------------


def _eps_eff(ball: BallSpec) -> float:
    return ball.eps + SLACK


def build_free_space(
    system: FlowSystem,
    ball: BallSpec,
    y,
    dt: float,
    eta_margin: float = ETA_MARGIN,
    max_cells: float = MAX_CELLS,
    tau_max: float | None = None,
) -> FreeSpaceGrid:
    if not dt > 0:
        raise ValueError("dt must be positive")
    ss = time_grid(ball.t, dt)
    tmax = ball.t * (1.0 + eta_margin) if tau_max is None else tau_max
    taus = np.arange(int(math.floor(tmax / dt + 1e-9)) + 1) * dt
    if len(ss) * len(taus) > max_cells:
        raise GridBudgetExceeded(f"{len(taus)}x{len(ss)} cells exceeds budget {max_cells:g}")
    fs = kernels(system)[2]
    adm = fs(np.asarray(ball.center, float), np.asarray(y, float), taus, ss, _eps_eff(ball))
    return FreeSpaceGrid(taus, ss, adm)


@numba.njit(cache=True)
def reachable(admissible: np.ndarray) -> np.ndarray:
    """Cells reachable from (0, 0) by monotone unit steps through admissible cells."""
    rows, cols = admissible.shape
    r = np.zeros(admissible.shape, dtype=np.bool_)
    for j in range(cols):
        for i in range(rows):
            if not admissible[i, j]:
                continue
            if i == 0 and j == 0:
                r[i, j] = True
                continue
            r[i, j] = (
                (j > 0 and r[i, j - 1])
                or (i > 0 and r[i - 1, j])
                or (i > 0 and j > 0 and r[i - 1, j - 1])
            )
    return r


@numba.njit(cache=True)
def coreachable(admissible: np.ndarray) -> np.ndarray:
    """Cells from which the last column can be reached by monotone unit steps."""
    rows, cols = admissible.shape
    r = np.zeros(admissible.shape, dtype=np.bool_)
    r[:, -1] = admissible[:, -1]
    for j in range(cols - 2, -1, -1):
        for i in range(rows - 1, -1, -1):
            if not admissible[i, j]:
                continue
            r[i, j] = r[i, j + 1] or (i + 1 < rows and (r[i + 1, j + 1] or r[i + 1, j]))
    return r


def path_from_grid(grid: FreeSpaceGrid) -> ReparamPath | None:
    """Lowest complete path: per column, the lowest cell lying on some path
    from (0, 0) to the last column.  The lower envelope of monotone paths is
    itself a path, so these cells connect."""
    alive = reachable(grid.admissible) & coreachable(grid.admissible)
    if not alive[:, -1].any():
        return None
    low = alive.argmax(axis=0)
    return ReparamPath(grid.s_grid.copy(), grid.tau_grid[low])


def ball_contains(
    system: FlowSystem,
    ball: BallSpec,
    y,
    dt: float | None = None,
    eta_margin: float = ETA_MARGIN,
    max_cells: float = MAX_CELLS,
    tau_max: float | None = None,
) -> tuple[bool, ReparamPath | None]:
    """Decide ``y in ball`` and return the lowest certifying path when it is."""
    dt = default_dt(ball.eps) if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    tmax = ball.t * (1.0 + eta_margin) if tau_max is None else tau_max
    ncol, nrow = grid_shape(ball.t, dt, tmax)
    if ncol * nrow > max_cells:
        raise GridBudgetExceeded(f"{nrow}x{ncol} cells exceeds budget {max_cells:g}")
    contains = kernels(system)[1]
    x = np.asarray(ball.center, float)
    if not contains(x, np.asarray(y, float), float(ball.t), float(dt), float(tmax), _eps_eff(ball)):
        return False, None
    # the sweep's lowest rows may include dead ends, so the path comes from the full grid
    grid = build_free_space(system, ball, y, dt, eta_margin, max_cells, tmax)
    return True, path_from_grid(grid)


def contains_fast(system, center, y, t, eps, dt, eta_margin=ETA_MARGIN) -> bool:
    contains = kernels(system)[1]
    return bool(contains(center, y, float(t), float(dt), t * (1.0 + eta_margin), eps + SLACK))


def check_distortion(path: ReparamPath, eta: float) -> bool:
    s = np.asarray(path.grid_times)
    gap = np.abs(np.asarray(path.tau) - s)
    bound = np.where(s > 1.0, eta * s, eta)
    return bool(np.all(gap < bound))


def calibrate_theta(
    system: FlowSystem,
    eta: float,
    trials: int,
    seed: int,
    t_max: float = 20.0,
    depth: int = 12,
) -> float:
    """Largest theta in diameter/2, /4, ... whose found paths all pass the
    distortion bound on ``trials`` random nearby pairs."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    schedule = system.diameter_bound / 2.0 ** np.arange(1, depth + 1)
    if trials == 0:
        return float(schedule[0])
    last = None
    for theta in schedule:
        rng = np.random.default_rng(seed)
        failed = None
        for _ in range(trials):
            x, y, t = _calibration_pair(system, theta, rng, t_max)
            ok, path = ball_contains(system, BallSpec(x, t, theta), y)
            if ok and not check_distortion(path, eta):
                failed = (x, y, t)
                break
        if failed is None:
            return float(theta)
        last = failed
    x, y, t = last
    raise CalibrationFailure(f"no theta in schedule passes eta={eta}", x, y, t)


def _calibration_pair(system, theta, rng, t_max):
    x = system.sample(rng, 1)[0]
    y = system.perturb(x, theta * rng.uniform(0.0, 1.0), rng)
    t = rng.uniform(0.5, t_max)
    return x, y, t
