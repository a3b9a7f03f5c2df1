"""Fixed-point-free flow systems with closed-form evaluation.

A point is a 1-D float64 array of chart coordinates.  Each system supplies a
jitted ``dist_at(a, ta, b, tb)`` that returns ``metric(phi_ta(a), phi_tb(b))``
without materializing the flowed points; the alignment kernels in
:mod:`repball.reparam` are built on it.

Built-in systems:

* :class:`TorusFlow` -- linear flow on the 2-torus, sup of circle distances.
* :class:`ShiftSuspension` -- suspension of the full two-sided 2-shift, roof 1.
* :class:`CatSuspension` -- suspension of the Arnold cat map, roof 1.

The suspension metrics are pulled back from an embedding of the mapping torus
that interpolates the base features across the height coordinate, so the roof
identification ``(w, 1) ~ (sigma w, 0)`` is respected exactly and the metric
axioms hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

TAU_PROBES = np.round(np.arange(1, 11) * 0.1, 10)


class FlowError(ValueError):
    """Rejected input to a flow operation."""


class FixedPointSuspected(FlowError):
    def __init__(self, index: int, point: np.ndarray, displacement: float):
        self.index = index
        self.point = point
        self.displacement = displacement
        super().__init__(
            f"fixed-point suspected at sample {index}: "
            f"max displacement {displacement:.3g} below threshold"
        )


@numba.njit(cache=True, inline="always")
def _circ(u, v):
    d = abs(u - v) % 1.0
    return min(d, 1.0 - d)


@numba.njit(cache=True, inline="always")
def _floor_frac(x):
    k = np.floor(x)
    f = x - k
    if f >= 1.0:  # x slightly below an integer
        k += 1.0
        f = 0.0
    return int(k), f


class FlowSystem:
    """Base class.  Subclasses set ``name``, ``diameter_bound``, ``dist_at``."""

    name: str = "flow"
    diameter_bound: float = 1.0
    dist_at = None  # jitted (a, ta, b, tb) -> float
    within = None  # jitted (a, ta, b, tb, eps) -> dist_at(...) <= eps

    def params(self) -> dict:
        return {}

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def evaluate(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def metric(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.dist_at(a, 0.0, b, 0.0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points drawn from the natural invariant measure, shape (n, dim)."""
        raise NotImplementedError

    def perturb(self, x: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
        """A random point within metric distance ``radius`` of ``x``."""
        raise NotImplementedError

    @property
    def min_displacement(self) -> float:
        if not hasattr(self, "_min_disp"):
            rng = np.random.default_rng(0)
            self._min_disp = certify_fixed_point_free(self, list(self.sample(rng, 64)))
        return self._min_disp

    def to_json(self, x: np.ndarray) -> list:
        return [float(v) for v in x]

    def from_json(self, coords) -> np.ndarray:
        return self.normalize(np.asarray(coords, dtype=np.float64))


# -- torus --------------------------------------------------------------------


def _make_torus_dist(v1: float, v2: float):
    @numba.njit(cache=False)
    def dist_at(a, ta, b, tb):
        dx = _circ(a[0] + ta * v1, b[0] + tb * v1)
        dy = _circ(a[1] + ta * v2, b[1] + tb * v2)
        return max(dx, dy)

    @numba.njit(cache=False)
    def within(a, ta, b, tb, eps):
        return dist_at(a, ta, b, tb) <= eps

    return dist_at, within


class TorusFlow(FlowSystem):
    """phi_t(x) = x + t v mod 1 on [0,1)^2 with the sup circle metric."""

    diameter_bound = 0.5

    def __init__(self, direction=(1.0, np.sqrt(2.0))):
        v = np.asarray(direction, dtype=np.float64)
        if v.shape != (2,) or not np.any(v != 0):
            raise FlowError("torus flow needs a nonzero 2-vector direction")
        self.direction = v
        self.name = "torus"
        self.dist_at, self.within = _make_torus_dist(float(v[0]), float(v[1]))

    def params(self):
        return {"direction": [float(c) for c in self.direction]}

    def normalize(self, x):
        return np.mod(np.asarray(x, dtype=np.float64), 1.0)

    def evaluate(self, x, t):
        _check_time(t)
        return np.mod(np.asarray(x, dtype=np.float64) + t * self.direction, 1.0)

    def sample(self, rng, n):
        return rng.random((n, 2))

    def perturb(self, x, radius, rng):
        return self.normalize(x + rng.uniform(-radius, radius, size=2))


# -- suspension of the 2-shift ------------------------------------------------
# state layout: [height, origin, s_0, ..., s_{L-1}]; the symbol at coordinate
# i of the underlying sequence is s_{origin + i}.


def _make_shift_dist(W: int):
    weights = 2.0 ** -np.abs(np.arange(-W, W + 1, dtype=np.float64))

    @numba.njit(cache=False)
    def dist_at(a, ta, b, tb):
        ka, fa = _floor_frac(a[0] + ta)
        kb, fb = _floor_frac(b[0] + tb)
        d = _circ(fa, fb)
        oa = int(a[1]) + ka + 2
        ob = int(b[1]) + kb + 2
        if oa - W < 2 or ob - W < 2 or oa + W + 2 > a.shape[0] or ob + W + 2 > b.shape[0]:
            raise IndexError("flow time moves the window outside the symbol buffer")
        for j in range(2 * W + 1):
            i = j - W
            pa = (1.0 - fa) * a[oa + i] + fa * a[oa + i + 1]
            pb = (1.0 - fb) * b[ob + i] + fb * b[ob + i + 1]
            e = weights[j] * abs(pa - pb)
            if e > d:
                d = e
        return d

    # positions visited in decreasing weight: 0, -1, 1, -2, 2, ...
    visit = np.empty(2 * W + 1, dtype=np.int64)
    visit[0] = 0
    for m in range(1, W + 1):
        visit[2 * m - 1] = -m
        visit[2 * m] = m

    @numba.njit(cache=False)
    def within(a, ta, b, tb, eps):
        ka, fa = _floor_frac(a[0] + ta)
        kb, fb = _floor_frac(b[0] + tb)
        if _circ(fa, fb) > eps:
            return False
        oa = int(a[1]) + ka + 2
        ob = int(b[1]) + kb + 2
        if oa - W < 2 or ob - W < 2 or oa + W + 2 > a.shape[0] or ob + W + 2 > b.shape[0]:
            raise IndexError("flow time moves the window outside the symbol buffer")
        for i in visit:
            w = weights[i + W]
            if w <= eps:
                break
            pa = (1.0 - fa) * a[oa + i] + fa * a[oa + i + 1]
            pb = (1.0 - fb) * b[ob + i] + fb * b[ob + i + 1]
            if w * abs(pa - pb) > eps:
                return False
        return True

    return dist_at, within


class ShiftSuspension(FlowSystem):
    """Suspension flow over the full two-sided 2-shift with roof 1.

    Symbols live in a finite buffer of ``2 * pad + 1`` entries around the
    origin; the metric reads a window of radius ``window``.  Evaluation moves
    the origin, so the group law is exact while the origin stays in range.
    """

    diameter_bound = 1.0

    def __init__(self, window: int = 16, pad: int = 96):
        if window < 0 or pad < window + 2:
            raise FlowError("need window >= 0 and pad >= window + 2")
        self.window = int(window)
        self.pad = int(pad)
        self.name = "shift2"
        self.dist_at, self.within = _make_shift_dist(self.window)

    @property
    def length(self) -> int:
        return 2 * self.pad + 1

    def params(self):
        return {"window": self.window, "pad": self.pad}

    def make_point(self, symbols, height: float = 0.0, origin: int | None = None):
        sym = np.asarray(symbols, dtype=np.float64)
        if sym.shape != (self.length,):
            raise FlowError(f"expected {self.length} symbols, got {sym.shape}")
        origin = self.pad if origin is None else origin
        return self.normalize(np.concatenate([[height, origin], sym]))

    def symbol(self, x, i: int) -> int:
        return int(x[2 + int(x[1]) + i])

    def normalize(self, x):
        x = np.array(x, dtype=np.float64)
        k, f = np.floor(x[0]), x[0] - np.floor(x[0])
        if f >= 1.0:
            k, f = k + 1, 0.0
        x[0] = f
        x[1] = x[1] + k
        lo, hi = self.window + 1, self.length - self.window - 2
        if not lo <= x[1] <= hi:
            raise FlowError(
                f"origin {int(x[1])} left the symbol buffer [{lo}, {hi}]; "
                "increase pad"
            )
        return x

    def evaluate(self, x, t):
        _check_time(t)
        y = np.array(x, dtype=np.float64)
        y[0] += t
        return self.normalize(y)

    def shift(self, x, k: int = 1):
        """The base shift applied k times (height unchanged)."""
        y = np.array(x, dtype=np.float64)
        y[1] += k
        return self.normalize(y)

    def sample(self, rng, n):
        out = np.empty((n, 2 + self.length))
        out[:, 0] = rng.random(n)
        out[:, 1] = self.pad
        out[:, 2:] = rng.integers(0, 2, size=(n, self.length))
        return out

    def perturb(self, x, radius, rng):
        if radius <= 0:
            return np.array(x, dtype=np.float64)
        # Symbols at |i| <= k + 1 carry weight >= 2^-(k+1) and stay fixed.
        k = 0 if radius >= 1 else int(np.ceil(-np.log2(radius))) + 1
        y = np.array(x, dtype=np.float64)
        o = 2 + int(y[1])
        idx = np.arange(self.length) - (o - 2)
        free = np.abs(idx) > k + 1
        y[2:][free] = rng.integers(0, 2, size=int(free.sum()))
        dh = rng.uniform(0, min(radius, 0.5) / 2)
        # move along the height only inside the current unit cell
        y[0] = min(max(y[0] + rng.choice([-1, 1]) * dh, 0.0), np.nextafter(1.0, 0.0))
        y = self.normalize(y)
        if self.metric(x, y) > radius:
            y[0] = x[0]
        return y


# -- suspension of the cat map --------------------------------------------------
# state layout: [n1, n2, height]; the base point is (n1, n2) / 2^bits.


def _make_cat_dist(bits: int, scale: float):
    mod = float(2**bits)
    inv = 1.0 / mod
    two_pi = 2.0 * np.pi

    @numba.njit(cache=False, inline="always")
    def _iterate(n1, n2, k):
        if k >= 0:
            for _ in range(k):
                n1, n2 = (2.0 * n1 + n2) % mod, (n1 + n2) % mod
        else:
            for _ in range(-k):
                n1, n2 = (n1 - n2) % mod, (2.0 * n2 - n1) % mod
        return n1, n2

    @numba.njit(cache=False)
    def _features(x, t, out):
        k, f = _floor_frac(x[2] + t)
        u1, u2 = _iterate(x[0], x[1], k)
        v1, v2 = (2.0 * u1 + u2) % mod, (u1 + u2) % mod
        w1, w2 = (2.0 * v1 + v2) % mod, (v1 + v2) % mod
        c = 0
        for p, q in ((u1, v1), (u2, v2), (v1, w1), (v2, w2)):
            ap = two_pi * p * inv
            aq = two_pi * q * inv
            out[c] = scale * ((1.0 - f) * np.cos(ap) + f * np.cos(aq))
            out[c + 1] = scale * ((1.0 - f) * np.sin(ap) + f * np.sin(aq))
            c += 2
        return f

    @numba.njit(cache=False)
    def dist_at(a, ta, b, tb):
        fa_ = np.empty(8)
        fb_ = np.empty(8)
        fa = _features(a, ta, fa_)
        fb = _features(b, tb, fb_)
        d = _circ(fa, fb)
        for i in range(8):
            e = abs(fa_[i] - fb_[i])
            if e > d:
                d = e
        return d

    @numba.njit(cache=False)
    def within(a, ta, b, tb, eps):
        return dist_at(a, ta, b, tb) <= eps

    return dist_at, within, _iterate


class CatSuspension(FlowSystem):
    """Suspension flow over the cat map [[2,1],[1,1]] with roof 1.

    Base points are dyadic, (n1, n2) / 2^bits, so the base map is exact
    integer arithmetic and the group law holds to rounding of the height.
    """

    def __init__(self, bits: int = 40, scale: float = 0.5):
        if not 8 <= bits <= 50:
            raise FlowError("bits must be in [8, 50]")
        self.bits = int(bits)
        self.scale = float(scale)
        self.name = "cat"
        self.diameter_bound = max(0.5, 2.0 * self.scale)
        self.dist_at, self.within, self._iterate = _make_cat_dist(self.bits, self.scale)

    def params(self):
        return {"bits": self.bits, "scale": self.scale}

    def normalize(self, x):
        x = np.array(x, dtype=np.float64)
        k, f = _floor_frac(x[2])
        n1, n2 = self._iterate(np.mod(np.round(x[0]), 2.0**self.bits),
                               np.mod(np.round(x[1]), 2.0**self.bits), k)
        return np.array([n1, n2, f])

    def evaluate(self, x, t):
        _check_time(t)
        y = np.array(x, dtype=np.float64)
        y[2] += t
        return self.normalize(y)

    def base_coords(self, x) -> np.ndarray:
        return np.asarray(x[:2]) / 2.0**self.bits

    def sample(self, rng, n):
        out = np.empty((n, 3))
        out[:, :2] = rng.integers(0, 2**self.bits, size=(n, 2))
        out[:, 2] = rng.random(n)
        return out

    def perturb(self, x, radius, rng):
        m = 2.0**self.bits
        # base displacement small enough that three steps of A stay inside radius
        r = radius / (2 * np.pi * max(self.scale, 1e-12) * 8.0)
        y = np.array(x, dtype=np.float64)
        y[:2] = np.mod(y[:2] + np.round(rng.uniform(-r, r, size=2) * m), m)
        y = self.normalize(y)
        if self.metric(x, y) > radius:
            return np.array(x, dtype=np.float64)
        return y


# -- helpers --------------------------------------------------------------------


class IdentityFlow(FlowSystem):
    """phi_t = id on the circle.  Has only fixed points; used as a test double."""

    diameter_bound = 0.5

    def __init__(self):
        self.name = "identity"

        @numba.njit
        def dist_at(a, ta, b, tb):
            return _circ(a[0], b[0])

        @numba.njit
        def within(a, ta, b, tb, eps):
            return _circ(a[0], b[0]) <= eps

        self.dist_at, self.within = dist_at, within

    def evaluate(self, x, t):
        _check_time(t)
        return np.asarray(x, dtype=np.float64).copy()

    def sample(self, rng, n):
        return rng.random((n, 1))

    def perturb(self, x, radius, rng):
        return np.mod(x + rng.uniform(-radius, radius, size=1), 1.0)


def _check_time(t):
    if not np.isfinite(t):
        raise FlowError(f"flow time must be finite, got {t!r}")


def evaluate_flow(system: FlowSystem, x, t: float) -> np.ndarray:
    return system.evaluate(x, t)


@dataclass
class Trajectory:
    base: np.ndarray
    times: np.ndarray
    points: np.ndarray = field(repr=False)


def time_grid(t: float, dt: float) -> np.ndarray:
    """0, dt, 2dt, ... with the last step clamped to land exactly on t."""
    if not dt > 0:
        raise FlowError(f"dt must be positive, got {dt}")
    n = int(np.floor(t / dt + 1e-9))
    grid = np.arange(n + 1) * dt
    if t - grid[-1] > 1e-9 * max(1.0, t):
        grid = np.append(grid, t)
    else:
        grid[-1] = t
    return grid


def sample_trajectory(system: FlowSystem, x, t: float, dt: float) -> Trajectory:
    if not dt > 0:
        raise FlowError(f"dt must be positive, got {dt}")
    if not t > 0 or dt > t:
        raise FlowError("need t > 0 and dt <= t")
    times = time_grid(t, dt)
    pts = np.stack([system.evaluate(x, s) for s in times])
    return Trajectory(np.asarray(x, dtype=np.float64), times, pts)


def certify_fixed_point_free(system: FlowSystem, samples, threshold: float = 1e-6) -> float:
    """Min over samples of the max displacement over tau in {0.1, ..., 1.0}."""
    if len(samples) == 0:
        raise FlowError("samples must be nonempty")
    worst = np.inf
    for i, x in enumerate(samples):
        disp = max(system.dist_at(x, tau, x, 0.0) for tau in TAU_PROBES)
        if disp < threshold:
            raise FixedPointSuspected(i, np.asarray(x), disp)
        worst = min(worst, disp)
    return float(worst)


SYSTEMS = {
    "torus": TorusFlow,
    "shift2": ShiftSuspension,
    "cat": CatSuspension,
}


def make_system(name: str, **params) -> FlowSystem:
    try:
        cls = SYSTEMS[name]
    except KeyError:
        raise FlowError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}") from None
    return cls(**params)
