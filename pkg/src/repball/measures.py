"""Discrete measures, local entropies and a finite-depth Frostman construction."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._greedy import as_array, greedy_kernels
from .flows import CatSuspension, FlowSystem, ShiftSuspension, TorusFlow
from .packing import InsufficientPackingMass, default_probes, select_family_in_range
from .reparam import ETA_MARGIN, BallSpec, default_dt

log = logging.getLogger(__name__)


def mass_constant(terms: int = 80) -> float:
    """Partial product of (1 + 2^-n) for n = 1..terms."""
    return math.prod(1.0 + 2.0**-n for n in range(1, terms + 1))


C_MASS = mass_constant()


class MeasureError(ValueError):
    pass


class FrostmanError(RuntimeError):
    def __init__(self, msg, level: int, parent=None):
        super().__init__(msg)
        self.level = level
        self.parent = parent


@dataclass
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.atoms = as_array(self.atoms)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.atoms) == 0:
            raise MeasureError("measure has no atoms")
        if self.weights.shape != (len(self.atoms),):
            raise MeasureError("one weight per atom required")
        if not np.all(self.weights > 0):
            raise MeasureError("weights must be positive")

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return len(self.atoms)

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms, self.weights / self.total_mass, self.name)

    def mix(self, other: "DiscreteMeasure", p: float) -> "DiscreteMeasure":
        """p * self + (1 - p) * other, both taken as probability measures."""
        if not 0 < p < 1:
            raise MeasureError("mixing weight must lie in (0, 1)")
        if self.atoms.shape[1] != other.atoms.shape[1]:
            raise MeasureError("atoms live in different spaces")
        a, b = self.normalized(), other.normalized()
        return DiscreteMeasure(
            np.concatenate([a.atoms, b.atoms]),
            np.concatenate([p * a.weights, (1 - p) * b.weights]),
            f"mix({self.name},{other.name})",
        )

    def to_json(self, system: FlowSystem) -> str:
        doc = {
            "name": self.name,
            "atoms": [{"coords": system.to_json(x), "weight": float(w)} for x, w in zip(self.atoms, self.weights)],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, system: FlowSystem, text: str) -> "DiscreteMeasure":
        doc = json.loads(text)
        atoms = [system.from_json(a["coords"]) for a in doc["atoms"]]
        return cls(np.array(atoms), [a["weight"] for a in doc["atoms"]], doc.get("name", ""))


# -- built-in measures ----------------------------------------------------------


def bernoulli_lift(system: ShiftSuspension, n: int, seed: int) -> DiscreteMeasure:
    """Empirical Bernoulli(1/2, 1/2) measure times Lebesgue on the height."""
    if not isinstance(system, ShiftSuspension):
        raise MeasureError("the Bernoulli lift needs a shift suspension")
    return DiscreteMeasure(system.sample(np.random.default_rng(seed), n), np.full(n, 1.0 / n), "bernoulli")


def lebesgue_lift(system: FlowSystem, n: int, seed: int) -> DiscreteMeasure:
    """Empirical normalized Lebesgue measure (torus flow, or cat suspension over the torus)."""
    if not isinstance(system, (TorusFlow, CatSuspension)):
        raise MeasureError("the Lebesgue lift needs a torus or cat suspension")
    return DiscreteMeasure(system.sample(np.random.default_rng(seed), n), np.full(n, 1.0 / n), "lebesgue")


def periodic_orbit(system: FlowSystem, n: int, seed: int = 0, word=(0, 1)) -> DiscreteMeasure:
    """Equidistributed atoms along one closed orbit.

    Shift suspension: the orbit of the periodic sequence repeating ``word``.
    Cat suspension: the orbit of the fixed point of the base map."""
    heights = (np.arange(n) + 0.5) / n
    if isinstance(system, ShiftSuspension):
        p = len(word)
        idx = np.arange(system.length) - system.pad
        base = np.asarray(word, float)[idx % p]
        atoms = [system.shift(system.make_point(base, h), k % p) for k, h in enumerate(heights)]
        return DiscreteMeasure(np.array(atoms), np.full(n, 1.0 / n), "periodic")
    if isinstance(system, CatSuspension):
        atoms = np.column_stack([np.zeros(n), np.zeros(n), heights])
        return DiscreteMeasure(atoms, np.full(n, 1.0 / n), "periodic")
    raise MeasureError(f"no closed orbit is built in for {system.name}")


BUILTIN_MEASURES = {"bernoulli": bernoulli_lift, "lebesgue": lebesgue_lift, "periodic": periodic_orbit}


def builtin_measures_for(system: FlowSystem) -> list[str]:
    if isinstance(system, ShiftSuspension):
        return ["bernoulli", "periodic"]
    if isinstance(system, CatSuspension):
        return ["lebesgue", "periodic"]
    return ["lebesgue"]


# -- ball masses and local entropy ----------------------------------------------


def measure_of_ball(system: FlowSystem, mu: DiscreteMeasure, ball: BallSpec, dt: float | None = None,
                    eta_margin: float = ETA_MARGIN) -> float:
    dt = default_dt(ball.eps) if dt is None else dt
    ball_mass = greedy_kernels(system)[3]
    return float(ball_mass(np.asarray(ball.center, float), float(ball.t), float(ball.eps), float(dt),
                           float(eta_margin), mu.atoms, mu.weights))


def local_entropy_at(system, mu: DiscreteMeasure, x, eps: float, t_list, dt: float | None = None) -> tuple[float, float]:
    """Finite-scale lower and upper local entropy at ``x``: min and max of
    -log(mu(B(x, t, eps)) / |mu|) / t over the tail half of ``t_list``."""
    ts = np.asarray(t_list, float)
    if len(ts) < 3 or np.any(np.diff(ts) <= 0):
        raise MeasureError("t_list must be increasing with at least 3 entries")
    total = mu.total_mass
    u = []
    for t in ts:
        m = measure_of_ball(system, mu, BallSpec(np.asarray(x, float), float(t), eps), dt)
        if m <= 0:
            break
        u.append(max(0.0, -math.log(min(m / total, 1.0)) / t))
    if not u:
        raise MeasureError("atomless at center: the shortest ball has zero measure")
    tail = u[len(u) // 2:]
    return float(min(tail)), float(max(tail))


def upper_local_entropy(system, mu: DiscreteMeasure, eps: float, t_list, sample_count: int, seed: int,
                        dt: float | None = None) -> float:
    """Average of the upper local entropy over atoms drawn by weight."""
    if sample_count < 1:
        raise MeasureError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(mu), size=sample_count, p=mu.weights / mu.total_mass)
    return float(np.mean([local_entropy_at(system, mu, mu.atoms[i], eps, t_list, dt)[1] for i in idx]))


# -- Frostman construction ------------------------------------------------------


@dataclass
class FrostmanState:
    level: int
    K: np.ndarray
    m: np.ndarray
    gamma: float
    mu: DiscreteMeasure
    s: float
    eps: float
    parent: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def to_dict(self, system: FlowSystem) -> dict:
        return {
            "level": self.level,
            "K": [system.to_json(x) for x in self.K],
            "m": self.m.tolist(),
            "gamma": self.gamma,
            "weights": self.mu.weights.tolist(),
            "s": self.s,
            "eps": self.eps,
            "parent": self.parent.tolist(),
        }


def _min_pairwise(system, pts) -> float:
    d = math.inf
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = min(d, system.metric(pts[i], pts[j]))
    return d


def separated(system, K, m, gamma, eps, probes, dt, rng, jitter: int = 3) -> bool:
    """Probe check of the separation needed for gamma: for centers z(x) moved
    by less than gamma, the sets B(z(x), gamma) and B(z(x), m(x), eps) of
    different atoms x share no probe."""
    if len(K) > 1 and _min_pairwise(system, K) <= 2.0 * gamma:
        return False
    _, _, members_of, _, near, _ = greedy_kernels(system)
    owner = np.full(len(probes), -1, dtype=np.int64)
    for i, x in enumerate(K):
        zs = [x] + [system.perturb(x, gamma * 0.999, rng) for _ in range(jitter)]
        for z in zs:
            z = np.asarray(z, float)
            hit = np.concatenate([
                members_of(z, float(m[i]), float(eps), float(dt), ETA_MARGIN, probes),
                near(z, gamma + 1e-12, probes),
            ])
            prev = owner[hit]
            if np.any((prev >= 0) & (prev != i)):
                return False
            owner[hit] = i
    return True


def _choose_gamma(system, K, m, eps, upper, probes, dt, rng, level, halvings: int = 30) -> float:
    gamma = upper
    for _ in range(halvings):
        if separated(system, K, m, gamma, eps, probes, dt, rng):
            return gamma
        gamma /= 2.0
    raise FrostmanError(f"level {level}: no separation radius found below {upper:.3g}", level)


def _thin(system, pts, sep):
    if sep is None or len(pts) == 0:
        return pts
    return pts[greedy_kernels(system)[5](as_array(pts), float(sep))]


def frostman_construct(
    system: FlowSystem,
    K_samples,
    s: float,
    eps: float,
    p_max: int = 3,
    seed: int = 0,
    dt: float | None = None,
    local_draws: int = 400,
    probe_count: int = 2000,
    n1: float = 1.0,
    separation: float | None = None,
    net_ratio: float | None = None,
    t_spread: float = 1.0,
    max_extra: float = 10.0,
) -> tuple[DiscreteMeasure, list[FrostmanState]]:
    """Nested atoms K_1, K_2, ... with weights exp(-m_i(x) s).

    Level 1 picks a disjoint family with durations >= ``n1`` and weight sum in
    (1, 2) from ``K_samples`` (thinned to pairwise distance > ``separation``
    when given).  Each later level refines every parent x inside
    B(x, gamma/4), from the samples there plus ``local_draws`` fresh points
    near x, thinned to pairwise distance > gamma / (4 net_ratio), so that the
    children of x carry between mu({x}) and (1 + 2^-level) mu({x}).  When the
    local mass falls short the duration floor is raised in steps of 2, up to
    ``max_extra`` above the previous level's largest duration."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    if not s > 0:
        raise ValueError("s must be positive")
    dt = default_dt(eps) if dt is None else dt
    rng = np.random.default_rng([seed, 1])
    Z = as_array(K_samples)
    pool = _thin(system, Z, separation)
    probes = default_probes(system, pool, count=probe_count, seed=seed)
    try:
        fam = select_family_in_range(system, pool, s, eps, n1, 1.0, 2.0, seed, t_spread, dt, probes)
    except InsufficientPackingMass as exc:
        raise FrostmanError(f"level 1: {exc}", level=1) from exc
    K = np.array([b.center for b in fam.balls])
    m = np.array([b.t for b in fam.balls])
    upper = _min_pairwise(system, K) / 4.0 if len(K) > 1 else system.diameter_bound / 4.0
    gamma = _choose_gamma(system, K, m, eps, upper, probes, dt, rng, 1)
    history = [FrostmanState(1, K, m, gamma, DiscreteMeasure(K, np.exp(-m * s), "frostman-1"), s, eps)]
    log.info("level 1: %d atoms, gamma=%.3g, sum=%.4f", len(K), gamma, history[0].mu.total_mass)

    near = greedy_kernels(system)[4]
    for level in range(2, p_max + 1):
        prev = history[-1]
        floor = float(prev.m.max())
        radius = prev.gamma / 4.0
        kids, kid_m, parent = [], [], []
        for i, x in enumerate(prev.K):
            fresh = np.array([system.perturb(x, radius * 0.99, rng) for _ in range(local_draws)])
            local = np.concatenate([Z[near(x, radius * (1 - 1e-9), Z)], fresh])
            local = local[near(x, radius * (1 - 1e-9), local)]
            local = _thin(system, local, None if net_ratio is None else radius / net_ratio)
            target = prev.mu.weights[i]
            sub = _refine_node(system, local, s, eps, floor, target, level, t_spread, dt, rng, max_extra, x, i)
            for b in sub.balls:
                kids.append(b.center)
                kid_m.append(b.t)
                parent.append(i)
        K = np.array(kids)
        m = np.array(kid_m)
        parent = np.array(parent, dtype=np.int64)
        level_probes = np.concatenate([K, probes])
        upper = min(prev.gamma / 4.0 * 0.999, _min_pairwise(system, K) / 4.0)
        gamma = _choose_gamma(system, K, m, eps, upper, level_probes, dt, rng, level)
        state = FrostmanState(level, K, m, gamma, DiscreteMeasure(K, np.exp(-m * s), f"frostman-{level}"), s, eps, parent)
        history.append(state)
        log.info("level %d: %d atoms, gamma=%.3g, mass=%.4f", level, len(K), gamma, state.mu.total_mass)

    problems = check_state_invariants(history)
    if problems:
        raise FrostmanError("state invariants violated: " + "; ".join(problems), level=history[-1].level)
    final = history[-1].mu
    return DiscreteMeasure(final.atoms, final.weights / final.total_mass, "frostman"), history


def _refine_node(system, local, s, eps, floor, target, level, t_spread, dt, rng, max_extra, x, i):
    probes = default_probes(system, local, count=0)
    hi = (1.0 + 2.0**-level) * target
    N = floor
    last = None
    while N <= floor + max_extra:
        try:
            return select_family_in_range(system, local, s, eps, N, target, hi, int(rng.integers(2**31)),
                                          t_spread, dt, probes)
        except InsufficientPackingMass as exc:
            last = exc
            N += 2.0
    raise FrostmanError(
        f"level {level}, parent {i}: insufficient packing mass near the parent "
        f"({last.best_sum:.3g} <= {target:.3g} with {len(local)} local candidates)", level, x)


def check_state_invariants(history: list[FrostmanState]) -> list[str]:
    out = []
    first = history[0]
    if not 1.0 < first.mu.total_mass < 2.0:
        out.append(f"level 1 sum {first.mu.total_mass} outside (1, 2)")
    for prev, cur in zip(history, history[1:]):
        if cur.m.min() < prev.m.max():
            out.append(f"level {cur.level}: durations below the previous maximum")
        if not cur.gamma < prev.gamma / 4.0:
            out.append(f"level {cur.level}: gamma not below gamma/4 of the previous level")
        for i, w in enumerate(prev.mu.weights):
            tot = cur.mu.weights[cur.parent == i].sum()
            if not w < tot < (1.0 + 2.0 ** -cur.level) * w:
                out.append(f"level {cur.level}, parent {i}: child mass {tot:.6g} outside target for {w:.6g}")
    return out


def check_mass_bounds(system: FlowSystem, history: list[FrostmanState], dt: float | None = None,
                      C: float = C_MASS, rtol: float = 1e-12) -> list[dict]:
    """Violations of mu_j(B(x, gamma_i)) in [exp(-m_i(x) s), C exp(-m_i(x) s)] for j > i."""
    near = greedy_kernels(system)[4]
    report = []
    for i, st in enumerate(history):
        for j in range(i + 1, len(history)):
            later = history[j].mu
            for k, x in enumerate(st.K):
                lo = math.exp(-st.m[k] * st.s)
                mass = float(later.weights[near(np.asarray(x, float), st.gamma + 1e-12, later.atoms)].sum())
                if not lo * (1 - rtol) <= mass <= C * lo * (1 + rtol):
                    report.append({"level": st.level, "atom": k, "against": history[j].level,
                                   "mass": mass, "lower": lo, "upper": C * lo})
    return report
