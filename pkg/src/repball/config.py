"""Experiment configuration loaded from JSON."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .flows import FlowError, FlowSystem, ShiftSuspension, TorusFlow, make_system
from .reparam import MAX_CELLS

# numbering used by the acceptance suite and the example configs
SYSTEM_ORDER = ("shift2", "cat", "torus")
ESTIMATORS = ("packing", "bowen", "local-entropy", "frostman")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class PackingOptions:
    restarts: int = 1
    probe_count: int = 5000
    t_spread: float = 5.0
    t_step: float = 1.0
    saturation: float = 0.25


@dataclass
class CoveringOptions:
    eta: float = 0.1
    delta: float = 0.01


@dataclass
class LocalEntropyOptions:
    eps: float | None = None
    t_list: list = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])
    sample_count: int = 20


@dataclass
class FrostmanOptions:
    enabled: bool = False
    s_factor: float = 0.8
    p_max: int = 3
    samples: int = 2000
    local_draws: int = 400
    n1: float = 4.0
    separation: float | None = 0.125


@dataclass
class Tolerances:
    slack: float = 0.05
    relative: float = 0.2
    measure_slack: float = 0.15
    frostman_slack: float = 0.1


@dataclass
class ExperimentConfig:
    system: str
    system_params: dict
    subset: dict
    eps: list
    t_window: list
    dt: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    estimators: list = field(default_factory=lambda: ["packing"])
    measures: list = field(default_factory=list)
    packing: PackingOptions = field(default_factory=PackingOptions)
    covering: CoveringOptions = field(default_factory=CoveringOptions)
    local_entropy: LocalEntropyOptions = field(default_factory=LocalEntropyOptions)
    frostman: FrostmanOptions = field(default_factory=FrostmanOptions)
    tolerances: Tolerances = field(default_factory=Tolerances)
    max_cells: float = MAX_CELLS

    def make_system(self) -> FlowSystem:
        return make_system(self.system, **self.system_params)

    def to_dict(self) -> dict:
        return asdict(self)


def _section(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")
    return cls(**raw)


def config_from_dict(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    sysblock = raw.get("system")
    if isinstance(sysblock, str):
        sysblock = {"name": sysblock}
    if not isinstance(sysblock, dict) or "name" not in sysblock:
        raise ConfigError("system.name", "missing system identifier")
    params = sysblock.get("params", {})
    try:
        make_system(sysblock["name"], **params)
    except (FlowError, TypeError) as exc:
        raise ConfigError("system", str(exc)) from None

    subset = raw.get("subset", {"kind": "whole", "size": 2000})
    kind = subset.get("kind")
    if kind not in ("whole", "fiber", "file"):
        raise ConfigError("subset.kind", "must be whole, fiber or file")
    if kind == "file":
        p = subset.get("path")
        if not p:
            raise ConfigError("subset.path", "file subsets need a path")
        full = p if os.path.isabs(p) else os.path.join(base_dir, p)
        if not os.path.exists(full):
            raise ConfigError("subset.path", f"file not found: {full}")
        subset = dict(subset, path=full)
    elif int(subset.get("size", 0)) < 1:
        raise ConfigError("subset.size", "must be a positive integer")

    eps = raw.get("eps")
    if not isinstance(eps, list) or not eps:
        raise ConfigError("eps", "need a nonempty list")
    if any(not (isinstance(e, (int, float)) and e > 0) for e in eps):
        raise ConfigError("eps", "entries must be positive numbers")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps", "schedule must be strictly decreasing")

    tw = raw.get("t_window")
    if not (isinstance(tw, list) and len(tw) == 2 and tw[0] < tw[1]):
        raise ConfigError("t_window", "need [t_min, t_max] with t_min < t_max")
    if tw[1] - tw[0] < 4:
        raise ConfigError("t_window", "the growth fit needs a window of at least 4 time units")
    dt = raw.get("dt")
    if dt is not None and not dt > 0:
        raise ConfigError("dt", "must be positive")

    est = raw.get("estimators", ["packing"])
    for i, e in enumerate(est):
        if e not in ESTIMATORS:
            raise ConfigError(f"estimators[{i}]", f"unknown estimator {e!r}")

    measures = raw.get("measures", [])
    for i, m in enumerate(measures):
        if m.get("kind") not in ("bernoulli", "lebesgue", "periodic", "file"):
            raise ConfigError(f"measures[{i}].kind", "unknown measure")
        if m["kind"] == "file":
            p = m.get("path", "")
            full = p if os.path.isabs(p) else os.path.join(base_dir, p)
            if not os.path.exists(full):
                raise ConfigError(f"measures[{i}].path", f"file not found: {full}")
            m["path"] = full

    try:
        cfg = ExperimentConfig(
            system=sysblock["name"],
            system_params=params,
            subset=subset,
            eps=[float(e) for e in eps],
            t_window=[float(t) for t in tw],
            dt=dt,
            seeds=[int(s) for s in raw.get("seeds", [0])],
            estimators=list(est),
            measures=measures,
            packing=_section(PackingOptions, raw.get("packing"), "packing"),
            covering=_section(CoveringOptions, raw.get("covering"), "covering"),
            local_entropy=_section(LocalEntropyOptions, raw.get("local_entropy"), "local_entropy"),
            frostman=_section(FrostmanOptions, raw.get("frostman"), "frostman"),
            tolerances=_section(Tolerances, raw.get("tolerances"), "tolerances"),
            max_cells=float(raw.get("reparam", {}).get("max_cells", MAX_CELLS)),
        )
    except TypeError as exc:
        raise ConfigError("$", str(exc)) from None
    if not 0 < cfg.covering.eta < 1:
        raise ConfigError("covering.eta", "must lie in (0, 1)")
    if not cfg.covering.delta > 0:
        raise ConfigError("covering.delta", "must be positive")
    if not cfg.seeds:
        raise ConfigError("seeds", "need at least one seed")
    return cfg


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError("$", f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return config_from_dict(raw, os.path.dirname(os.path.abspath(path)))


def subset_points(system: FlowSystem, subset: dict, seed: int) -> np.ndarray:
    """Finite sample of the target set."""
    kind = subset["kind"]
    rng = np.random.default_rng([seed, 101])
    if kind == "file":
        with open(subset["path"]) as fh:
            return np.array([system.from_json(c) for c in json.load(fh)])
    n = int(subset["size"])
    if kind == "whole":
        return system.sample(rng, n)
    # a single fiber: the height (or second coordinate on the torus) varies, the base is fixed
    pts = system.sample(rng, n)
    if isinstance(system, TorusFlow):
        pts[:, 0] = float(subset.get("base", 0.0))
    elif isinstance(system, ShiftSuspension):
        pts[:, 2:] = pts[0, 2:]
    else:
        pts[:, :2] = pts[0, :2]
    return pts
