"""Scenario pools encoding DER adoption patterns and behaviour diversity.

Adoption is modelled by per-bus Poisson EV counts and a number of PV plants
placed on pre-selected buses. Behaviour diversity is the number of distinct
profile types units are spread over; one type means every unit follows the
same schedule.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Network
from .oracle import EV, KINDS, LEVEL1_CHARGER_KW, PV, Location, ProfileSet, Scenario


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class Cluster:
    id: str
    buses: tuple[str, ...]
    description: str = ""


def load_clusters(path) -> dict[str, Cluster]:
    doc = json.loads(Path(path).read_text())
    out = {}
    for c in doc:
        extra = set(c) - {"id", "buses", "description"}
        if extra:
            raise ConfigInvalid(f"cluster: unknown key {sorted(extra)[0]!r}")
        out[str(c["id"])] = Cluster(str(c["id"]), tuple(str(b) for b in c["buses"]), c.get("description", ""))
    return out


def save_clusters(clusters: Iterable[Cluster], path) -> None:
    doc = [{"id": c.id, "buses": list(c.buses), "description": c.description} for c in clusters]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


# --------------------------------------------------------------------------
# configuration


@dataclass
class EVConfig:
    candidate_buses: list | None = None  # None: every non-root bus
    cluster: str | None = None
    lambda_range: tuple = (1.0, 1.5)
    lambda_step: float = 0.1
    n_ev_types: int = 20
    charger_kw: float = LEVEL1_CHARGER_KW
    eta: float = 1.0


@dataclass
class PVConfig:
    candidate_buses: list = field(default_factory=list)
    n_pv_range: tuple = (10, 30)
    n_pv_step: int = 1
    n_pv_types: int = 20
    plant_kw: float = 25.0
    pv_count_mode: str = "total"  # or "per_bus"
    eta: float = 1.0


@dataclass
class BoxConfig:
    """Installed sizes drawn uniformly in ``[low, high]`` at each bus."""

    buses: list = field(default_factory=list)
    low: float = 0.0
    high: float = 4.0
    kind: str = EV
    unit_kw: float = 1.0
    profile_type: int = 0


@dataclass
class PoolConfig:
    ev: EVConfig | None = None
    pv: PVConfig | None = None
    box: BoxConfig | None = None
    colocate_pv_with_ev: bool = False
    pool_size_target: int = 1000
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "PoolConfig":
        def build(klass, sub, where):
            if sub is None:
                return None
            if not isinstance(sub, dict):
                raise ConfigInvalid(f"{where}: expected an object")
            names = {f.name for f in fields(klass)}
            for k in sub:
                if k not in names:
                    raise ConfigInvalid(f"{where}: unknown key {k!r}")
            vals = dict(sub)
            for k in ("lambda_range", "n_pv_range"):
                if k in vals:
                    vals[k] = tuple(vals[k])
            return klass(**vals)

        names = {f.name for f in fields(cls)}
        for k in doc:
            if k not in names:
                raise ConfigInvalid(f"pool config: unknown key {k!r}")
        return cls(
            ev=build(EVConfig, doc.get("ev"), "ev"),
            pv=build(PVConfig, doc.get("pv"), "pv"),
            box=build(BoxConfig, doc.get("box"), "box"),
            colocate_pv_with_ev=bool(doc.get("colocate_pv_with_ev", False)),
            pool_size_target=int(doc.get("pool_size_target", 1000)),
            seed=int(doc.get("seed", 0)),
        )


def load_pool_config(path) -> PoolConfig:
    return PoolConfig.from_dict(json.loads(Path(path).read_text()))


def lambda_grid(ev: EVConfig) -> list[float]:
    lo, hi = ev.lambda_range
    n = int(math.floor((hi - lo) / ev.lambda_step + 1e-9)) + 1 if ev.lambda_step > 0 else 1
    return [round(lo + i * ev.lambda_step, 10) for i in range(n)]


def n_pv_grid(pv: PVConfig) -> list[int]:
    lo, hi = pv.n_pv_range
    return list(range(int(lo), int(hi) + 1, max(1, int(pv.n_pv_step))))


def _ev_buses(config: PoolConfig, net: Network, clusters) -> list[str]:
    ev = config.ev
    if ev.cluster is not None:
        if ev.cluster not in clusters:
            raise ConfigInvalid(f"unknown cluster {ev.cluster!r}")
        return list(clusters[ev.cluster].buses)
    if ev.candidate_buses is None:
        return [b for b in net.buses if b != net.root_bus]
    return [str(b) for b in ev.candidate_buses]


def validate_pool_config(config: PoolConfig, net: Network, clusters=None, profiles=None) -> list[str]:
    clusters = clusters or {}
    problems = []

    def check_buses(buses, where):
        if not buses:
            problems.append(f"{where}: empty bus set")
        for b in buses:
            if not net.has_bus(b):
                problems.append(f"{where}: unknown bus {b!r}")

    if config.box is None and config.ev is None and config.pv is None:
        problems.append("pool config needs an ev, pv or box section")
    if config.pool_size_target < 1:
        problems.append("pool_size_target must be positive")
    if config.box is not None:
        box = config.box
        check_buses([str(b) for b in box.buses], "box.buses")
        if not (0 <= box.low <= box.high):
            problems.append("box: need 0 <= low <= high")
        if box.kind not in KINDS:
            problems.append(f"box: unknown kind {box.kind!r}")
    if config.ev is not None:
        ev = config.ev
        lo, hi = ev.lambda_range
        if not (0 < lo <= hi):
            problems.append("ev.lambda_range: need 0 < lo <= hi")
        if ev.lambda_step <= 0:
            problems.append("ev.lambda_step must be positive")
        if ev.n_ev_types < 1:
            problems.append("ev.n_ev_types must be >= 1")
        if ev.charger_kw <= 0:
            problems.append("ev.charger_kw must be positive")
        if ev.cluster is not None and ev.cluster not in clusters:
            problems.append(f"ev.cluster: unknown cluster {ev.cluster!r}")
        else:
            check_buses(_ev_buses(config, net, clusters), "ev.candidate_buses")
        if profiles is not None and EV in profiles and ev.n_ev_types > profiles[EV].n_types:
            problems.append(f"ev.n_ev_types={ev.n_ev_types} exceeds {profiles[EV].n_types} EV profile types")
    if config.pv is not None:
        pv = config.pv
        lo, hi = pv.n_pv_range
        if not (0 <= lo <= hi) or int(lo) != lo or int(hi) != hi:
            problems.append("pv.n_pv_range: need non-negative integers lo <= hi")
        if pv.pv_count_mode not in ("total", "per_bus"):
            problems.append(f"pv.pv_count_mode: unknown mode {pv.pv_count_mode!r}")
        if pv.n_pv_types < 1:
            problems.append("pv.n_pv_types must be >= 1")
        if not config.colocate_pv_with_ev:
            check_buses([str(b) for b in pv.candidate_buses], "pv.candidate_buses")
        if profiles is not None and PV in profiles and pv.n_pv_types > profiles[PV].n_types:
            problems.append(f"pv.n_pv_types={pv.n_pv_types} exceeds {profiles[PV].n_types} PV profile types")
    if config.colocate_pv_with_ev and (config.ev is None or config.pv is None):
        problems.append("colocate_pv_with_ev needs both ev and pv sections")
    return problems


# --------------------------------------------------------------------------
# draws


def draw_adoption_counts(buses: Sequence, lam: float, rng: np.random.Generator) -> dict[str, int]:
    """Independent Poisson(``lam``) unit counts per bus."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    draws = rng.poisson(lam, size=len(buses))
    return {str(b): int(n) for b, n in zip(buses, draws)}


def assign_profiles(counts: dict, n_types: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """One ``(bus, profile_type)`` entry per adopted unit, types uniform."""
    if n_types < 1:
        raise ValueError("n_types must be >= 1")
    total = sum(counts.values())
    types = rng.integers(0, n_types, size=total)
    out = []
    k = 0
    for bus, n in counts.items():
        for _ in range(n):
            out.append((bus, int(types[k])))
            k += 1
    return out


def _group(entries, order: dict) -> list[tuple[str, int, int]]:
    tally: dict[tuple[str, int], int] = {}
    for bus, typ in entries:
        tally[(bus, typ)] = tally.get((bus, typ), 0) + 1
    return [(b, t, n) for (b, t), n in sorted(tally.items(), key=lambda kv: (order[kv[0][0]], kv[0][1]))]


# --------------------------------------------------------------------------
# pools


@dataclass
class ScenarioPool:
    """Immutable list of scenarios plus the bus layout used for features."""

    scenarios: list[Scenario]
    buses: tuple[str, ...]
    _features: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.scenarios)

    def __getitem__(self, i) -> Scenario:
        return self.scenarios[i]

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.id for s in self.scenarios], dtype=int)

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = np.vstack([scenario_features(s, self.buses) for s in self.scenarios]) if self.scenarios else np.zeros((0, 2 * len(self.buses)))
        return self._features

    @property
    def total_ev(self) -> np.ndarray:
        return np.array([s.total_ev for s in self.scenarios], dtype=float)

    @property
    def total_pv_kw(self) -> np.ndarray:
        return np.array([s.total_pv_kw for s in self.scenarios], dtype=float)


def scenario_features(scenario: Scenario, buses: Sequence[str]) -> np.ndarray:
    """Installed EV kW per bus followed by installed PV kW per bus."""
    index = {b: i for i, b in enumerate(buses)}
    n = len(buses)
    x = np.zeros(2 * n)
    for loc in scenario.locations:
        offset = 0 if loc.kind == EV else n
        x[offset + index[loc.bus]] += loc.kw
    return x


def _ev_locations(ev: EVConfig, counts, types_rng, order):
    entries = assign_profiles(counts, ev.n_ev_types, types_rng)
    return [Location(b, EV, n, ev.charger_kw, t, ev.eta) for b, t, n in _group(entries, order)]


def _pv_locations(pv: PVConfig, n_pv: int, pv_rng, order):
    buses = [str(b) for b in pv.candidate_buses]
    if pv.pv_count_mode == "total":
        picks = rng_choice(pv_rng, buses, n_pv)
        counts: dict[str, int] = {}
        for b in picks:
            counts[b] = counts.get(b, 0) + 1
        counts = {b: counts[b] for b in buses if b in counts}
    else:
        counts = {b: int(c) for b, c in zip(buses, pv_rng.integers(0, n_pv + 1, size=len(buses)))}
    entries = assign_profiles(counts, pv.n_pv_types, pv_rng)
    return [Location(b, PV, n, pv.plant_kw, t, pv.eta) for b, t, n in _group(entries, order)]


def rng_choice(rng, items, size):
    idx = rng.integers(0, len(items), size=size)
    return [items[i] for i in idx]


def generate_pool(config: PoolConfig, net: Network, clusters=None, rng: np.random.Generator | None = None) -> ScenarioPool:
    """Sweep the (lambda, N_PV) grid drawing ``ceil(target / points)``
    scenarios at each point, or draw a uniform box pool.

    Counts, EV profile types and PV placement use separate child streams, so
    changing ``n_ev_types`` leaves every EV count unchanged.
    """
    clusters = clusters or {}
    problems = validate_pool_config(config, net, clusters)
    if problems:
        raise ConfigInvalid("; ".join(problems))
    if rng is None:
        rng = np.random.default_rng(config.seed)
    counts_rng, types_rng, pv_rng = rng.spawn(3)
    order = {b: i for i, b in enumerate(net.buses)}
    scenarios: list[Scenario] = []

    if config.box is not None:
        box = config.box
        buses = [str(b) for b in box.buses]
        values = counts_rng.uniform(box.low, box.high, size=(config.pool_size_target, len(buses)))
        for i, row in enumerate(values):
            locs = tuple(Location(b, box.kind, float(u), box.unit_kw, box.profile_type) for b, u in zip(buses, row))
            scenarios.append(Scenario(i, locs, {"design": "box"}))
        return ScenarioPool(scenarios, tuple(net.buses))

    ev, pv = config.ev, config.pv
    lambdas = lambda_grid(ev) if ev is not None else [None]
    use_pv_sweep = pv is not None and not config.colocate_pv_with_ev
    pv_counts = n_pv_grid(pv) if use_pv_sweep else [None]
    points = [(lam, n) for lam in lambdas for n in pv_counts]
    per_point = math.ceil(config.pool_size_target / len(points))
    ev_buses = _ev_buses(config, net, clusters) if ev is not None else []

    sid = 0
    for lam, n_pv in points:
        for _ in range(per_point):
            locs: list[Location] = []
            meta: dict = {}
            if ev is not None:
                counts = draw_adoption_counts(ev_buses, lam, counts_rng)
                ev_locs = _ev_locations(ev, counts, types_rng, order)
                locs += ev_locs
                meta.update({"lambda": lam, "n_ev_types": ev.n_ev_types})
                if ev.cluster is not None:
                    meta["cluster"] = ev.cluster
                if config.colocate_pv_with_ev:
                    colo = {}
                    for loc in ev_locs:
                        colo[loc.bus] = colo.get(loc.bus, 0) + int(loc.units)
                    entries = assign_profiles(colo, pv.n_pv_types, pv_rng)
                    locs += [Location(b, PV, n, pv.plant_kw, t, pv.eta) for b, t, n in _group(entries, order)]
                    meta["colocated"] = True
            if n_pv is not None:
                locs += _pv_locations(pv, n_pv, pv_rng, order)
                meta["n_pv"] = n_pv
            scenarios.append(Scenario(sid, tuple(locs), meta))
            sid += 1
    return ScenarioPool(scenarios, tuple(net.buses))


def write_pool(pool: ScenarioPool, path) -> None:
    with open(path, "w") as fh:
        for s in pool.scenarios:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_pool(path, buses: Sequence[str]) -> ScenarioPool:
    scenarios = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                scenarios.append(Scenario.from_dict(json.loads(line)))
    return ScenarioPool(scenarios, tuple(buses))


# --------------------------------------------------------------------------
# synthetic behaviour profiles


EV_DEFAULTS = {"window_hours": 2.0, "start_hours": (16.0, 24.0), "depth": 1.0}
PV_DEFAULTS = {"sunrise": 6.0, "sunset": 18.0, "amplitude": (0.7, 1.0), "noise": 0.05}


def synth_profiles(kind: str, n_types: int, T: int, params: dict | None = None, rng: np.random.Generator | None = None) -> ProfileSet:
    """Synthetic per-unit behaviour shapes.

    EV: rectangular charging windows of ``window_hours`` at depth ``-depth``.
    Type ``k`` starts at ``lo + (k + 0.5) * (hi - lo) / n_types`` hours, so
    starts spread evenly across the evening range; windows wrap at midnight.

    PV: ``amplitude_k * sin(pi * (h - sunrise) / (sunset - sunrise))`` during
    daylight with multiplicative Gaussian noise, clipped at zero, and exactly
    zero outside ``(sunrise, sunset)``. Step ``t`` sits at hour ``24 t / T``.
    """
    if n_types < 1 or T < 1:
        raise ValueError("n_types and T must be >= 1")
    steps_per_hour = T / 24.0
    if kind == EV:
        p = {**EV_DEFAULTS, **(params or {})}
        lo, hi = p["start_hours"]
        width = int(round(p["window_hours"] * steps_per_hour))
        shapes = np.zeros((n_types, T))
        for k in range(n_types):
            start = int(round((lo + (k + 0.5) * (hi - lo) / n_types) * steps_per_hour))
            idx = (start + np.arange(width)) % T
            shapes[k, idx] = -p["depth"]
        return ProfileSet(EV, shapes)
    if kind == PV:
        p = {**PV_DEFAULTS, **(params or {})}
        rng = rng if rng is not None else np.random.default_rng(0)
        hours = np.arange(T) * 24.0 / T
        daylight = (hours > p["sunrise"]) & (hours < p["sunset"])
        bell = np.where(daylight, np.sin(np.pi * (hours - p["sunrise"]) / (p["sunset"] - p["sunrise"])), 0.0)
        a_lo, a_hi = p["amplitude"]
        amps = rng.uniform(a_lo, a_hi, size=n_types)
        noise = 1.0 + p["noise"] * rng.standard_normal((n_types, T))
        shapes = np.clip(amps[:, None] * bell[None, :] * noise, 0.0, None)
        shapes[:, ~daylight] = 0.0
        return ProfileSet(PV, shapes)
    raise ValueError(f"unknown DER kind {kind!r}")
