"""Time-series feasibility oracle for DER scenarios.

A scenario is feasible at a time step when the exact power flow converges,
every bus voltage sits inside the network's band and every line carries no
more than its apparent-power rating. A scenario is labelled feasible overall
when the fraction of passing steps reaches ``eps_bar``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .grid import DEFAULT_MAX_ITER, DEFAULT_TOL, DimensionMismatch, Network, solve_distflow_batch

EV = "EV"
PV = "PV"
KINDS = (EV, PV)
LEVEL1_CHARGER_KW = 1.92

UNDERVOLTAGE = "undervoltage"
OVERVOLTAGE = "overvoltage"
THERMAL = "line_thermal"
DIVERGENCE = "divergence"
VIOLATION_KINDS = (UNDERVOLTAGE, OVERVOLTAGE, THERMAL, DIVERGENCE)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Location:
    """One DER entry. Installed size is ``units * unit_kw`` (the psi entry).

    ``eta`` is the fixed power factor; reactive output is
    ``active * tan(arccos(eta))`` with the sign of the active part.
    """

    bus: str
    kind: str
    units: float
    unit_kw: float = 1.0
    profile_type: int = 0
    eta: float = 1.0

    @property
    def kw(self) -> float:
        return self.units * self.unit_kw

    def to_dict(self) -> dict:
        return {
            "bus": self.bus,
            "kind": self.kind,
            "units": self.units,
            "unit_kw": self.unit_kw,
            "profile_type": self.profile_type,
            "eta": self.eta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Location":
        return cls(
            bus=str(d["bus"]),
            kind=str(d["kind"]),
            units=d["units"],
            unit_kw=d.get("unit_kw", 1.0),
            profile_type=int(d.get("profile_type", 0)),
            eta=d.get("eta", 1.0),
        )


@dataclass(frozen=True)
class Scenario:
    id: int
    locations: tuple[Location, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def total_units(self, kind: str) -> float:
        return sum(loc.units for loc in self.locations if loc.kind == kind)

    def total_kw(self, kind: str) -> float:
        return sum(loc.kw for loc in self.locations if loc.kind == kind)

    @property
    def total_ev(self) -> float:
        """Number of EVs (units of EV entries)."""
        return self.total_units(EV)

    @property
    def total_pv_kw(self) -> float:
        return self.total_kw(PV)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "locations": [loc.to_dict() for loc in self.locations],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(
            id=int(d["id"]),
            locations=tuple(Location.from_dict(x) for x in d.get("locations", ())),
            metadata=dict(d.get("metadata", {})),
        )


@dataclass(frozen=True, eq=False)
class ProfileSet:
    """Per-unit behaviour shapes ``[type, T]`` for one DER kind.

    EV shapes are consumption and therefore non-positive; PV shapes are
    non-negative.
    """

    kind: str
    shapes: np.ndarray

    def __post_init__(self):
        shapes = np.asarray(self.shapes, dtype=float)
        if shapes.ndim != 2 or shapes.shape[0] < 1:
            raise ScenarioError("profile shapes must be a non-empty [type, T] matrix")
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown DER kind {self.kind!r}")
        if not np.all(np.isfinite(shapes)):
            raise ScenarioError("profile shapes must be finite")
        if self.kind == EV and np.any(shapes > 0):
            raise ScenarioError("EV shapes must be <= 0 (consumption is negative injection)")
        if self.kind == PV and np.any(shapes < 0):
            raise ScenarioError("PV shapes must be >= 0")
        object.__setattr__(self, "shapes", shapes)

    @property
    def T(self) -> int:
        return self.shapes.shape[1]

    @property
    def n_types(self) -> int:
        return self.shapes.shape[0]


ProfileLibrary = Mapping[str, ProfileSet]


def validate_scenario(net: Network, scenario: Scenario, profiles: ProfileLibrary) -> list[str]:
    problems = []
    for k, loc in enumerate(scenario.locations):
        tag = f"scenario {scenario.id} location {k}"
        if not net.has_bus(loc.bus):
            problems.append(f"{tag}: unknown bus {loc.bus!r}")
        if loc.kind not in KINDS:
            problems.append(f"{tag}: unknown kind {loc.kind!r}")
            continue
        if not (loc.units >= 0 and loc.unit_kw >= 0):
            problems.append(f"{tag}: negative size")
        if not (0 < loc.eta <= 1):
            problems.append(f"{tag}: power factor must lie in (0, 1]")
        ps = profiles.get(loc.kind)
        if ps is None:
            problems.append(f"{tag}: no {loc.kind} profiles loaded")
        elif not 0 <= loc.profile_type < ps.n_types:
            problems.append(f"{tag}: profile type {loc.profile_type} out of range for {ps.n_types} {loc.kind} types")
    for kind, ps in profiles.items():
        if ps.T != net.baseline.T:
            problems.append(f"{kind} profiles have T={ps.T}, network baseline has T={net.baseline.T}")
    return problems


def _reactive_ratio(eta: float) -> float:
    return math.sqrt(max(0.0, 1.0 - eta * eta)) / eta


def scenario_injections(net: Network, scenario: Scenario, profiles: ProfileLibrary) -> tuple[np.ndarray, np.ndarray]:
    """Net injections ``p``, ``q`` in kW/kvar for every step, shaped ``[bus, T]``."""
    base = net.baseline
    p = -base.d.copy()
    q = -base.e.copy()
    for loc in scenario.locations:
        ps = profiles[loc.kind]
        if ps.T != base.T:
            raise DimensionMismatch(f"{loc.kind} profiles have T={ps.T}, baseline has T={base.T}")
        active = ps.shapes[loc.profile_type] * loc.kw
        i = net.bus_index(loc.bus)
        p[i] += active
        if loc.eta != 1.0:
            q[i] += active * _reactive_ratio(loc.eta)
    return p, q


def apply_scenario(net: Network, scenario: Scenario, profiles: ProfileLibrary, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus injections (kW, kvar) at step ``t``."""
    if not 0 <= t < net.baseline.T:
        raise DimensionMismatch(f"time step {t} outside [0, {net.baseline.T})")
    p, q = scenario_injections(net, scenario, profiles)
    return p[:, t], q[:, t]


def aggregate_load(net: Network, scenario: Scenario, profiles: ProfileLibrary) -> np.ndarray:
    """System consumption (kW) summed over buses for each step."""
    p, _ = scenario_injections(net, scenario, profiles)
    return -p.sum(axis=0)


@dataclass(frozen=True)
class Violation:
    t: int
    kind: str
    element: str
    magnitude: float

    def as_tuple(self):
        return (self.t, self.kind, self.element, self.magnitude)


@dataclass(eq=False)
class FeasibilityVerdict:
    label: int
    pass_fraction: float
    per_step: np.ndarray
    eps_bar: float
    worst_violations: list[Violation] = field(default_factory=list)
    # kind -> element id -> number of failing steps
    violation_counts: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.per_step)

    @property
    def concerning(self) -> bool:
        """Feasible at ``eps_bar`` but with at least one failing step."""
        return self.label == 1 and self.pass_fraction < 1.0

    def label_at(self, eps_bar: float) -> int:
        return int(self.pass_fraction >= eps_bar)

    def dominant_violation(self) -> str | None:
        totals = {k: sum(v.values()) for k, v in self.violation_counts.items() if v}
        if not totals:
            return None
        return max(sorted(totals), key=lambda k: totals[k])


def _step_violations(net: Network, v, P, Q, converged, diverged, t_index) -> tuple[np.ndarray, list[Violation], dict]:
    """Check every step column of a batch solution against the limits."""
    s_max = np.array([ln.s_max for ln in net.lines])
    line_ids = net.line_ids()
    n_t = v.shape[1]
    ok = np.ones(n_t, dtype=bool)
    worst: list[Violation] = []
    counts: dict = {k: {} for k in VIOLATION_KINDS}

    sqrt_vmin, sqrt_vmax = math.sqrt(net.v_min), math.sqrt(net.v_max)
    vm = np.sqrt(np.clip(v, 0, None))
    under = sqrt_vmin - vm
    over = vm - sqrt_vmax
    flow = np.sqrt(P**2 + Q**2)
    thermal = flow - s_max[:, None] if len(s_max) else np.zeros((0, n_t))

    solved = converged & ~diverged
    ok &= solved & ~np.any(under > 0, axis=0) & ~np.any(over > 0, axis=0)
    if len(s_max):
        ok &= ~np.any(thermal > 0, axis=0)
    for c in np.flatnonzero(~ok):
        t = int(t_index[c])
        if not solved[c]:
            worst.append(Violation(t, DIVERGENCE, "network", float("inf")))
            counts[DIVERGENCE]["network"] = counts[DIVERGENCE].get("network", 0) + 1
            continue
        for kind, excess, ids in (
            (UNDERVOLTAGE, under[:, c], net.buses),
            (OVERVOLTAGE, over[:, c], net.buses),
            (THERMAL, thermal[:, c], line_ids),
        ):
            bad = np.flatnonzero(excess > 0)
            if bad.size == 0:
                continue
            k = bad[np.argmax(excess[bad])]
            worst.append(Violation(t, kind, ids[k], float(excess[k])))
            for b in bad:
                counts[kind][ids[b]] = counts[kind].get(ids[b], 0) + 1
    return ok, worst, counts


def evaluate_steps(net: Network, scenario: Scenario, profiles: ProfileLibrary, steps=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Pass flags, violations and counts for the chosen steps (default all)."""
    p, q = scenario_injections(net, scenario, profiles)
    if steps is None:
        steps = np.arange(net.baseline.T)
    steps = np.asarray(steps, dtype=int)
    sol = solve_distflow_batch(net, p[:, steps] / net.base_kva, q[:, steps] / net.base_kva, tol=tol, max_iter=max_iter)
    return _step_violations(net, sol.v, sol.P, sol.Q, sol.converged, sol.diverged, steps)


def evaluate_timestep(net: Network, scenario: Scenario, profiles: ProfileLibrary, t: int, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> tuple[int, list[Violation]]:
    if not 0 <= t < net.baseline.T:
        raise DimensionMismatch(f"time step {t} outside [0, {net.baseline.T})")
    ok, worst, _ = evaluate_steps(net, scenario, profiles, [t], tol=tol, max_iter=max_iter)
    return int(ok[0]), worst


def evaluate_scenario(net: Network, scenario: Scenario, profiles: ProfileLibrary, eps_bar: float = 1.0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> FeasibilityVerdict:
    if not 0.0 <= eps_bar <= 1.0:
        raise ValueError(f"eps_bar must lie in [0, 1], got {eps_bar}")
    ok, worst, counts = evaluate_steps(net, scenario, profiles, tol=tol, max_iter=max_iter)
    frac = float(ok.sum()) / len(ok)
    return FeasibilityVerdict(
        label=int(frac >= eps_bar),
        pass_fraction=frac,
        per_step=ok,
        eps_bar=eps_bar,
        worst_violations=worst,
        violation_counts={k: v for k, v in counts.items() if v},
    )


@dataclass(eq=False)
class FeasibilityOracle:
    """Callable labelling authority bound to one network and profile library."""

    net: Network
    profiles: ProfileLibrary
    eps_bar: float = 1.0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if not 0.0 <= self.eps_bar <= 1.0:
            raise ValueError(f"eps_bar must lie in [0, 1], got {self.eps_bar}")
        self.profiles = dict(self.profiles)

    def __call__(self, scenario: Scenario) -> FeasibilityVerdict:
        return evaluate_scenario(self.net, scenario, self.profiles, self.eps_bar, self.tol, self.max_iter)

    def evaluate_many(self, scenarios: Iterable[Scenario], workers: int = 1) -> list[FeasibilityVerdict]:
        """Verdicts in input order; ``workers > 1`` uses a process pool."""
        scenarios = list(scenarios)
        if workers <= 1 or len(scenarios) < 2:
            return [self(s) for s in scenarios]
        chunk = max(1, len(scenarios) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self, scenarios, chunksize=chunk))


# --------------------------------------------------------------------------
# profile files


def read_profiles(path, kind: str, negate: bool = False) -> ProfileSet:
    """Load a ``type_id,t0,...`` CSV. EV rows must already be <= 0 unless
    ``negate`` flips the sign on ingestion."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "type_id":
            raise ScenarioError(f"{path}: header must start with 'type_id'")
        expected = [f"t{i}" for i in range(len(header) - 1)]
        if header[1:] != expected or not expected:
            raise ScenarioError(f"{path}: header must be type_id,t0,...,t{{T-1}}")
        rows = {}
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise ScenarioError(f"{path}: row {line[0]!r} has {len(line) - 1} values, expected {len(header) - 1}")
            rows[int(line[0])] = [float(x) for x in line[1:]]
    if sorted(rows) != list(range(len(rows))):
        raise ScenarioError(f"{path}: type ids must be 0..n-1")
    shapes = np.array([rows[i] for i in range(len(rows))])
    if negate:
        shapes = -shapes
    return ProfileSet(kind, shapes)


def write_profiles(profiles: ProfileSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["type_id"] + [f"t{i}" for i in range(profiles.T)])
        for k, row in enumerate(profiles.shapes):
            w.writerow([k] + [repr(float(x)) for x in row])


def write_verdicts_csv(path, scenarios: list[Scenario], verdicts: list[FeasibilityVerdict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "total_ev", "total_pv_kw", "pass_fraction", "label", "concerning", "dominant_violation"])
        for s, vd in zip(scenarios, verdicts):
            w.writerow([s.id, s.total_ev, s.total_pv_kw, repr(vd.pass_fraction), vd.label, int(vd.concerning), vd.dominant_violation() or ""])
