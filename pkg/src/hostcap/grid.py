"""Radial network model and DistFlow solvers.

Quantities inside the solvers are per-unit on ``Network.base_kva``. The public
solve functions take injections in kW / kvar and convert on entry.

Sign convention: ``p`` and ``q`` are net injections, so a load is negative.
Line flows ``P``, ``Q`` are measured at the sending (parent) end of each line.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
# below this squared voltage the operating point is treated as collapsed
COLLAPSE_V = 0.25


class GridError(Exception):
    pass


class NotRadial(GridError):
    pass


class Diverged(GridError):
    pass


class NetworkFormatError(GridError, ValueError):
    """Raised when a network document is malformed. ``key`` names the culprit."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DimensionMismatch(GridError, ValueError):
    pass


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r: float
    x: float
    s_max: float


@dataclass(frozen=True, eq=False)
class BaselineProfiles:
    """Baseline demand, ``d`` (kW) and ``e`` (kvar), shaped ``[bus, T]``."""

    d: np.ndarray
    e: np.ndarray

    @property
    def T(self) -> int:
        return self.d.shape[1]

    @classmethod
    def zeros(cls, n_bus: int, T: int = 1) -> "BaselineProfiles":
        return cls(np.zeros((n_bus, T)), np.zeros((n_bus, T)))


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[str, ...]
    lines: tuple[Line, ...]
    root_bus: str
    baseline: BaselineProfiles
    v_root: float = 1.0
    v_min: float = 0.95**2
    v_max: float = 1.05**2
    base_kva: float = 100.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {b: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus) -> int:
        try:
            return self._index[str(bus)]
        except KeyError:
            raise KeyError(f"unknown bus {bus!r}") from None

    def has_bus(self, bus) -> bool:
        return str(bus) in self._index

    def line_ids(self) -> list[str]:
        return [f"{ln.from_bus}-{ln.to_bus}" for ln in self.lines]


@dataclass(eq=False)
class PowerFlowSolution:
    """Squared voltages ``v`` per bus; ``P``, ``Q``, ``l`` per line, all p.u."""

    v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    converged: bool
    iterations: int
    residual: float

    @property
    def voltage_pu(self) -> np.ndarray:
        return np.sqrt(self.v)


# --------------------------------------------------------------------------
# validation and topology


def validate_network(net: Network) -> list[str]:
    """Return every problem found in ``net``; an empty list means valid."""
    problems = []
    n = net.n_bus
    if len(set(net.buses)) != n:
        problems.append("duplicate bus id")
    if net.root_bus not in net._index:
        problems.append(f"root bus {net.root_bus!r} not in buses")
    if len(net.lines) != n - 1:
        problems.append(f"not radial: {len(net.lines)} lines for {n} buses")

    adjacency: dict[str, list[str]] = {b: [] for b in net.buses}
    for k, ln in enumerate(net.lines):
        tag = f"line {k} ({ln.from_bus}-{ln.to_bus})"
        for end in (ln.from_bus, ln.to_bus):
            if end not in adjacency:
                problems.append(f"{tag}: unknown bus {end!r}")
        if ln.from_bus == ln.to_bus:
            problems.append(f"{tag}: self loop")
        if not np.isfinite(ln.r) or ln.r < 0:
            problems.append(f"{tag}: negative resistance" if ln.r < 0 else f"{tag}: non-finite resistance")
        if not np.isfinite(ln.x):
            problems.append(f"{tag}: non-finite reactance")
        if not (np.isfinite(ln.s_max) and ln.s_max > 0):
            problems.append(f"{tag}: s_max must be positive")
        if ln.from_bus in adjacency and ln.to_bus in adjacency:
            adjacency[ln.from_bus].append(ln.to_bus)
            adjacency[ln.to_bus].append(ln.from_bus)

    if net.root_bus in adjacency:
        seen = {net.root_bus}
        queue = deque([net.root_bus])
        while queue:
            b = queue.popleft()
            for nb in adjacency[b]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        missing = [b for b in net.buses if b not in seen]
        if missing:
            problems.append(f"disconnected buses: {missing}")
    if not (net.v_min < net.v_max):
        problems.append("v_min must be below v_max")
    if not (np.isfinite(net.v_root) and net.v_root > 0):
        problems.append("v_root must be positive")
    if not (net.base_kva > 0):
        problems.append("base_kva must be positive")

    base = net.baseline
    for name, arr in (("d", base.d), ("e", base.e)):
        if arr.ndim != 2 or arr.shape[0] != n:
            problems.append(f"baseline dimension mismatch: {name} has shape {arr.shape}, expected ({n}, T)")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"baseline {name} has non-finite entries")
        elif np.any(arr < 0):
            problems.append(f"baseline {name} has negative entries")
    if base.d.shape != base.e.shape:
        problems.append("baseline dimension mismatch: d and e differ in shape")
    return problems


def topological_order(net: Network) -> list[str]:
    """Buses in root-to-leaf (breadth-first) order; children keep line order."""
    problems = validate_network(net)
    if problems:
        raise NotRadial("; ".join(problems))
    children: dict[str, list[str]] = {b: [] for b in net.buses}
    for ln in net.lines:
        children[ln.from_bus].append(ln.to_bus)
        children[ln.to_bus].append(ln.from_bus)
    order = [net.root_bus]
    seen = {net.root_bus}
    i = 0
    while i < len(order):
        for nb in children[order[i]]:
            if nb not in seen:
                seen.add(nb)
                order.append(nb)
        i += 1
    return order


@dataclass(frozen=True, eq=False)
class _Tree:
    """Precomputed sweep structure.

    ``parent[e]`` / ``child[e]`` are bus indices of line ``e`` oriented away
    from the root. ``sub_bus[e, k]`` is 1 when bus ``k`` lies at or below the
    child end of ``e``; ``sub_line[e, f]`` is 1 when line ``f`` is ``e`` or
    lies below it.
    """

    parent: np.ndarray
    child: np.ndarray
    r: np.ndarray
    x: np.ndarray
    sub_bus: np.ndarray
    sub_line: np.ndarray
    root: int


_TREE_CACHE: dict[int, tuple[Network, _Tree]] = {}


def _tree(net: Network) -> _Tree:
    hit = _TREE_CACHE.get(id(net))
    if hit is not None and hit[0] is net:
        return hit[1]
    order = topological_order(net)
    depth = {b: i for i, b in enumerate(order)}
    n_line = len(net.lines)
    parent = np.empty(n_line, dtype=int)
    child = np.empty(n_line, dtype=int)
    for e, ln in enumerate(net.lines):
        a, b = ln.from_bus, ln.to_bus
        if depth[a] > depth[b]:
            a, b = b, a
        parent[e] = net.bus_index(a)
        child[e] = net.bus_index(b)
    line_into = {int(c): e for e, c in enumerate(child)}
    sub_bus = np.zeros((n_line, net.n_bus))
    sub_line = np.zeros((n_line, n_line))
    for e in range(n_line):
        # walk from each line up to the root, marking ancestors
        f = e
        while True:
            sub_line[f, e] = 1.0
            sub_bus[f, child[e]] = 1.0
            up = line_into.get(int(parent[f]))
            if up is None:
                break
            f = up
    r = np.array([ln.r for ln in net.lines], dtype=float)
    x = np.array([ln.x for ln in net.lines], dtype=float)
    tree = _Tree(parent, child, r, x, sub_bus, sub_line, net.bus_index(net.root_bus))
    if len(_TREE_CACHE) > 64:
        _TREE_CACHE.clear()
    _TREE_CACHE[id(net)] = (net, tree)
    return tree


def _pass(tree: _Tree, v_root: float, p, q, l):
    """One backward/forward pass for fixed squared currents ``l``.

    Works column-wise on ``[bus, T]`` arrays.
    """
    P = tree.sub_line @ (tree.r[:, None] * l) - tree.sub_bus @ p
    Q = tree.sub_line @ (tree.x[:, None] * l) - tree.sub_bus @ q
    # v_i - v_j = 2 (r P + x Q) - (r^2 + x^2) l with P, Q at the sending end
    drop = 2.0 * (tree.r[:, None] * P + tree.x[:, None] * Q) - (tree.r**2 + tree.x**2)[:, None] * l
    v = np.full(p.shape, float(v_root))
    # bus voltage = root voltage minus the drops of every line on its path
    v[tree.child] = v_root - tree.sub_line.T @ drop
    return P, Q, v


@dataclass(eq=False)
class BatchSolution:
    """Column-stacked solutions for several snapshots (one per column)."""

    v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray
    iterations: int
    residual: np.ndarray

    def column(self, t: int) -> PowerFlowSolution:
        return PowerFlowSolution(
            v=self.v[:, t].copy(),
            P=self.P[:, t].copy(),
            Q=self.Q[:, t].copy(),
            l=self.l[:, t].copy(),
            converged=bool(self.converged[t]),
            iterations=self.iterations,
            residual=float(self.residual[t]),
        )


def solve_distflow_batch(net: Network, p_pu, q_pu, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> BatchSolution:
    """Exact DistFlow by fixed-point sweep on ``[bus, T]`` per-unit injections.

    Each iteration holds ``l`` fixed, solves the linear flow and voltage
    equations exactly, then measures how far ``l`` is from
    ``(P^2 + Q^2) / v_sending``; that gap is the only nonzero residual.
    Columns whose voltage falls below ``COLLAPSE_V`` are frozen and flagged
    as diverged instead of raising.
    """
    tree = _tree(net)
    p = np.asarray(p_pu, dtype=float)
    q = np.asarray(q_pu, dtype=float)
    if p.ndim != 2 or p.shape[0] != net.n_bus or q.shape != p.shape:
        raise DimensionMismatch(f"injections must be shaped ({net.n_bus}, T), got {p.shape} and {q.shape}")
    n_t = p.shape[1]
    l = np.zeros((len(net.lines), n_t))
    active = np.ones(n_t, dtype=bool)
    converged = np.zeros(n_t, dtype=bool)
    diverged = np.zeros(n_t, dtype=bool)
    residual = np.full(n_t, np.inf)
    best = np.full(n_t, np.inf)
    improved = np.zeros(n_t, dtype=bool)
    P = np.zeros_like(l)
    Q = np.zeros_like(l)
    v = np.full(p.shape, float(net.v_root))
    it = 0
    for it in range(1, max_iter + 1):
        cols = np.flatnonzero(active)
        Pa, Qa, va = _pass(tree, net.v_root, p[:, cols], q[:, cols], l[:, cols])
        P[:, cols], Q[:, cols], v[:, cols] = Pa, Qa, va
        collapsed = np.min(va, axis=0) < COLLAPSE_V
        with np.errstate(divide="ignore", invalid="ignore"):
            l_new = (Pa**2 + Qa**2) / va[tree.parent]
        res = np.max(np.abs(l_new - l[:, cols]), axis=0) if len(net.lines) else np.zeros(len(cols))
        res = np.where(np.isfinite(res), res, np.inf)
        residual[cols] = res
        improved[cols] |= (res < best[cols]) & np.isfinite(best[cols])
        best[cols] = np.minimum(best[cols], res)

        bad = collapsed | ~np.isfinite(res)
        diverged[cols[bad]] = True
        done = (res <= tol) & ~bad
        converged[cols[done]] = True
        active[cols[bad | done]] = False
        keep = ~(bad | done)
        l[:, cols[keep]] = l_new[:, keep]
        if not active.any():
            break
    # residual that never decreased over the whole run means no progress at all
    stalled = active & ~improved
    diverged |= stalled
    return BatchSolution(v, P, Q, l, converged, diverged, it, residual)


def _to_pu(net: Network, p_kw, q_kvar):
    p = np.asarray(p_kw, dtype=float)
    q = np.asarray(q_kvar, dtype=float)
    if p.shape != (net.n_bus,) or q.shape != (net.n_bus,):
        raise DimensionMismatch(f"expected {net.n_bus} injections per bus, got {p.shape} and {q.shape}")
    return p / net.base_kva, q / net.base_kva


def solve_distflow(net: Network, p, q, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PowerFlowSolution:
    """Solve the nonlinear DistFlow equations for one snapshot.

    ``p``/``q`` are per-bus net injections in kW/kvar. Raises ``Diverged``
    when the sweep collapses the voltage or makes no progress; a run that
    merely hits ``max_iter`` returns with ``converged=False``.
    """
    p_pu, q_pu = _to_pu(net, p, q)
    batch = solve_distflow_batch(net, p_pu[:, None], q_pu[:, None], tol=tol, max_iter=max_iter)
    if batch.diverged[0]:
        raise Diverged(f"sweep diverged (min v = {np.min(batch.v):.4f}, residual = {batch.residual[0]:.3g})")
    return batch.column(0)


def solve_lindistflow(net: Network, p, q) -> PowerFlowSolution:
    """Single lossless pass (``l = 0``).

    ``residual`` reports the largest dropped loss term, using the squared
    current implied by the lossless flows.
    """
    p_pu, q_pu = _to_pu(net, p, q)
    tree = _tree(net)
    zero = np.zeros((len(net.lines), 1))
    P, Q, v = _pass(tree, net.v_root, p_pu[:, None], q_pu[:, None], zero)
    P, Q, v = P[:, 0], Q[:, 0], v[:, 0]
    if len(net.lines):
        with np.errstate(divide="ignore", invalid="ignore"):
            l_est = (P**2 + Q**2) / v[tree.parent]
        neglected = np.concatenate([tree.r * l_est, np.abs(tree.x) * l_est, (tree.r**2 + tree.x**2) * l_est])
        residual = float(np.max(neglected))
    else:
        residual = 0.0
    return PowerFlowSolution(v=v, P=P, Q=Q, l=np.zeros(len(net.lines)), converged=True, iterations=1, residual=residual)


def oriented_lines(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """(parent, child) bus indices per line, oriented away from the root."""
    tree = _tree(net)
    return tree.parent.copy(), tree.child.copy()


# --------------------------------------------------------------------------
# file format

_TOP_KEYS = {"base_kva", "v_root_pu", "v_min_pu", "v_max_pu", "buses", "lines", "baseline"}
_REQUIRED_TOP = {"buses", "lines"}
_BUS_KEYS = {"id"}
_LINE_KEYS = {"from", "to", "r_pu", "x_pu", "s_max_pu"}
_BASELINE_KEYS = {"T", "d_kw", "e_kvar"}


def _check_keys(obj, allowed: set, required: set, where: str):
    if not isinstance(obj, dict):
        raise NetworkFormatError(f"{where}: expected an object", key=where)
    for k in obj:
        if k not in allowed:
            raise NetworkFormatError(f"{where}: unknown key {k!r}", key=k)
    for k in sorted(required):
        if k not in obj:
            raise NetworkFormatError(f"{where}: missing key {k!r}", key=k)


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkFormatError(f"{key}: expected a number, got {value!r}", key=key)
    return float(value)


def network_from_dict(doc: dict) -> Network:
    """Build a ``Network`` from the JSON document layout. Voltages in the
    document are magnitudes; the model stores their squares."""
    _check_keys(doc, _TOP_KEYS, _REQUIRED_TOP, "network")
    buses = doc["buses"]
    if not isinstance(buses, list) or not buses:
        raise NetworkFormatError("buses: expected a non-empty list", key="buses")
    ids = []
    for b in buses:
        _check_keys(b, _BUS_KEYS, _BUS_KEYS, "buses[]")
        ids.append(str(b["id"]))
    lines = doc["lines"]
    if not isinstance(lines, list):
        raise NetworkFormatError("lines: expected a list", key="lines")
    parsed = []
    for ln in lines:
        _check_keys(ln, _LINE_KEYS, _LINE_KEYS, "lines[]")
        parsed.append(
            Line(
                str(ln["from"]),
                str(ln["to"]),
                _number(ln["r_pu"], "r_pu"),
                _number(ln["x_pu"], "x_pu"),
                _number(ln["s_max_pu"], "s_max_pu"),
            )
        )
    n = len(ids)
    if "baseline" in doc:
        bl = doc["baseline"]
        _check_keys(bl, _BASELINE_KEYS, _BASELINE_KEYS, "baseline")
        T = bl["T"]
        if isinstance(T, bool) or not isinstance(T, int) or T < 1:
            raise NetworkFormatError("T: expected a positive integer", key="T")
        try:
            d = np.array(bl["d_kw"], dtype=float)
            e = np.array(bl["e_kvar"], dtype=float)
        except (TypeError, ValueError):
            raise NetworkFormatError("baseline: load matrices must be numeric", key="d_kw") from None
        for name, arr in (("d_kw", d), ("e_kvar", e)):
            if arr.shape != (n, T):
                raise NetworkFormatError(f"{name}: expected shape ({n}, {T}), got {arr.shape}", key=name)
        baseline = BaselineProfiles(d, e)
    else:
        baseline = BaselineProfiles.zeros(n)
    v_root = _number(doc.get("v_root_pu", 1.0), "v_root_pu")
    v_min = _number(doc.get("v_min_pu", 0.95), "v_min_pu")
    v_max = _number(doc.get("v_max_pu", 1.05), "v_max_pu")
    return Network(
        buses=tuple(ids),
        lines=tuple(parsed),
        root_bus=ids[0],
        baseline=baseline,
        v_root=v_root**2,
        v_min=v_min**2,
        v_max=v_max**2,
        base_kva=_number(doc.get("base_kva", 100.0), "base_kva"),
    )


def network_to_dict(net: Network) -> dict:
    return {
        "base_kva": net.base_kva,
        "v_root_pu": float(np.sqrt(net.v_root)),
        "v_min_pu": float(np.sqrt(net.v_min)),
        "v_max_pu": float(np.sqrt(net.v_max)),
        "buses": [{"id": b} for b in net.buses],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r_pu": ln.r, "x_pu": ln.x, "s_max_pu": ln.s_max}
            for ln in net.lines
        ],
        "baseline": {
            "T": net.baseline.T,
            "d_kw": net.baseline.d.tolist(),
            "e_kvar": net.baseline.e.tolist(),
        },
    }


def load_network(path) -> Network:
    """Read a network file. The first bus listed is the substation (root)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})", key=None) from None
    return network_from_dict(doc)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")
