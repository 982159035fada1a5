"""Experiment configs, presets and the batch runs behind the CLI.

Everything written to ``report.json`` and ``summary.json`` is a pure function
of the config and seeds. Wall-clock timings go to ``timing.json`` instead so
that reports compare byte-for-byte across reruns.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .active import (
    LabeledPool,
    NoFeasibleScenario,
    QueryStrategy,
    boundary_fraction,
    hosting_capacity,
    hosting_capacity_arrays,
    run_episode,
)
from .fixtures import BUILTIN, DEMO_PV_BUSES, load_builtin_clusters, load_builtin_network
from .grid import Network, load_network, solve_distflow_batch
from .learner import DegenerateData, LinearSVMBoundary
from .oracle import (
    EV,
    KINDS,
    PV,
    VIOLATION_KINDS,
    FeasibilityOracle,
    ProfileSet,
    read_profiles,
    scenario_injections,
    validate_scenario,
    write_verdicts_csv,
)
from .scenarios import PoolConfig, ScenarioPool, generate_pool, load_clusters, read_pool, synth_profiles, validate_pool_config

BUILTIN_PREFIX = "builtin:"
EPS_SWEEP = (1.0, 0.98, 0.95)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment. Relative paths resolve against ``base_dir``; a
    ``builtin:NAME`` path refers to a shipped fixture."""

    network: str
    pool: dict
    profiles: dict = field(default_factory=dict)
    clusters: str | None = None
    strategies: list = field(default_factory=lambda: ["uniform", "entropy", "info_density"])
    B: int = 32
    K: int = 256
    eps_bar: float = 1.0
    episodes: int = 1
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    ground_truth: bool = True
    boundary_delta: float | None = None
    eps_sweep: list = field(default_factory=lambda: list(EPS_SWEEP))
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("experiment config must be a JSON object")
        names = {f.name for f in fields(cls)} - {"base_dir"}
        for k in doc:
            if k not in names:
                raise ConfigError(f"experiment config: unknown key {k!r}")
        for k in ("network", "pool"):
            if k not in doc:
                raise ConfigError(f"experiment config: missing key {k!r}")
        cfg = cls(**doc, base_dir=Path(base_dir))
        cfg.check()
        return cfg

    def check(self) -> None:
        if int(self.episodes) < 1:
            raise ConfigError("episodes must be >= 1")
        if int(self.B) < 1 or int(self.K) < 1:
            raise ConfigError("B and K must be positive")
        if not 0.0 <= float(self.eps_bar) <= 1.0:
            raise ConfigError("eps_bar must lie in [0, 1]")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        try:
            [QueryStrategy.parse(s) for s in self.strategies]
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"strategies: {exc}") from None
        for k in self.hyper:
            if k not in ("hidden", "epochs", "learning_rate", "lr_decay", "l2"):
                raise ConfigError(f"hyper: unknown key {k!r}")
        for kind in self.profiles:
            if kind not in KINDS:
                raise ConfigError(f"profiles: unknown DER kind {kind!r}")

    def resolve(self, path: str) -> Path | str:
        if path.startswith(BUILTIN_PREFIX):
            return path
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(doc, path.parent)


# --------------------------------------------------------------------------
# presets


def _synth(n_types=20, seed=0):
    return {"synth": {"n_types": n_types, "seed": seed}}


def _preset_three_bus():
    return {
        "network": "builtin:three_bus",
        "profiles": {EV: {"shapes": [[-1.0]]}},
        "pool": {"box": {"buses": ["1", "2"], "low": 0.0, "high": 4.0}, "pool_size_target": 2000, "seed": 0},
        "strategies": ["uniform", "entropy", "info_density"],
        "B": 10,
        "K": 10,
        "eps_bar": 1.0,
        "episodes": 10,
        "boundary_delta": 0.4,
    }


def _preset_x1():
    return {
        "network": "builtin:demo_feeder",
        "profiles": {EV: _synth(), PV: _synth()},
        "pool": {
            "ev": {"lambda_range": [1.0, 1.5], "lambda_step": 0.1, "n_ev_types": 20},
            "pv": {"candidate_buses": list(DEMO_PV_BUSES), "n_pv_range": [10, 30], "n_pv_types": 20, "plant_kw": 8.5},
            "pool_size_target": 16000,
            "seed": 0,
        },
        "strategies": ["uniform", "entropy", "info_density"],
        "B": 32,
        "K": 256,
        "eps_bar": 0.98,
        "episodes": 20,
    }


def _preset_coordination(n_types):
    # the library itself has n_types evenly spread windows
    def build():
        return {
            "network": "builtin:demo_feeder",
            "profiles": {EV: _synth(n_types)},
            "pool": {
                "ev": {"lambda_range": [1.0, 12.0], "lambda_step": 0.5, "n_ev_types": n_types},
                "pool_size_target": 2000,
                "seed": 0,
            },
            "strategies": ["entropy"],
            "B": 32,
            "K": 16,
            "eps_bar": 0.98,
        }

    return build


def _preset_cluster(cid):
    def build():
        return {
            "network": "builtin:demo_feeder",
            "clusters": "builtin:demo_clusters",
            "profiles": {EV: _synth(), PV: _synth()},
            "pool": {
                "ev": {"cluster": cid, "lambda_range": [4.0, 24.0], "lambda_step": 2.0, "n_ev_types": 20},
                "pv": {"candidate_buses": list(DEMO_PV_BUSES), "n_pv_range": [0, 6], "n_pv_types": 20, "plant_kw": 25.0},
                "pool_size_target": 1500,
                "seed": 0,
            },
            "strategies": ["entropy"],
            "B": 32,
            "K": 16,
            "eps_bar": 0.98,
        }

    return build


def _preset_colocation():
    return {
        "network": "builtin:demo_feeder",
        "profiles": {EV: _synth(), PV: _synth()},
        "pool": {
            "ev": {"lambda_range": [1.0, 3.0], "lambda_step": 0.1, "n_ev_types": 20},
            "pv": {"n_pv_types": 20, "plant_kw": 5.0},
            "colocate_pv_with_ev": True,
            "pool_size_target": 2000,
            "seed": 0,
        },
        "strategies": ["entropy"],
        "B": 32,
        "K": 16,
        "eps_bar": 0.98,
    }


PRESETS = {
    "three_bus": _preset_three_bus,
    "x1": _preset_x1,
    "coordination_1": _preset_coordination(1),
    "coordination_5": _preset_coordination(5),
    "coordination_20": _preset_coordination(20),
    "cluster_A": _preset_cluster("A"),
    "cluster_B": _preset_cluster("B"),
    "colocation": _preset_colocation,
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return ExperimentConfig.from_dict(PRESETS[name]())


# --------------------------------------------------------------------------
# loading


@dataclass(eq=False)
class Context:
    config: ExperimentConfig
    net: Network
    clusters: dict
    profiles: dict
    pool: ScenarioPool

    def oracle(self, eps_bar: float | None = None) -> FeasibilityOracle:
        return FeasibilityOracle(self.net, self.profiles, self.config.eps_bar if eps_bar is None else eps_bar)


def load_network_ref(ref, base_dir=".") -> Network:
    ref = str(ref)
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name not in BUILTIN or name.endswith("clusters"):
            raise ConfigError(f"unknown builtin network {name!r}")
        return load_builtin_network(name)
    p = Path(ref)
    return load_network(p if p.is_absolute() else Path(base_dir) / p)


def load_clusters_ref(ref, base_dir=".") -> dict:
    ref = str(ref)
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        if name not in BUILTIN:
            raise ConfigError(f"unknown builtin cluster file {name!r}")
        return load_builtin_clusters(name)
    p = Path(ref)
    return load_clusters(p if p.is_absolute() else Path(base_dir) / p)


def _load_profile(kind: str, spec: dict, cfg: ExperimentConfig, T: int) -> ProfileSet:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(f"profiles.{kind}: expected exactly one of 'csv', 'synth', 'shapes'")
    (how, arg), = spec.items()
    if how == "shapes":
        return ProfileSet(kind, np.asarray(arg, dtype=float))
    if how == "csv":
        if isinstance(arg, str):
            arg = {"path": arg}
        extra = set(arg) - {"path", "negate"}
        if extra:
            raise ConfigError(f"profiles.{kind}.csv: unknown key {sorted(extra)[0]!r}")
        return read_profiles(cfg.resolve(arg["path"]), kind, bool(arg.get("negate", False)))
    if how == "synth":
        extra = set(arg) - {"n_types", "params", "seed"}
        if extra:
            raise ConfigError(f"profiles.{kind}.synth: unknown key {sorted(extra)[0]!r}")
        rng = np.random.default_rng(int(arg.get("seed", 0)))
        return synth_profiles(kind, int(arg.get("n_types", 20)), T, arg.get("params"), rng)
    raise ConfigError(f"profiles.{kind}: unknown source {how!r}")


def load_profiles(cfg: ExperimentConfig, T: int) -> dict:
    return {kind: _load_profile(kind, spec, cfg, T) for kind, spec in cfg.profiles.items()}


def build_pool(cfg: ExperimentConfig, net: Network, clusters: dict, profiles: dict) -> ScenarioPool:
    doc = cfg.pool
    if not isinstance(doc, dict):
        raise ConfigError("pool must be an object")
    if "file" in doc:
        if set(doc) != {"file"}:
            raise ConfigError("pool: 'file' cannot be combined with other keys")
        return read_pool(cfg.resolve(doc["file"]), net.buses)
    pc = PoolConfig.from_dict(doc)
    problems = validate_pool_config(pc, net, clusters, profiles)
    if problems:
        raise ConfigError("; ".join(problems))
    return generate_pool(pc, net, clusters)


def load_context(cfg: ExperimentConfig) -> Context:
    net = load_network_ref(cfg.network, cfg.base_dir)
    clusters = load_clusters_ref(cfg.clusters, cfg.base_dir) if cfg.clusters else {}
    profiles = load_profiles(cfg, net.baseline.T)
    pool = build_pool(cfg, net, clusters, profiles)
    if len(pool) == 0:
        raise ConfigError("scenario pool is empty")
    for s in pool.scenarios:
        problems = validate_scenario(net, s, profiles)
        if problems:
            raise ConfigError(problems[0])
    return Context(cfg, net, clusters, profiles, pool)


# --------------------------------------------------------------------------
# output helpers


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


def _f(x) -> str:
    return repr(float(x))


def write_frontier_csv(path, pool: ScenarioPool, ids, labels=None) -> None:
    """Columns ``scenario_id,total_ev,total_pv_kw,combined,label``."""
    pos = {int(i): k for k, i in enumerate(pool.ids)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "total_ev", "total_pv_kw", "combined", "label"])
        for j, sid in enumerate(ids):
            s = pool.scenarios[pos[int(sid)]]
            lab = 1 if labels is None else int(labels[j])
            w.writerow([s.id, _f(s.total_ev), _f(s.total_pv_kw), _f(s.total_ev + s.total_pv_kw), lab])


def violation_histogram(verdicts) -> dict:
    """kind -> element -> number of failing steps, summed over verdicts."""
    hist = {k: {} for k in VIOLATION_KINDS}
    for vd in verdicts:
        for kind, per in vd.violation_counts.items():
            for el, n in per.items():
                hist[kind][el] = hist[kind].get(el, 0) + int(n)
    return {k: dict(sorted(v.items())) for k, v in hist.items() if v}


def violation_totals(hist: dict) -> dict:
    return {k: int(sum(v.values())) for k, v in hist.items()}


def dominant_kind(hist: dict) -> str | None:
    totals = violation_totals(hist)
    if not totals:
        return None
    return max(sorted(totals), key=lambda k: totals[k])


def write_violations_csv(path, hist: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "element", "failing_steps"])
        for kind in VIOLATION_KINDS:
            for el, n in hist.get(kind, {}).items():
                w.writerow([kind, el, n])


def scenario_diagnostics(ctx: Context, scenario) -> dict:
    """Per-step aggregate load, voltage band and line loading for one scenario."""
    net = ctx.net
    p, q = scenario_injections(net, scenario, ctx.profiles)
    sol = solve_distflow_batch(net, p / net.base_kva, q / net.base_kva)
    vm = np.sqrt(np.clip(sol.v, 0, None))
    s_max = np.array([ln.s_max for ln in net.lines])
    loading = 100.0 * np.sqrt(sol.P**2 + sol.Q**2) / s_max[:, None]
    return {
        "aggregate_kw": -p.sum(axis=0),
        "baseline_kw": net.baseline.d.sum(axis=0),
        "v_min_pu": vm.min(axis=0),
        "v_max_pu": vm.max(axis=0),
        "bus_v_min": vm.min(axis=1),
        "bus_v_max": vm.max(axis=1),
        "line_max_loading_pct": loading.max(axis=1),
        "converged": sol.converged & ~sol.diverged,
    }


def write_diagnostics(ctx: Context, scenario, out: Path, prefix: str) -> None:
    d = scenario_diagnostics(ctx, scenario)
    with open(out / f"{prefix}_aggregate_load.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "baseline_kw", "aggregate_kw", "v_min_pu", "v_max_pu", "converged"])
        for t in range(len(d["aggregate_kw"])):
            w.writerow([t, _f(d["baseline_kw"][t]), _f(d["aggregate_kw"][t]), _f(d["v_min_pu"][t]), _f(d["v_max_pu"][t]), int(d["converged"][t])])
    with open(out / f"{prefix}_buses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "v_min_pu", "v_max_pu"])
        for i, b in enumerate(ctx.net.buses):
            w.writerow([b, _f(d["bus_v_min"][i]), _f(d["bus_v_max"][i])])
    with open(out / f"{prefix}_lines.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "max_loading_pct"])
        for lid, val in zip(ctx.net.line_ids(), d["line_max_loading_pct"]):
            w.writerow([lid, _f(val)])


# --------------------------------------------------------------------------
# exhaustive evaluation


@dataclass
class ExhaustiveResult:
    verdicts: list
    eps_bar: float
    summary: dict

    @property
    def labels(self) -> np.ndarray:
        return np.array([v.label for v in self.verdicts], dtype=int)


def _hc_or_none(pool, labels):
    try:
        return hosting_capacity_arrays(pool.ids, pool.total_ev, pool.total_pv_kw, labels).to_dict()
    except NoFeasibleScenario:
        return None


def eval_exhaustive(ctx: Context, eps_bar: float | None = None, workers: int = 1) -> ExhaustiveResult:
    """Label every pool scenario. The verdicts carry pass fractions, so the
    ``eps_sweep`` thresholds are re-labelled without re-solving."""
    eps = ctx.config.eps_bar if eps_bar is None else eps_bar
    verdicts = ctx.oracle(eps).evaluate_many(ctx.pool.scenarios, workers=workers)
    pool = ctx.pool
    labels = np.array([v.label for v in verdicts], dtype=int)
    frac = np.array([v.pass_fraction for v in verdicts])
    hist = violation_histogram(verdicts)
    sweep = {}
    for e in sorted(set(float(x) for x in ctx.config.eps_sweep) | {eps}, reverse=True):
        lab = (frac >= e).astype(int)
        sweep[repr(e)] = {"feasible_fraction": float(lab.mean()), "hc": _hc_or_none(pool, lab)}
    summary = {
        "n_scenarios": len(pool),
        "eps_bar": eps,
        "feasible_fraction": float(labels.mean()),
        "concerning_fraction": float(np.mean([v.concerning for v in verdicts])),
        "hc": _hc_or_none(pool, labels),
        "eps_sweep": sweep,
        "violations": hist,
        "violation_totals": violation_totals(hist),
        "dominant_violation": dominant_kind(hist),
        "dominant_violation_infeasible": dominant_kind(violation_histogram([v for v in verdicts if v.label == 0])),
    }
    return ExhaustiveResult(verdicts, eps, summary)


def write_exhaustive(ctx: Context, result: ExhaustiveResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_verdicts_csv(out / "labeled.csv", ctx.pool.scenarios, result.verdicts)
    dump_json(result.summary, out / "summary.json")
    write_violations_csv(out / "violations.csv", result.summary["violations"])
    hc = result.summary["hc"]
    if hc is not None:
        write_frontier_csv(out / "frontier.csv", ctx.pool, hc["frontier_ids"])


# --------------------------------------------------------------------------
# active-learning runs


class CachedOracle:
    """Memoises verdicts by scenario id; the oracle is deterministic, so a
    hit returns exactly what a fresh evaluation would."""

    def __init__(self, oracle: FeasibilityOracle, verdicts: dict | None = None):
        self.oracle = oracle
        self.cache = dict(verdicts or {})

    def __call__(self, scenario):
        return self.evaluate_many([scenario])[0]

    def evaluate_many(self, scenarios, workers: int = 1):
        scenarios = list(scenarios)
        missing = [s for s in scenarios if s.id not in self.cache]
        if missing:
            for s, v in zip(missing, self.oracle.evaluate_many(missing, workers=workers)):
                self.cache[s.id] = v
        return [self.cache[s.id] for s in scenarios]


def _active_columns(X: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.ptp(X, axis=0) > 0) if len(X) else np.arange(X.shape[1])


def exhaustive_boundary(pool: ScenarioPool, labels) -> tuple[LinearSVMBoundary, np.ndarray]:
    """Linear boundary fitted on every label, in the coordinates that vary
    across the pool (the box axes for a box pool)."""
    cols = _active_columns(pool.features)
    svm = LinearSVMBoundary().fit(pool.features[:, cols], labels)
    return svm, cols


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std()) if len(a) > 1 else 0.0}


def _first_reach(curve_labels, curve_hc, target) -> int | None:
    for n, hc in zip(curve_labels, curve_hc):
        if hc >= target:
            return int(n)
    return None


def run_experiment(ctx: Context, out: Path, workers: int = 1, exhaustive: ExhaustiveResult | None = None) -> dict:
    """Run every strategy for ``episodes`` episodes and write the report.

    Episode ``i`` uses seed ``seed + i`` for every strategy, so strategies are
    compared on identical randomness. Raises NoFeasibleScenario if an episode
    ends without a feasible scenario.
    """
    cfg = ctx.config
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("episodes", "theta", "frontier"):
        (out / sub).mkdir(exist_ok=True)
    strategies = [QueryStrategy.parse(s) for s in cfg.strategies]
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate strategies")
    pool = ctx.pool
    base_oracle = ctx.oracle()

    if exhaustive is None and (cfg.ground_truth or cfg.boundary_delta is not None):
        exhaustive = eval_exhaustive(ctx, workers=workers)
    truth = None
    prefill = {}
    if exhaustive is not None:
        if exhaustive.eps_bar != cfg.eps_bar:
            raise ConfigError("ground-truth labels were computed at a different eps_bar")
        truth = exhaustive.summary["hc"]
        prefill = {s.id: v for s, v in zip(pool.scenarios, exhaustive.verdicts)}

    boundary = None
    if cfg.boundary_delta is not None:
        try:
            boundary = exhaustive_boundary(pool, exhaustive.labels)
        except DegenerateData as exc:
            raise NoFeasibleScenario(f"cannot fit the exhaustive boundary: {exc}") from None

    report = {
        "config": cfg.to_dict(),
        "pool_size": len(pool),
        "ground_truth": truth,
        "strategies": {},
    }
    timing = {}
    curve_rows = []
    for strat in strategies:
        oracle = CachedOracle(base_oracle, prefill)
        episodes = []
        all_verdicts = []
        t0 = time.perf_counter()
        for i in range(cfg.episodes):
            seed = cfg.seed + i
            params, labeled, hist = run_episode(pool, oracle, strat, cfg.B, cfg.K, cfg.hyper, seed, workers)
            tag = f"{strat.name}_ep{i}"
            try:
                hc = hosting_capacity(labeled)
            except NoFeasibleScenario:
                raise NoFeasibleScenario(f"{strat.name} episode {i}: no feasible scenario among {len(labeled)} labels") from None
            entry = {
                "episode": i,
                "seed": seed,
                "n_labels": len(labeled),
                "hc": hc.to_dict(),
                "curve_n_labels": [r["n_labeled"] for r in hist.rounds],
                "curve_hc_combined": hist.curve(),
            }
            if boundary is not None:
                svm, cols = boundary
                entry["boundary_fraction"] = boundary_fraction(labeled.X[:, cols], svm.coef_, svm.intercept_, cfg.boundary_delta)
            episodes.append(entry)
            all_verdicts.extend(labeled.verdicts.values())
            dump_json({"history": hist.to_dict(), "theta": f"theta/{tag}.json", "hc": hc.to_dict()}, out / "episodes" / f"{tag}.json")
            dump_json(params.to_dict(), out / "theta" / f"{tag}.json")
            write_frontier_csv(out / "frontier" / f"{tag}.csv", pool, hc.frontier_ids)
            for r in hist.rounds:
                curve_rows.append([strat.name, i, r["round"], r["n_labeled"], _f(r["hc_ev"]), _f(r["hc_pv_kw"]), _f(r["hc_combined"])])
        timing[strat.name] = time.perf_counter() - t0

        n_rounds = min(len(e["curve_hc_combined"]) for e in episodes)
        curves = np.array([e["curve_hc_combined"][:n_rounds] for e in episodes])
        summary = {
            "episodes": episodes,
            "hc_combined": _stats([e["hc"]["max_combined"] for e in episodes]),
            "hc_ev": _stats([e["hc"]["max_ev_count"] for e in episodes]),
            "hc_pv_kw": _stats([e["hc"]["max_pv_kw"] for e in episodes]),
            "curve": {
                "n_labels": episodes[0]["curve_n_labels"][:n_rounds],
                "mean": curves.mean(axis=0).tolist(),
                "std": (curves.std(axis=0) if len(episodes) > 1 else np.zeros(n_rounds)).tolist(),
            },
        }
        hist_v = violation_histogram(all_verdicts)
        summary["violations"] = hist_v
        summary["dominant_violation"] = dominant_kind(hist_v)
        if boundary is not None:
            summary["boundary_fraction"] = _stats([e["boundary_fraction"] for e in episodes])
        report["strategies"][strat.name] = summary

        rep_id = episodes[0]["hc"]["argmax_ids"]["combined"]
        rep = pool.scenarios[int(np.flatnonzero(pool.ids == rep_id)[0])]
        write_diagnostics(ctx, rep, out, f"representative_{strat.name}")
        summary["representative_scenario"] = rep_id

    if len(strategies) > 1:
        if truth:
            target = truth["max_combined"]
        else:
            target = max(e["hc"]["max_combined"] for s in report["strategies"].values() for e in s["episodes"])
        reach = {}
        for name, s in report["strategies"].items():
            hits = [_first_reach(e["curve_n_labels"], e["curve_hc_combined"], target) for e in s["episodes"]]
            done = [h for h in hits if h is not None]
            reach[name] = {
                "reached": len(done),
                "mean_labels": float(np.mean(done)) if done else None,
            }
        ranked = sorted((v["mean_labels"], name) for name, v in reach.items() if v["reached"] == cfg.episodes)
        report["comparison"] = {"target_hc_combined": target, "first_to_target": ranked[0][1] if ranked else None, "reach": reach}

    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "episode", "round", "n_labels", "hc_ev", "hc_pv_kw", "hc_combined"])
        w.writerows(curve_rows)
    dump_json(report, out / "report.json")
    dump_json({"wall_time_s": timing, "order_fastest_first": sorted(timing, key=timing.get)}, out / "timing.json")
    return {"report": report, "timing": timing}
