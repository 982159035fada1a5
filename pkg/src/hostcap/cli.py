"""``hostcap`` command line.

Exit codes: 0 success, 2 invalid input or configuration, 3 power flow
divergence, 4 no feasible scenario.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .active import NoFeasibleScenario
from .experiments import (
    PRESETS,
    ConfigError,
    dump_json,
    eval_exhaustive,
    load_context,
    load_experiment,
    load_network_ref,
    load_clusters_ref,
    preset,
    run_experiment,
    write_diagnostics,
    write_exhaustive,
)
from .grid import Diverged, GridError, NotRadial, solve_distflow, solve_lindistflow, validate_network
from .oracle import ScenarioError
from .scenarios import ConfigInvalid, PoolConfig, generate_pool, load_pool_config, write_pool

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_NO_FEASIBLE = 4

log = logging.getLogger("hostcap")


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("HOSTCAP_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CLIError(f"HOSTCAP_WORKERS must be an integer, got {env!r}") from None
    return 1


def _experiment(args):
    if args.config and args.preset:
        raise CLIError("give either --config or --preset, not both")
    if args.config:
        cfg = load_experiment(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise CLIError("an experiment needs --config or --preset")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.eps_bar is not None:
        cfg.eps_bar = args.eps_bar
    for name in ("episodes", "B", "K"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "strategies", None):
        cfg.strategies = args.strategies.split(",")
    cfg.check()
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands


def read_injections(path, net) -> tuple[np.ndarray, np.ndarray]:
    """CSV ``bus,p_kw,q_kvar``; buses not listed inject nothing."""
    p = np.zeros(net.n_bus)
    q = np.zeros(net.n_bus)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["bus", "p_kw", "q_kvar"]:
            raise CLIError(f"{path}: header must be bus,p_kw,q_kvar")
        for row in reader:
            if not net.has_bus(row["bus"]):
                raise CLIError(f"{path}: unknown bus {row['bus']!r}")
            i = net.bus_index(row["bus"])
            try:
                p[i] += float(row["p_kw"])
                q[i] += float(row["q_kvar"])
            except (TypeError, ValueError):
                raise CLIError(f"{path}: bad number in row for bus {row['bus']!r}") from None
    return p, q


def write_solution_csv(fh, net, sol) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["element", "id", "v_pu", "p_kw", "q_kvar", "loading_pct"])
    for b, v in zip(net.buses, np.sqrt(sol.v)):
        w.writerow(["bus", b, f"{v:.12g}", "", "", ""])
    for ln, lid, P, Q in zip(net.lines, net.line_ids(), sol.P, sol.Q):
        loading = 100.0 * np.hypot(P, Q) / ln.s_max
        w.writerow(["line", lid, "", f"{P * net.base_kva:.12g}", f"{Q * net.base_kva:.12g}", f"{loading:.12g}"])


def cmd_solve(args) -> int:
    net = load_network_ref(args.network)
    problems = validate_network(net)
    if problems:
        raise CLIError("invalid network: " + "; ".join(problems))
    if args.injections:
        p, q = read_injections(args.injections, net)
    else:
        p, q = np.zeros(net.n_bus), np.zeros(net.n_bus)
    sol = solve_lindistflow(net, p, q) if args.linear else solve_distflow(net, p, q)
    if not sol.converged:
        raise Diverged(f"no convergence after {sol.iterations} iterations (residual {sol.residual:.3g})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_solution_csv(fh, net, sol)
    else:
        write_solution_csv(sys.stdout, net, sol)
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.preset:
        cfg = preset(args.preset)
        pool_doc = cfg.pool
        net_ref, clusters_ref = cfg.network, cfg.clusters
    else:
        if not (args.config and args.network):
            raise CLIError("generate needs --config and --network, or --preset")
        pool_doc = None
        net_ref, clusters_ref = args.network, args.clusters
    net = load_network_ref(net_ref)
    clusters = load_clusters_ref(clusters_ref) if clusters_ref else {}
    pc = PoolConfig.from_dict(pool_doc) if pool_doc is not None else load_pool_config(args.config)
    if args.seed is not None:
        pc.seed = args.seed
    pool = generate_pool(pc, net, clusters)
    out = args.out or "pool.jsonl"
    write_pool(pool, out)
    log.info("wrote %d scenarios to %s", len(pool), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    ctx = load_context(cfg)
    result = eval_exhaustive(ctx, workers=_workers(args))
    out = _out_dir(args, "hostcap_eval")
    write_exhaustive(ctx, result, out)
    s = result.summary
    print(f"scenarios {s['n_scenarios']}  eps_bar {s['eps_bar']}  feasible {s['feasible_fraction']:.4f}")
    if s["hc"] is not None:
        hc = s["hc"]
        print(f"HC  ev {hc['max_ev_count']:g}  pv_kw {hc['max_pv_kw']:g}  combined {hc['max_combined']:g}")
    else:
        print("HC  none: no feasible scenario")
    return EXIT_OK


def _print_report(report: dict, timing: dict | None = None) -> None:
    print(f"{'strategy':<16}{'hc_combined':>14}{'std':>10}{'hc_ev':>10}{'hc_pv_kw':>10}{'boundary':>10}{'time_s':>10}")
    for name, s in report["strategies"].items():
        bf = s.get("boundary_fraction", {}).get("mean")
        t = timing.get(name) if timing else None
        print(
            f"{name:<16}{s['hc_combined']['mean']:>14.3f}{s['hc_combined']['std']:>10.3f}"
            f"{s['hc_ev']['mean']:>10.2f}{s['hc_pv_kw']['mean']:>10.2f}"
            f"{'' if bf is None else f'{bf:.3f}':>10}{'' if t is None else f'{t:.2f}':>10}"
        )
    if report.get("ground_truth"):
        print(f"exhaustive max combined HC: {report['ground_truth']['max_combined']:g}")
    if "comparison" in report:
        print(f"first to reach {report['comparison']['target_hc_combined']:g}: {report['comparison']['first_to_target']}")


def cmd_learn(args) -> int:
    cfg = _experiment(args)
    ctx = load_context(cfg)
    out = _out_dir(args, "hostcap_run")
    res = run_experiment(ctx, out, workers=_workers(args))
    _print_report(res["report"], res["timing"])
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _experiment(args)
    if len(cfg.strategies) < 2:
        raise CLIError("compare needs at least two strategies")
    return cmd_learn(args)


def cmd_report(args) -> int:
    if args.run:
        run = Path(args.run)
        try:
            report = json.loads((run / "report.json").read_text())
        except FileNotFoundError:
            raise CLIError(f"{run}: no report.json") from None
        timing_path = run / "timing.json"
        timing = json.loads(timing_path.read_text())["wall_time_s"] if timing_path.exists() else None
        _print_report(report, timing)
        return EXIT_OK
    cfg = _experiment(args)
    ctx = load_context(cfg)
    ids = ctx.pool.ids
    if args.scenario_id is None:
        raise CLIError("report needs --run DIR or --scenario-id")
    hit = np.flatnonzero(ids == args.scenario_id)
    if hit.size == 0:
        raise CLIError(f"scenario {args.scenario_id} not in pool")
    scenario = ctx.pool.scenarios[int(hit[0])]
    out = _out_dir(args, "hostcap_report")
    verdict = ctx.oracle()(scenario)
    prefix = f"scenario_{scenario.id}"
    write_diagnostics(ctx, scenario, out, prefix)
    dump_json(
        {
            "scenario": scenario.to_dict(),
            "eps_bar": verdict.eps_bar,
            "label": verdict.label,
            "pass_fraction": verdict.pass_fraction,
            "concerning": verdict.concerning,
            "dominant_violation": verdict.dominant_violation(),
            "violations": verdict.violation_counts,
            "worst": [[v.t, v.kind, v.element, v.magnitude if np.isfinite(v.magnitude) else None] for v in verdict.worst_violations],
        },
        out / f"{prefix}_verdict.json",
    )
    print(f"scenario {scenario.id}: label {verdict.label}  pass_fraction {verdict.pass_fraction:.4f}  dominant {verdict.dominant_violation()}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="experiment seed (pool seed for generate)")
    p.add_argument("--workers", type=int, default=d, help="worker processes for scenario evaluation (env HOSTCAP_WORKERS)")
    p.add_argument("--eps-bar", type=float, default=d, dest="eps_bar", help="fraction of steps that must pass")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hostcap", description="Hosting-capacity analysis with a DistFlow oracle and active learning.")
    parser.add_argument("--version", action="version", version=f"hostcap {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one power-flow snapshot")
    p.add_argument("--network", required=True, help="network JSON or builtin:NAME")
    p.add_argument("--injections", help="CSV bus,p_kw,q_kvar (default: zero injections)")
    p.add_argument("--linear", action="store_true", help="lossless LinDistFlow pass")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="write a scenario pool as JSON Lines")
    p.add_argument("--config", help="pool config JSON")
    p.add_argument("--network", help="network JSON or builtin:NAME")
    p.add_argument("--clusters", help="cluster JSON or builtin:NAME")
    p.add_argument("--preset", choices=sorted(PRESETS), help="use a preset's pool")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="label every scenario of the pool")
    _experiment_flags(p)
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (
        ("learn", cmd_learn, "run active-learning episodes"),
        ("compare", cmd_compare, "compare query strategies on a shared pool"),
    ):
        p = sub.add_parser(name, help=helptext)
        _experiment_flags(p)
        p.add_argument("--episodes", type=int)
        p.add_argument("--B", type=int, dest="B", help="queries per round")
        p.add_argument("--K", type=int, dest="K", help="rounds")
        p.add_argument("--strategies", help="comma-separated: uniform,entropy,info_density")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="summarise a run, or export diagnostics for one scenario")
    _experiment_flags(p)
    p.add_argument("--run", help="directory written by learn/compare")
    p.add_argument("--scenario-id", type=int)
    p.set_defaults(func=cmd_report)

    for sp in sub.choices.values():
        _global_flags(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"hostcap: {exc}", file=sys.stderr)
        return exc.code
    except Diverged as exc:
        print(f"hostcap: power flow diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except NoFeasibleScenario as exc:
        print(f"hostcap: no feasible scenario: {exc}", file=sys.stderr)
        return EXIT_NO_FEASIBLE
    except (ConfigError, ConfigInvalid, ScenarioError, NotRadial, GridError, FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"hostcap: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
