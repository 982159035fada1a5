"""Pool-based active learning over scenario pools.

Each round retrains the classifier from scratch on everything labelled so
far, scores the remaining pool once, and sends the ``B`` best-scoring
scenarios to the oracle. Ties go to the smallest scenario id.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .learner import PROB_CLIP, ClassifierParams, constant_params, train

UNIFORM = "uniform"
ENTROPY = "entropy"
INFO_DENSITY = "info_density"
STRATEGIES = (UNIFORM, ENTROPY, INFO_DENSITY)

_ALIASES = {
    "uniform": UNIFORM, "u": UNIFORM, "montecarlo": UNIFORM, "monte_carlo": UNIFORM,
    "entropy": ENTROPY, "ent": ENTROPY,
    "info_density": INFO_DENSITY, "infodensity": INFO_DENSITY, "id": INFO_DENSITY,
}


class EmptyPool(ValueError):
    pass


class NoFeasibleScenario(ValueError):
    pass


@dataclass(frozen=True)
class QueryStrategy:
    kind: str = UNIFORM
    beta: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise ValueError(f"unknown query strategy {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        object.__setattr__(self, "kind", kind)

    @property
    def name(self) -> str:
        if self.kind == INFO_DENSITY and self.beta != 1.0:
            return f"{self.kind}_b{self.beta:g}"
        return self.kind

    @property
    def needs_training(self) -> bool:
        return self.kind != UNIFORM

    @classmethod
    def parse(cls, spec) -> "QueryStrategy":
        if isinstance(spec, QueryStrategy):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], float(spec.get("beta", 1.0)))
        return cls(str(spec))


# --------------------------------------------------------------------------
# scores


def score_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. U(0,1) scores; their argmax order is a uniform permutation."""
    if n < 1:
        raise EmptyPool("no unlabelled scenarios to score")
    return rng.random(n)


def binary_entropy(p) -> np.ndarray:
    """Entropy in nats of a Bernoulli(p), with ``p`` clipped to PROB_CLIP."""
    p = np.clip(np.asarray(p, dtype=float), *PROB_CLIP)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))


def score_entropy(params: ClassifierParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise EmptyPool("no unlabelled scenarios to score")
    return binary_entropy(params.proba(X))


def mean_cosine_similarity(X) -> np.ndarray:
    """Mean cosine similarity of each row to every row (itself included).

    Rows with zero norm contribute similarity 0. Uses the identity
    ``mean_j cos(x_i, x_j) = u_i . mean_j u_j`` for unit rows ``u``.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    U = np.divide(X, norms[:, None], out=np.zeros_like(X), where=norms[:, None] > 0)
    return U @ U.mean(axis=0)


def score_info_density(params: ClassifierParams, X, beta: float = 1.0) -> np.ndarray:
    """Entropy weighted by mean cosine similarity to the pool, raised to ``beta``.

    Negative mean similarities (possible only with signed features) are
    floored at zero before the power.
    """
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise EmptyPool("no unlabelled scenarios to score")
    ent = score_entropy(params, X)
    if beta == 0:
        return ent
    density = np.clip(mean_cosine_similarity(X), 0.0, None)
    return ent * density**beta


def top_b(scores: np.ndarray, ids: np.ndarray, B: int) -> np.ndarray:
    """Positions of the ``B`` highest scores, ties to the smallest id."""
    order = np.lexsort((ids, -np.asarray(scores)))
    return order[:B]


# --------------------------------------------------------------------------
# labelled set


@dataclass(eq=False)
class LabeledPool:
    """Split of a scenario pool into labelled entries and the remainder."""

    pool: object
    index: list = field(default_factory=list)  # pool positions, in query order
    labels: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)  # pool position -> verdict
    unlabeled: np.ndarray | None = None

    def __post_init__(self):
        if self.unlabeled is None:
            self.unlabeled = np.ones(len(self.pool), dtype=bool)
            self.unlabeled[self.index] = False

    def __len__(self) -> int:
        return len(self.index)

    @property
    def n_unlabeled(self) -> int:
        return int(self.unlabeled.sum())

    def unlabeled_positions(self) -> np.ndarray:
        return np.flatnonzero(self.unlabeled)

    @property
    def X(self) -> np.ndarray:
        return self.pool.features[self.index]

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)

    @property
    def ids(self) -> np.ndarray:
        return self.pool.ids[self.index]

    def add(self, positions, labels, round_k: int, verdicts=None) -> None:
        for j, (pos, lab) in enumerate(zip(positions, labels)):
            pos = int(pos)
            if not self.unlabeled[pos]:
                raise ValueError(f"scenario at position {pos} already labelled")
            self.unlabeled[pos] = False
            self.index.append(pos)
            self.labels.append(int(lab))
            self.rounds.append(round_k)
            if verdicts is not None:
                self.verdicts[pos] = verdicts[j]


# --------------------------------------------------------------------------
# hosting capacity


@dataclass
class HostingCapacity:
    max_ev_count: float
    max_pv_kw: float
    max_combined: float
    argmax_ids: dict
    frontier_ids: list
    n_feasible: int

    def to_dict(self) -> dict:
        return {
            "max_ev_count": self.max_ev_count,
            "max_pv_kw": self.max_pv_kw,
            "max_combined": self.max_combined,
            "argmax_ids": self.argmax_ids,
            "frontier_ids": self.frontier_ids,
            "n_feasible": self.n_feasible,
        }


def hosting_capacity_arrays(ids, total_ev, total_pv_kw, labels, frontier_fraction: float = 0.1) -> HostingCapacity:
    """Maxima of EV count, PV kW and their sum over the feasible entries.

    The combined figure adds an EV count to a kW figure, as the metric is
    conventionally reported; the two parts are also returned separately.
    The frontier is the top ``frontier_fraction`` of feasible entries by
    combined size (at least one).
    """
    ids = np.asarray(ids, dtype=int)
    ev = np.asarray(total_ev, dtype=float)
    pv = np.asarray(total_pv_kw, dtype=float)
    feas = np.asarray(labels, dtype=int) == 1
    if not feas.any():
        raise NoFeasibleScenario("no feasible scenario among the labelled entries")
    ids, ev, pv = ids[feas], ev[feas], pv[feas]
    comb = ev + pv

    def arg(values):
        best = values.max()
        return int(ids[values == best].min())

    order = np.lexsort((ids, -comb))
    n_front = max(1, math.ceil(frontier_fraction * len(ids)))
    return HostingCapacity(
        max_ev_count=float(ev.max()),
        max_pv_kw=float(pv.max()),
        max_combined=float(comb.max()),
        argmax_ids={"ev": arg(ev), "pv": arg(pv), "combined": arg(comb)},
        frontier_ids=[int(i) for i in ids[order[:n_front]]],
        n_feasible=int(feas.sum()),
    )


def hosting_capacity(labeled: LabeledPool) -> HostingCapacity:
    if len(labeled) == 0:
        raise NoFeasibleScenario("labelled set is empty")
    idx = labeled.index
    return hosting_capacity_arrays(labeled.pool.ids[idx], labeled.pool.total_ev[idx], labeled.pool.total_pv_kw[idx], labeled.labels)


def cumulative_hc(ids, total_ev, total_pv_kw, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Running HC maxima (EV, PV kW, combined) in query order; 0 before the
    first feasible scenario."""
    feas = np.asarray(labels, dtype=int) == 1
    ev = np.where(feas, total_ev, 0.0)
    pv = np.where(feas, total_pv_kw, 0.0)
    comb = np.where(feas, np.asarray(total_ev) + np.asarray(total_pv_kw), 0.0)
    return np.maximum.accumulate(ev), np.maximum.accumulate(pv), np.maximum.accumulate(comb)


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeHistory:
    strategy: str
    B: int
    K: int
    seed: int
    rounds: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def n_labels(self) -> int:
        return sum(len(r["queried_ids"]) for r in self.rounds)

    def curve(self) -> list[float]:
        """Cumulative combined HC after each round."""
        return [r["hc_combined"] for r in self.rounds]

    def to_dict(self, include_time: bool = False) -> dict:
        d = {"strategy": self.strategy, "budget": {"B": self.B, "K": self.K}, "seed": self.seed, "rounds": self.rounds}
        if include_time:
            d["wall_time"] = self.wall_time
        return d


def _label_of(result) -> int:
    return int(getattr(result, "label", result))


def label_batch(oracle, scenarios, workers: int = 1) -> list:
    if hasattr(oracle, "evaluate_many"):
        return oracle.evaluate_many(scenarios, workers=workers)
    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(oracle, scenarios))
    return [oracle(s) for s in scenarios]


def training_metrics(params: ClassifierParams, X, y) -> dict:
    """Log-loss and accuracy of ``params`` on its own training data."""
    y = np.asarray(y, dtype=float)
    p = np.clip(params.proba(X), 1e-12, 1 - 1e-12)
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    return {"log_loss": float(loss), "accuracy": float(np.mean((p >= 0.5) == (y == 1)))}


def run_episode(pool, oracle, strategy, B: int, K: int, hyper: dict | None = None, seed: int = 0, workers: int = 1):
    """Run ``K`` rounds of ``B`` queries. Returns ``(params, labeled, history)``.

    ``oracle`` maps a scenario to a 0/1 label or to an object with a
    ``label`` attribute. The uniform strategy skips per-round training; the
    returned parameters are then fitted once on the final labelled set.
    """
    strategy = QueryStrategy.parse(strategy)
    if len(pool) == 0:
        raise EmptyPool("scenario pool is empty")
    if B < 1 or K < 1:
        raise ValueError("B and K must be positive")
    hyper = dict(hyper or {})
    rng = np.random.default_rng(seed)
    labeled = LabeledPool(pool)
    history = EpisodeHistory(strategy.name, B, K, seed)
    X_all = pool.features
    ids_all = pool.ids
    ev_all, pv_all = pool.total_ev, pool.total_pv_kw
    params = constant_params(X_all.shape[1])
    best = {"ev": 0.0, "pv": 0.0, "comb": 0.0}
    t0 = time.perf_counter()

    for k in range(K):
        cand = labeled.unlabeled_positions()
        if cand.size == 0:
            break
        metrics = None
        if strategy.needs_training:
            if len(labeled):
                params = train(labeled.X, labeled.y, seed=seed, **hyper)
                metrics = training_metrics(params, labeled.X, labeled.y)
            if strategy.kind == ENTROPY:
                scores = score_entropy(params, X_all[cand])
            else:
                scores = score_info_density(params, X_all[cand], strategy.beta)
        else:
            scores = score_uniform(cand.size, rng)
        picked = cand[top_b(scores, ids_all[cand], B)]
        results = label_batch(oracle, [pool.scenarios[i] for i in picked], workers)
        labels = [_label_of(r) for r in results]
        verdicts = results if hasattr(results[0], "label") else None
        labeled.add(picked, labels, k, verdicts)

        for pos, lab in zip(picked, labels):
            if lab == 1:
                best["ev"] = max(best["ev"], float(ev_all[pos]))
                best["pv"] = max(best["pv"], float(pv_all[pos]))
                best["comb"] = max(best["comb"], float(ev_all[pos] + pv_all[pos]))
        history.rounds.append(
            {
                "round": k,
                "queried_ids": [int(i) for i in ids_all[picked]],
                "labels": labels,
                "n_labeled": len(labeled),
                "n_feasible": int(sum(labeled.labels)),
                "hc_ev": best["ev"],
                "hc_pv_kw": best["pv"],
                "hc_combined": best["comb"],
                "train": metrics,
            }
        )

    if not strategy.needs_training and len(labeled):
        params = train(labeled.X, labeled.y, seed=seed, **hyper)
    history.wall_time = time.perf_counter() - t0
    return params, labeled, history


def boundary_fraction(X, w, b, delta: float) -> float:
    """Share of rows of ``X`` within ``delta`` of the hyperplane ``w.x + b = 0``."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return 0.0
    d = np.abs(X @ np.asarray(w, dtype=float) + b) / np.linalg.norm(w)
    return float(np.mean(d <= delta))
