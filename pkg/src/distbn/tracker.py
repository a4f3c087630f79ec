"""Continuous tracking of Bayesian network MLE parameters over distributed counters.

Each variable ``i`` owns joint counters ``A_i(x_i, pa)`` and parent counters
``A_i(pa)``; a query multiplies the per-variable ratios. The error budget of
each counter family depends on the algorithm:

=============  ===============================  ===============================
algorithm      joint counters (nu_i)             parent counters (mu_i)
=============  ===============================  ===============================
exact          exact counters                    exact counters
baseline       eps / (3n)                        eps / (3n)
uniform        eps / (16 sqrt(n))                eps / (16 sqrt(n))
nonuniform     (J_i K_i)^(1/3) eps / (16 alpha)  K_i^(1/3) eps / (16 beta)
naive          eps/16 J_i^(1/3) / sqrt(S)         one shared root family, eps/(3n)
=============  ===============================  ===============================

with ``alpha = sqrt(sum (J_i K_i)^(2/3))``, ``beta = sqrt(sum K_i^(2/3))`` and
``S = sum_{i>=2} J_i^(2/3)``. The nonuniform factors minimise
``sum J_i K_i / nu_i`` subject to ``sum nu_i^2 = eps^2 / 256``.

Parent counters are duplicated per child so that the factors of a query are
independent; only the naive-Bayes variant shares its root counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .counters import ExactCounter, MessageLedger, SampledCounter, counter_rng
from .errors import CapacityError, StructureError
from .network import BayesNet, parent_config_index, parent_config_indices

ALGORITHMS = ("exact", "baseline", "uniform", "nonuniform", "naive")
LOG_SPACE_MIN_NODES = 65
DEFAULT_MAX_COUNTERS = 10**7

_JOINT, _PARENT = 0, 1


def replication_count(delta: float) -> int:
    """Instances needed for the median trick: 1 if delta >= 1/4, else the smallest odd r >= 8 ln(1/delta)."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if delta >= 0.25:
        return 1
    r = math.ceil(8 * math.log(1 / delta))
    return r if r % 2 else r + 1


@dataclass
class TrackerConfig:
    algorithm: str
    epsilon: float = 0.1
    delta: float = 0.25
    sites: int = 30
    seed: int = 0
    replication: int | None = None
    max_counters: int = DEFAULT_MAX_COUNTERS

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.sites < 1:
            raise ValueError("sites must be positive")
        if self.replication is None:
            self.replication = 1 if self.algorithm == "exact" else replication_count(self.delta)
        elif not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.replication < 1 or self.replication % 2 == 0:
            raise ValueError(f"replication must be a positive odd integer, got {self.replication}")


@dataclass(frozen=True)
class BudgetAllocation:
    nu: np.ndarray
    mu: np.ndarray
    alpha: float | None = None
    beta: float | None = None
    shared_root_factor: float | None = None


@dataclass(frozen=True)
class CommBound:
    joint_term: float
    parent_term: float

    @property
    def gamma(self) -> float:
        return self.joint_term + self.parent_term


def comm_bound(net: BayesNet) -> CommBound:
    JK = np.array([J * K for J, K in zip(net.cardinalities, net.parent_config_counts)], dtype=float)
    K = np.array(net.parent_config_counts, dtype=float)
    return CommBound(float(np.sum(JK ** (2 / 3)) ** 1.5), float(np.sum(K ** (2 / 3)) ** 1.5))


def is_naive_bayes_star(net: BayesNet) -> bool:
    return (
        net.n >= 2
        and not net.nodes[0].parents
        and all(node.parents == (0,) for node in net.nodes[1:])
    )


def allocate_budget(net: BayesNet, config: TrackerConfig) -> BudgetAllocation:
    eps, n = config.epsilon, net.n
    J = np.array(net.cardinalities, dtype=float)
    K = np.array(net.parent_config_counts, dtype=float)
    algo = config.algorithm
    if algo == "exact":
        raise ValueError("exact tracking uses exact counters and has no error budget")
    if algo == "baseline":
        f = np.full(n, eps / (3 * n))
        return BudgetAllocation(f, f.copy())
    if algo == "uniform":
        f = np.full(n, eps / (16 * math.sqrt(n)))
        return BudgetAllocation(f, f.copy())
    if algo == "nonuniform":
        alpha = math.sqrt(np.sum((J * K) ** (2 / 3)))
        beta = math.sqrt(np.sum(K ** (2 / 3)))
        nu = (J * K) ** (1 / 3) * eps / (16 * alpha)
        mu = K ** (1 / 3) * eps / (16 * beta)
        return BudgetAllocation(nu, mu, alpha, beta)
    # naive
    if not is_naive_bayes_star(net):
        raise StructureError("naive-Bayes tracking needs node 0 as the sole parent of every other node")
    root = eps / (3 * n)
    nu = np.empty(n)
    nu[0] = root
    nu[1:] = (eps / 16) * J[1:] ** (1 / 3) / math.sqrt(np.sum(J[1:] ** (2 / 3)))
    mu = np.full(n, eps / (16 * math.sqrt(n)))
    return BudgetAllocation(nu, mu, shared_root_factor=root)


def _group_positions(keys: np.ndarray, sites: np.ndarray, k: int):
    """Split a stream of counter keys into per-key (sites, ranks) arrays in time order."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    ss = sites[order]
    combined = sk * k + ss
    o2 = np.argsort(combined, kind="stable")
    sc = combined[o2]
    first = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    run_start = np.repeat(first, np.diff(np.r_[first, len(sc)]))
    ranks = np.empty(len(sc), dtype=np.int64)
    ranks[o2] = np.arange(len(sc)) - run_start + 1
    uniq, starts = np.unique(sk, return_index=True)
    bounds = np.r_[starts, len(sk)]
    return [(int(key), ss[a:b], ranks[a:b]) for key, a, b in zip(uniq, bounds[:-1], bounds[1:])]


class IncrementPlan:
    """Per-counter increment sequences for a block of events.

    Building the plan is independent of any tracker, so one plan can drive
    every replica and every algorithm fed by the same stream.
    """

    def __init__(self, net: BayesNet, events: np.ndarray, sites: np.ndarray, k: int):
        self.net = net
        self.events = np.asarray(events, dtype=np.int64).reshape(-1, net.n)
        self.sites = np.asarray(sites, dtype=np.int64)
        if len(self.sites) != len(self.events):
            raise ValueError("events and sites differ in length")
        if len(self.sites) and (self.sites.min() < 0 or self.sites.max() >= k):
            raise ValueError(f"site index out of range [0, {k})")
        self.k = k
        self._cache: dict[tuple[int, int], list] = {}

    def __len__(self) -> int:
        return len(self.sites)

    def pci(self, i: int) -> np.ndarray:
        return parent_config_indices(self.net, i, self.events)

    def groups(self, family: int, i: int):
        key = (family, i)
        if key not in self._cache:
            pci = self.pci(i)
            keys = pci * self.net.nodes[i].cardinality + self.events[:, i] if family == _JOINT else pci
            self._cache[key] = _group_positions(keys, self.sites, self.k)
        return self._cache[key]


@dataclass
class TrackerSnapshot:
    """Frozen counter estimates of every replica; answers queries without touching counters."""

    net: BayesNet
    joint: list[list[np.ndarray]]  # [replica][node] -> (K_i, J_i)
    parent: list[list[np.ndarray]]  # [replica][node] -> (K_i,)

    def replica_probs(self, events: np.ndarray) -> np.ndarray:
        events = np.asarray(events, dtype=np.int64).reshape(-1, self.net.n)
        pcis = [parent_config_indices(self.net, i, events) for i in range(self.net.n)]
        use_logs = self.net.n >= LOG_SPACE_MIN_NODES
        out = np.empty((len(self.joint), len(events)))
        for r, (joint, parent) in enumerate(zip(self.joint, self.parent)):
            acc = np.zeros(len(events)) if use_logs else np.ones(len(events))
            for i, node in enumerate(self.net.nodes):
                num = joint[i][pcis[i], events[:, i]]
                den = parent[i][pcis[i]]
                with np.errstate(divide="ignore", invalid="ignore"):
                    factor = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / node.cardinality)
                if use_logs:
                    with np.errstate(divide="ignore"):
                        acc += np.log(factor)
                else:
                    acc *= factor
            out[r] = np.exp(acc) if use_logs else acc
        return out

    def query_many(self, events: np.ndarray) -> np.ndarray:
        probs = self.replica_probs(events)
        return probs[0] if len(probs) == 1 else np.median(probs, axis=0)

    def query(self, event: Sequence[int]) -> float:
        return float(self.query_many(np.asarray([event]))[0])


class Tracker:
    """Coordinator-side model built from distributed counters (one algorithm, r replicas)."""

    def __init__(self, net: BayesNet, config: TrackerConfig):
        for i, node in enumerate(net.nodes):
            if node.cardinality < 2:
                raise StructureError(f"node {i} ({node.name}) has a single value; trackers need J_i >= 2")
        self.net = net
        self.config = config
        self.k = config.sites
        self.naive = config.algorithm == "naive"
        self.exact = config.algorithm == "exact"
        self.budget = None if self.exact else allocate_budget(net, config)
        per_replica = self.counter_count_per_replica(net, naive=self.naive)
        if per_replica * config.replication > config.max_counters:
            raise CapacityError(
                f"{per_replica * config.replication} counters exceed the cap of {config.max_counters}"
            )
        # counters are created on first increment; an untouched counter reads 0
        self._joint: list[list[dict]] = [[{} for _ in net.nodes] for _ in range(config.replication)]
        self._parent: list[list[dict]] = [[{} for _ in net.nodes] for _ in range(config.replication)]
        self._snapshot: TrackerSnapshot | None = None
        self.events_seen = 0

    @staticmethod
    def counter_count_per_replica(net: BayesNet, naive: bool = False) -> int:
        JK = [J * K for J, K in zip(net.cardinalities, net.parent_config_counts)]
        if naive:
            return net.cardinalities[0] + sum(JK[1:])
        return sum(JK) + sum(net.parent_config_counts)

    @property
    def replication(self) -> int:
        return self.config.replication

    # -- counter construction ---------------------------------------------------

    def _factor(self, family: int, i: int) -> float:
        if self.naive and (i == 0 or family == _PARENT):
            return self.budget.shared_root_factor
        return float(self.budget.nu[i] if family == _JOINT else self.budget.mu[i])

    def _new_counter(self, r: int, family: int, i: int, key: int):
        if self.exact:
            return ExactCounter(self.k)
        rng = counter_rng(self.config.seed, r, family, i, key)
        return SampledCounter(self._factor(family, i), self.k, rng)

    def _counter(self, r: int, family: int, i: int, key: int):
        # naive Bayes: node 0's joint counters are the shared root counters
        table = self._joint[r][i] if family == _JOINT else self._parent[r][i]
        c = table.get(key)
        if c is None:
            c = table[key] = self._new_counter(r, family, i, key)
        return c

    # -- updates ------------------------------------------------------------------

    def update(self, event: Sequence[int], site: int) -> None:
        """Route one event observed at ``site`` to every counter it touches."""
        if not 0 <= site < self.k:
            raise ValueError(f"site {site} out of range [0, {self.k})")
        self.net.check_event(event)
        for r in range(self.replication):
            for i, node in enumerate(self.net.nodes):
                pci = parent_config_index(self.net, i, event)
                self._counter(r, _JOINT, i, pci * node.cardinality + event[i]).increment(site)
                if not self.naive:
                    self._counter(r, _PARENT, i, pci).increment(site)
        self.events_seen += 1
        self._snapshot = None

    def update_batch(self, events: np.ndarray, sites: np.ndarray) -> None:
        self.apply(IncrementPlan(self.net, events, sites, self.k))

    def apply(self, plan: IncrementPlan) -> None:
        """Feed a block of events; same outcome as calling :meth:`update` per event."""
        if plan.k != self.k:
            raise ValueError("plan was built for a different site count")
        families = (_JOINT,) if self.naive else (_JOINT, _PARENT)
        for r in range(self.replication):
            for i in range(self.net.n):
                for family in families:
                    for key, sites, ranks in plan.groups(family, i):
                        self._counter(r, family, i, key).feed(sites, ranks)
        self.events_seen += len(plan)
        self._snapshot = None

    # -- reading --------------------------------------------------------------------

    def counters(self):
        for tables in (self._joint, self._parent):
            for per_node in tables:
                for table in per_node:
                    yield from table.values()

    @property
    def ledger(self) -> MessageLedger:
        total = MessageLedger()
        for c in self.counters():
            total.absorb(c.ledger)
        return total

    def snapshot(self) -> TrackerSnapshot:
        if self._snapshot is None:
            joint_all, parent_all = [], []
            for r in range(self.replication):
                joint, parent = [], []
                for i, node in enumerate(self.net.nodes):
                    K, J = node.parent_config_count, node.cardinality
                    jt = np.zeros(K * J)
                    for key, c in self._joint[r][i].items():
                        jt[key] = c.estimate()
                    joint.append(jt.reshape(K, J))
                    pt = np.zeros(K)
                    for key, c in self._parent[r][i].items():
                        pt[key] = c.estimate()
                    parent.append(pt)
                if self.naive:
                    root = joint[0].reshape(-1)
                    parent[0] = np.array([root.sum()])
                    for i in range(1, self.net.n):
                        parent[i] = root.copy()
                joint_all.append(joint)
                parent_all.append(parent)
            self._snapshot = TrackerSnapshot(self.net, joint_all, parent_all)
        return self._snapshot

    def query(self, event: Sequence[int]) -> float:
        self.net.check_event(event)
        return self.snapshot().query(event)

    def query_many(self, events: np.ndarray) -> np.ndarray:
        return self.snapshot().query_many(events)


def init_tracker(net: BayesNet, config: TrackerConfig) -> Tracker:
    return Tracker(net, config)
