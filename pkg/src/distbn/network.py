"""Discrete Bayesian networks: loading, indexing, sampling and exact probabilities.

A network is immutable once built. CPTs are stored row-major with one row per
parent configuration; the row index is the mixed-radix encoding of the parent
values with the first listed parent as the most significant digit.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConsistencyError, NetworkFormatError, NetworkValidationError, StructureError

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NodeSpec:
    name: str
    cardinality: int
    parents: tuple[int, ...]
    cpt: np.ndarray  # shape (parent_config_count, cardinality)
    states: tuple[str, ...] | None = None

    @property
    def parent_config_count(self) -> int:
        return self.cpt.shape[0]


@dataclass(frozen=True, eq=False)
class BayesNet:
    name: str
    nodes: tuple[NodeSpec, ...]
    order: tuple[int, ...]
    # per node: mixed-radix weight of each listed parent
    strides: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def d(self) -> int:
        return max(len(node.parents) for node in self.nodes)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, i) for i, node in enumerate(self.nodes) for p in node.parents]

    @property
    def cardinalities(self) -> list[int]:
        return [node.cardinality for node in self.nodes]

    @property
    def parent_config_counts(self) -> list[int]:
        return [node.parent_config_count for node in self.nodes]

    @property
    def parameter_count(self) -> int:
        """Number of free CPT parameters, sum of K_i * (J_i - 1)."""
        return sum(nd.parent_config_count * (nd.cardinality - 1) for nd in self.nodes)

    @property
    def joint_space_size(self) -> int:
        return math.prod(self.cardinalities)

    def index_of(self, name: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.name == name:
                return i
        raise KeyError(name)

    def children(self, i: int) -> list[int]:
        return [c for c, node in enumerate(self.nodes) if i in node.parents]

    def check_event(self, event: Sequence[int]) -> None:
        if len(event) != self.n:
            raise ValueError(f"event has {len(event)} values, network has {self.n} nodes")
        for i, (v, node) in enumerate(zip(event, self.nodes)):
            if not 0 <= v < node.cardinality:
                raise ValueError(f"value {v} out of domain for node {i} ({node.name})")

    def to_document(self) -> dict[str, Any]:
        """JSON-serialisable description accepted by :func:`load_network`."""
        out = []
        for node in self.nodes:
            entry: dict[str, Any] = {
                "name": node.name,
                "cardinality": node.cardinality,
                "parents": [self.nodes[p].name for p in node.parents],
                "cpt": node.cpt.tolist(),
            }
            if node.states is not None:
                entry["states"] = list(node.states)
            out.append(entry)
        return {"name": self.name, "nodes": out}


def _topological_order(parents: Sequence[Sequence[int]], names: Sequence[str]) -> tuple[int, ...]:
    n = len(parents)
    indegree = [len(ps) for ps in parents]
    children: list[list[int]] = [[] for _ in range(n)]
    for i, ps in enumerate(parents):
        for p in ps:
            children[p].append(i)
    heap = [i for i in range(n) if indegree[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for c in children[i]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(heap, c)
    if len(order) < n:
        # every leftover node has a leftover parent; walking parents must revisit a node
        left = set(range(n)) - set(order)
        node = min(left)
        seen = set()
        while node not in seen:
            seen.add(node)
            node = next(p for p in parents[node] if p in left)
        raise StructureError(f"cycle detected through node {names[node]!r}")
    return tuple(order)


def build_network(name: str, nodes: Sequence[Mapping[str, Any]]) -> BayesNet:
    """Validate node descriptions (same shape as the JSON format) and build a network."""
    if not nodes:
        raise StructureError("network has no nodes")
    names = []
    for pos, raw in enumerate(nodes):
        try:
            names.append(str(raw["name"]))
        except (KeyError, TypeError) as exc:
            raise NetworkFormatError(f"node #{pos} has no name") from exc
    if len(set(names)) != len(names):
        dup = next(nm for nm in names if names.count(nm) > 1)
        raise StructureError(f"duplicate node name {dup!r}")
    lookup = {nm: i for i, nm in enumerate(names)}

    cards: list[int] = []
    parent_lists: list[tuple[int, ...]] = []
    for raw, nm in zip(nodes, names):
        try:
            card = int(raw["cardinality"])
            pnames = list(raw.get("parents", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkFormatError(f"node {nm!r}: missing or malformed cardinality/parents") from exc
        if card < 1:
            raise NetworkValidationError(f"node {nm!r}: cardinality must be positive, got {card}")
        for p in pnames:
            if p not in lookup:
                raise StructureError(f"node {nm!r}: unknown parent {p!r}")
        if len(set(pnames)) != len(pnames):
            raise StructureError(f"node {nm!r}: repeated parent")
        cards.append(card)
        parent_lists.append(tuple(lookup[p] for p in pnames))

    order = _topological_order(parent_lists, names)

    specs = []
    strides = []
    for i, (raw, nm) in enumerate(zip(nodes, names)):
        J = cards[i]
        pcards = [cards[p] for p in parent_lists[i]]
        K = math.prod(pcards)
        st = tuple(math.prod(pcards[j + 1 :]) for j in range(len(pcards)))
        try:
            cpt = np.asarray(raw["cpt"], dtype=float)
        except (KeyError, ValueError, TypeError) as exc:
            raise NetworkValidationError(f"node {nm!r}: cpt missing or not a numeric table") from exc
        if cpt.ndim != 2 or cpt.shape[0] != K:
            rows = cpt.shape[0] if cpt.ndim >= 1 else 0
            raise NetworkValidationError(f"node {nm!r}: cpt has {rows} rows, expected {K}")
        if cpt.shape[1] != J:
            raise NetworkValidationError(f"node {nm!r} row 0: length {cpt.shape[1]}, expected {J}")
        for r, row in enumerate(cpt):
            if np.any(row < 0) or np.any(row > 1) or not np.all(np.isfinite(row)):
                raise NetworkValidationError(f"node {nm!r} row {r}: entries outside [0, 1]")
            s = row.sum()
            if abs(s - 1.0) > ROW_SUM_TOL:
                raise NetworkValidationError(f"node {nm!r} row {r}: sums to {s!r}, not 1")
        cpt = cpt / cpt.sum(axis=1, keepdims=True)
        cpt.setflags(write=False)
        states = tuple(raw["states"]) if raw.get("states") is not None else None
        specs.append(NodeSpec(nm, J, parent_lists[i], cpt, states))
        strides.append(st)
    return BayesNet(name, tuple(specs), order, tuple(strides))


def load_network(document: str) -> BayesNet:
    """Parse a JSON network description and validate it."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        line = document.splitlines()[exc.lineno - 1] if document.splitlines() else ""
        raise NetworkFormatError(f"line {exc.lineno} col {exc.colno}: {exc.msg}: {line.strip()!r}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise NetworkFormatError("top level must be an object with a 'nodes' list")
    return build_network(str(doc.get("name", "")), doc["nodes"])


def read_network(path) -> BayesNet:
    with open(path, encoding="utf-8") as fh:
        return load_network(fh.read())


def topological_order(net: BayesNet) -> list[int]:
    return list(net.order)


def parent_config_index(net: BayesNet, node: int, event: Sequence[int]) -> int:
    if not 0 <= node < net.n:
        raise IndexError(f"node index {node} out of range [0, {net.n})")
    return sum(event[p] * s for p, s in zip(net.nodes[node].parents, net.strides[node]))


def parent_config_indices(net: BayesNet, node: int, events: np.ndarray) -> np.ndarray:
    """Vectorised :func:`parent_config_index` over the rows of an (m, n) array."""
    out = np.zeros(len(events), dtype=np.int64)
    for p, s in zip(net.nodes[node].parents, net.strides[node]):
        out += events[:, p].astype(np.int64) * s
    return out


def forward_sample(net: BayesNet, rng: np.random.Generator) -> list[int]:
    event = [0] * net.n
    for i in net.order:
        row = net.nodes[i].cpt[parent_config_index(net, i, event)]
        u = rng.random()
        # first value whose cumulative mass exceeds u; the last value absorbs rounding
        event[i] = min(int(np.searchsorted(np.cumsum(row), u, side="right")), len(row) - 1)
    return event


def sample_events(net: BayesNet, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m events by forward sampling, returned as an (m, n) int array."""
    events = np.zeros((m, net.n), dtype=np.int64)
    for i in net.order:
        node = net.nodes[i]
        cum = np.cumsum(node.cpt, axis=1)
        cum[:, -1] = np.inf
        rows = cum[parent_config_indices(net, i, events)]
        u = rng.random(m)
        events[:, i] = (rows <= u[:, None]).sum(axis=1)
    return events


def joint_prob_true(net: BayesNet, event: Sequence[int]) -> float:
    p = 1.0
    for i, node in enumerate(net.nodes):
        p *= node.cpt[parent_config_index(net, i, event), event[i]]
    return float(p)


def joint_probs_true(net: BayesNet, events: np.ndarray) -> np.ndarray:
    p = np.ones(len(events))
    for i, node in enumerate(net.nodes):
        p *= node.cpt[parent_config_indices(net, i, events), events[:, i]]
    return p


def all_events(net: BayesNet) -> np.ndarray:
    """Every full assignment in lexicographic order (first node most significant)."""
    grids = np.indices(net.cardinalities).reshape(net.n, -1).T
    return grids.astype(np.int64)


def mle_from_counts(count_joint: int, count_parent: int, cardinality: int) -> float:
    """Ratio of joint to parent count; 1/cardinality when the parent count is zero."""
    if count_joint > count_parent:
        raise ConsistencyError(f"joint count {count_joint} exceeds parent count {count_parent}")
    if count_parent == 0:
        return 1.0 / cardinality
    return count_joint / count_parent

