"""Conditional queries and approximate Bayesian classification by enumeration.

Everything here works on anything exposing ``query_many(events)`` (a tracker or
a tracker snapshot). Hidden variables are summed out by brute-force
enumeration, which is fine at the network sizes we evaluate and keeps the code
easy to audit against :func:`brute_force_joint`.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError
from .network import BayesNet

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class ConditionalEstimate:
    value: float  # clamped to [0, 1]
    raw: float  # unclamped ratio; nan when the evidence has zero estimated mass
    joint: float
    evidence: float


def _check_disjoint(net: BayesNet, target: Mapping[int, int], evidence: Mapping[int, int]) -> None:
    overlap = set(target) & set(evidence)
    if overlap:
        raise ValueError(f"target and evidence overlap on nodes {sorted(overlap)}")
    for node, value in itertools.chain(target.items(), evidence.items()):
        if not 0 <= node < net.n:
            raise ValueError(f"node index {node} out of range")
        if not 0 <= value < net.nodes[node].cardinality:
            raise ValueError(f"value {value} out of domain for node {node}")


def _fill(net: BayesNet, fixed: Mapping[int, int], free: Sequence[int], cap: int) -> np.ndarray:
    """All events agreeing with ``fixed``, with ``free`` nodes enumerated lexicographically."""
    size = math.prod(net.nodes[i].cardinality for i in free)
    if size > cap:
        raise CapacityError(f"enumerating {size} assignments exceeds the cap of {cap}")
    events = np.zeros((size, net.n), dtype=np.int64)
    for node, value in fixed.items():
        events[:, node] = value
    if free:
        grid = np.indices([net.nodes[i].cardinality for i in free]).reshape(len(free), -1)
        events[:, list(free)] = grid.T
    return events


def conditional_estimate(
    model, net: BayesNet, target: Mapping[int, int], evidence: Mapping[int, int], cap: int = DEFAULT_ENUMERATION_CAP
) -> ConditionalEstimate:
    _check_disjoint(net, target, evidence)
    if not target:
        raise ValueError("target assignment is empty")
    hidden = [i for i in range(net.n) if i not in target and i not in evidence]
    joint = float(model.query_many(_fill(net, {**target, **evidence}, hidden, cap)).sum())
    free = sorted(list(target) + hidden)
    marginal = float(model.query_many(_fill(net, evidence, free, cap)).sum())
    raw = joint / marginal if marginal > 0 else math.nan
    value = 0.0 if math.isnan(raw) else min(max(raw, 0.0), 1.0)
    return ConditionalEstimate(value, raw, joint, marginal)


def conditional_prob(model, net: BayesNet, target: Mapping[int, int], evidence: Mapping[int, int], cap=DEFAULT_ENUMERATION_CAP) -> float:
    return conditional_estimate(model, net, target, evidence, cap).value


def target_scores(
    model, net: BayesNet, targets: Sequence[int], evidence: Mapping[int, int], cap: int = DEFAULT_ENUMERATION_CAP
) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Estimated P(Y=y, e) for every target assignment y, in lexicographic order."""
    targets = list(targets)
    if not targets:
        raise ValueError("target set is empty")
    if len(set(targets)) != len(targets):
        raise ValueError("target nodes repeat")
    _check_disjoint(net, dict.fromkeys(targets, 0), evidence)
    for node, value in evidence.items():
        if not 0 <= value < net.nodes[node].cardinality:
            raise ValueError(f"value {value} out of domain for node {node}")
    hidden = [i for i in range(net.n) if i not in evidence and i not in targets]
    domains = [range(net.nodes[i].cardinality) for i in targets]
    n_targets = math.prod(len(d) for d in domains)
    n_hidden = math.prod(net.nodes[i].cardinality for i in hidden)
    if n_targets * n_hidden > cap:
        raise CapacityError(f"enumerating {n_targets * n_hidden} assignments exceeds the cap of {cap}")
    assignments = list(itertools.product(*domains))
    block = _fill(net, evidence, hidden, cap)
    events = np.tile(block, (n_targets, 1))
    events[:, targets] = np.repeat(np.asarray(assignments, dtype=np.int64), len(block), axis=0)
    scores = model.query_many(events).reshape(n_targets, len(block)).sum(axis=1)
    return assignments, scores


def classify(
    model, net: BayesNet, targets: Sequence[int], evidence: Mapping[int, int], cap: int = DEFAULT_ENUMERATION_CAP
) -> dict[int, int]:
    """Most probable joint assignment of ``targets`` given ``evidence``.

    Ties go to the lexicographically smallest assignment.
    """
    assignments, scores = target_scores(model, net, targets, evidence, cap)
    best = assignments[int(np.argmax(scores))]
    return dict(zip(targets, best))


def predict_single(model, net: BayesNet, events: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
    """Batched single-node classification: predict ``events[t, nodes[t]]`` from the other values.

    Same answer as calling :func:`classify` per row, but one query for all candidates.
    """
    events = np.asarray(events, dtype=np.int64).reshape(-1, net.n)
    nodes = np.asarray(nodes, dtype=np.int64)
    cards = np.array(net.cardinalities)[nodes]
    trial = np.repeat(np.arange(len(events)), cards)
    value = np.concatenate([np.arange(J) for J in cards]) if len(cards) else np.zeros(0, dtype=np.int64)
    candidates = events[trial].copy()
    candidates[np.arange(len(trial)), nodes[trial]] = value
    scores = model.query_many(candidates)
    out = np.empty(len(events), dtype=np.int64)
    start = 0
    for t, J in enumerate(cards):
        out[t] = int(np.argmax(scores[start : start + J]))
        start += J
    return out


def brute_force_joint(events: Iterable[Sequence[int]], net: BayesNet, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """MLE joint table from raw events, indexed by the full assignment.

    Parent configurations never observed contribute a uniform factor.
    """
    size = net.joint_space_size
    if size > cap:
        raise CapacityError(f"joint table of {size} entries exceeds the cap of {cap}")
    rows = [tuple(int(v) for v in e) for e in events]
    joint_counts = []
    parent_counts = []
    for i, node in enumerate(net.nodes):
        joint_counts.append(Counter((tuple(r[p] for p in node.parents), r[i]) for r in rows))
        parent_counts.append(Counter(tuple(r[p] for p in node.parents) for r in rows))
    table = np.empty(size)
    for flat, assignment in enumerate(itertools.product(*(range(J) for J in net.cardinalities))):
        p = 1.0
        for i, node in enumerate(net.nodes):
            pa = tuple(assignment[q] for q in node.parents)
            den = parent_counts[i][pa]
            p *= joint_counts[i][(pa, assignment[i])] / den if den else 1.0 / node.cardinality
        table[flat] = p
    return table.reshape(net.cardinalities)
