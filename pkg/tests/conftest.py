from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distbn.harness import ExperimentConfig, builtin_network, run_experiment
from distbn.network import BayesNet, build_network

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_net(rng: np.random.Generator, n_max: int = 6, j_max: int = 4, max_parents: int = 2, j_min: int = 2) -> BayesNet:
    """Random DAG with Dirichlet CPTs; node order in the document is shuffled."""
    n = int(rng.integers(1, n_max + 1))
    cards = rng.integers(j_min, j_max + 1, size=n).tolist()
    # parents are drawn from earlier positions of a hidden order, then the listing is permuted
    parents = []
    for i in range(n):
        r = int(rng.integers(0, min(i, max_parents) + 1))
        parents.append(sorted(rng.choice(i, size=r, replace=False).tolist()) if r else [])
    perm = rng.permutation(n)  # perm[hidden] = listed position
    names = [f"v{perm[i]}" for i in range(n)]
    nodes = [None] * n
    for i in range(n):
        K = int(np.prod([cards[p] for p in parents[i]])) if parents[i] else 1
        nodes[perm[i]] = {
            "name": names[i],
            "cardinality": cards[i],
            "parents": [names[p] for p in parents[i]],
            "cpt": rng.dirichlet(np.ones(cards[i]), size=K).tolist(),
        }
    return build_network("random", nodes)


def chain_net() -> BayesNet:
    """A -> B with P(A=1)=0.3, P(B=1|A=1)=0.9, P(B=1|A=0)=0.1."""
    return build_network(
        "chain",
        [
            {"name": "A", "cardinality": 2, "parents": [], "cpt": [[0.7, 0.3]]},
            {"name": "B", "cardinality": 2, "parents": ["A"], "cpt": [[0.9, 0.1], [0.1, 0.9]]},
        ],
    )


def three_chain() -> BayesNet:
    return build_network(
        "abc",
        [
            {"name": "A", "cardinality": 2, "parents": [], "cpt": [[0.6, 0.4]]},
            {"name": "B", "cardinality": 3, "parents": ["A"], "cpt": [[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]]},
            {"name": "C", "cardinality": 2, "parents": ["B"], "cpt": [[0.9, 0.1], [0.4, 0.6], [0.25, 0.75]]},
        ],
    )


def star_net(n: int, j: int = 2, seed: int = 0) -> BayesNet:
    rng = np.random.default_rng(seed)
    nodes = [{"name": "root", "cardinality": j, "parents": [], "cpt": rng.dirichlet(np.ones(j), size=1).tolist()}]
    for i in range(1, n):
        nodes.append({"name": f"f{i}", "cardinality": j, "parents": ["root"], "cpt": rng.dirichlet(np.ones(j), size=j).tolist()})
    return build_network("star", nodes)


@pytest.fixture(scope="session")
def alarm() -> BayesNet:
    return builtin_network("alarm")


@pytest.fixture(scope="session")
def new_alarm() -> BayesNet:
    return builtin_network("new_alarm")


# the long runs shared by the harness properties and the acceptance criteria
ALARM_RUN = dict(
    network="alarm",
    algorithms=("exact", "baseline", "uniform", "nonuniform"),
    events=500_000,
    checkpoints=(10_000, 50_000, 100_000, 500_000),
    seeds=5,
)
NEW_ALARM_RUN = dict(
    network="new_alarm",
    algorithms=("exact", "baseline", "uniform", "nonuniform"),
    events=500_000,
    checkpoints=(500_000,),
    seeds=5,
    min_prob=0.0,
)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def cached_experiment(network: str, algorithms: tuple, events: int, checkpoints: tuple, seeds: int, **kw):
    """Long experiments shared between test modules within one session."""
    config = ExperimentConfig(network, algorithms, events=events, checkpoints=list(checkpoints), seeds=seeds, **kw)
    return run_experiment(config)
