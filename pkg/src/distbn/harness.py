"""Experiment runner: streams, test queries, checkpointed metrics and CSV reports."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError
from .inference import predict_single
from .network import BayesNet, build_network, joint_probs_true, load_network, read_network, sample_events
from .tracker import IncrementPlan, Tracker, TrackerConfig

log = logging.getLogger(__name__)

BUILTIN_NETWORKS = ("alarm", "new_alarm")
REPORT_COLUMNS = (
    "algorithm",
    "checkpoint",
    "seed",
    "error_vs_truth",
    "error_vs_mle",
    "band_fraction",
    "update_messages",
    "control_messages",
    "classification_error",
)
MAX_REJECTIONS = 10**7
STREAM_BLOCK = 1 << 16

# spawn-key tags so that each random source of a run is independent
_STREAM, _QUERIES, _CLASSIFY = 0, 1, 2


def builtin_network(name: str) -> BayesNet:
    if name not in BUILTIN_NETWORKS:
        raise KeyError(f"no bundled network {name!r}; available: {BUILTIN_NETWORKS}")
    text = resources.files("distbn").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return load_network(text)


def resolve_network(spec: str | Path) -> BayesNet:
    """Load a network from a path, falling back to a bundled network name."""
    path = Path(spec)
    if not path.exists() and str(spec) in BUILTIN_NETWORKS:
        return builtin_network(str(spec))
    return read_network(path)


# -- streams ------------------------------------------------------------------


@dataclass(frozen=True)
class Stream:
    """Deterministic stream of (event, site) pairs, generated block by block on demand.

    Each block of ``STREAM_BLOCK`` events has its own generator, so any slice
    of the stream is the same no matter how it is requested.
    """

    net: BayesNet
    m: int
    k: int
    seed: int

    def _block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(_STREAM, b)))
        size = min(STREAM_BLOCK, self.m - b * STREAM_BLOCK)
        events = sample_events(self.net, size, rng)
        sites = rng.integers(0, self.k, size=size)
        return events, sites

    def slice(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= start <= stop <= self.m:
            raise ValueError(f"bad slice [{start}, {stop}) of a stream of {self.m}")
        events, sites = [np.zeros((0, self.net.n), dtype=np.int64)], [np.zeros(0, dtype=np.int64)]
        for b in range(start // STREAM_BLOCK, -(-stop // STREAM_BLOCK)):
            ev, st = self._block(b)
            lo = max(start - b * STREAM_BLOCK, 0)
            hi = min(stop - b * STREAM_BLOCK, len(st))
            events.append(ev[lo:hi])
            sites.append(st[lo:hi])
        return np.concatenate(events), np.concatenate(sites)

    def __len__(self) -> int:
        return self.m

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], int]]:
        for b in range(-(-self.m // STREAM_BLOCK)):
            events, sites = self._block(b)
            for ev, s in zip(events.tolist(), sites.tolist()):
                yield tuple(ev), s


def generate_stream(net: BayesNet, m: int, k: int, seed: int) -> Stream:
    if m < 0:
        raise ValueError("stream length must be non-negative")
    if k < 1:
        raise ValueError("site count must be positive")
    return Stream(net, m, k, seed)


def generate_test_queries(
    net: BayesNet, count: int, min_true_prob: float, seed: int, max_rejections: int | None = None
) -> np.ndarray:
    """Forward samples whose true joint probability is at least ``min_true_prob``."""
    if max_rejections is None:
        max_rejections = MAX_REJECTIONS
    if count < 1:
        raise ValueError("query count must be at least 1")
    if not 0 <= min_true_prob < 1:
        raise ValueError("min_true_prob must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_QUERIES,)))
    kept: list[np.ndarray] = []
    have = rejected = 0
    batch = max(count, 1024)
    while have < count:
        events = sample_events(net, batch, rng)
        ok = joint_probs_true(net, events) >= min_true_prob
        # count rejections only up to the last accepted event that we actually use
        accepted = np.flatnonzero(ok)[: count - have]
        if len(accepted) < count - have:
            rejected += int((~ok).sum())
        else:
            rejected += int((~ok[: accepted[-1] + 1]).sum())
        if rejected > max_rejections:
            raise CapacityError(
                f"more than {max_rejections} rejected samples for threshold {min_true_prob}; lower min_true_prob"
            )
        kept.append(events[accepted])
        have += len(accepted)
    return np.concatenate(kept)


# -- NEW-ALARM style networks ---------------------------------------------------


def make_new_alarm(base: BayesNet, seed: int = 7, widened: int = 6, cardinality: int = 20) -> BayesNet:
    """Widen ``widened`` random nodes to ``cardinality`` values.

    Every CPT whose shape changes (widened nodes and their children) is redrawn
    row by row from a flat Dirichlet; the rest of the network is untouched.
    """
    if widened > base.n:
        raise ValueError(f"cannot widen {widened} of {base.n} nodes")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(base.n, size=widened, replace=False).tolist())
    doc = base.to_document()
    cards = [cardinality if i in chosen else node.cardinality for i, node in enumerate(base.nodes)]
    for i, (entry, node) in enumerate(zip(doc["nodes"], base.nodes)):
        if i not in chosen and not chosen.intersection(node.parents):
            continue
        K = math.prod(cards[p] for p in node.parents)
        entry["cardinality"] = cards[i]
        entry["cpt"] = rng.dirichlet(np.ones(cards[i]), size=K).tolist()
        if i in chosen:
            entry["states"] = [f"s{v}" for v in range(cardinality)]
    return build_network(f"new-{base.name}", doc["nodes"])


# -- experiments ------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    network: str
    algorithms: Sequence[str] = ("exact", "baseline", "uniform", "nonuniform")
    epsilon: float = 0.1
    delta: float = 0.25
    sites: int = 30
    events: int = 500_000
    checkpoints: Sequence[int] | None = None
    queries: int = 1000
    min_prob: float = 0.01
    classify_trials: int = 0
    seeds: int = 1
    seed: int = 42
    out: str | None = None
    # counters at epsilon/4 so the classification guarantee holds for epsilon
    classification_mode: bool = False

    def __post_init__(self):
        self.algorithms = tuple(a.strip().lower() for a in self.algorithms)
        if not self.algorithms:
            raise ValueError("no algorithms requested")
        if self.events < 0:
            raise ValueError("events must be non-negative")
        if self.checkpoints is None:
            self.checkpoints = [self.events]
        self.checkpoints = [int(c) for c in self.checkpoints]
        if self.checkpoints != sorted(self.checkpoints) or len(set(self.checkpoints)) != len(self.checkpoints):
            raise ValueError("checkpoints must be strictly ascending")
        if self.checkpoints and (self.checkpoints[0] < 0 or self.checkpoints[-1] > self.events):
            raise ValueError("checkpoints must lie within [0, events]")
        if not 0 <= self.min_prob < 1:
            raise ValueError("min_prob must lie in [0, 1)")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if self.queries < 1:
            raise ValueError("queries must be at least 1")
        if self.classify_trials < 0:
            raise ValueError("classify_trials must be non-negative")

    @property
    def tracker_epsilon(self) -> float:
        return self.epsilon / 4 if self.classification_mode else self.epsilon

    def run_seeds(self) -> list[int]:
        return [self.seed + s for s in range(self.seeds)]


@dataclass
class ReportRow:
    algorithm: str
    checkpoint: int
    seed: int | str
    error_vs_truth: float
    error_vs_mle: float
    band_fraction: float
    update_messages: float
    control_messages: float
    classification_error: float = math.nan

    def values(self) -> list:
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)
    # per (algorithm, checkpoint): list over seeds of per-query P~/P^ ratios
    ratios: dict[tuple[str, int], list[np.ndarray]] = field(default_factory=dict, repr=False)

    def seed_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.seed != "median"]

    def median_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.seed == "median"]

    def row(self, algorithm: str, checkpoint: int, seed: int | str = "median") -> ReportRow:
        for r in self.rows:
            if (r.algorithm, r.checkpoint, r.seed) == (algorithm, checkpoint, seed):
                return r
        raise KeyError((algorithm, checkpoint, seed))


def _band(ratios: np.ndarray, epsilon: float) -> float:
    if len(ratios) == 0:
        return math.nan
    inside = (ratios >= math.exp(-epsilon)) & (ratios <= math.exp(epsilon))
    return float(np.mean(inside))


def _relative_error(est: np.ndarray, ref: np.ndarray) -> float:
    ok = ref > 0
    if not ok.any():
        return math.nan
    return float(np.mean(np.abs(est[ok] / ref[ok] - 1.0)))


def _mle_ratios(est: np.ndarray, mle: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(mle > 0, est / np.where(mle > 0, mle, 1.0), np.where(est > 0, np.inf, 1.0))
    return r


def _classification_trials(net: BayesNet, trials: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_CLASSIFY,)))
    events = sample_events(net, trials, rng)
    nodes = rng.integers(0, net.n, size=trials)
    return events, nodes


def _run_single_seed(
    net: BayesNet,
    config: ExperimentConfig,
    seed: int,
    queries: np.ndarray,
    truth: np.ndarray,
    trials: tuple[np.ndarray, np.ndarray] | None,
    report: ExperimentReport,
) -> None:
    eps = config.tracker_epsilon

    def tracker_for(algorithm: str) -> Tracker:
        return Tracker(net, TrackerConfig(algorithm, eps, config.delta, config.sites, seed))

    exact = tracker_for("exact")
    trackers = {a: exact if a == "exact" else tracker_for(a) for a in config.algorithms}
    stream = generate_stream(net, config.events, config.sites, seed)
    position = 0
    for checkpoint in config.checkpoints:
        if checkpoint > position:
            events, sites = stream.slice(position, checkpoint)
            plan = IncrementPlan(net, events, sites, config.sites)
            for tracker in {id(t): t for t in [exact, *trackers.values()]}.values():
                tracker.apply(plan)
            position = checkpoint
        mle = exact.query_many(queries)
        for algorithm, tracker in trackers.items():
            est = tracker.query_many(queries)
            ratios = _mle_ratios(est, mle)
            report.ratios.setdefault((algorithm, checkpoint), []).append(ratios)
            cls_error = math.nan
            if trials is not None:
                predicted = predict_single(tracker, net, *trials)
                actual = trials[0][np.arange(len(trials[1])), trials[1]]
                cls_error = float(np.mean(predicted != actual))
            ledger = tracker.ledger
            report.rows.append(
                ReportRow(
                    algorithm,
                    checkpoint,
                    seed,
                    _relative_error(est, truth),
                    _relative_error(est, mle),
                    _band(ratios, config.epsilon),
                    ledger.update_messages,
                    ledger.control_messages,
                    cls_error,
                )
            )
            log.info("seed %d %s @%d: %d update messages", seed, algorithm, checkpoint, ledger.update_messages)


def _add_median_rows(config: ExperimentConfig, report: ExperimentReport) -> None:
    for algorithm in config.algorithms:
        for checkpoint in config.checkpoints:
            rows = [r for r in report.seed_rows() if r.algorithm == algorithm and r.checkpoint == checkpoint]
            med = {c: float(np.median([getattr(r, c) for r in rows])) for c in REPORT_COLUMNS[3:]}
            # the band column of a median row is the band of the per-query median ratio
            per_query = np.median(np.vstack(report.ratios[(algorithm, checkpoint)]), axis=0)
            med["band_fraction"] = _band(per_query, config.epsilon)
            report.rows.append(ReportRow(algorithm, checkpoint, "median", **med))


def run_experiment(config: ExperimentConfig, net: BayesNet | None = None) -> ExperimentReport:
    """Run every algorithm on every seed; per-seed rows followed by median rows.

    If a run fails part way and ``config.out`` is set, the rows gathered so far
    are written with a failure marker before the error propagates.
    """
    if net is None:
        net = resolve_network(config.network)
    report = ExperimentReport()
    try:
        for algorithm in config.algorithms:
            # fail fast on bad algorithm names or structure before streaming anything
            Tracker(net, TrackerConfig(algorithm, config.tracker_epsilon, config.delta, config.sites, config.seed))
        queries = generate_test_queries(net, config.queries, config.min_prob, config.seed)
        truth = joint_probs_true(net, queries)
        trials = _classification_trials(net, config.classify_trials, config.seed) if config.classify_trials else None
        for seed in config.run_seeds():
            _run_single_seed(net, config, seed, queries, truth, trials, report)
        _add_median_rows(config, report)
    except Exception as exc:
        if config.out:
            emit_report(report, config.out, status=f"incomplete: {type(exc).__name__}: {exc}")
        raise
    return report


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def emit_report(report: ExperimentReport, path, status: str | None = None) -> None:
    """Write the report as CSV; a trailing ``# status`` line marks a partial report."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([_fmt(v) for v in row.values()])
        if status is not None:
            fh.write(f"# status: {status}\n")


def read_report(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
