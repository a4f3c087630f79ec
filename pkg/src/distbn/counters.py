"""Distributed counters with per-message accounting.

Two flavours are provided:

* :class:`ExactCounter` forwards every increment to the coordinator.
* :class:`SampledCounter` is a round-based randomized counter. Inside round
  ``j`` every increment is reported with probability
  ``p_j = min(1, sqrt(k) / (eps * 2**j))``; a report carries the site's local
  count. The coordinator estimates each site's in-round count as
  ``last_report + (1 - p) / p`` (zero if the site has not reported), which is
  unbiased with variance at most ``1 / p**2`` per site.

Round changes are driven by deterministic "tick" messages: a site ticks every
``tau_j = max(1, 2**j // (2k))`` local increments, so the coordinator holds a
lower bound on the true total and opens round ``j + 1`` once that bound reaches
``2**(j + 1)``. Because ticks depend only on the increment schedule and not on
the coins, round boundaries are fixed in advance and the estimate stays exactly
unbiased. A round change costs a broadcast plus one sync reply per site.

While ``p_j == 1`` the coordinator already knows every count, so that prefix
costs one update message per increment and no round traffic; the first sync
happens when the total reaches the first power of two with ``p_j < 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

_UNIFORM_BLOCK = 128
_warned: set[tuple[int, float]] = set()


@dataclass
class MessageLedger:
    update_messages: int = 0
    control_messages: int = 0

    @property
    def total(self) -> int:
        return self.update_messages + self.control_messages

    def absorb(self, other: "MessageLedger") -> None:
        self.update_messages += other.update_messages
        self.control_messages += other.control_messages


@dataclass(frozen=True)
class ProductEstimate:
    estimate: float
    exact: float

    @property
    def ratio(self) -> float:
        return self.estimate / self.exact if self.exact else math.nan


def counter_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the counter addressed by ``key``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def occurrence_ranks(sites: np.ndarray, k: int) -> np.ndarray:
    """For each position t, how many times ``sites[t]`` occurs in ``sites[:t + 1]``."""
    order = np.argsort(sites, kind="stable")
    sorted_sites = sites[order]
    starts = np.searchsorted(sorted_sites, np.arange(k))
    ranks = np.empty(len(sites), dtype=np.int64)
    ranks[order] = np.arange(len(sites)) - starts[sorted_sites] + 1
    return ranks


class ExactCounter:
    """Counter whose coordinator value is always exact; one message per increment."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("site count must be positive")
        self.k = k
        self.local = [0] * k
        self.total = 0
        self.ledger = MessageLedger()

    def increment(self, site: int) -> None:
        self.local[site] += 1
        self.total += 1
        self.ledger.update_messages += 1

    def feed(self, sites: np.ndarray, ranks: np.ndarray | None = None) -> None:
        counts = np.bincount(sites, minlength=self.k)
        self.local = [a + int(b) for a, b in zip(self.local, counts)]
        self.total += len(sites)
        self.ledger.update_messages += len(sites)

    def estimate(self) -> float:
        return float(self.total)

    @property
    def true_total(self) -> int:
        return self.total


class SampledCounter:
    """Randomized distributed counter with relative standard deviation ``epsilon``.

    ``fixed_p`` pins the reporting probability and disables rounds; it exists
    for exhaustive checks of the estimator.
    """

    def __init__(
        self,
        epsilon: float,
        k: int,
        rng: np.random.Generator | int | None = None,
        *,
        fixed_p: float | None = None,
    ):
        if not 0 < epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
        if k < 1:
            raise ValueError("site count must be positive")
        if fixed_p is not None and not 0 < fixed_p <= 1:
            raise ValueError("fixed_p must lie in (0, 1]")
        if k > 1 / epsilon**2 and (k, epsilon) not in _warned:
            _warned.add((k, epsilon))
            log.warning("k=%d exceeds 1/eps^2=%.1f; variance guarantee degrades", k, 1 / epsilon**2)
        self.epsilon = epsilon
        self.k = k
        self.fixed_p = fixed_p
        self._rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._ubuf = np.zeros(0)
        self._upos = 0

        self.local = [0] * k
        self.total = 0
        self.ledger = MessageLedger()

        # coordinator view of the current round
        self.base = 0
        self.snapshot = [0] * k
        self.last = [0] * k
        self.reported = [False] * k
        self._delta = 0
        self._n_reported = 0
        self._countdown: int | None = None
        self._ticks = 0

        if fixed_p is None:
            self.round = 0
            self.p = 1.0
            self._first_sampled_total = 2 ** self._first_sampled_round()
        else:
            self.round = 0
            self.p = float(fixed_p)
            self._first_sampled_total = math.inf
        self._tau = 0
        self._ticks_needed = 0

    # -- protocol parameters -------------------------------------------------

    def probability(self, j: int) -> float:
        return min(1.0, math.sqrt(self.k) / (self.epsilon * 2.0**j))

    def _first_sampled_round(self) -> int:
        j = 0
        while self.probability(j) >= 1.0:
            j += 1
        return j

    @property
    def rounds_enabled(self) -> bool:
        return self.fixed_p is None

    @property
    def sampling(self) -> bool:
        return self.p < 1.0

    # -- randomness ------------------------------------------------------------

    # Uniforms are drawn in fixed blocks so that the per-increment and batched
    # paths consume exactly the same random sequence.

    def _peek_uniforms(self, n: int) -> np.ndarray:
        avail = len(self._ubuf) - self._upos
        if n > avail:
            blocks = -(-(n - avail) // _UNIFORM_BLOCK)
            self._ubuf = np.concatenate([self._ubuf[self._upos :], self._rng.random(blocks * _UNIFORM_BLOCK)])
            self._upos = 0
        return self._ubuf[self._upos : self._upos + n]

    def _draw_gap(self) -> int:
        """Increments up to and including the next reported one."""
        u = 1.0 - float(self._peek_uniforms(1)[0])  # in (0, 1]
        self._upos += 1
        return int(math.log(u) / math.log1p(-self.p)) + 1

    def _peek_gaps(self, n: int) -> np.ndarray:
        """The next ``n`` gaps without consuming them; matches repeated :meth:`_draw_gap`."""
        u = 1.0 - self._peek_uniforms(n)
        denom = math.log1p(-self.p)
        x = np.log(u) / denom
        gaps = x.astype(np.int64) + 1
        # np.log may differ from math.log in the last bit; redo values near an integer
        close = np.flatnonzero(np.abs(x - np.rint(x)) < 1e-6)
        for i in close:
            gaps[i] = int(math.log(float(u[i])) / denom) + 1
        return gaps

    # -- coordinator state changes ---------------------------------------------

    def _report(self, site: int, value: int) -> None:
        self.ledger.update_messages += 1
        if self.reported[site]:
            self._delta += value - self.last[site]
        else:
            self.reported[site] = True
            self._n_reported += 1
            self._delta += value - self.snapshot[site]
        self.last[site] = value

    def _open_round(self, j: int) -> None:
        """Broadcast round ``j`` and collect exact per-site counts."""
        self.ledger.control_messages += 2 * self.k
        self.round = j
        self.p = self.probability(j)
        self.base = self.total
        self.snapshot = list(self.local)
        self.last = [0] * self.k
        self.reported = [False] * self.k
        self._delta = 0
        self._n_reported = 0
        self._countdown = None
        self._ticks = 0
        self._tau = max(1, 2**j // (2 * self.k))
        self._ticks_needed = max(1, -(-(2 ** (j + 1) - self.base) // self._tau))

    def _next_round(self) -> int:
        return max(self.round + 1, self.total.bit_length() - 1)

    # -- per-increment path ------------------------------------------------------

    def increment(self, site: int, report: bool | None = None) -> None:
        """Register one increment at ``site``.

        ``report`` forces the coin outcome instead of sampling it; it is meant
        for enumerating every coin sequence in tests.
        """
        self.local[site] += 1
        self.total += 1
        if self.p >= 1.0:
            if report is False:
                raise ValueError("a report cannot be suppressed while p == 1")
            self.ledger.update_messages += 1
            self.base = self.total
            self.snapshot[site] = self.local[site]
            if self.total == self._first_sampled_total:
                self._open_round(self._first_sampled_round())
            return

        if report is None:
            if self._countdown is None:
                self._countdown = self._draw_gap()
            self._countdown -= 1
            report = self._countdown == 0
            if report:
                self._countdown = None
        if report:
            self._report(site, self.local[site])

        if self.rounds_enabled and (self.local[site] - self.snapshot[site]) % self._tau == 0:
            self.ledger.control_messages += 1
            self._ticks += 1
            if self._ticks >= self._ticks_needed:
                self._open_round(self._next_round())

    # -- batched path ------------------------------------------------------------

    def feed(self, sites: np.ndarray, ranks: np.ndarray | None = None) -> None:
        """Apply a sequence of increments; equivalent to calling :meth:`increment` on each.

        ``ranks[t]`` must be the number of occurrences of ``sites[t]`` in
        ``sites[:t + 1]`` (see :func:`occurrence_ranks`).
        """
        L = len(sites)
        if L == 0:
            return
        if ranks is None:
            ranks = occurrence_ranks(sites, self.k)
        k = self.k
        base_local = np.asarray(self.local, dtype=np.int64)
        start_total = self.total
        known_pos, known = 0, base_local.copy()

        def counts_at(t: int) -> np.ndarray:
            nonlocal known_pos, known
            if t > known_pos:
                known = known + np.bincount(sites[known_pos:t], minlength=k)
                known_pos = t
            return known

        pos = 0
        while pos < L:
            if self.p >= 1.0:
                steps = int(min(L - pos, self._first_sampled_total - (start_total + pos)))
                self.ledger.update_messages += steps
                pos += steps
                counts = counts_at(pos)
                self.local = counts.tolist()
                self.total = start_total + pos
                self.base = self.total
                self.snapshot = list(self.local)
                if self.total == self._first_sampled_total:
                    self._open_round(self._first_sampled_round())
                continue

            end = self._round_end(sites, ranks, base_local, pos) if self.rounds_enabled else None
            limit = L if end is None else end + 1
            self._sample_segment(sites, ranks, base_local, pos, limit)
            pos = limit
            self.local = counts_at(limit).tolist()
            self.total = start_total + limit
            if end is not None:
                self._open_round(self._next_round())

    def _sample_segment(self, sites, ranks, base_local, pos: int, limit: int) -> None:
        """Coin flips for batch positions ``[pos, limit)`` at the current probability."""
        if self._countdown is None:
            self._countdown = self._draw_gap()
        first = pos + self._countdown - 1
        if first >= limit:
            self._countdown -= limit - pos
            return
        positions = [np.array([first])]
        t = first
        self._countdown = None
        guess = int((limit - first) * self.p * 1.1) + 8
        # a gap is drawn at the increment after each report, so none is drawn
        # when the last report falls on the final position of the segment
        while t < limit - 1:
            gaps = self._peek_gaps(guess)
            cum = t + np.cumsum(gaps)
            used = int(np.searchsorted(cum, limit))  # gaps landing inside the segment
            positions.append(cum[:used])
            self._upos += used
            if used < len(gaps):
                if (int(cum[used - 1]) if used else t) < limit - 1:
                    # the gap crossing the boundary becomes the carried countdown
                    self._upos += 1
                    self._countdown = int(cum[used]) - limit + 1
                break
            t = int(cum[-1])
            guess *= 2
        reports = np.concatenate(positions)
        self._report_many(sites[reports], base_local[sites[reports]] + ranks[reports])

    def _report_many(self, sites: np.ndarray, values: np.ndarray) -> None:
        """Same effect as calling :meth:`_report` on each pair in order."""
        self.ledger.update_messages += len(sites)
        # only the latest report per site matters
        rev_sites = sites[::-1]
        uniq, idx = np.unique(rev_sites, return_index=True)
        for site, value in zip(uniq.tolist(), values[::-1][idx].tolist()):
            if self.reported[site]:
                self._delta += value - self.last[site]
            else:
                self.reported[site] = True
                self._n_reported += 1
                self._delta += value - self.snapshot[site]
            self.last[site] = value

    def _round_end(self, sites: np.ndarray, ranks: np.ndarray, base_local: np.ndarray, pos: int) -> int | None:
        """Batch index of the increment whose tick closes the current round, if any.

        Also charges the tick messages sent from ``pos`` up to that point.
        """
        L = len(sites)
        need = self._ticks_needed - self._ticks
        tau = self._tau
        offset = base_local - np.asarray(self.snapshot, dtype=np.int64)
        window = max(1024, need * tau * 2)
        start = pos
        while start < L:
            stop = min(L, start + window)
            seg = sites[start:stop]
            since_round = offset[seg] + ranks[start:stop]
            ticks = np.flatnonzero(since_round % tau == 0)
            if len(ticks) >= need:
                self.ledger.control_messages += need
                self._ticks += need
                return start + int(ticks[need - 1])
            self.ledger.control_messages += len(ticks)
            self._ticks += len(ticks)
            need -= len(ticks)
            start = stop
            window *= 2
        return None

    # -- coordinator query ---------------------------------------------------------

    def estimate(self) -> float:
        if self.p >= 1.0:
            return float(self.total)
        return self.base + self._delta + self._n_reported * (1.0 - self.p) / self.p

    @property
    def true_total(self) -> int:
        return self.total


def product_probe(counters: Sequence[ExactCounter | SampledCounter]) -> ProductEstimate:
    """Product of counter estimates next to the product of their true totals."""
    est = math.prod(c.estimate() for c in counters)
    exact = math.prod(c.true_total for c in counters)
    return ProductEstimate(float(est), float(exact))
