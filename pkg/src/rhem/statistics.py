"""Endogenous hyperedge statistics computed incrementally from event history.

Every statistic at query time ``t`` uses only events with ``t_m < t``.
Accumulators decay lazily: a stored value is rescaled by the half-life weight
when read, which is exact for exponential decay.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .eventlog import EventLog, HyperEvent


class UndefinedCovariateError(ValueError):
    """The hyperedge is too small for the statistic (e.g. pairs of a single sender)."""


@dataclass(frozen=True)
class DecayConfig:
    half_life: float | None = None

    def __post_init__(self):
        if self.half_life is not None and not self.half_life > 0:
            raise ValueError("half_life must be positive")

    @property
    def enabled(self) -> bool:
        return self.half_life is not None

    def weight(self, dt: float) -> float:
        if self.half_life is None:
            return 1.0
        return 2.0 ** (-dt / self.half_life)


NO_DECAY = DecayConfig()


class StatKind(enum.Enum):
    ACTIVITY = "activity"
    SUBREP = "subrep"
    PRIOR_PAPERS = "prior_papers"
    PRIOR_JOINT_PAPERS = "prior_joint_papers"
    PAPER_CITATION_POPULARITY = "paper_citation_popularity"
    PAPER_PAIR_COCITATION = "paper_pair_cocitation"
    AUTHOR_CITATION_REPETITION = "author_citation_repetition"
    CITE_PAPER_AND_ITS_REFERENCES = "cite_paper_and_its_references"
    DIFFERENCE_IN_PRIOR_PAPERS = "difference_in_prior_papers"
    AUTHOR_CITATION_POPULARITY = "author_citation_popularity"
    DIFFERENCE_IN_AUTHOR_CITATION_POPULARITY = "difference_in_author_citation_popularity"
    COLLABORATE_WITH_CITING_AUTHOR = "collaborate_with_citing_author"
    AUTHOR_SELF_CITATION = "author_self_citation"
    PAPER_OUTDEGREE_POPULARITY = "paper_outdegree_popularity"
    MEAN_NODE_FEATURE = "mean_feature"
    EVENT_SIZE = "event_size"


# Catalogue entries that are plain subset repetition of a fixed order.
SUBREP_ALIASES = {
    StatKind.PRIOR_PAPERS: (1, 0),
    StatKind.PRIOR_JOINT_PAPERS: (2, 0),
    StatKind.PAPER_CITATION_POPULARITY: (0, 1),
    StatKind.PAPER_PAIR_COCITATION: (0, 2),
    StatKind.AUTHOR_CITATION_REPETITION: (1, 1),
}

CITATION_KINDS = [
    StatKind.PRIOR_PAPERS, StatKind.PRIOR_JOINT_PAPERS, StatKind.PAPER_CITATION_POPULARITY,
    StatKind.PAPER_PAIR_COCITATION, StatKind.AUTHOR_CITATION_REPETITION,
    StatKind.CITE_PAPER_AND_ITS_REFERENCES, StatKind.DIFFERENCE_IN_PRIOR_PAPERS,
    StatKind.AUTHOR_CITATION_POPULARITY, StatKind.DIFFERENCE_IN_AUTHOR_CITATION_POPULARITY,
    StatKind.COLLABORATE_WITH_CITING_AUTHOR, StatKind.AUTHOR_SELF_CITATION,
    StatKind.PAPER_OUTDEGREE_POPULARITY,
]


@dataclass(frozen=True)
class StatisticSpec:
    kind: StatKind
    rho: int = 0
    ell: int = 0
    feature: str | None = None
    decay: DecayConfig = NO_DECAY

    def __post_init__(self):
        if self.kind is StatKind.SUBREP and (self.rho < 0 or self.ell < 0 or self.rho + self.ell < 1):
            raise ValueError("subrep order needs rho, ell >= 0 and rho + ell >= 1")
        if self.kind is StatKind.MEAN_NODE_FEATURE and not self.feature:
            raise ValueError("mean_feature needs a feature name")

    @property
    def name(self) -> str:
        if self.kind is StatKind.SUBREP:
            return f"subrep_{self.rho}_{self.ell}"
        if self.kind is StatKind.MEAN_NODE_FEATURE:
            return f"mean_{self.feature}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str, decay: DecayConfig = NO_DECAY) -> "StatisticSpec":
        """Parse names such as ``subrep(1,0)``, ``mean(x)``, ``prior_papers``."""
        text = text.strip()
        if text.startswith("subrep"):
            inner = text[text.index("(") + 1:text.rindex(")")]
            rho, ell = (int(v) for v in inner.split(","))
            return cls(StatKind.SUBREP, rho, ell, decay=decay)
        if text.startswith("mean"):
            inner = text[text.index("(") + 1:text.rindex(")")]
            return cls(StatKind.MEAN_NODE_FEATURE, feature=inner.strip(), decay=decay)
        return cls(StatKind(text), decay=decay)


def subrep_spec(rho: int, ell: int, decay: DecayConfig = NO_DECAY) -> StatisticSpec:
    return StatisticSpec(StatKind.SUBREP, rho, ell, decay=decay)


class _Accumulator:
    """Map key -> lazily decayed sum, excluding contributions made at the query time.

    Each entry is ``[t_last, value_before_t_last, batch_at_t_last]`` where the
    first value is already decayed to ``t_last``.
    """

    __slots__ = ("decay", "data")

    def __init__(self, decay: DecayConfig):
        self.decay = decay
        self.data: dict = {}

    def add(self, key, t: float, amount: float = 1.0):
        entry = self.data.get(key)
        if entry is None:
            self.data[key] = [t, 0.0, amount]
        elif entry[0] == t:
            entry[2] += amount
        else:
            w = self.decay.weight(t - entry[0])
            entry[0], entry[1], entry[2] = t, (entry[1] + entry[2]) * w, amount

    def value(self, key, t: float) -> float:
        entry = self.data.get(key)
        if entry is None:
            return 0.0
        if t == entry[0]:
            return entry[1]
        if t < entry[0]:
            raise ValueError("query time precedes the history's last update")
        return (entry[1] + entry[2]) * self.decay.weight(t - entry[0])


class HistoryIndex:
    """Incrementally maintained event history supporting predictable queries.

    Single writer: call :meth:`advance` with events in time order; queries at
    time ``t`` see exactly the advanced events with ``t_m < t``.
    """

    def __init__(self, decay: DecayConfig = NO_DECAY):
        self.decay = decay
        self.times: list[float] = []
        self.last_time = -math.inf
        self._sender_events: dict[int, set[int]] = defaultdict(set)
        self._receiver_events: dict[int, set[int]] = defaultdict(set)
        # activity accumulators for subsets with |I'| + |J'| <= 2
        self._act = _Accumulator(decay)
        self._paper_paper = _Accumulator(decay)
        self._author_author = _Accumulator(decay)
        self._cite_pop = _Accumulator(decay)
        self._authorship = _Accumulator(decay)
        self._out_degree = _Accumulator(decay)
        self._authors_of: dict[int, tuple[float, tuple[int, ...]]] = {}

    def __len__(self):
        return len(self.times)

    def advance(self, ev: HyperEvent) -> "HistoryIndex":
        t = ev.time
        if t < self.last_time:
            raise ValueError(f"event at t={t} is older than history (t={self.last_time})")
        pos = len(self.times)
        self.times.append(t)
        self.last_time = t
        I, J = tuple(sorted(ev.senders)), tuple(sorted(ev.receivers))
        for i in I:
            self._sender_events[i].add(pos)
        for j in J:
            self._receiver_events[j].add(pos)

        act = self._act
        for i in I:
            act.add(((i,), ()), t)
        for j in J:
            act.add(((), (j,)), t)
        for pair in itertools.combinations(I, 2):
            act.add((pair, ()), t)
        for pair in itertools.combinations(J, 2):
            act.add(((), pair), t)
        for i in I:
            for j in J:
                act.add(((i,), (j,)), t)

        cited_authors = set()
        for j in J:
            info = self._authors_of.get(j)
            if info is not None and info[0] < t:
                cited_authors.update(info[1])
        for k in sorted(cited_authors):
            self._cite_pop.add(k, t)
            for i in I:
                self._author_author.add((i, k), t)

        p = ev.published
        if p is not None:
            self._authors_of[p] = (t, I)
            for j in J:
                self._paper_paper.add((p, j), t)
            for i in I:
                self._authorship.add((i, p), t)
            self._out_degree.add(p, t, float(len(J)))
        return self

    # ------------------------------------------------------------ primitives

    def activity(self, t: float, I: Sequence[int], J: Sequence[int] = ()) -> float:
        I, J = tuple(sorted(set(I))), tuple(sorted(set(J)))
        if len(I) + len(J) == 0:
            raise ValueError("activity needs a non-empty subset")
        if len(I) + len(J) <= 2:
            return self._act.value((I, J), t)
        sets = [self._sender_events.get(i) for i in I] + [self._receiver_events.get(j) for j in J]
        if any(s is None for s in sets):
            return 0.0
        sets.sort(key=len)
        common = set.intersection(*sets)
        total = 0.0
        if self.decay.enabled:
            for pos in sorted(common):
                tm = self.times[pos]
                if tm < t:
                    total += self.decay.weight(t - tm)
        else:
            total = float(sum(1 for pos in common if self.times[pos] < t))
        return total

    def subrep(self, t: float, I: Sequence[int], J: Sequence[int], rho: int, ell: int) -> float:
        if len(I) < rho or len(J) < ell:
            raise UndefinedCovariateError(f"subrep({rho},{ell}) undefined for |I|={len(I)}, |J|={len(J)}")
        I, J = sorted(I), sorted(J)
        total, count = 0.0, 0
        for Ip in itertools.combinations(I, rho):
            for Jp in itertools.combinations(J, ell):
                total += self.activity(t, Ip, Jp)
                count += 1
        return total / count

    def paper_paper(self, t, j, jp) -> float:
        return self._paper_paper.value((j, jp), t)

    def author_author(self, t, i, ip) -> float:
        return self._author_author.value((i, ip), t)

    def cite_pop(self, t, i) -> float:
        return self._cite_pop.value(i, t)

    def authorship(self, t, i, j) -> float:
        return self._authorship.value((i, j), t)

    def out_degree(self, t, j) -> float:
        return self._out_degree.value(j, t)

    # ----------------------------------------------------------- catalogue

    def derived_covariate(self, t: float, I: Sequence[int], J: Sequence[int], spec: StatisticSpec) -> float:
        k = spec.kind
        if k in SUBREP_ALIASES:
            return self.subrep(t, I, J, *SUBREP_ALIASES[k])
        if k is StatKind.SUBREP:
            return self.subrep(t, I, J, spec.rho, spec.ell)
        if k is StatKind.ACTIVITY:
            return self.activity(t, I, J)
        if k is StatKind.CITE_PAPER_AND_ITS_REFERENCES:
            return _pair_mean(J, lambda a, b: self.paper_paper(t, a, b) + self.paper_paper(t, b, a))
        if k is StatKind.DIFFERENCE_IN_PRIOR_PAPERS:
            return _pair_mean(I, lambda a, b: abs(self.activity(t, (a,)) - self.activity(t, (b,))))
        if k is StatKind.AUTHOR_CITATION_POPULARITY:
            return sum(self.cite_pop(t, i) for i in I) / len(I)
        if k is StatKind.DIFFERENCE_IN_AUTHOR_CITATION_POPULARITY:
            return _pair_mean(I, lambda a, b: abs(self.cite_pop(t, a) - self.cite_pop(t, b)))
        if k is StatKind.COLLABORATE_WITH_CITING_AUTHOR:
            return _pair_mean(I, lambda a, b: self.author_author(t, a, b) + self.author_author(t, b, a))
        if k is StatKind.AUTHOR_SELF_CITATION:
            if not I or not J:
                raise UndefinedCovariateError("author_self_citation needs senders and receivers")
            return sum(self.authorship(t, i, j) for i in I for j in J) / (len(I) * len(J))
        if k is StatKind.PAPER_OUTDEGREE_POPULARITY:
            if not J:
                raise UndefinedCovariateError("paper_outdegree_popularity needs receivers")
            return sum(self.out_degree(t, j) for j in J) / len(J)
        if k is StatKind.EVENT_SIZE:
            return float(len(I) + len(J))
        raise ValueError(f"{k} needs a node-feature table; use design_row")

    def design_row(self, t: float, I: Sequence[int], J: Sequence[int], specs: Sequence[StatisticSpec],
                   features: "FeatureTable | None" = None, strict: bool = False) -> tuple[list[float], bool]:
        """Covariate vector for (t, I, J) in spec order, plus an undefined-value flag.

        With ``strict=False`` an undefined covariate is reported as 0 and the
        returned flag is set; otherwise the error propagates.
        """
        row, flagged = [], False
        for spec in specs:
            if spec.kind is StatKind.MEAN_NODE_FEATURE:
                if features is None:
                    raise ValueError("mean_feature requires a node-feature table")
                row.append(features.mean(spec.feature, I))
                continue
            try:
                row.append(self.derived_covariate(t, I, J, spec))
            except UndefinedCovariateError:
                if strict:
                    raise
                row.append(0.0)
                flagged = True
        return row, flagged


def _pair_mean(nodes: Sequence[int], fn) -> float:
    nodes = sorted(nodes)
    if len(nodes) < 2:
        raise UndefinedCovariateError("pairwise statistic needs at least two members")
    total = 0.0
    for a, b in itertools.combinations(nodes, 2):
        total += fn(a, b)
    return total / math.comb(len(nodes), 2)


class FeatureTable:
    """Node-level exogenous features, indexed by dense sender id."""

    def __init__(self, values: Mapping[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {k: np.asarray(v, dtype=float) for k, v in (values or {}).items()}

    def mean(self, feature: str, nodes: Sequence[int]) -> float:
        arr = self.values[feature]
        return float(np.mean(arr[list(nodes)]))

    @classmethod
    def read(cls, lines, log: EventLog, separator: str = "|") -> "FeatureTable":
        n = len(log.senders)
        values: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(separator)]
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: feature lines are 'id | feature_name | value'")
            label, name, value = parts
            node = log.senders.index.get(label)
            if node is None:
                continue
            arr = values.setdefault(name, np.full(n, np.nan))
            arr[node] = float(value)
        return cls(values)

    def write(self, log: EventLog) -> str:
        out = []
        for name in sorted(self.values):
            for node, v in enumerate(self.values[name]):
                out.append(f"{log.senders.labels[node]} | {name} | {float(v)!r}\n")
        return "".join(out)
