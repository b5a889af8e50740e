"""Case-control sampling of non-events and the resulting stratified design."""

from __future__ import annotations

import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eventlog import EmptyRiskSetError, EventLog, HyperEvent, floyd_sample, risk_universe
from .statistics import DecayConfig, FeatureTable, HistoryIndex, StatisticSpec

MAX_REJECTIONS = 1000


class SamplingMode(enum.Enum):
    MATCHED_CARDINALITY = "matched"
    ANY_SIZE_UP_TO = "any"


@dataclass(frozen=True)
class SamplingPolicy:
    mode: SamplingMode = SamplingMode.MATCHED_CARDINALITY
    controls_per_event: int = 1
    max_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.controls_per_event < 1:
            raise ValueError("controls_per_event must be >= 1")
        if self.mode is SamplingMode.ANY_SIZE_UP_TO and (self.max_size is None or self.max_size < 1):
            raise ValueError("any-size sampling needs max_size >= 1")

    @classmethod
    def any_size(cls, w: int, seed: int = 0, controls_per_event: int = 1) -> "SamplingPolicy":
        return cls(SamplingMode.ANY_SIZE_UP_TO, controls_per_event, w, seed)


@dataclass
class CaseControlRow:
    senders: tuple[int, ...]
    receivers: tuple[int, ...]
    values: list[float]
    is_event: bool
    flagged: bool = False


@dataclass
class Stratum:
    index: int
    time: float
    event_row: CaseControlRow
    control_rows: list[CaseControlRow]

    @property
    def rows(self) -> list[CaseControlRow]:
        return [self.event_row, *self.control_rows]


class StratumSkipped(Exception):
    pass


def _rng_for(seed: int, event_index: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, event_index])


def _draw_any_size(log: EventLog, t: float, w: int, n_receivers: int, rng) -> tuple[tuple, tuple]:
    n = log.senders.n_at_risk(t)
    sizes = list(range(1, min(w, n) + 1))
    if not sizes:
        raise EmptyRiskSetError(f"no senders at risk at t={t}")
    counts = [math.comb(n, k) for k in sizes]
    r = int(rng.integers(0, sum(counts)))
    for k, c in zip(sizes, counts):
        if r < c:
            break
        r -= c
    order = log.senders.at_risk_order()
    I = tuple(sorted(int(order[i]) for i in floyd_sample(n, k, rng)))
    J: tuple = ()
    if n_receivers:
        desc = risk_universe(log, t, 1, n_receivers)
        J = desc.sample(rng)[1]
    return I, J


def _universe_size(log: EventLog, ev: HyperEvent, policy: SamplingPolicy) -> int:
    if policy.mode is SamplingMode.MATCHED_CARDINALITY:
        return risk_universe(log, ev.time, len(ev.senders), len(ev.receivers)).count
    n = log.senders.n_at_risk(ev.time)
    total = sum(math.comb(n, k) for k in range(1, min(policy.max_size, n) + 1))
    if ev.receivers:
        total *= math.comb(log.receiver_table.n_at_risk(ev.time), len(ev.receivers))
    return total


def draw_controls(log: EventLog, ev: HyperEvent, policy: SamplingPolicy) -> list[tuple[tuple, tuple]]:
    """Draw distinct non-event hyperedges for ``ev``, uniformly from its risk universe."""
    universe = _universe_size(log, ev, policy)
    if universe - 1 < policy.controls_per_event:
        raise StratumSkipped(f"event {ev.index}: risk set too small ({universe})")
    rng = _rng_for(policy.seed, ev.index)
    observed = (tuple(sorted(ev.senders)), tuple(sorted(ev.receivers)))
    desc = None
    if policy.mode is SamplingMode.MATCHED_CARDINALITY:
        desc = risk_universe(log, ev.time, len(ev.senders), len(ev.receivers))
    drawn: list = []
    seen = {observed}
    for _ in range(policy.controls_per_event):
        for _attempt in range(MAX_REJECTIONS):
            if desc is not None:
                cand = desc.sample(rng)
            else:
                cand = _draw_any_size(log, ev.time, policy.max_size, len(ev.receivers), rng)
            if cand not in seen:
                break
        else:
            raise StratumSkipped(f"event {ev.index}: no distinct control after {MAX_REJECTIONS} draws")
        seen.add(cand)
        drawn.append(cand)
    return drawn


class _MultiHistory:
    """One history per distinct decay configuration among the specs."""

    def __init__(self, specs: Sequence[StatisticSpec]):
        self.specs = list(specs)
        self.histories: dict[DecayConfig, HistoryIndex] = {}
        self.groups: dict[DecayConfig, list[int]] = {}
        for k, s in enumerate(self.specs):
            self.groups.setdefault(s.decay, []).append(k)
            if s.decay not in self.histories:
                self.histories[s.decay] = HistoryIndex(s.decay)
        if not self.histories:
            self.histories[DecayConfig()] = HistoryIndex()

    def row(self, t, I, J, features) -> tuple[list[float], bool]:
        values = [0.0] * len(self.specs)
        flagged = False
        for decay, idx in self.groups.items():
            vals, fl = self.histories[decay].design_row(t, I, J, [self.specs[k] for k in idx], features)
            flagged |= fl
            for k, v in zip(idx, vals):
                values[k] = v
        return values, flagged

    def advance(self, ev):
        for h in self.histories.values():
            h.advance(ev)


def sample_controls(log: EventLog, hist, ev: HyperEvent, policy: SamplingPolicy,
                    specs: Sequence[StatisticSpec], features: FeatureTable | None = None) -> Stratum:
    """Build the stratum for one event against the history *before* ``ev``."""
    if isinstance(hist, HistoryIndex):
        mh = _MultiHistory(specs)
        if set(mh.histories) != {hist.decay}:
            raise ValueError("specs use a decay different from the supplied history")
        mh.histories = {hist.decay: hist}
        hist = mh
    controls = draw_controls(log, ev, policy)
    vals, fl = hist.row(ev.time, ev.senders, ev.receivers, features)
    event_row = CaseControlRow(tuple(sorted(ev.senders)), tuple(sorted(ev.receivers)), vals, True, fl)
    rows = []
    for I, J in controls:
        v, f = hist.row(ev.time, I, J, features)
        rows.append(CaseControlRow(I, J, v, False, f))
    return Stratum(ev.index, ev.time, event_row, rows)


@dataclass
class CaseControlDesign:
    """Stacked strata: event row first, then its controls, strata contiguous."""

    names: list[str]
    X: np.ndarray
    stratum: np.ndarray
    is_event: np.ndarray
    time: np.ndarray
    flagged: np.ndarray | None = None
    skipped: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.stratum), len(self.names))
        self.stratum = np.asarray(self.stratum, dtype=np.int64)
        self.is_event = np.asarray(self.is_event, dtype=bool)
        self.time = np.asarray(self.time, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(len(self.stratum), dtype=bool)
        starts = np.flatnonzero(np.r_[True, self.stratum[1:] != self.stratum[:-1]]) if len(self.stratum) else np.array([], int)
        self.offsets = starts
        if len(starts) and not np.all(self.is_event[starts]):
            raise ValueError("each stratum must start with its event row")
        if int(self.is_event.sum()) != len(starts):
            raise ValueError("each stratum must contain exactly one event row")

    @property
    def n_strata(self) -> int:
        return len(self.offsets)

    @property
    def n_rows(self) -> int:
        return len(self.stratum)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def with_columns(self, **cols) -> "CaseControlDesign":
        names = list(self.names)
        X = self.X.copy()
        for name, values in cols.items():
            values = np.asarray(values, dtype=float)
            if name in names:
                X[:, names.index(name)] = values
            else:
                names.append(name)
                X = np.column_stack([X, values])
        return CaseControlDesign(names, X, self.stratum, self.is_event, self.time, self.flagged, list(self.skipped))

    def select_strata(self, keep: np.ndarray) -> "CaseControlDesign":
        """Sub-design with the strata whose positions (0..n_strata-1) are in ``keep``."""
        mask = np.isin(np.repeat(np.arange(self.n_strata), np.diff(np.r_[self.offsets, self.n_rows])), keep)
        return CaseControlDesign(self.names, self.X[mask], self.stratum[mask], self.is_event[mask],
                                 self.time[mask], self.flagged[mask])

    @classmethod
    def from_strata(cls, names: Sequence[str], strata: Sequence[Stratum], skipped=()) -> "CaseControlDesign":
        X, sid, ev, tt, fl = [], [], [], [], []
        for s in strata:
            for r in s.rows:
                X.append(r.values)
                sid.append(s.index)
                ev.append(r.is_event)
                tt.append(s.time)
                fl.append(r.flagged)
        X = np.array(X, dtype=float).reshape(len(sid), len(names))
        return cls(list(names), X, np.array(sid, dtype=np.int64), np.array(ev, dtype=bool),
                   np.array(tt, dtype=float), np.array(fl, dtype=bool), list(skipped))

    # ------------------------------------------------------------ text io

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("\t".join(["stratum_id", "is_event", "time", *self.names]) + "\n")
        for r in range(self.n_rows):
            cells = [str(int(self.stratum[r])), "1" if self.is_event[r] else "0", repr(float(self.time[r]))]
            cells += [repr(float(v)) for v in self.X[r]]
            buf.write("\t".join(cells) + "\n")
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "CaseControlDesign":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split("\t")
        if header[:3] != ["stratum_id", "is_event", "time"]:
            raise ValueError("design header must start with stratum_id, is_event, time")
        rows = [ln.split("\t") for ln in lines[1:]]
        sid = np.array([int(r[0]) for r in rows], dtype=np.int64)
        ev = np.array([r[1] == "1" for r in rows], dtype=bool)
        tt = np.array([float(r[2]) for r in rows])
        X = np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), len(header) - 3)
        return cls(header[3:], X, sid, ev, tt)

    @classmethod
    def read(cls, path) -> "CaseControlDesign":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def build_design(log: EventLog, policy: SamplingPolicy, specs: Sequence[StatisticSpec],
                 features: FeatureTable | None = None, controls: bool = True) -> CaseControlDesign:
    """Replay the log: sample each stratum against H_{t-}, then advance the history.

    With ``controls=False`` only the observed events' covariates are produced.
    """
    hist = _MultiHistory(specs)
    strata, skipped = [], []
    for ev in log.events:
        if controls:
            try:
                strata.append(sample_controls(log, hist, ev, policy, specs, features))
            except (StratumSkipped, EmptyRiskSetError) as exc:
                skipped.append(ev.index)
                warnings.warn(f"stratum skipped: {exc}", stacklevel=2)
        else:
            vals, fl = hist.row(ev.time, ev.senders, ev.receivers, features)
            row = CaseControlRow(tuple(sorted(ev.senders)), tuple(sorted(ev.receivers)), vals, True, fl)
            strata.append(Stratum(ev.index, ev.time, row, []))
        hist.advance(ev)
    return CaseControlDesign.from_strata([s.name for s in specs], strata, skipped)
