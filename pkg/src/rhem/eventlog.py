"""Time-stamped hyperevent sequences over one-mode or two-mode vertex sets.

Event-log file format (UTF-8, one event per line)::

    time | sender;sender;... | receiver;receiver;... [| published_id]

The receiver field may be empty (undirected hyperevent).  The optional fourth
field names the receiver-mode item created by the event (for citation data,
the paper being published); it is needed by the paper-level statistics.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Mode(enum.Enum):
    SENDER = "sender"
    RECEIVER = "receiver"
    UNDIFFERENTIATED = "undifferentiated"


class LogFormatError(ValueError):
    """Raised on a malformed event-log or registry line."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class EmptyRiskSetError(ValueError):
    pass


@dataclass(frozen=True)
class HyperEvent:
    time: float
    senders: tuple[int, ...]
    receivers: tuple[int, ...] = ()
    index: int = 0
    published: int | None = None

    def __post_init__(self):
        if not self.senders:
            raise ValueError("a hyperevent needs at least one sender")
        if len(set(self.senders)) != len(self.senders) or len(set(self.receivers)) != len(self.receivers):
            raise ValueError("duplicate node within a role set")

    @property
    def directed(self) -> bool:
        return bool(self.receivers)


@dataclass(frozen=True)
class LogSchema:
    """How to read an event log.

    ``two_mode``: senders and receivers live in disjoint vertex sets, so the
    same label in the two roles denotes two different nodes.
    """

    two_mode: bool = False
    allow_unsorted: bool = False
    separator: str = "|"
    list_separator: str = ";"


class NodeTable:
    """Interning map from external labels to dense ids, plus entry times.

    A node is at risk at time ``t`` iff ``entry <= t``.  Entry defaults to
    ``-inf``; an item published by an event enters strictly after the event
    time (stored as the next representable float).
    """

    def __init__(self, mode: Mode):
        self.mode = mode
        self.labels: list[str] = []
        self.index: dict[str, int] = {}
        self.entry: list[float] = []
        self._order: np.ndarray | None = None
        self._sorted_entry: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def intern(self, label: str) -> int:
        i = self.index.get(label)
        if i is None:
            i = len(self.labels)
            self.index[label] = i
            self.labels.append(label)
            self.entry.append(-math.inf)
            self._order = None
        return i

    def set_entry(self, node: int, time: float):
        self.entry[node] = time
        self._order = None

    def _sorted(self):
        if self._order is None:
            entry = np.asarray(self.entry, dtype=float)
            self._order = np.argsort(entry, kind="stable")
            self._sorted_entry = entry[self._order]
        return self._order, self._sorted_entry

    def n_at_risk(self, t: float) -> int:
        _, se = self._sorted()
        return int(np.searchsorted(se, t, side="right"))

    def at_risk_order(self) -> np.ndarray:
        """Node ids ordered by entry time; the first ``n_at_risk(t)`` are at risk."""
        return self._sorted()[0]


@dataclass
class EventLog:
    events: list[HyperEvent]
    senders: NodeTable
    receivers: NodeTable
    two_mode: bool = False
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def receiver_table(self) -> NodeTable:
        return self.receivers if self.two_mode else self.senders

    def label(self, node: int, mode: Mode = Mode.SENDER) -> str:
        table = self.receivers if (mode is Mode.RECEIVER and self.two_mode) else self.senders
        return table.labels[node]


def _split_ids(field_text: str, sep: str, lineno: int, role: str) -> list[str]:
    items = [s.strip() for s in field_text.split(sep)]
    items = [s for s in items if s]
    seen, out = set(), []
    for s in items:
        if s in seen:
            warnings.warn(f"line {lineno}: duplicate {role} {s!r} removed", stacklevel=3)
            continue
        seen.add(s)
        out.append(s)
    return out


def ingest(source: str | Iterable[str], schema: LogSchema = LogSchema(),
           registry: Iterable[str] | None = None) -> EventLog:
    """Parse an event log into an :class:`EventLog` with dense node ids."""
    if isinstance(source, str):
        source = io.StringIO(source)
    senders = NodeTable(Mode.SENDER if schema.two_mode else Mode.UNDIFFERENTIATED)
    receivers = NodeTable(Mode.RECEIVER) if schema.two_mode else senders

    if registry is not None:
        _read_registry(registry, senders, receivers, schema)

    raw = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(schema.separator)]
        if len(parts) not in (3, 4):
            raise LogFormatError(lineno, f"expected 3 or 4 fields, got {len(parts)}")
        try:
            t = float(parts[0])
        except ValueError:
            raise LogFormatError(lineno, f"bad timestamp {parts[0]!r}") from None
        if not math.isfinite(t):
            raise LogFormatError(lineno, "timestamp must be finite")
        snd = _split_ids(parts[1], schema.list_separator, lineno, "sender")
        rcv = _split_ids(parts[2], schema.list_separator, lineno, "receiver")
        if not snd:
            raise LogFormatError(lineno, "empty sender field")
        pub = parts[3] if len(parts) == 4 and parts[3] else None
        raw.append((t, snd, rcv, pub, lineno))

    times = [r[0] for r in raw]
    if any(b < a for a, b in zip(times, times[1:])):
        if not schema.allow_unsorted:
            bad = next(r[4] for r, prev in zip(raw[1:], raw) if r[0] < prev[0])
            raise LogFormatError(bad, "timestamps decrease (use allow_unsorted to sort)")
        raw.sort(key=lambda r: r[0])  # stable: ties keep input order

    events = []
    published_seen = set()
    for m, (t, snd, rcv, pub, lineno) in enumerate(raw):
        I = tuple(senders.intern(s) for s in snd)
        J = tuple(receivers.intern(s) for s in rcv)
        p = None
        if pub is not None:
            p = receivers.intern(pub)
            if p in published_seen:
                raise LogFormatError(lineno, f"item {pub!r} published twice")
            published_seen.add(p)
            if receivers.entry[p] == -math.inf:
                receivers.set_entry(p, math.nextafter(t, math.inf))
        for table, ids in ((senders, I), (receivers, J)):
            for node in ids:
                if table.entry[node] > t and table.entry[node] != math.nextafter(t, math.inf):
                    # A cited item published later than the citing event is
                    # a data problem we tolerate but surface.
                    warnings.warn(f"line {lineno}: node {table.labels[node]!r} used before its entry time",
                                  stacklevel=2)
        events.append(HyperEvent(t, I, J, m, p))

    log = EventLog(events, senders, receivers, schema.two_mode)
    log.summary = {
        "n_events": len(events),
        "n_senders": len(senders),
        "n_receivers": len(receivers) if schema.two_mode else len(senders),
    }
    return log


def _read_registry(lines, senders: NodeTable, receivers: NodeTable, schema: LogSchema):
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(schema.separator)]
        if len(parts) != 3:
            raise LogFormatError(lineno, "registry lines are 'id | mode | entry_time'")
        label, mode, entry = parts
        mode = mode.lower()
        if mode not in ("sender", "receiver", "undifferentiated"):
            raise LogFormatError(lineno, f"unknown mode {mode!r}")
        table = receivers if (mode == "receiver" and schema.two_mode) else senders
        try:
            et = float(entry) if entry else -math.inf
        except ValueError:
            raise LogFormatError(lineno, f"bad entry time {entry!r}") from None
        table.set_entry(table.intern(label), et)


def _fmt_time(t: float) -> str:
    return repr(float(t))


def serialize(log: EventLog) -> str:
    """Canonical text form; ``ingest(serialize(log))`` reproduces the log."""
    out = []
    rt = log.receiver_table
    for ev in log.events:
        fields = [
            _fmt_time(ev.time),
            ";".join(log.senders.labels[i] for i in ev.senders),
            ";".join(rt.labels[j] for j in ev.receivers),
        ]
        if ev.published is not None:
            fields.append(rt.labels[ev.published])
        out.append(" | ".join(fields).rstrip() + "\n")
    return "".join(out)


def write_log(log: EventLog, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(log))


def read_log(path, schema: LogSchema = LogSchema(), registry_path=None) -> EventLog:
    with open(path, encoding="utf-8") as fh:
        if registry_path is None:
            return ingest(fh, schema)
        with open(registry_path, encoding="utf-8") as rh:
            return ingest(fh, schema, rh)


def from_events(events: Sequence[tuple[float, Sequence[int], Sequence[int]]], n_senders: int,
                n_receivers: int = 0, two_mode: bool = False) -> EventLog:
    """Build a log directly from integer-labelled events (labels are ``str(id)``)."""
    senders = NodeTable(Mode.SENDER if two_mode else Mode.UNDIFFERENTIATED)
    for i in range(n_senders):
        senders.intern(str(i))
    receivers = senders
    if two_mode:
        receivers = NodeTable(Mode.RECEIVER)
        for j in range(n_receivers):
            receivers.intern(str(j))
    evs = []
    for m, e in enumerate(events):
        t, I, J = e[0], e[1], e[2]
        pub = e[3] if len(e) > 3 else None
        if pub is not None and receivers.entry[pub] == -math.inf:
            receivers.set_entry(pub, math.nextafter(t, math.inf))
        evs.append(HyperEvent(float(t), tuple(I), tuple(J), m, pub))
    if any(b.time < a.time for a, b in zip(evs, evs[1:])):
        raise ValueError("events must be sorted by time")
    log = EventLog(evs, senders, receivers, two_mode)
    log.summary = {"n_events": len(evs), "n_senders": len(senders),
                   "n_receivers": len(receivers)}
    return log


# ---------------------------------------------------------------- risk sets

def floyd_sample(n: int, k: int, rng: np.random.Generator) -> list[int]:
    """Uniform random k-subset of range(n) (Floyd's algorithm), sorted."""
    chosen: set[int] = set()
    for j in range(n - k, n):
        r = int(rng.integers(0, j + 1))
        chosen.add(j if r in chosen else r)
    return sorted(chosen)


@dataclass(frozen=True)
class RiskSetDescriptor:
    """All (I*, J*) with fixed cardinalities among the nodes at risk at ``t``.

    Holds counts and the node orderings needed for uniform sampling; the
    product set itself is never materialized.
    """

    time: float
    sender_size: int
    receiver_size: int
    n_senders: int
    n_receivers: int
    sender_order: np.ndarray
    receiver_order: np.ndarray

    @property
    def count(self) -> int:
        return math.comb(self.n_senders, self.sender_size) * math.comb(self.n_receivers, self.receiver_size)

    def sample(self, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
        I = [int(self.sender_order[i]) for i in floyd_sample(self.n_senders, self.sender_size, rng)]
        J = [int(self.receiver_order[j]) for j in floyd_sample(self.n_receivers, self.receiver_size, rng)]
        return tuple(sorted(I)), tuple(sorted(J))


def risk_universe(log: EventLog, t: float, sender_size: int, receiver_size: int) -> RiskSetDescriptor:
    if sender_size < 1 or receiver_size < 0:
        raise ValueError("need sender_size >= 1 and receiver_size >= 0")
    ns = log.senders.n_at_risk(t)
    nr = log.receiver_table.n_at_risk(t) if receiver_size else 0
    if ns < sender_size or nr < receiver_size:
        raise EmptyRiskSetError(
            f"risk set empty at t={t}: {ns} senders for size {sender_size}, {nr} receivers for size {receiver_size}")
    return RiskSetDescriptor(t, sender_size, receiver_size, ns, nr,
                             log.senders.at_risk_order(), log.receiver_table.at_risk_order())
