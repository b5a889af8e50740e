from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rhem.eventlog import from_events  # noqa: E402

_RESULTS: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str = ""):
    """Log an acceptance outcome; the terminal summary prints one line each."""
    line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}  {detail}".rstrip()
    print(line)
    _RESULTS.append((criterion, passed, line))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(_RESULTS, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(line)


def random_citation_events(rng: np.random.Generator, n_events: int, n_authors: int, max_authors: int = 4,
                           max_refs: int = 4, tie_prob: float = 0.2):
    """Two-mode citation log: event m publishes paper m and cites earlier papers.

    Citations of papers published at the same time stamp are allowed, so the
    strict publication-before-citation rule is exercised.
    """
    events, t = [], 0.0
    for m in range(n_events):
        if m and rng.uniform() >= tie_prob:
            t += float(rng.choice([0.25, 0.5, 1.0, 1.5, 3.0]))
        k = int(rng.integers(1, min(max_authors, n_authors) + 1))
        I = tuple(sorted(rng.choice(n_authors, k, replace=False).tolist()))
        r = int(rng.integers(0, min(max_refs, m) + 1)) if m else 0
        J = tuple(sorted(rng.choice(m, r, replace=False).tolist())) if r else ()
        events.append((t, I, J, m))
    return events


def citation_log(events, n_authors):
    return from_events(events, n_authors, n_receivers=len(events), two_mode=True)


def random_one_mode_events(rng: np.random.Generator, n_events: int, n_nodes: int, max_size: int = 4,
                           directed: bool = True):
    events, t = [], 0.0
    for m in range(n_events):
        if m and rng.uniform() >= 0.2:
            t += float(rng.choice([0.5, 1.0, 2.0]))
        k = int(rng.integers(1, min(max_size, n_nodes) + 1))
        I = tuple(sorted(rng.choice(n_nodes, k, replace=False).tolist()))
        J = ()
        if directed:
            r = int(rng.integers(0, min(max_size, n_nodes) + 1))
            J = tuple(sorted(rng.choice(n_nodes, r, replace=False).tolist()))
        events.append((t, I, J, None))
    return events


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
