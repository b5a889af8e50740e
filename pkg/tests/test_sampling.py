import itertools

import numpy as np
import pytest
from scipy import stats

import oracle
from conftest import citation_log, random_citation_events
from rhem.eventlog import from_events, ingest
from rhem.sampling import (CaseControlDesign, SamplingMode, SamplingPolicy, StratumSkipped, build_design,
                           draw_controls, sample_controls)
from rhem.statistics import CITATION_KINDS, DecayConfig, HistoryIndex, StatisticSpec, subrep_spec


def test_matched_cardinality_sizes():
    log = ingest("".join(f"0 | a{i} | p{i}\n" for i in range(6)) + "1 | a0;a1 | p0;p1;p2\n")
    ev = log.events[-1]
    for I, J in draw_controls(log, ev, SamplingPolicy(controls_per_event=3, seed=4)):
        assert len(I) == 2 and len(J) == 3
        assert (I, J) != (tuple(sorted(ev.senders)), tuple(sorted(ev.receivers)))


def test_any_size_uniform_over_union():
    # five actors, sizes 1..3: 25 hyperedges, the observed one excluded
    log = from_events([(0.0, (0, 1), ())], 5)
    ev = log.events[0]
    universe = [c for k in (1, 2, 3) for c in itertools.combinations(range(5), k) if c != (0, 1)]
    counts = dict.fromkeys(universe, 0)
    n = 100_000
    for seed in range(n):
        (I, _), = draw_controls(log, ev, SamplingPolicy.any_size(3, seed=seed))
        counts[I] += 1
    assert sum(counts.values()) == n
    p = stats.chisquare(list(counts.values())).pvalue
    assert p > 0.01


def test_determinism():
    rng = np.random.default_rng(2)
    log = citation_log(random_citation_events(rng, 30, 6), 6)
    specs = [StatisticSpec(k) for k in CITATION_KINDS]
    a = build_design(log, SamplingPolicy(seed=9), specs).to_text()
    b = build_design(log, SamplingPolicy(seed=9), specs).to_text()
    c = build_design(log, SamplingPolicy(seed=10), specs).to_text()
    assert a == b and a != c


def test_skip_when_risk_set_too_small():
    log = from_events([(0.0, (0,), ())], 1)
    with pytest.raises(StratumSkipped):
        draw_controls(log, log.events[0], SamplingPolicy())
    with pytest.warns(UserWarning, match="skipped"):
        d = build_design(log, SamplingPolicy(), [subrep_spec(1, 0)])
    assert d.n_strata == 0 and d.skipped == [0]


def test_strata_count_and_first_row_zero():
    log = from_events([(float(m), (m % 4, (m + 1) % 4), ()) for m in range(12)], 6)
    d = build_design(log, SamplingPolicy(controls_per_event=2, seed=1), [subrep_spec(1, 0), subrep_spec(2, 0)])
    assert d.n_strata == 12 and d.n_rows == 36
    assert np.all(d.X[:3] == 0)
    assert d.is_event[d.offsets].all()
    assert d.is_event.sum() == 12


@pytest.mark.parametrize("half_life", [None, 1.5])
def test_replay_equals_oracle(half_life):
    rng = np.random.default_rng(5)
    events = random_citation_events(rng, 35, 7)
    log = citation_log(events, 7)
    decay = DecayConfig(half_life)
    specs = [StatisticSpec(k, decay=decay) for k in CITATION_KINDS]
    d = build_design(log, SamplingPolicy(seed=3), specs)
    for lo in d.offsets:
        t = d.time[lo]
        ev_idx = int(d.stratum[lo])
        _, I, J, _ = events[ev_idx]
        for k, spec in enumerate(specs):
            want = oracle.derived(events, t, I, J, spec.kind.value, half_life)
            got = d.X[lo, k]
            if want is None:
                assert got == 0.0 and d.flagged[lo]
            else:
                assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_controls_see_history_before_event():
    # the event repeats a prior hyperedge; controls at the same time must not see the event itself
    log = from_events([(0.0, (0, 1), ()), (1.0, (0, 1), ()), (1.0, (0, 1), ())], 4)
    d = build_design(log, SamplingPolicy(seed=0), [subrep_spec(2, 0)])
    assert list(d.X[d.is_event, 0]) == [0.0, 1.0, 1.0]


def test_text_roundtrip():
    log = from_events([(float(m), (m % 3,), ()) for m in range(8)], 5)
    d = build_design(log, SamplingPolicy(seed=2, controls_per_event=2), [subrep_spec(1, 0)])
    text = d.to_text()
    assert text.splitlines()[0] == "stratum_id\tis_event\ttime\tsubrep_1_0"
    assert CaseControlDesign.from_text(text).to_text() == text


def test_policy_validation():
    with pytest.raises(ValueError):
        SamplingPolicy(controls_per_event=0)
    with pytest.raises(ValueError):
        SamplingPolicy(SamplingMode.ANY_SIZE_UP_TO)


def test_partial_sample_advance_order_is_irrelevant():
    log = from_events([(0.0, (0, 1), ()), (1.0, (1, 2), ())], 4)
    spec = [subrep_spec(1, 0)]
    h1 = HistoryIndex().advance(log.events[0])
    s1 = sample_controls(log, h1, log.events[1], SamplingPolicy(seed=1), spec)
    h2 = HistoryIndex().advance(log.events[0]).advance(log.events[1])
    s2 = sample_controls(log, h2, log.events[1], SamplingPolicy(seed=1), spec)
    assert [r.values for r in s1.rows] == [r.values for r in s2.rows]
