"""Synthetic undirected hyperevent streams from known intensity models.

Models (``s1``, ``s2``: first/second order subset repetition, ``xbar``: mean
node feature, ``size``: number of participants)::

    rg1        -log sqrt(s1+1) + log sqrt(s2+1) + xbar^2 - 0.5 size
    rg23       10t (-log sqrt(s1+1) + log sqrt(s2+1) + xbar^2) - 0.1 size
    rg23-tvnle same generator as rg23; fitted on xbar instead of xbar^2

The ``+1`` inside the logarithms keeps the rates finite while no history has
accumulated; it is part of the ground truth recorded for every event.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .eventlog import EventLog, from_events
from .sampling import CaseControlDesign, SamplingPolicy, build_design
from .statistics import FeatureTable, StatisticSpec, StatKind, subrep_spec

LOG_RATE_LIMIT = 30.0
MAX_UNIVERSE = 10**6
FEATURE = "x"


class ModelName(enum.Enum):
    RG1 = "rg1"
    RG23 = "rg23"
    RG23_TVNLE = "rg23-tvnle"


@dataclass(frozen=True)
class SimulationConfig:
    n_actors: int = 30
    max_size: int = 3
    n_events: int = 5000
    feature_mean: float = 0.0
    feature_sd: float = 1.0
    model: ModelName = ModelName.RG1
    seed: int = 0
    method: str = "exact"

    def __post_init__(self):
        if not 1 <= self.max_size <= self.n_actors:
            raise ValueError("need 1 <= max_size <= n_actors")
        if self.universe_size > MAX_UNIVERSE:
            raise ValueError(f"{self.universe_size} hyperedges is too many to enumerate")
        if self.method not in ("exact", "thinning"):
            raise ValueError("method must be 'exact' or 'thinning'")

    @property
    def universe_size(self) -> int:
        return sum(math.comb(self.n_actors, k) for k in range(1, self.max_size + 1))


# covariate columns used by the harness, in design order
TERMS = ("log_subrep1", "log_subrep2", "xbar_sq", "size")


def truth_terms(model: ModelName, t, s1, s2, xbar, size) -> dict[str, np.ndarray]:
    """Per-term true log-rate contributions (vectorized)."""
    t = np.asarray(t, dtype=float)
    l1 = 0.5 * np.log1p(np.asarray(s1, dtype=float))
    l2 = 0.5 * np.log1p(np.asarray(s2, dtype=float))
    x2 = np.asarray(xbar, dtype=float) ** 2
    size = np.asarray(size, dtype=float)
    if model is ModelName.RG1:
        return {"log_subrep1": -l1, "log_subrep2": l2, "xbar_sq": x2, "size": -0.5 * size}
    b = 10.0 * t
    return {"log_subrep1": -b * l1, "log_subrep2": b * l2, "xbar_sq": b * x2, "size": -0.1 * size}


def log_rate(model: ModelName, t, s1, s2, xbar, size) -> np.ndarray:
    return sum(truth_terms(model, t, s1, s2, xbar, size).values())


class _Universe:
    """All hyperedges of size 1..w with padded member and pair index arrays."""

    def __init__(self, n: int, w: int):
        edges = [c for k in range(1, w + 1) for c in itertools.combinations(range(n), k)]
        self.edges = edges
        self.size = np.array([len(e) for e in edges], dtype=float)
        self.members = np.full((len(edges), w), n, dtype=np.int64)  # n = padding slot
        npair = max(1, math.comb(w, 2))
        self.pairs = np.full((len(edges), npair), n * n, dtype=np.int64)
        for r, e in enumerate(edges):
            self.members[r, : len(e)] = e
            for c, (a, b) in enumerate(itertools.combinations(e, 2)):
                self.pairs[r, c] = a * n + b
        self.n_pairs = np.array([math.comb(len(e), 2) for e in edges], dtype=float)
        self.n = n

    def covariates(self, node_counts, pair_counts, feature):
        nc = np.append(node_counts, 0.0)
        pc = np.append(pair_counts.ravel(), 0.0)
        fe = np.append(feature, 0.0)
        s1 = nc[self.members].sum(axis=1) / self.size
        with np.errstate(invalid="ignore", divide="ignore"):
            s2 = np.where(self.n_pairs > 0, pc[self.pairs].sum(axis=1) / np.maximum(self.n_pairs, 1), 0.0)
        xbar = fe[self.members].sum(axis=1) / self.size
        return s1, s2, xbar


@dataclass
class SimulationResult:
    config: SimulationConfig
    log: EventLog
    features: FeatureTable
    truth: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    def truth_text(self) -> str:
        lines = []
        for m in range(len(self.log)):
            for name in TERMS:
                lines.append(f"{m} | {name} | {float(self.truth[name][m])!r}\n")
        return "".join(lines)


def _pick(logits: np.ndarray, u: float) -> int:
    w = np.exp(logits - logits.max())
    cdf = np.cumsum(w)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1))


def simulate_stream(config: SimulationConfig) -> SimulationResult:
    """Generate ``n_events`` hyperevents on the unit time interval.

    ``method="exact"``: the baseline hazard is chosen (it is arbitrary and
    cancels from the partial likelihood) so that the total intensity is
    constant; conditional on ``n`` events in [0, 1] the event times are then
    uniform order statistics and each event picks a hyperedge with
    probability proportional to ``exp f(t, x_e)``.

    ``method="thinning"``: Ogata thinning against a window-wise upper bound on
    the total intensity, run until ``n`` acceptances, with times rescaled to
    end at 1.
    """
    rng = np.random.default_rng(config.seed)
    n, w = config.n_actors, config.max_size
    feature = rng.normal(config.feature_mean, config.feature_sd, size=n)
    uni = _Universe(n, w)
    node_counts = np.zeros(n)
    pair_counts = np.zeros((n, n))
    model = config.model
    exceed = 0

    def logits_at(t, cov):
        s1, s2, xbar = cov
        return log_rate(model, t, s1, s2, xbar, uni.size)

    chosen, times, rec = [], [], {k: [] for k in TERMS}
    if config.method == "exact":
        event_times = np.sort(rng.uniform(0.0, 1.0, size=config.n_events))
        draws = rng.uniform(size=config.n_events)
    else:
        event_times = None

    t_now, m = 0.0, 0
    while m < config.n_events:
        cov = uni.covariates(node_counts, pair_counts, feature)
        if event_times is not None:
            t = float(event_times[m])
            u = float(draws[m])
        else:
            t, u = _thinning_step(rng, t_now, config.n_events, lambda s: logits_at(s, cov))
            t_now = t
        lg = logits_at(t, cov)
        exceed += int(np.sum(np.abs(lg) > LOG_RATE_LIMIT))
        e = _pick(lg, u)
        members = uni.edges[e]
        terms = truth_terms(model, t, cov[0][e], cov[1][e], cov[2][e], uni.size[e])
        for k in TERMS:
            rec[k].append(float(terms[k]))
        chosen.append(members)
        times.append(t)
        for a in members:
            node_counts[a] += 1
        for a, b in itertools.combinations(members, 2):
            pair_counts[a, b] += 1
            pair_counts[b, a] += 1
        m += 1

    times = np.asarray(times)
    scale = 1.0
    if config.method == "thinning":
        scale = float(times[-1])
        times = times / scale
        # truth follows the emitted (rescaled) time stamps
        if model is not ModelName.RG1:
            for k in ("log_subrep1", "log_subrep2", "xbar_sq"):
                rec[k] = list(np.asarray(rec[k]) / scale)
    log = from_events([(float(t), e, ()) for t, e in zip(times, chosen)], n)
    truth = {k: np.asarray(v) for k, v in rec.items()}
    diag = {"n_logit_beyond_limit": exceed, "time_scale": scale, "universe": len(uni.edges)}
    return SimulationResult(config, log, FeatureTable({FEATURE: feature}), truth, diag)


def _thinning_step(rng, t0: float, n: int, logits_fn) -> tuple[float, float]:
    """Next accepted event time after ``t0`` and a uniform for the edge choice.

    Baseline ``n / sum_e exp f_e(t0)`` (predictable), so the intensity of the
    next event is ``n * sum_e exp f_e(t) / sum_e exp f_e(t0)``.  Each f_e is
    affine in ``t`` between events, so its maximum over a window is attained
    at an endpoint.
    """
    base = logits_fn(t0)
    bmax = base.max()
    log_norm = bmax + math.log(np.exp(base - bmax).sum())
    window = 1.0 / n
    s = t0
    while True:
        lo, hi = logits_fn(s), logits_fn(s + window)
        top = np.maximum(lo, hi)
        mx = top.max()
        bound = n * math.exp(mx + math.log(np.exp(top - mx).sum()) - log_norm)
        cand = s + rng.exponential(1.0 / bound)
        if cand > s + window:
            s += window
            continue
        lc = logits_fn(cand)
        mc = lc.max()
        rate = n * math.exp(mc + math.log(np.exp(lc - mc).sum()) - log_norm)
        if rng.uniform() * bound <= rate:
            return cand, float(rng.uniform())
        s = cand


def statistic_specs() -> list[StatisticSpec]:
    return [subrep_spec(1, 0), subrep_spec(2, 0),
            StatisticSpec(StatKind.MEAN_NODE_FEATURE, feature=FEATURE), StatisticSpec(StatKind.EVENT_SIZE)]


def simulate_controls(result: SimulationResult, seed: int | None = None) -> CaseControlDesign:
    """Case-control design with controls of any size 1..w and the harness covariates."""
    cfg = result.config
    policy = SamplingPolicy.any_size(cfg.max_size, seed=cfg.seed if seed is None else seed)
    design = build_design(result.log, policy, statistic_specs(), result.features)
    return add_harness_columns(design)


def add_harness_columns(design: CaseControlDesign) -> CaseControlDesign:
    s1, s2 = design.column("subrep_1_0"), design.column("subrep_2_0")
    xbar = design.column(f"mean_{FEATURE}")
    return design.with_columns(log_subrep1=0.5 * np.log1p(s1), log_subrep2=0.5 * np.log1p(s2),
                               xbar=xbar, xbar_sq=xbar ** 2, size=design.column("event_size"))
