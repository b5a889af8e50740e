"""Penalized Newton fitting, smoothing-parameter selection, model comparison."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from . import container
from .likelihood import NonFiniteError, Strata, loglik, penalized_loglik, penalty_matrix, score_information
from .sampling import CaseControlDesign
from .smooth import BasisRealization, EffectKind, SmoothSpec, block_from_state, realize

log = logging.getLogger(__name__)

LOG_TAU_BOUNDS = (-8.0, 12.0)
MAX_NEWTON = 200
MAX_HALVINGS = 30
GOLDEN_TOL = 0.05
MAX_SWEEPS = 10
SWEEP_TOL = 1e-4
DEGENERATE_FRACTION = 1e-3
MODEL_FORMAT = "rhem-model/1"


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class InnerFit:
    theta: np.ndarray
    loglik: float
    penalized: float
    edf: float
    edf_per_coef: np.ndarray
    cov: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.edf


def _solve_pd(A: np.ndarray, b: np.ndarray):
    try:
        c = linalg.cho_factor(A)
        return linalg.cho_solve(c, b)
    except linalg.LinAlgError:
        warnings.warn("singular penalized Hessian; adding a 1e-8 ridge", ConvergenceWarning, stacklevel=3)
        return linalg.solve(A + 1e-8 * np.eye(len(A)), b, assume_a="sym")


def fit_inner(strata: Strata, penalties, tau: Sequence[float], theta0=None) -> InnerFit:
    """Newton ascent with step halving on the penalized partial likelihood."""
    p = strata.X.shape[1]
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    S = penalty_matrix(p, tau, penalties)
    obj = penalized_loglik(strata, theta, tau, penalties)
    converged, it, gmax = False, 0, math.inf
    for it in range(1, MAX_NEWTON + 1):
        ll, g, info = score_information(strata, theta)
        G = g - S @ theta
        gmax = float(np.max(np.abs(G))) if p else 0.0
        if gmax < 1e-8 * (1.0 + abs(ll)):
            converged = True
            break
        step = _solve_pd(info + S, G)
        alpha, accepted = 1.0, False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + alpha * step
            try:
                new = penalized_loglik(strata, cand, tau, penalties)
            except NonFiniteError:
                new = -math.inf
            if new >= obj:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        if new - obj <= 1e-14 * (1.0 + abs(obj)) and alpha < 1.0:
            theta, obj = cand, new
            break
        theta, obj = cand, new
    ll, g, info = score_information(strata, theta)
    G = g - S @ theta
    gmax = float(np.max(np.abs(G))) if p else 0.0
    converged = converged or gmax < 1e-6 * (1.0 + abs(ll))
    if not converged:
        warnings.warn(f"Newton did not converge (max |grad| = {gmax:.3g})", ConvergenceWarning, stacklevel=2)
    A = info + S
    if p:
        F = _solve_pd(A, info)
        cov = _solve_pd(A, np.eye(p))
        cov = 0.5 * (cov + cov.T)
        edf_coef = np.diag(F).copy()
    else:
        cov, edf_coef = np.zeros((0, 0)), np.zeros(0)
    return InnerFit(theta, ll, obj, float(edf_coef.sum()), edf_coef, cov, converged, it, gmax)


# ----------------------------------------------------------------- models


@dataclass
class FittedModel:
    specs: list[SmoothSpec]
    realization: BasisRealization
    theta: np.ndarray
    cov: np.ndarray
    tau: np.ndarray
    loglik: float
    edf: float
    block_edf: list[float]
    converged: bool
    n_iter: int
    grad_norm: float
    n_strata: int
    criterion: str = "aic"
    transforms: dict[str, float] = field(default_factory=dict)
    time_ecdf: np.ndarray | None = None
    forced_linear: list[str] = field(default_factory=list)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.edf

    @property
    def deviance(self) -> float:
        return -2.0 * self.loglik

    @property
    def penalty_labels(self) -> list[str]:
        return [pb.label for pb in self.realization.penalties]

    def block_theta(self, k: int) -> np.ndarray:
        return self.theta[self.realization.block_slice(k)]

    def block_cov(self, k: int) -> np.ndarray:
        s = self.realization.block_slice(k)
        return self.cov[s, s]

    # ------------------------------------------------------------ file io

    def to_container(self) -> tuple[dict, dict]:
        meta = {
            "format": MODEL_FORMAT,
            "specs": [s.to_line() for s in self.specs],
            "loglik": self.loglik, "edf": self.edf, "aic": self.aic, "deviance": self.deviance,
            "block_edf": list(self.block_edf), "converged": self.converged, "n_iter": self.n_iter,
            "grad_norm": self.grad_norm, "n_strata": self.n_strata, "criterion": self.criterion,
            "penalty_labels": self.penalty_labels, "transforms": dict(self.transforms),
            "forced_linear": list(self.forced_linear),
        }
        arrays = {"theta": self.theta, "cov": self.cov, "tau": self.tau}
        if self.time_ecdf is not None:
            arrays["time_ecdf"] = self.time_ecdf
        for k, b in enumerate(self.realization.blocks):
            for name, arr in b.state().items():
                arrays[f"block{k}.{name}"] = arr
        return meta, arrays

    def save(self, path):
        meta, arrays = self.to_container()
        container.write(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "FittedModel":
        meta, arrays = container.read(path)
        if meta.get("format") != MODEL_FORMAT:
            raise container.ContainerError("not a model file")
        specs = [SmoothSpec.parse(s) for s in meta["specs"]]
        blocks = []
        for k, s in enumerate(specs):
            prefix = f"block{k}."
            st = {n[len(prefix):]: a for n, a in arrays.items() if n.startswith(prefix)}
            blocks.append(block_from_state(s, st))
        real = BasisRealization(blocks, np.zeros((0, sum(b.n_coef for b in blocks))))
        return cls(specs, real, arrays["theta"], arrays["cov"], arrays["tau"], meta["loglik"], meta["edf"],
                   meta["block_edf"], meta["converged"], meta["n_iter"], meta["grad_norm"], meta["n_strata"],
                   meta["criterion"], meta["transforms"], arrays.get("time_ecdf"), meta["forced_linear"])


def _block_edf(real: BasisRealization, edf_coef: np.ndarray) -> list[float]:
    return [float(edf_coef[real.block_slice(k)].sum()) for k in range(len(real.blocks))]


class _Selector:
    """Memoized inner fits over log smoothing parameters."""

    def __init__(self, strata: Strata, penalties, score):
        self.strata = strata
        self.penalties = penalties
        self.score = score
        self.cache: dict[tuple, tuple[float, InnerFit]] = {}
        self.warm = None

    def __call__(self, log_tau) -> float:
        key = tuple(float(v) for v in log_tau)
        hit = self.cache.get(key)
        if hit is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = fit_inner(self.strata, self.penalties, np.exp(key), self.warm)
            hit = (self.score(fit, np.exp(key)), fit)
            self.cache[key] = hit
        return hit[0]


def _golden(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Golden-section minimization of ``f`` on ``[lo, hi]``; endpoints included."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    best = min(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)))
    return best[1], best[0]


def _cv_score(strata: Strata, penalties, n_folds: int = 5):
    folds = np.arange(strata.n_strata) % n_folds

    def score(_fit, tau):
        total = 0.0
        for k in range(n_folds):
            train = strata.subset(np.flatnonzero(folds != k))
            test = strata.subset(np.flatnonzero(folds == k))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                f = fit_inner(train, penalties, tau, _fit.theta)
            total -= loglik(test, f.theta)
        return total

    return score


def select_tau(strata: Strata, real: BasisRealization, criterion: str = "aic",
               log_tau0: Sequence[float] | None = None) -> tuple[np.ndarray, InnerFit]:
    """Coordinate-wise golden-section search of log smoothing parameters."""
    penalties = real.penalties
    if not penalties:
        return np.zeros(0), fit_inner(strata, penalties, [])
    if criterion == "aic":
        score = lambda fit, tau: fit.aic  # noqa: E731
    elif criterion == "cv":
        score = _cv_score(strata, penalties)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    sel = _Selector(strata, penalties, score)
    cur = np.zeros(len(penalties)) if log_tau0 is None else np.array(log_tau0, dtype=float)
    best = sel(cur)
    sel.warm = sel.cache[tuple(cur)][1].theta
    for sweep in range(MAX_SWEEPS):
        start = best
        for j in range(len(penalties)):
            def f(v, j=j):
                trial = cur.copy()
                trial[j] = v
                return sel(trial)
            v, val = _golden(f, *LOG_TAU_BOUNDS)
            if val <= best:
                cur[j], best = v, val
                sel.warm = sel.cache[tuple(float(u) for u in cur)][1].theta
        log.debug("sweep %d: log tau %s score %.6f", sweep, cur, best)
        if len(penalties) == 1 or start - best < SWEEP_TOL:
            break
    tau = np.exp(cur)
    fit = fit_inner(strata, penalties, tau, sel.warm)
    return tau, fit


def _assemble(specs, real, fit: InnerFit, tau, n_strata, criterion, transforms, time_ecdf, forced):
    return FittedModel(list(specs), real, fit.theta, fit.cov, np.asarray(tau, dtype=float), fit.loglik, fit.edf,
                       _block_edf(real, fit.edf_per_coef), fit.converged, fit.n_iter, fit.grad_norm, n_strata,
                       criterion, dict(transforms or {}), time_ecdf, list(forced))


def guard_degenerate(design: CaseControlDesign, specs: Sequence[SmoothSpec]) -> tuple[list[SmoothSpec], list[str]]:
    """Force LE for covariates that are almost always zero among controls."""
    controls = ~design.is_event
    out, forced = [], []
    for s in specs:
        if s.kind is not EffectKind.LE and controls.any():
            frac = float(np.mean(design.column(s.covariate)[controls] != 0))
            if frac < DEGENERATE_FRACTION:
                warnings.warn(f"{s.covariate!r} non-zero in {frac:.3%} of controls; using a linear effect",
                              stacklevel=3)
                s = SmoothSpec(s.covariate, EffectKind.LE)
                forced.append(s.covariate)
        out.append(s)
    return out, forced


def fit_model(design: CaseControlDesign, specs: Sequence[SmoothSpec], time=None, tau=None,
              criterion: str = "aic", transforms: Mapping[str, float] | None = None,
              time_ecdf=None, guard: bool = True) -> FittedModel:
    """Realize the bases on ``design`` and fit, selecting smoothing parameters unless ``tau`` is given."""
    forced: list[str] = []
    if guard:
        specs, forced = guard_degenerate(design, specs)
    time = design.time if time is None else np.asarray(time, dtype=float)
    cov = {s.covariate: design.column(s.covariate) for s in specs}
    real = realize(specs, cov, time)
    strata = Strata(real.X, design.offsets)
    if tau is None:
        tau, fit = select_tau(strata, real, criterion)
    else:
        tau = np.asarray(tau, dtype=float).ravel()
        if len(tau) != len(real.penalties):
            raise ValueError(f"expected {len(real.penalties)} smoothing parameters, got {len(tau)}")
        fit = fit_inner(strata, real.penalties, tau)
    model = _assemble(specs, real, fit, tau, design.n_strata, criterion, transforms, time_ecdf, forced)
    return model


# ------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonRow:
    excluded: str
    d_aic: float
    d_loglik: float
    d_deviance: float

    def format(self) -> str:
        return f"{self.excluded} | {self.d_aic:.2f} | {self.d_loglik:.2f} | {self.d_deviance:.2f}"


def drop_one_comparison(design: CaseControlDesign, full: FittedModel, time=None,
                        label=None) -> list[ComparisonRow]:
    """Refit without each covariate in turn.

    Differences are full minus reduced, so a useful covariate has negative
    AIC and deviance differences and a positive log-likelihood difference.
    """
    rows = []
    for s in full.specs:
        reduced_specs = [r for r in full.specs if r.covariate != s.covariate]
        reduced = fit_model(design, reduced_specs, time=time, criterion=full.criterion, guard=False)
        name = label(s) if label else s.covariate
        rows.append(ComparisonRow(name, full.aic - reduced.aic, full.loglik - reduced.loglik,
                                  full.deviance - reduced.deviance))
    return rows


def format_comparison(rows: Sequence[ComparisonRow]) -> str:
    head = ["Excluded Covariate", "AIC Difference", "LogLik Difference", "Deviance Difference"]
    return _aligned(head, [[r.excluded, f"{r.d_aic:.2f}", f"{r.d_loglik:.2f}", f"{r.d_deviance:.2f}"] for r in rows])


# ---------------------------------------------------------------- summary


@dataclass(frozen=True)
class TermSummary:
    term: str
    kind: str
    estimate: float = math.nan
    std_error: float = math.nan
    z: float = math.nan
    p_value: float = math.nan
    edf: float = math.nan
    chi2: float = math.nan

    def format(self) -> str:
        if self.kind == "le":
            return f"{self.term} | {self.estimate:.2f} | {self.std_error:.2f} | {self.z:.2f}"
        return f"{self.term} | edf {self.edf:.2f} | chi2 {self.chi2:.2f} | p {self.p_value:.3g}"


def summarize(model: FittedModel) -> list[TermSummary]:
    out = []
    for k, s in enumerate(model.specs):
        th, V = model.block_theta(k), model.block_cov(k)
        if s.kind is EffectKind.LE:
            est, se = float(th[0]), float(math.sqrt(max(V[0, 0], 0.0)))
            z = est / se if se > 0 else math.nan
            out.append(TermSummary(s.covariate, "le", est, se, z, float(2 * stats.norm.sf(abs(z)))))
        else:
            edf = model.block_edf[k]
            rank = max(1, int(round(edf)))
            chi2 = float(th @ linalg.pinvh(V, atol=0, rtol=1e-10) @ th)
            out.append(TermSummary(s.covariate, s.kind.value, edf=edf, chi2=chi2,
                                   p_value=float(stats.chi2.sf(chi2, rank))))
    return out


def format_summary(rows: Sequence[TermSummary]) -> str:
    head = ["Term", "Kind", "Estimate", "Std. Error", "z value", "Pr(>|z|)", "edf", "Chi.sq"]

    def f(v, fmt=".2f"):
        return "" if math.isnan(v) else format(v, fmt)

    body = [[r.term, r.kind, f(r.estimate), f(r.std_error), f(r.z), f(r.p_value, ".3g"), f(r.edf), f(r.chi2)]
            for r in rows]
    return _aligned(head, body)


def summary_tsv(rows: Sequence[TermSummary]) -> str:
    lines = ["term\tkind\testimate\tstd_error\tz\tp_value\tedf\tchi2"]
    for r in rows:
        lines.append("\t".join([r.term, r.kind] + [repr(float(v)) for v in
                                                    (r.estimate, r.std_error, r.z, r.p_value, r.edf, r.chi2)]))
    return "\n".join(lines) + "\n"


def comparison_tsv(rows: Sequence[ComparisonRow]) -> str:
    lines = ["excluded\td_aic\td_loglik\td_deviance"]
    lines += [f"{r.excluded}\t{r.d_aic!r}\t{r.d_loglik!r}\t{r.d_deviance!r}" for r in rows]
    return "\n".join(lines) + "\n"


def _aligned(head, body) -> str:
    widths = [max(len(str(r[c])) for r in [head, *body]) for c in range(len(head))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in [head, *body]]
    return "\n".join(lines) + "\n"
