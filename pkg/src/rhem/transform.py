"""Monotone covariate squashing ``1 - exp(-x/c)`` with a KS-optimal scale, and the
ECDF time transform."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

GRID_POINTS = 200
REL_TOL = 1e-4
LN2 = math.log(2.0)


class DegenerateColumnError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleFit:
    c: float
    ks: float
    degenerate: bool = False


def apply(x, c: float):
    """Map non-negative covariate values into [0, 1)."""
    if not c > 0:
        raise ValueError("scale must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("covariate values must be non-negative")
    # dividing by fl(c * ln 2) first makes x = c * ln 2 map to exactly 0.5
    out = -np.expm1(-(x / (c * LN2)) * LN2)
    return float(out) if out.ndim == 0 else out


def inverse(u, c: float):
    """Back-transform to the original covariate scale."""
    u = np.asarray(u, dtype=float)
    out = -c * np.log1p(-u)
    return float(out) if out.ndim == 0 else out


def ks_uniform(sorted_u: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between the sample ECDF and Uniform(0, 1)."""
    n = len(sorted_u)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - sorted_u), np.max(sorted_u - (i - 1) / n)))


def fit_scale(values) -> ScaleFit:
    """Scale ``c`` minimizing the KS distance of the transformed sample to uniform.

    Log-spaced grid search followed by a bounded golden-section refinement
    around the best grid point.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0 or np.any(x < 0):
        raise ValueError("values must be a non-empty non-negative sample")
    positive = x[x > 0]
    if positive.size == 0:
        raise DegenerateColumnError("all-zero column")
    degenerate = bool(x[0] == x[-1])
    if degenerate:
        warnings.warn("constant column: no scale makes it uniform", stacklevel=2)

    def objective(log_c):
        return ks_uniform(-np.expm1(-x / math.exp(log_c)))

    lo, hi = math.log(positive[0] / 10), math.log(x[-1] * 10)
    grid = np.linspace(lo, hi, GRID_POINTS)
    scores = np.array([objective(g) for g in grid])
    k = int(np.argmin(scores))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, GRID_POINTS - 1)]
    best_log_c, best = grid[k], scores[k]
    if b > a:
        # xatol on log c is a relative tolerance on c
        res = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": REL_TOL})
        if res.fun <= best:
            best_log_c, best = float(res.x), float(res.fun)
    return ScaleFit(math.exp(best_log_c), float(best), degenerate)


@dataclass
class TimeECDF:
    event_times: np.ndarray

    @classmethod
    def fit(cls, event_times) -> "TimeECDF":
        return cls(np.sort(np.asarray(event_times, dtype=float)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.searchsorted(self.event_times, t, side="right") / len(self.event_times)
        return float(out) if out.ndim == 0 else out


@dataclass
class TransformManifest:
    scales: dict[str, ScaleFit]

    def to_text(self) -> str:
        lines = ["covariate | c | ks"]
        for name, fit in self.scales.items():
            lines.append(f"{name} | {fit.c!r} | {fit.ks!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TransformManifest":
        scales = {}
        for line in text.splitlines()[1:]:
            if not line.strip():
                continue
            name, c, ks = (p.strip() for p in line.split("|"))
            scales[name] = ScaleFit(float(c), float(ks))
        return cls(scales)


def transform_design(design, columns=None):
    """Fit scales on pooled event and control values and transform those columns.

    All-zero columns are dropped with a warning.  Returns the new design and
    the manifest.
    """
    columns = list(design.names if columns is None else columns)
    scales, new_cols, dropped = {}, {}, []
    for name in columns:
        v = design.column(name)
        try:
            fit = fit_scale(v)
        except DegenerateColumnError:
            warnings.warn(f"column {name!r} is all zero; dropped", stacklevel=2)
            dropped.append(name)
            continue
        scales[name] = fit
        new_cols[name] = apply(v, fit.c)
    out = design.with_columns(**new_cols)
    if dropped:
        keep = [k for k, n in enumerate(out.names) if n not in dropped]
        out = type(design)([out.names[k] for k in keep], out.X[:, keep], out.stratum, out.is_event,
                           out.time, out.flagged, list(out.skipped))
    return out, TransformManifest(scales)
