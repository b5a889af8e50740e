"""Effect curves and surfaces: prediction, centering, replication consensus, SVG output."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .fitter import FittedModel
from .smooth import EffectKind, TVEBlock, TVNLEBlock, NLEBlock
from .transform import inverse

VAR_FLOOR = 1e-300


@dataclass
class EffectSurface:
    """Log-rate contribution on a (time x covariate) grid.

    ``values[i, j]`` is the contribution at ``t_grid[i]``, ``x_grid[j]``; a
    row is therefore one time-column of the heatmap.
    """

    covariate: str
    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    variance: np.ndarray
    x_original: np.ndarray | None = None
    centered: bool = False
    beyond_range: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.t_grid), len(self.x_grid))
        self.variance = np.asarray(self.variance, dtype=float).reshape(self.values.shape)
        if self.x_original is None:
            self.x_original = self.x_grid.copy()

    def grid_text(self) -> str:
        lines = ["t | x_transformed | x_original | value | variance"]
        for i, t in enumerate(self.t_grid):
            for j, x in enumerate(self.x_grid):
                lines.append(f"{t!r} | {x!r} | {float(self.x_original[j])!r} | "
                             f"{float(self.values[i, j])!r} | {float(self.variance[i, j])!r}")
        return "\n".join(lines) + "\n"


@dataclass
class ConsensusEstimate:
    covariate: str
    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_reps: int
    x_original: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.x_original is None:
            self.x_original = np.asarray(self.x_grid, dtype=float).copy()


def default_grid(lo: float, hi: float, n: int = 30) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _block_ranges(block):
    def rng(b):
        return b.lo, b.lo + b.width
    t_rng = rng(block.time_basis) if isinstance(block, (TVEBlock, TVNLEBlock)) else None
    x_rng = rng(block.cov_basis) if isinstance(block, (NLEBlock, TVNLEBlock)) else None
    return t_rng, x_rng


def predict_surface(model: FittedModel, covariate: str, t_grid, x_grid, centered: bool = False) -> EffectSurface:
    """Evaluate one covariate's contribution with delta-method pointwise variances.

    With ``centered=True`` each time-column's mean over ``x_grid`` is removed
    before evaluation, so the variances are those of the centered contrast.
    """
    k = model.realization.block_index(covariate)
    block = model.realization.blocks[k]
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    T, Xg = np.meshgrid(t_grid, x_grid, indexing="ij")
    D = block.design(T.ravel(), Xg.ravel())
    if centered:
        D3 = D.reshape(len(t_grid), len(x_grid), -1)
        D = (D3 - D3.mean(axis=1, keepdims=True)).reshape(D.shape)
    th, V = model.block_theta(k), model.block_cov(k)
    values = D @ th
    variance = np.maximum(np.einsum("ij,jk,ik->i", D, V, D), 0.0)
    t_rng, x_rng = _block_ranges(block)
    beyond = np.zeros(T.shape, dtype=bool)
    if t_rng is not None:
        beyond |= (T < t_rng[0]) | (T > t_rng[1])
    if x_rng is not None:
        beyond |= (Xg < x_rng[0]) | (Xg > x_rng[1])
    c = model.transforms.get(covariate)
    x_orig = inverse(x_grid, c) if c is not None else x_grid.copy()
    meta = {"kind": block.spec.kind.value}
    if centered:
        meta["variance_adjusted_for_centering"] = True
    return EffectSurface(covariate, t_grid, x_grid, values, variance, np.atleast_1d(x_orig), centered=centered,
                         beyond_range=beyond, meta=meta)


def predict_curve(model: FittedModel, covariate: str, x_grid, t: float = 0.5) -> EffectSurface:
    """Contribution as a function of the covariate at a single time."""
    return predict_surface(model, covariate, [t], x_grid)


def tve_coefficient(model: FittedModel, covariate: str, t_grid) -> EffectSurface:
    """Time-varying coefficient (contribution per unit covariate) of an LE or TVE term."""
    kind = model.realization.blocks[model.realization.block_index(covariate)].spec.kind
    if kind not in (EffectKind.LE, EffectKind.TVE):
        raise ValueError(f"{covariate!r} has no scalar coefficient ({kind.value})")
    return predict_surface(model, covariate, t_grid, [1.0])


def center(surface: EffectSurface) -> EffectSurface:
    """Remove each time-column's mean over the covariate grid.

    Variances are left as they are (the subtracted mean's uncertainty is
    ignored); use ``predict_surface(..., centered=True)`` for exact ones.
    """
    vals = surface.values - surface.values.mean(axis=1, keepdims=True)
    meta = dict(surface.meta, variance_adjusted_for_centering=False)
    return replace(surface, values=vals, centered=True, meta=meta)


def _interp_axis(values: np.ndarray, old: np.ndarray, new: np.ndarray, axis: int) -> np.ndarray:
    if len(old) == 1:
        return np.repeat(values, len(new), axis=axis)
    return np.apply_along_axis(lambda v: np.interp(new, old, v), axis, values)


def interpolate(surface: EffectSurface, t_grid, x_grid) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation of values and variances onto a new grid (edge values held)."""
    t_grid, x_grid = np.asarray(t_grid, dtype=float), np.asarray(x_grid, dtype=float)
    out = []
    for arr in (surface.values, surface.variance):
        a = _interp_axis(arr, surface.x_grid, x_grid, axis=1)
        out.append(_interp_axis(a, surface.t_grid, t_grid, axis=0))
    return out[0], out[1]


def aggregate(surfaces: Sequence[EffectSurface], t_grid=None, x_grid=None, align: str | None = None,
              truth: np.ndarray | None = None, percentiles=(5.0, 95.0)) -> ConsensusEstimate:
    """Inverse-variance weighted pointwise consensus across replications.

    ``align``: ``None`` keeps levels (identified effects); ``"zero"`` shifts
    each time-column to mean zero; ``"truth"`` shifts each time-column to the
    truth's mean.  Percentile bands are shifted by the same amounts.
    """
    if len(surfaces) < 2:
        raise ValueError("need at least two replications")
    names = {s.covariate for s in surfaces}
    if len(names) != 1:
        raise ValueError(f"mismatched covariates: {sorted(names)}")
    t_grid = surfaces[0].t_grid if t_grid is None else np.asarray(t_grid, dtype=float)
    x_grid = surfaces[0].x_grid if x_grid is None else np.asarray(x_grid, dtype=float)
    vals, vars_ = zip(*(interpolate(s, t_grid, x_grid) for s in surfaces))
    vals, vars_ = np.stack(vals), np.stack(vars_)
    w = 1.0 / np.maximum(vars_, VAR_FLOOR)
    w = w / w.sum(axis=0, keepdims=True)
    cons = (w * vals).sum(axis=0)
    lower, upper = np.percentile(vals, percentiles, axis=0)
    if align is not None:
        if align == "zero":
            target = np.zeros((len(t_grid), 1))
        elif align == "truth":
            if truth is None:
                raise ValueError("align='truth' needs the truth grid")
            target = np.asarray(truth, dtype=float).reshape(cons.shape).mean(axis=1, keepdims=True)
        else:
            raise ValueError(f"unknown alignment {align!r}")
        shift = target - cons.mean(axis=1, keepdims=True)
        cons, lower, upper = cons + shift, lower + shift, upper + shift
    return ConsensusEstimate(names.pop(), t_grid, x_grid, cons, lower, upper, len(surfaces),
                             surfaces[0].x_original if x_grid is surfaces[0].x_grid else None, w)


# ----------------------------------------------------------------- SVG


def _color(v: float, vmax: float) -> str:
    lo, mid, hi = (33, 102, 172), (247, 247, 247), (178, 24, 43)
    if vmax <= 0:
        return "#%02x%02x%02x" % mid
    s = max(-1.0, min(1.0, v / vmax))
    end = hi if s > 0 else lo
    a = abs(s)
    rgb = [round(m + (e - m) * a) for m, e in zip(mid, end)]
    return "#%02x%02x%02x" % tuple(rgb)


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def render_heatmap(surface, path, title: str | None = None) -> str:
    """Write an SVG heatmap: time on the horizontal axis, covariate vertical.

    The colour scale is diverging and symmetric about zero; covariate ticks
    use the original (back-transformed) scale.  Returns the SVG text.
    """
    vals = np.asarray(surface.values, dtype=float)
    t_grid, x_grid = np.asarray(surface.t_grid), np.asarray(surface.x_grid)
    x_orig = np.asarray(surface.x_original if surface.x_original is not None else x_grid)
    nt, nx = vals.shape
    W, H = 640, 480
    left, top, pw, ph = 70, 40, 440, 380
    cw, ch = pw / nt, ph / nx
    vmax = float(np.max(np.abs(vals))) if vals.size else 0.0
    title = title or surface.covariate
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<title>{title}</title>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>']
    for i in range(nt):
        for j in range(nx):
            x = left + i * cw
            y = top + ph - (j + 1) * ch
            out.append(f'<rect class="cell" x="{x:.3f}" y="{y:.3f}" width="{cw:.3f}" height="{ch:.3f}" '
                       f'fill="{_color(vals[i, j], vmax)}"/>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in np.unique(np.linspace(0, nt - 1, min(nt, 5)).round().astype(int)):
        x = left + (k + 0.5) * cw
        out.append(f'<text class="tick" x="{x:.3f}" y="{top + ph + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{_fmt(t_grid[k])}</text>')
    for k in np.unique(np.linspace(0, nx - 1, min(nx, 5)).round().astype(int)):
        y = top + ph - (k + 0.5) * ch
        out.append(f'<text class="tick" x="{left - 6}" y="{y:.3f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{_fmt(x_orig[k])}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 8}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">time</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{surface.covariate}</text>')
    bx, nb = left + pw + 30, 50
    bh = ph / nb
    for k in range(nb):
        v = vmax * (1 - 2 * (k + 0.5) / nb)
        out.append(f'<rect class="bar" x="{bx}" y="{top + k * bh:.3f}" width="16" height="{bh:.3f}" '
                   f'fill="{_color(v, vmax)}"/>')
    for frac, v in ((0.0, vmax), (0.5, 0.0), (1.0, -vmax)):
        out.append(f'<text x="{bx + 22}" y="{top + frac * ph + 4:.3f}" font-family="sans-serif" '
                   f'font-size="10">{_fmt(v)}</text>')
    out.append("</svg>\n")
    svg = "\n".join(out)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    return svg
