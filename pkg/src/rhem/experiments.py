"""Replicated simulation studies: simulate, sample controls, fit, aggregate surfaces."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fitter import ConvergenceWarning, FittedModel, fit_model
from .sampling import CaseControlDesign
from .simulate import ModelName, SimulationConfig, simulate_controls, simulate_stream
from .smooth import EffectKind, SmoothSpec
from .surfaces import ConsensusEstimate, EffectSurface, aggregate, predict_surface, render_heatmap, tve_coefficient

log = logging.getLogger(__name__)

GRID = 30


@dataclass(frozen=True)
class ReplicationConfig:
    model: ModelName = ModelName.RG1
    reps: int = 20
    n_events: int = 5000
    n_actors: int = 30
    max_size: int = 3
    seed: int = 0
    L: int = 10
    Q: int = 10
    grid: int = GRID

    def simulation(self, rep: int) -> SimulationConfig:
        return SimulationConfig(self.n_actors, self.max_size, self.n_events, model=self.model,
                                seed=self.seed * 100_003 + rep)


def model_specs(cfg: ReplicationConfig) -> dict[str, list[SmoothSpec]]:
    """Competing effect specifications fitted in each scenario."""
    L, Q = cfg.L, cfg.Q
    le = lambda n: SmoothSpec(n)  # noqa: E731
    tve = lambda n: SmoothSpec(n, EffectKind.TVE, L=L)  # noqa: E731
    if cfg.model is ModelName.RG1:
        return {
            "le": [le("log_subrep1"), le("log_subrep2"), le("xbar_sq"), le("size")],
            "nle": [le("log_subrep1"), le("log_subrep2"), SmoothSpec("xbar_sq", EffectKind.NLE, Q=Q), le("size")],
            "tvnle": [le("log_subrep1"), le("log_subrep2"), SmoothSpec("xbar_sq", EffectKind.TVNLE, L=L, Q=Q),
                      le("size")],
        }
    if cfg.model is ModelName.RG23:
        return {
            "le": [le("log_subrep1"), le("log_subrep2"), le("xbar_sq"), le("size")],
            "tve": [tve("log_subrep1"), tve("log_subrep2"), tve("xbar_sq"), le("size")],
        }
    return {
        "tvnle": [tve("log_subrep1"), tve("log_subrep2"), SmoothSpec("xbar", EffectKind.TVNLE, L=L, Q=Q),
                  le("size")],
        "tve": [tve("log_subrep1"), tve("log_subrep2"), tve("xbar"), le("size")],
        "nle": [tve("log_subrep1"), tve("log_subrep2"), SmoothSpec("xbar", EffectKind.NLE, Q=Q), le("size")],
    }


def focal_covariate(model: ModelName) -> str:
    return "xbar" if model is ModelName.RG23_TVNLE else "xbar_sq"


@dataclass
class Replication:
    index: int
    design: CaseControlDesign
    models: dict[str, FittedModel]
    diagnostics: dict = field(default_factory=dict)


def run_replication(cfg: ReplicationConfig, rep: int) -> Replication:
    sim = simulate_stream(cfg.simulation(rep))
    design = simulate_controls(sim)
    models = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for name, specs in model_specs(cfg).items():
            models[name] = fit_model(design, specs, guard=False)
    log.info("replication %d done", rep)
    return Replication(rep, design, models, dict(sim.diagnostics))


def central_range(reps: list[Replication], column: str, lo=5.0, hi=95.0) -> tuple[float, float]:
    vals = np.concatenate([r.design.column(column) for r in reps])
    a, b = np.percentile(vals, [lo, hi])
    return float(a), float(b)


@dataclass
class StudyResult:
    config: ReplicationConfig
    replications: list[Replication]
    t_grid: np.ndarray
    x_grid: np.ndarray
    consensus: dict[str, ConsensusEstimate]
    truth: dict[str, np.ndarray]
    metrics: dict[str, float]


def truth_surface(model: ModelName, t_grid, x_grid) -> np.ndarray:
    """True contribution of the focal covariate on the grid (rows: time)."""
    T, X = np.meshgrid(t_grid, x_grid, indexing="ij")
    if model is ModelName.RG1:
        return X.copy()
    if model is ModelName.RG23:
        return 10.0 * T * X
    return 10.0 * T * X ** 2


def _center_rows(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=1, keepdims=True)


def _corr(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.corrcoef(a, b)[0, 1])


def run_study(cfg: ReplicationConfig, replications: list[Replication] | None = None) -> StudyResult:
    reps = replications if replications is not None else [run_replication(cfg, r) for r in range(cfg.reps)]
    focal = focal_covariate(cfg.model)
    x_grid = np.linspace(*central_range(reps, focal), cfg.grid)
    t_grid = np.linspace(0.0, 1.0, cfg.grid)
    consensus, truth, metrics = {}, {}, {}

    if cfg.model is ModelName.RG1:
        tr = truth_surface(cfg.model, [0.5], x_grid)
        truth["nle"] = tr
        curves = [predict_surface(r.models["nle"], focal, [0.5], x_grid, centered=True) for r in reps]
        consensus["nle"] = c = aggregate(curves, align="truth", truth=tr)
        rng_ = float(np.ptp(tr))
        metrics["nle_rmse_over_range"] = float(np.sqrt(np.mean((c.values - tr) ** 2)) / rng_)
        metrics["nle_band_coverage"] = float(np.mean((c.lower <= tr) & (tr <= c.upper)))
        k = lambda m: m.realization.block_index(focal)  # noqa: E731
        edfs = [r.models["nle"].block_edf[k(r.models["nle"])] for r in reps]
        metrics["nle_edf_max"] = float(np.max(edfs))
        metrics["nle_edf_mean"] = float(np.mean(edfs))
        slopes = np.array([r.models["le"].block_theta(k(r.models["le"]))[0] for r in reps])
        ses = np.array([np.sqrt(r.models["le"].block_cov(k(r.models["le"]))[0, 0]) for r in reps])
        w = 1 / ses ** 2
        metrics["le_consensus_slope"] = float(np.sum(w * slopes) / np.sum(w))
        surfs = [predict_surface(r.models["tvnle"], focal, t_grid, x_grid, centered=True) for r in reps]
        consensus["tvnle"] = s = aggregate(surfs, align="zero")
        truth["tvnle"] = _center_rows(truth_surface(cfg.model, t_grid, x_grid))
        d2 = np.abs(np.diff(s.values, n=2, axis=1))
        metrics["tvnle_second_diff_over_range"] = float(d2.max() / np.ptp(s.values))
        metrics["tvnle_corr"] = _corr(s.values, truth["tvnle"])

    elif cfg.model is ModelName.RG23:
        for cov in ("log_subrep1", "log_subrep2", "xbar_sq"):
            curves = [tve_coefficient(r.models["tve"], cov, t_grid) for r in reps]
            c = aggregate(curves)
            consensus[f"tve:{cov}"] = c
            sign = -1.0 if cov == "log_subrep1" else 1.0
            tr = sign * 10.0 * t_grid[:, None]
            truth[f"tve:{cov}"] = tr
            metrics[f"tve_rmse_over_range:{cov}"] = float(np.sqrt(np.mean((c.values - tr) ** 2)) / np.ptp(tr))
            les = [tve_coefficient(r.models["le"], cov, t_grid) for r in reps]
            le = aggregate(les)
            consensus[f"le:{cov}"] = le
            outside = (le.values < c.lower) | (le.values > c.upper)
            metrics[f"le_outside_tve_band:{cov}"] = float(np.mean(outside))

    else:
        truth["tvnle"] = tr = _center_rows(truth_surface(cfg.model, t_grid, x_grid))
        for name in ("tvnle", "tve", "nle"):
            surfs = [predict_surface(r.models[name], focal, t_grid, x_grid, centered=True) for r in reps]
            consensus[name] = s = aggregate(surfs, align="zero")
            metrics[f"{name}_corr"] = _corr(s.values, tr)

    return StudyResult(cfg, reps, t_grid, x_grid, consensus, truth, metrics)


def write_study(result: StudyResult, out_dir: Path) -> list[Path]:
    """Per-replication designs and model files plus consensus grids and heatmaps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for r in result.replications:
        d = out_dir / f"rep{r.index:03d}"
        d.mkdir(exist_ok=True)
        r.design.write(d / "design.tsv")
        written.append(d / "design.tsv")
        for name, m in r.models.items():
            m.save(d / f"model_{name}.bin")
            written.append(d / f"model_{name}.bin")
    for key, c in result.consensus.items():
        stem = "consensus_" + key.replace(":", "_")
        surf = EffectSurface(c.covariate, c.t_grid, c.x_grid, c.values, np.zeros_like(c.values), c.x_original)
        (out_dir / f"{stem}.tsv").write_text(surf.grid_text(), encoding="utf-8")
        written.append(out_dir / f"{stem}.tsv")
        if c.values.shape[0] > 1 and c.values.shape[1] > 1:
            render_heatmap(c, out_dir / f"{stem}.svg", title=f"{key} ({result.config.model.value})")
            written.append(out_dir / f"{stem}.svg")
    for key, tr in result.truth.items():
        if tr.shape[0] > 1 and tr.shape[1] > 1:
            surf = EffectSurface("truth", result.t_grid, result.x_grid, tr, np.zeros_like(tr))
            render_heatmap(surf, out_dir / f"truth_{key}.svg", title=f"true centered effect ({key})")
            written.append(out_dir / f"truth_{key}.svg")
    return written
