import re

import numpy as np
import pytest

from rhem.fitter import fit_model
from rhem.sampling import CaseControlDesign
from rhem.smooth import EffectKind, SmoothSpec
from rhem.surfaces import (EffectSurface, aggregate, center, predict_curve, predict_surface, render_heatmap,
                           tve_coefficient)


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(0)
    n, m = 600, 2
    X = rng.normal(size=(n * (m + 1), 3))
    time = np.repeat(np.linspace(0, 1, n), m + 1)
    d = CaseControlDesign(["a", "b", "c"], X, np.repeat(np.arange(n), m + 1), np.tile([True, False, False], n), time)
    specs = [SmoothSpec("a"), SmoothSpec("b", EffectKind.NLE, Q=6), SmoothSpec("c", EffectKind.TVNLE, L=4, Q=4)]
    return fit_model(d, specs, tau=[1.0, 1.0, 1.0])


def surf(values, variance=None, name="x"):
    values = np.asarray(values, dtype=float)
    var = np.ones_like(values) if variance is None else variance
    return EffectSurface(name, np.arange(values.shape[0]), np.arange(values.shape[1]), values, var)


def test_le_surface_is_linear_and_constant_in_time(model):
    s = predict_surface(model, "a", [0.0, 0.5, 1.0], [-1.0, 0.0, 2.0])
    assert np.allclose(s.values, s.values[0])
    assert np.allclose(s.values[0], model.theta[0] * np.array([-1.0, 0.0, 2.0]))
    assert np.allclose(s.variance[0], model.cov[0, 0] * np.array([1.0, 0.0, 4.0]))


def test_nle_is_time_invariant(model):
    s = predict_surface(model, "b", np.linspace(0, 1, 5), np.linspace(-1, 1, 7))
    assert np.allclose(s.values, s.values[0], atol=0)


def test_tve_coefficient_requires_scalar_term(model):
    assert tve_coefficient(model, "a", [0.2]).values[0, 0] == pytest.approx(model.theta[0])
    with pytest.raises(ValueError):
        tve_coefficient(model, "b", [0.2])


def test_centering(model):
    s = predict_surface(model, "c", np.linspace(0, 1, 6), np.linspace(-2, 2, 9))
    c = center(s)
    assert np.allclose(c.values.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(center(c).values, c.values, atol=1e-12)
    exact = predict_surface(model, "c", np.linspace(0, 1, 6), np.linspace(-2, 2, 9), centered=True)
    assert np.allclose(exact.values, c.values, atol=1e-12)
    # exact variance of the centered contrast by explicit linear algebra at one grid cell
    k = model.realization.block_index("c")
    blk = model.realization.blocks[k]
    xg = np.linspace(-2, 2, 9)
    D = blk.design(np.full(9, 0.4), xg)
    row = D[3] - D.mean(axis=0)
    one = predict_surface(model, "c", [0.4], xg, centered=True)
    assert one.variance[0, 3] == pytest.approx(row @ model.block_cov(k) @ row, rel=1e-10)


def test_beyond_range_flags(model):
    s = predict_curve(model, "b", [-100.0, 0.0, 100.0])
    assert list(s.beyond_range[0]) == [True, False, True]


def test_inverse_variance_weights():
    a, b = surf(np.zeros((2, 2)), np.full((2, 2), 1.0)), surf(np.ones((2, 2)), np.full((2, 2), 4.0))
    c = aggregate([a, b])
    assert np.allclose(c.weights[:, 0, 0], [0.8, 0.2])
    assert np.allclose(c.values, 0.2)


def test_percentile_band_and_alignment():
    rng = np.random.default_rng(1)
    surfaces = [surf(rng.normal(size=(3, 4)) + k) for k in range(20)]
    c = aggregate(surfaces)
    stack = np.stack([s.values for s in surfaces])
    assert np.allclose(c.lower, np.percentile(stack, 5, axis=0))
    assert np.all(c.lower <= c.upper)
    z = aggregate(surfaces, align="zero")
    assert np.allclose(z.values.mean(axis=1), 0)
    assert np.allclose(z.upper - z.lower, c.upper - c.lower)
    truth = np.arange(12.0).reshape(3, 4)
    t = aggregate(surfaces, align="truth", truth=truth)
    assert np.allclose(t.values.mean(axis=1), truth.mean(axis=1))
    with pytest.raises(ValueError):
        aggregate(surfaces, align="truth")


def test_aggregate_validation():
    with pytest.raises(ValueError, match="two"):
        aggregate([surf(np.zeros((2, 2)))])
    with pytest.raises(ValueError, match="mismatched"):
        aggregate([surf(np.zeros((2, 2)), name="a"), surf(np.zeros((2, 2)), name="b")])


def test_heatmap(tmp_path):
    t, x = np.linspace(0, 1, 30), np.linspace(-2, 2, 30)
    s = EffectSurface("x", t, x, np.outer(t, x), np.zeros((30, 30)))
    svg = render_heatmap(s, tmp_path / "a.svg")
    assert svg.count('class="cell"') == 900
    render_heatmap(s, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    flat = render_heatmap(EffectSurface("x", t, x, np.zeros((30, 30)), np.zeros((30, 30))), tmp_path / "c.svg")
    assert len(set(re.findall(r'class="cell"[^>]*fill="(#[0-9a-f]{6})"', flat))) == 1


def test_grid_text(model):
    s = predict_curve(model, "b", [0.0, 1.0])
    lines = s.grid_text().splitlines()
    assert lines[0] == "t | x_transformed | x_original | value | variance" and len(lines) == 3
