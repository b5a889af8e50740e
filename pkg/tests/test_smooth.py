import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rhem.fitter import fit_model
from rhem.sampling import CaseControlDesign
from rhem.smooth import (EffectKind, SmoothSpec, ThinPlateBasis, build_block, parse_spec_file, realize, row_kron,
                         sum_to_zero)


def lstsq_coef(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def quad(theta, S):
    return float(theta @ S @ theta)


@pytest.fixture
def tx():
    rng = np.random.default_rng(0)
    return rng.uniform(0, 1, 1000), rng.gamma(2.0, 1.0, 1000)


def test_spec_parse():
    s = SmoothSpec.parse("x = tvnle(L=6,Q=5)")
    assert (s.covariate, s.kind, s.L, s.Q) == ("x", EffectKind.TVNLE, 6, 5)
    assert SmoothSpec.parse(s.to_line()) == s
    assert SmoothSpec.parse("y = le").kind is EffectKind.LE
    specs = parse_spec_file("# comment\na = nle(Q=8)\n\nb = tve(L=4)  # trailing\n")
    assert [x.covariate for x in specs] == ["a", "b"]
    for bad in ["x tvnle", "x = spline", "x = nle(K=3)"]:
        with pytest.raises(ValueError):
            SmoothSpec.parse(bad)


def test_penalty_rank_and_psd():
    x = np.random.default_rng(1).uniform(0, 1, 1000)
    b = ThinPlateBasis.fit(x, 10)
    w = np.linalg.eigvalsh(b.penalty)
    assert np.min(w) >= -1e-10 * np.max(w)
    assert np.linalg.matrix_rank(b.penalty, tol=1e-9 * np.max(w)) == 8


def test_linear_function_in_null_space():
    x = np.random.default_rng(2).uniform(-3, 5, 500)
    b = ThinPlateBasis.fit(x, 10)
    B = b.evaluate(x)
    theta = lstsq_coef(B, 2.0 - 0.7 * x)
    assert np.max(np.abs(B @ theta - (2.0 - 0.7 * x))) < 1e-8
    assert quad(theta, b.penalty) < 1e-10


def test_sine_is_representable():
    x = np.linspace(0, 1, 1000)
    B = ThinPlateBasis.fit(x, 10).evaluate(x)
    y = np.sin(2 * np.pi * x)
    assert np.max(np.abs(B @ lstsq_coef(B, y) - y)) < 0.01


def test_few_distinct_values_reduce_dimension():
    with pytest.warns(UserWarning, match="distinct"):
        b = ThinPlateBasis.fit(np.repeat([0.0, 1.0, 2.0, 3.0, 4.0], 10), 10)
    assert b.dim == 5


def test_nle_block_dims(tx):
    t, x = tx
    blk = build_block(SmoothSpec("x", EffectKind.NLE, Q=8), t, x)
    X = blk.design(t, x)
    assert X.shape[1] == 7
    assert np.linalg.matrix_rank(blk.penalties[0], tol=1e-9 * np.abs(blk.penalties[0]).max()) == 6
    assert np.max(np.abs(X.sum(axis=0))) < 1e-8 * np.abs(X).sum()


def test_nle_linear_direction_unpenalized(tx):
    t, x = tx
    blk = build_block(SmoothSpec("x", EffectKind.NLE), t, x)
    X = blk.design(t, x)
    y = x - x.mean()
    theta = lstsq_coef(X, y)
    assert np.max(np.abs(X @ theta - y)) < 1e-8
    assert quad(theta, blk.penalties[0]) < 1e-10


def test_tensor_dims():
    rng = np.random.default_rng(3)
    t, x = rng.uniform(0, 1, 400), rng.normal(size=400)
    blk = build_block(SmoothSpec("x", EffectKind.TVNLE, L=5, Q=5), t, x)
    assert row_kron(blk.time_basis.evaluate(t), blk.cov_basis.evaluate(x)).shape[1] == 25
    assert blk.design(t, x).shape[1] == 20


def _separable_coef(blk, t, x, time_fn, cov_fn):
    """Tensor coefficients of time_fn(t) * cov_fn(x) from the two marginal projections."""
    c = lstsq_coef(blk.time_basis.evaluate(t), time_fn(t))
    d = lstsq_coef(blk.cov_basis.evaluate(x) @ blk.Z, cov_fn(x))
    return np.kron(c, d)


def test_bilinear_unpenalized_in_both_directions(tx):
    t, x = tx
    blk = build_block(SmoothSpec("x", EffectKind.TVNLE), t, x)
    # t * x equals t * (x - mean) plus a pure function of time, which the block excludes
    theta = _separable_coef(blk, t, x, lambda v: v, lambda v: v - x.mean())
    assert np.max(np.abs(blk.design(t, x) @ theta - t * (x - x.mean()))) < 1e-8
    for S in blk.penalties:
        assert quad(theta, S) < 1e-10


def test_time_curvature_only_penalized_on_time_side(tx):
    t, x = tx
    blk = build_block(SmoothSpec("x", EffectKind.TVNLE), t, x)
    theta = _separable_coef(blk, t, x, lambda v: v ** 2, lambda v: v - x.mean())
    S_t, S_x = blk.penalties
    assert quad(theta, S_x) < 1e-10
    assert quad(theta, S_t) > 1e-6


def test_pure_time_functions_excluded(tx):
    t, x = tx
    X = build_block(SmoothSpec("x", EffectKind.TVNLE), t, x).design(t, x)
    T = ThinPlateBasis.fit(t, 10).evaluate(t)
    # no non-zero tensor coefficient vector reproduces a function of time alone:
    # the largest cosine of the principal angles between the two spans stays below one
    qx, qt = np.linalg.qr(X)[0], np.linalg.qr(T)[0]
    assert np.linalg.svd(qx.T @ qt, compute_uv=False).max() < 1 - 1e-6


def _residual(A, B):
    """Largest relative residual of B's columns projected onto span(A)."""
    coef = lstsq_coef(A, B)
    return np.max(np.linalg.norm(B - A @ coef, axis=0) / np.linalg.norm(B, axis=0))


def test_nesting(tx):
    t, x = tx
    tv = build_block(SmoothSpec("x", EffectKind.TVNLE), t, x).design(t, x)
    nle = build_block(SmoothSpec("x", EffectKind.NLE), t, x).design(t, x)
    assert _residual(tv, nle) < 1e-8
    # TVE columns a_l(t) * x split into a_l(t) * (x - mean) plus the pure-time part a_l(t) * mean,
    # which the identifiability constraint removes from the tensor span
    tve = build_block(SmoothSpec("x", EffectKind.TVE), t, x).design(t, x)
    time_only = ThinPlateBasis.fit(t, 10).evaluate(t)
    assert _residual(np.column_stack([tv, time_only]), tve) < 1e-8


def test_mixed_model_column_count():
    rng = np.random.default_rng(4)
    n = 300
    cov = {k: rng.gamma(2.0, size=n) for k in "abcd"}
    specs = [SmoothSpec("a"), SmoothSpec("b"), SmoothSpec("c", EffectKind.NLE, Q=6),
             SmoothSpec("d", EffectKind.TVNLE, L=4, Q=4)]
    real = realize(specs, cov, rng.uniform(size=n))
    assert real.X.shape[1] == 2 + 5 + 12
    assert [lab[0] for lab in real.coef_labels()].count("d") == 12
    with pytest.raises(ValueError, match="duplicate"):
        realize([SmoothSpec("a"), SmoothSpec("a", EffectKind.NLE)], cov, np.zeros(n))


def test_le_block():
    real = realize([SmoothSpec("a")], {"a": np.arange(5.0)}, np.zeros(5))
    assert real.X.shape == (5, 1) and real.penalties == []


def test_penalties_invariant_to_row_order(tx):
    t, x = tx
    perm = np.random.default_rng(5).permutation(len(t))
    spec = SmoothSpec("x", EffectKind.TVNLE, L=6, Q=6)
    a = build_block(spec, t, x)
    b = build_block(spec, t[perm], x[perm])
    for Sa, Sb in zip(a.penalties, b.penalties):
        assert np.allclose(Sa, Sb, rtol=1e-9, atol=1e-9 * np.abs(Sa).max())


def test_sum_to_zero_orthonormal():
    X = np.random.default_rng(6).normal(size=(50, 6))
    Z = sum_to_zero(X)
    assert Z.shape == (6, 5)
    assert np.allclose(Z.T @ Z, np.eye(5))
    assert np.allclose(X.sum(axis=0) @ Z, 0)


def test_heavy_penalty_gives_linear_nle():
    rng = np.random.default_rng(7)
    n = 800
    x = rng.uniform(0, 3, 2 * n)
    stratum = np.repeat(np.arange(n), 2)
    is_event = np.tile([True, False], n)
    # events favour a non-linear function of x
    f = np.sin(2 * x)
    swap = rng.uniform(size=n) < 1 / (1 + np.exp(f[1::2] - f[0::2]))
    xe, xc = np.where(swap, x[1::2], x[0::2]), np.where(swap, x[0::2], x[1::2])
    X = np.column_stack([xe, xc]).ravel()[:, None]
    d = CaseControlDesign(["x"], X, stratum, is_event, np.repeat(np.linspace(0, 1, n), 2))
    m = fit_model(d, [SmoothSpec("x", EffectKind.NLE)], tau=[1e12])
    grid = np.linspace(0.1, 2.9, 50)
    blk = m.realization.blocks[0]
    vals = blk.design(None, grid) @ m.theta
    d2 = np.abs(np.diff(vals, 2))
    assert d2.max() < 1e-6 * max(np.ptp(vals), 1e-300)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 12), st.integers(0, 10_000))
def test_basis_penalty_psd_property(q, seed):
    x = np.random.default_rng(seed).normal(size=300)
    S = ThinPlateBasis.fit(x, q).penalty
    assert np.allclose(S, S.T)
    w = np.linalg.eigvalsh(S)
    assert w.min() >= -1e-10 * max(w.max(), 1e-300)
    assert np.all(S[-2:] == 0)
