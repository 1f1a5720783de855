import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msadmm.errors import InvalidInputError, InvariantViolation
from msadmm.multiscale import (
    PenaltyEval,
    WindowSystem,
    active_gradients,
    build_window_system_1d,
    build_window_system_2d,
    eval_penalty,
    scale_factor,
)

import oracles


def test_count_1d_long_signal():
    assert len(build_window_system_1d(512, 1, 20, 0.1)) == 10050


def test_count_1d_small():
    assert len(build_window_system_1d(8, 1, 3, 0.0)) == 21
    ws = build_window_system_1d(5, 5, 5, 0.0)
    assert len(ws) == 1
    assert ws.window(0).offset == (0,) and ws.window(0).extent == (5,)


def test_count_2d():
    assert len(build_window_system_2d(64, 64, [1, 2], 0.1)) == 8065
    assert len(build_window_system_2d(2, 2, [2], 0.0)) == 1
    assert len(build_window_system_2d(3, 4, [1, 2], 0.0)) == 18


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 1024), data=st.data())
def test_count_formula_1d(n, data):
    lmin = data.draw(st.integers(1, n))
    lmax = data.draw(st.integers(lmin, n))
    ws = build_window_system_1d(n, lmin, lmax, 0.0)
    assert len(ws) == sum(n - L + 1 for L in range(lmin, lmax + 1))


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 128), w=st.integers(1, 128), data=st.data())
def test_count_formula_2d(h, w, data):
    sizes = data.draw(st.sets(st.integers(1, min(h, w)), min_size=1, max_size=4))
    ws = build_window_system_2d(h, w, sizes, 0.0)
    assert len(ws) == sum((h - s + 1) * (w - s + 1) for s in sizes)


def test_builder_errors():
    with pytest.raises(InvalidInputError):
        build_window_system_1d(5, 1, 6, 0.0)
    with pytest.raises(InvalidInputError):
        build_window_system_1d(5, 3, 2, 0.0)
    with pytest.raises(InvalidInputError):
        build_window_system_1d(5, 1, 2, -0.1)
    with pytest.raises(InvalidInputError):
        build_window_system_2d(3, 4, [4], 0.0)


def test_canonical_order():
    ws = build_window_system_2d(4, 5, [2, 1], 0.0)
    keys = [(w.extent, w.offset) for w in ws.windows]
    assert keys == sorted(keys)
    for j, win in enumerate(ws.windows):
        assert all(o + e <= n for o, e, n in zip(win.offset, win.extent, ws.image_shape))
        assert win.scale > 0


def test_scaling_rules():
    assert scale_factor(4) == 0.5
    assert scale_factor(4, "unit") == 1.0
    assert scale_factor(4, "mean") == 0.25
    assert scale_factor(9, lambda k: 2.0) == 2.0
    with pytest.raises(InvalidInputError):
        scale_factor(4, "bogus")
    ws = build_window_system_1d(6, 1, 3, 0.0, scaling="unit")
    assert ws.scales == (1.0, 1.0, 1.0)


def test_zero_residual():
    y = np.arange(6.0)
    ws = build_window_system_1d(6, 1, 3, 0.1)
    ev = eval_penalty(ws, y, y)
    assert ev.theta == 0.0
    assert ev.active.tolist() == [len(ws)]
    assert ev.zero_active


def test_single_pixel_window_example():
    ws = WindowSystem(image_shape=(4,), extents=((1,),), scales=(1.0,), q=0.5)
    v = np.array([1.0, 0, 0, 0])
    ev = eval_penalty(ws, v, np.zeros(4))
    assert ev.theta == pytest.approx(0.5)
    assert ev.active.tolist() == [0]
    assert oracles.penalty(ws, v, np.zeros(4)) == pytest.approx(0.5)


def test_slack_constraints():
    rng = np.random.default_rng(1)
    ws = build_window_system_1d(10, 1, 4, 100.0)
    ev = eval_penalty(ws, rng.normal(size=10), rng.normal(size=10))
    assert ev.theta == 0.0 and ev.active.tolist() == [len(ws)]


@settings(max_examples=30, deadline=None)
@given(
    h=st.integers(1, 12),
    w=st.integers(1, 12),
    q=st.floats(0, 2),
    seed=st.integers(0, 2**32 - 1),
    data=st.data(),
)
def test_integral_image_matches_brute_force_2d(h, w, q, seed, data):
    sizes = data.draw(st.sets(st.integers(1, min(h, w)), min_size=1, max_size=3))
    ws = build_window_system_2d(h, w, sizes, q)
    rng = np.random.default_rng(seed)
    v, y = rng.normal(size=(h, w)), rng.normal(size=(h, w))
    ev = eval_penalty(ws, v, y)
    ref = oracles.window_values(ws, v - y)
    np.testing.assert_allclose(ev.inner, ref, atol=1e-10)
    assert ev.theta == pytest.approx(max(np.abs(ref).max() - q, 0.0), abs=1e-10)


def test_integral_image_matches_brute_force_32x32():
    ws = build_window_system_2d(32, 32, [1, 3, 8], 0.5)
    rng = np.random.default_rng(2)
    v, y = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
    np.testing.assert_allclose(ws.inner_products(v - y), oracles.window_values(ws, v - y), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 40), q=st.floats(0, 3), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_penalty_invariants_1d(n, q, seed, data):
    lmax = data.draw(st.integers(1, n))
    ws = build_window_system_1d(n, 1, lmax, q)
    rng = np.random.default_rng(seed)
    v, y = rng.normal(size=n), rng.normal(size=n)
    ev = eval_penalty(ws, v, y)
    np.testing.assert_allclose(ev.inner, oracles.window_values(ws, v - y), atol=1e-10)
    assert ev.theta == max(ev.values.max() - q, 0.0) >= 0
    assert ev.active.size > 0
    # feasibility encoding
    assert (ev.theta == 0) == bool(np.all(ev.values <= q))
    # active set definition
    win = ev.active_windows
    assert np.all(ev.values[win] - q >= ev.theta - ev.tol)
    others = np.setdiff1d(np.arange(len(ws)), win)
    assert np.all(ev.values[others] - q < ev.theta - ev.tol)
    assert ev.zero_active == (ev.theta <= ev.tol)
    np.testing.assert_array_equal(ev.inner_signs, np.sign(ev.inner[win]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0, 1), q=st.floats(0, 2))
def test_penalty_convex_along_segments(seed, t, q):
    rng = np.random.default_rng(seed)
    ws = build_window_system_2d(5, 6, [1, 2], q)
    y = rng.normal(size=(5, 6))
    v1, v2 = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    mid = eval_penalty(ws, (1 - t) * v1 + t * v2, y).theta
    ends = (1 - t) * eval_penalty(ws, v1, y).theta + t * eval_penalty(ws, v2, y).theta
    assert mid <= ends + 1e-12


def test_active_gradients_zero_case_contains_zero():
    ws = build_window_system_1d(5, 1, 2, 10.0)
    y = np.zeros(5)
    ev = eval_penalty(ws, y + 0.1, y)
    gens = active_gradients(ws, ev)
    assert any(not np.any(g) for g in gens)


def test_active_gradients_single_window():
    ws = build_window_system_1d(4, 1, 1, 0.5)
    v = np.array([0.0, 2.0, 0.0, 0.0])
    ev = eval_penalty(ws, v, np.zeros(4))
    gens = active_gradients(ws, ev)
    assert len(gens) == 1
    np.testing.assert_array_equal(gens[0], ws.weight(1))


def test_active_gradients_opposite_signs():
    ws = build_window_system_1d(4, 1, 1, 0.5)
    v = np.array([0.0, 2.0, -2.0, 0.0])
    ev = eval_penalty(ws, v, np.zeros(4))
    gens = active_gradients(ws, ev)
    assert ev.active_windows.tolist() == [1, 2]
    # sign oracle: sign of the signed window sums
    signs = np.sign(oracles.window_values(ws, v))[[1, 2]]
    np.testing.assert_array_equal(gens[0], signs[0] * ws.weight(1))
    np.testing.assert_array_equal(gens[1], signs[1] * ws.weight(2))
    assert signs.tolist() == [1.0, -1.0]


def test_zero_inner_product_with_q_zero_gives_both_signs():
    ws = build_window_system_1d(3, 1, 1, 0.0)
    ev = eval_penalty(ws, np.zeros(3), np.zeros(3))
    gens = active_gradients(ws, ev)
    # three windows with +-w_j each, plus the zero component
    assert len(gens) == 7


def test_zero_inner_product_with_positive_q_is_a_defect():
    ws = build_window_system_1d(3, 1, 1, 0.5)
    fake = PenaltyEval(
        theta=0.1,
        values=np.zeros(3),
        inner=np.zeros(3),
        active=np.array([0]),
        inner_signs=np.array([0.0]),
        tol=1e-10,
        M=3,
    )
    with pytest.raises(InvariantViolation):
        active_gradients(ws, fake)


def test_weight_cache_is_read_only():
    ws = build_window_system_1d(6, 1, 2, 0.0)
    w = ws.weight(3)
    assert w is ws.weight(3)
    with pytest.raises(ValueError):
        w[0] = 1.0


def test_manifest():
    ws = build_window_system_2d(3, 4, [1, 2], 0.25)
    lines = ws.manifest().splitlines()
    assert lines[0] == "# image_shape=3x4 M=18 q=0.25"
    assert lines[1:] == ["1x1 12 1.0", "2x2 6 0.5"]
