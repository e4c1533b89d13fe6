from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtri

from dlframing.bound import default_betas
from dlframing.optimize import (
    KKT_TOL,
    SearchSpace,
    TradeoffPoint,
    default_search_space,
    default_w_grid,
    hull,
    hull_indices,
    optimize_eps,
    q_weights,
    solve_eps,
    sweep,
    tune_eps,
)
from dlframing.protocols import ProtocolParams, equal_split, evaluate
from dlframing.scenario import Scenario

EPS = 1e-4


def qinv(e):
    return -ndtri(np.asarray(e, dtype=float))


def grid_oracle(a, eps_total, n=200):
    """Two-stage grid search over (u1, u2) with u3 fixed by the constraint."""
    L = math.log1p(-eps_total)

    def search(lo1, hi1, lo2, hi2):
        g1 = np.linspace(lo1, hi1, n)
        g2 = np.linspace(lo2, hi2, n)
        U1, U2 = np.meshgrid(g1, g2, indexing="ij")
        U3 = L - U1 - U2
        ok = (U1 < 0) & (U2 < 0) & (U3 < 0)
        f = np.full(U1.shape, np.inf)
        f[ok] = sum(w * qinv(-np.expm1(U[ok])) for w, U in zip(a, (U1, U2, U3)))
        i = np.unravel_index(np.argmin(f), f.shape)
        return f[i], g1[i[0]], g2[i[1]], (g1[1] - g1[0]), (g2[1] - g2[0])

    f, u1, u2, h1, h2 = search(L, 0, L, 0)
    f2, *_ = search(u1 - 2 * h1, min(u1 + 2 * h1, 0), u2 - 2 * h2, min(u2 + 2 * h2, 0))
    return min(f, f2)


def test_symmetric_weights_give_equal_split():
    e = optimize_eps((1, 1, 1), EPS)
    np.testing.assert_allclose(e, [1 - (1 - EPS) ** (1 / 3)] * 3, rtol=1e-9)


def test_zero_weight_layer_gets_no_budget():
    e = optimize_eps((1, 1, 0), EPS)
    assert e[2] == 0.0
    np.testing.assert_allclose(e[:2], [1 - (1 - EPS) ** 0.5] * 2, rtol=1e-9)


def test_grid_oracle_agreement():
    a = (2.0, 1.0, 1.0)
    sol = solve_eps(a, EPS)
    ref = grid_oracle(a, EPS)
    assert sol.objective <= ref + 1e-6
    assert abs(sol.objective - ref) <= 1e-6


def test_all_zero_weights_degenerate():
    with pytest.warns(RuntimeWarning):
        sol = solve_eps((0, 0, 0), EPS)
    assert sol.degenerate
    assert math.prod(1 - e for e in sol.eps) == pytest.approx(1 - EPS, abs=1e-15)


@pytest.mark.parametrize("a,eps", [((-1, 1, 1), EPS), ((1, 1, 1), 0.0), ((1, 1, 1), 1.0), ((), EPS)])
def test_invalid_inputs(a, eps):
    with pytest.raises(ValueError):
        solve_eps(a, eps)


weights = st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 1e3)), min_size=3, max_size=3).filter(lambda w: any(w))


@given(weights, st.sampled_from([1e-6, 1e-4, 1e-2]))
def test_allocation_properties(a, eps_total):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sol = solve_eps(a, eps_total)
    e = np.array(sol.eps)
    assert math.prod(1 - x for x in e) == pytest.approx(1 - eps_total, abs=1e-10)
    assert sol.kkt_residual <= KKT_TOL
    eq = np.array(equal_split(eps_total))
    active = np.array(a) > 0
    obj = float(np.dot(np.array(a)[active], qinv(e[active])))
    assert obj <= float(np.dot(a, qinv(eq))) + 1e-9
    assert np.all(e[~active] == 0)


def test_weights_are_exact_slopes(sixteen_users):
    # the weighted cost is affine in Q^-1(eps_i) when packet sizes stay put
    beta = 0.8
    p = ProtocolParams.fixed(3, 4, equal_split(EPS))
    a = q_weights(sixteen_users, p, beta)
    base = evaluate(sixteen_users, p)
    h = 1e-3
    for i in range(3):
        e = list(p.eps_layers)
        x = float(qinv(e[i])) + h
        e[i] = 0.5 * math.erfc(x / math.sqrt(2))  # smaller eps keeps the budget feasible
        r = evaluate(sixteen_users, p.with_eps(tuple(e)))
        slope = ((r.ET + beta * r.EP1) - (base.ET + beta * base.EP1)) / h
        assert slope == pytest.approx(a[i], rel=1e-6)


def test_tuned_allocation_beats_equal_split(sixteen_users):
    p = ProtocolParams.fixed(4, 4, equal_split(EPS))
    for beta in (0.01, 1.0, 100.0):
        tp, tr = tune_eps(sixteen_users, p, beta)
        base = evaluate(sixteen_users, p)
        assert tr.ET + beta * tr.EP1 <= base.ET + beta * base.EP1
        assert tp.reliability == pytest.approx(1 - EPS, abs=1e-12)


# ---------------------------------------------------------------- hull

def _pts(xy):
    return [TradeoffPoint(x, y, 0.0, ProtocolParams.genie(1, EPS)) for x, y in xy]


def test_hull_examples():
    c = hull(_pts([(1, 3), (2, 1), (3, 2.5)]))
    assert [(p.ET, p.EP1) for p in c.hull_points] == [(1, 3), (2, 1)]
    c = hull(_pts([(1, 3), (2, 2), (3, 1)]))
    assert [(p.ET, p.EP1) for p in c.hull_points] == [(1, 3), (3, 1)]
    c = hull(_pts([(5, 5)]))
    assert c.hull == (0,) and c.evaluate(5.0) == 5.0
    with pytest.raises(ValueError):
        hull_indices([])


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30))
def test_hull_properties(xy):
    c = hull(_pts(xy))
    hp = c.hull_points
    assert all(a.ET <= b.ET for a, b in zip(hp, hp[1:]))
    assert all(a.EP1 >= b.EP1 for a, b in zip(hp, hp[1:]))
    for p in c.points:
        if p.ET >= hp[0].ET:
            assert p.EP1 >= c.evaluate(p.ET) - 1e-9 * (1 + abs(p.EP1))
    assert math.isinf(c.evaluate(hp[0].ET - 1.0))


# ---------------------------------------------------------------- sweeps

def test_genie_sweep_four_users(four_users):
    c = sweep(four_users, "genie")
    hp = {(round(p.ET, 1), round(p.EP1, 1)) for p in c.hull_points}
    assert {(8574.8, 8574.8), (8807.3, 4403.6), (9131.6, 2282.9)} <= hp
    assert {p.params.V for p in c.hull_points} == {(1,), (2,), (4,)}


def test_single_candidate_single_beta(sixteen_users):
    space = SearchSpace(((2,),), (4,))
    c = sweep(sixteen_users, "fixed", [1.0], space, optimize=False)
    assert len(c.points) == 1 and c.hull == (0,) and c.optima == (0,)
    c = sweep(sixteen_users, "fixed", [1.0], space)
    assert len(c.optimal_points) == 1
    # the equal-split allocation may add one hull vertex
    assert len(c.points) <= 2


def test_empty_search_space(sixteen_users):
    with pytest.raises(ValueError):
        sweep(sixteen_users, "fixed", [1.0], SearchSpace((), (4,)))
    with pytest.raises(ValueError):
        sweep(sixteen_users, "genie", [])
    with pytest.raises(ValueError):
        sweep(sixteen_users, "unknown", [1.0])


def test_default_grids(sixteen_users, two_sizes):
    assert default_w_grid(16) == (1, 2, 4, 8, 16)
    assert default_w_grid(12) == (1, 2, 4, 8, 12)
    assert len(default_search_space(two_sizes, "variable")) == 256 * 5
    assert default_search_space(sixteen_users, "genie").Ws == (None,)


def test_sweep_deterministic_and_tie_break(sixteen_users):
    space = SearchSpace(((1,), (2,), (16,)), (1, 4, 16))
    betas = default_betas(7)
    a = sweep(sixteen_users, "fixed", betas, space)
    b = sweep(sixteen_users, "fixed", betas, SearchSpace(((16,), (2,), (1,)), (16, 4, 1)))
    assert a.points == b.points and a.hull == b.hull and a.optima == b.optima
    # K = 1: every cap is the same protocol, so the smallest wins
    one = Scenario.make(K=1, q=0.5, alphas=(100,))
    c = sweep(one, "genie", [1.0], SearchSpace(((1,),), (None,)))
    assert c.points[0].params.V == (1,)


def test_each_optimum_beats_other_candidates(sixteen_users):
    space = SearchSpace(((1,), (4,), (16,)), (1, 16))
    beta = 0.5
    c = sweep(sixteen_users, "fixed", [beta], space, optimize=False)
    (opt,) = c.optimal_points
    best = opt.ET + beta * opt.EP1
    for V, W in space.candidates():
        r = evaluate(sixteen_users, ProtocolParams.fixed(V, W, equal_split(EPS)))
        assert best <= r.ET + beta * r.EP1 + 1e-9


def test_optimized_hull_below_equal_split(sixteen_users):
    space = SearchSpace(tuple((v,) for v in (1, 2, 4, 8, 16)), (1, 4, 16))
    betas = default_betas(13)
    opt = sweep(sixteen_users, "fixed", betas, space)
    flat = sweep(sixteen_users, "fixed", betas, space, optimize=False)
    lo = max(opt.hull_points[0].ET, flat.hull_points[0].ET)
    hi = min(opt.hull_points[-1].ET, flat.hull_points[-1].ET)
    T = np.linspace(lo, hi, 50)
    assert np.all(opt.evaluate(T) <= flat.evaluate(T) + 1e-9)
    assert np.any(opt.evaluate(T) < flat.evaluate(T) - 1e-6)
