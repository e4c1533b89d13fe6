from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlframing.fbl import (
    ChannelParams,
    fbl_context,
    inverse_q,
    n_approx,
    n_code,
    n_code_qslope,
    q_function,
)
from oracles import capacity, dispersion, length, qinv_bisect

# frozen from the erfc-bisection oracle at P = 1, eps = 1e-4
C_REF = 0.5
V_REF = 0.7805133678771029
QINV_REF = 3.719016485455681
THRESHOLD_REF = 0.38560487957514067
LENGTHS_REF = {
    1: 10.293156904702146,
    100: 285.2877128572467,
    1000: 2282.909640437129,
    1600: 3560.082419998311,
    2000: 4403.636827005049,
    4000: 8574.78506515892,
}


@pytest.fixture(scope="module")
def ctx():
    return fbl_context(1.0, 1e-4)


def test_channel_constants(ctx):
    assert ctx.C == C_REF
    assert ctx.V == pytest.approx(V_REF, abs=1e-12)
    assert ctx.qinv == pytest.approx(QINV_REF, abs=1e-10)
    assert ctx.k_threshold == pytest.approx(THRESHOLD_REF, rel=1e-9)
    assert ctx.envelope_inactive


def test_channel_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(0.0)
    with pytest.raises(ValueError):
        ChannelParams(1.0, gamma=2.0)
    ch = ChannelParams(3.0)
    assert ch.capacity == pytest.approx(capacity(3.0))
    assert ch.dispersion == pytest.approx(dispersion(3.0))


def test_inverse_q_examples():
    assert inverse_q(0.5) == 0.0
    assert inverse_q(1e-4) == pytest.approx(qinv_bisect(1e-4), abs=1e-10)
    assert inverse_q(q_function(2.0)) == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_inverse_q_domain(p):
    with pytest.raises(ValueError):
        inverse_q(p)


# below about -3, Q(x) is 1 minus a tail that double precision cannot resolve
@given(st.floats(-3.0, 8.0))
def test_inverse_q_roundtrip(x):
    assert inverse_q(q_function(x)) == pytest.approx(x, abs=1e-9)


@given(st.floats(1e-12, 1 - 1e-12), st.floats(1e-12, 1 - 1e-12))
def test_inverse_q_decreasing(p1, p2):
    if p1 < p2:
        assert inverse_q(p1) >= inverse_q(p2)


@pytest.mark.parametrize("p", [1e-9, 1e-6, 1e-4, 1e-2, 0.3])
def test_inverse_q_matches_bisection(p):
    assert inverse_q(p) == pytest.approx(qinv_bisect(p), abs=1e-10)


@pytest.mark.parametrize("k,ref", sorted(LENGTHS_REF.items()))
def test_lengths_frozen(ctx, k, ref):
    assert n_approx(k, ctx) == pytest.approx(ref, rel=1e-12)
    assert n_code(k, ctx) == pytest.approx(ref, rel=1e-12)


def test_zero_bits(ctx):
    assert n_approx(0, ctx) == 0.0
    assert n_code(0, ctx) == 0.0


def test_vectorized_matches_scalar(ctx):
    ks = np.array([0, 1, 17, 1000])
    out = n_code(ks, ctx)
    assert out.shape == (4,)
    assert list(out) == [n_code(int(k), ctx) for k in ks]
    assert isinstance(n_code(5, ctx), float)


def test_capacity_lower_bound(ctx):
    ks = np.arange(1, 100_001)
    assert np.all(n_code(ks, ctx) >= ks / ctx.C)


def test_concave_second_differences(ctx):
    ks = np.arange(1, 20_001)
    d2 = np.diff(n_code(ks, ctx), 2)
    assert d2.max() <= 1e-9


@given(st.integers(1, 5000), st.integers(1, 5000))
def test_subadditive(a, b):
    ctx = fbl_context(1.0, 1e-4)
    assert n_code(a, ctx) + n_code(b, ctx) >= n_code(a + b, ctx) - 1e-9


# an operating point where the three-term curve is convex near the origin
ACTIVE = [(10.0, 0.3), (100.0, 0.45), (1.0, 0.49)]


@pytest.mark.parametrize("P,eps", ACTIVE)
def test_envelope_when_active(P, eps):
    ctx = fbl_context(P, eps)
    assert ctx.k_threshold > 1 and not ctx.envelope_inactive
    ks = np.arange(1, 400)
    env = n_code(ks, ctx)
    raw = n_approx(ks, ctx)
    assert np.all(env >= raw - 1e-9)
    assert np.diff(env, 2).max() <= 1e-9
    assert np.all(np.diff(env) > 0)
    # the envelope touches the original curve far from the origin
    assert n_code(10**6, ctx) == pytest.approx(n_approx(10**6, ctx), rel=1e-12)


@pytest.mark.parametrize("P,eps", ACTIVE + [(1.0, 1e-4)])
def test_qslope_is_derivative_in_q_space(P, eps):
    ctx = fbl_context(P, eps)
    h = 1e-6
    for k in (1, 3, 50, 2000):
        up = n_code(k, fbl_context(P, q_function(ctx.qinv + h)))
        dn = n_code(k, fbl_context(P, q_function(ctx.qinv - h)))
        assert n_code_qslope(k, ctx) == pytest.approx((up - dn) / (2 * h), rel=1e-4)


def test_qslope_inactive_closed_form(ctx):
    assert n_code_qslope(1000, ctx) == pytest.approx(math.sqrt(ctx.V * 1000 / ctx.C**3), rel=1e-12)


def test_other_operating_points_match_oracle():
    for P, eps in [(2.0, 1e-3), (0.5, 1e-6)]:
        ctx = fbl_context(P, eps)
        assert ctx.envelope_inactive
        for k in (1, 64, 999):
            assert n_code(k, ctx) == pytest.approx(length(k, eps, P), rel=1e-9)


@pytest.mark.parametrize("eps", [0.0, 0.5, 0.7, 1.0])
def test_context_domain(eps):
    with pytest.raises(ValueError):
        fbl_context(1.0, eps)
