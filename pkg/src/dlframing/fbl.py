"""Finite-blocklength numerics for the real AWGN channel.

Capacity, dispersion, the inverse Q-function and the normal-approximation
code length ``N(k, eps)`` together with its upper concave envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, ndtri

LOG2E = math.log2(math.e)
LN2 = math.log(2.0)


def q_function(x):
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def inverse_q(p: float) -> float:
    """Return x with Q(x) = p.

    Uses the inverse normal CDF, Q^{-1}(p) = -Phi^{-1}(p), which keeps full
    relative precision for the small tail probabilities used here.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"inverse_q needs p in (0, 1), got {p!r}")
    return float(-ndtri(p))


@dataclass(frozen=True)
class ChannelParams:
    P: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError(f"channel power must be positive, got {self.P!r}")
        if self.gamma != 1.0:
            raise ValueError("only the symmetric channel gamma == 1 is supported")

    @property
    def capacity(self) -> float:
        return 0.5 * math.log2(1.0 + self.P)

    @property
    def dispersion(self) -> float:
        P = self.P
        return P * (P + 2.0) / (2.0 * (P + 1.0) ** 2) * LOG2E**2


def concavity_threshold(C: float, V: float, qinv: float) -> float:
    """Smallest k beyond which the three-term length approximation is concave."""
    return 4.0 * C / (qinv**2 * V * LN2**2)


@dataclass(frozen=True)
class FblContext:
    """Channel constants for one (P, eps) pair.

    ``segments`` holds the linear pieces of the upper concave envelope near
    the origin as ``(x0, y0, x1, y1)`` tuples; beyond ``tail_start`` the
    envelope coincides with the three-term approximation.
    """

    P: float
    eps: float
    C: float = field(init=False)
    V: float = field(init=False)
    qinv: float = field(init=False)
    k_threshold: float = field(init=False)
    segments: tuple = field(init=False, repr=False)
    tail_start: float = field(init=False, repr=False)

    def __post_init__(self):
        ch = ChannelParams(self.P)
        if not 0.0 < self.eps < 0.5:
            # Q^{-1}(eps) <= 0 leaves no concave region, the envelope degenerates
            raise ValueError(f"block error probability must lie in (0, 0.5), got {self.eps!r}")
        qinv = inverse_q(self.eps)
        object.__setattr__(self, "C", ch.capacity)
        object.__setattr__(self, "V", ch.dispersion)
        object.__setattr__(self, "qinv", qinv)
        object.__setattr__(self, "k_threshold", concavity_threshold(self.C, self.V, qinv))
        segments, tail = _envelope_pieces(self)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "tail_start", tail)

    @property
    def envelope_inactive(self) -> bool:
        """True when N(k) equals the three-term expression for every k >= 1."""
        return self.tail_start == 1.0

    def dispersion_coeff(self) -> float:
        return math.sqrt(self.V / self.C**3)


@lru_cache(maxsize=4096)
def fbl_context(P: float, eps: float) -> FblContext:
    return FblContext(float(P), float(eps))


def _raw(t, ctx):
    t = np.asarray(t, dtype=float)
    return t / ctx.C + np.sqrt(ctx.V * t / ctx.C**3) * ctx.qinv - np.log2(t / ctx.C) / (2.0 * ctx.C)


def _raw_d1(t, ctx):
    a = ctx.dispersion_coeff() * ctx.qinv
    b = 1.0 / (2.0 * ctx.C)
    return 1.0 / ctx.C + 0.5 * a / math.sqrt(t) - b / (t * LN2)


def _root_above(fn, lo):
    hi = max(2.0 * lo, lo + 1.0)
    while fn(hi) < 0:
        hi *= 2.0
    return brentq(fn, lo, hi, xtol=1e-12, rtol=1e-14)


def _envelope_pieces(ctx):
    # The approximation is convex on [1, m) and concave on [m, inf); the
    # envelope of {(0, 0)} together with the graph on [1, inf) is a chord from
    # the origin, possibly a second chord from k = 1, then the graph itself.
    m = max(1.0, ctx.k_threshold)
    n1 = float(_raw(1.0, ctx))

    def r_origin(t):
        return float(_raw(t, ctx)) - t * _raw_d1(t, ctx)

    t_star = 1.0
    if r_origin(m) < 0:
        tc = _root_above(r_origin, m)
        if float(_raw(tc, ctx)) / tc > n1:
            t_star = tc
    if t_star > 1.0:
        return ((0.0, 0.0, t_star, float(_raw(t_star, ctx))),), t_star

    segments = [(0.0, 0.0, 1.0, n1)]
    if m <= 1.0:
        return tuple(segments), 1.0

    def r_unit(t):
        return float(_raw(t, ctx)) - n1 - (t - 1.0) * _raw_d1(t, ctx)

    t1 = m if r_unit(m) >= 0 else _root_above(r_unit, m)
    segments.append((1.0, n1, t1, float(_raw(t1, ctx))))
    return tuple(segments), t1


def n_approx(k, ctx: FblContext):
    """Three-term normal approximation of the minimum code length, N(0) = 0."""
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0):
        raise ValueError("number of bits must be nonnegative")
    safe = np.where(k_arr > 0, k_arr, 1.0)
    out = np.where(k_arr > 0, _raw(safe, ctx), 0.0)
    return float(out) if out.ndim == 0 else out


def n_code(k, ctx: FblContext):
    """Upper concave envelope of :func:`n_approx`, evaluated at real k >= 0.

    No rounding to whole channel uses is applied.
    """
    k_arr = np.asarray(k, dtype=float)
    if np.any(k_arr < 0):
        raise ValueError("number of bits must be nonnegative")
    safe = np.where(k_arr >= ctx.tail_start, k_arr, ctx.tail_start)
    out = np.where(k_arr >= ctx.tail_start, _raw(safe, ctx), 0.0)
    for x0, y0, x1, y1 in ctx.segments:
        inside = (k_arr >= x0) & (k_arr < x1)
        out = np.where(inside, y0 + (y1 - y0) * (k_arr - x0) / (x1 - x0), out)
    return float(out) if out.ndim == 0 else out


def n_code_qslope(k, ctx: FblContext):
    """Derivative of ``n_code(k)`` with respect to Q^{-1}(eps) at fixed k.

    Exact where the envelope coincides with the three-term expression (the
    length is affine in Q^{-1} there); otherwise a central difference in
    Q^{-1}-space.
    """
    k_arr = np.asarray(k, dtype=float)
    exact = np.sqrt(ctx.V * np.maximum(k_arr, 0.0) / ctx.C**3)
    if ctx.envelope_inactive:
        out = np.where(k_arr >= 1.0, exact, k_arr * math.sqrt(ctx.V / ctx.C**3))
    else:
        h = 1e-5 * max(1.0, ctx.qinv)
        up = fbl_context(ctx.P, float(q_function(ctx.qinv + h)))
        dn = fbl_context(ctx.P, float(q_function(ctx.qinv - h)))
        out = (np.asarray(n_code(k_arr, up)) - np.asarray(n_code(k_arr, dn))) / (2.0 * h)
    out = np.where(k_arr > 0, out, 0.0)
    return float(out) if np.ndim(out) == 0 else out
