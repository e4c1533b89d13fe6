"""Parameter search for the framing protocols.

The inner problem allocates the reliability budget over the three coding
layers.  For fixed packet sizes the weighted cost is an affine function of
``Q^-1(eps_i)`` with nonnegative weights, which is convex in
``u_i = log(1 - eps_i)``; it is solved by equality-constrained Newton.
The outer problem enumerates integer (V, W) candidates.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.special import ndtri

from .bound import default_betas
from .fbl import fbl_context, n_code_qslope
from .protocols import (
    FIXED,
    GENIE,
    KINDS,
    ParameterError,
    ProtocolParams,
    equal_split,
    evaluate,
    expected_ledger,
    worst_case,
)
from .scenario import Scenario

log = logging.getLogger(__name__)

KKT_TOL = 1e-8
TIE_TOL = 1e-9
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EpsAllocation:
    eps: tuple[float, ...]
    objective: float
    kkt_residual: float
    iterations: int
    degenerate: bool = False


def _x_of_u(u):
    # Q^-1(1 - e^u) without cancellation for u near 0
    return -ndtri(-np.expm1(u))


def solve_eps(a, eps_total: float, max_iter: int = 100) -> EpsAllocation:
    """Minimize sum a_i Q^-1(eps_i) subject to prod(1 - eps_i) >= 1 - eps_total."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("weights must be a nonempty vector of finite nonnegative numbers")
    if not 0.0 < eps_total < 1.0:
        raise ValueError(f"eps_total must lie in (0, 1), got {eps_total!r}")
    L = math.log1p(-eps_total)
    active = np.flatnonzero(a > 0)
    if active.size == 0:
        warnings.warn("all weights are zero; returning the equal split", RuntimeWarning, stacklevel=2)
        return EpsAllocation(equal_split(eps_total, a.size), 0.0, 0.0, 0, True)

    w = a[active]
    u = np.full(active.size, L / active.size)

    def objective(u):
        return float(w @ _x_of_u(u))

    f = objective(u)
    it, resid, best_resid, stalls = 0, 0.0, math.inf, 0
    for it in range(1, max_iter + 1):
        x = _x_of_u(u)
        g = np.exp(u + 0.5 * x * x) * _SQRT_2PI  # dx/du = e^u / pdf(x)
        grad = w * g
        hess = w * (g + x * g * g)
        lam = float(np.sum(grad / hess) / np.sum(1.0 / hess))
        resid = float(np.max(np.abs(grad - lam)) / lam)
        if resid <= KKT_TOL or active.size == 1:
            break
        if resid < best_resid:
            best_resid, stalls = resid, 0
        else:
            stalls += 1
            if stalls >= 3:
                break  # floating-point floor reached
        d = -(grad - lam) / hess
        d -= d.mean()  # stay on the constraint plane
        t, fc = 1.0, math.inf
        while t >= 1e-12:
            cand = u + t * d
            if np.all(cand < 0):
                fc = objective(cand)
                # near the optimum the decrease drops below rounding
                if fc <= f + 1e-4 * t * float(grad @ d) or (t == 1.0 and fc <= f + 1e-14 * abs(f)):
                    break
            t *= 0.5
        if not np.isfinite(fc):
            break
        u, f = cand, fc
    eps = np.zeros(a.size)
    eps[active] = -np.expm1(u)
    return EpsAllocation(tuple(float(e) for e in eps), f, resid, it)


def optimize_eps(a, eps_total: float) -> tuple[float, ...]:
    return solve_eps(a, eps_total).eps


def _layer_slopes(ledger, weights, scenario, eps_layers):
    a = np.zeros(3)
    for layer in np.unique(ledger.layer):
        sel = ledger.layer == layer
        qs = n_code_qslope(ledger.bits[sel], fbl_context(scenario.P, eps_layers[layer]))
        a[layer] = float(weights[sel] @ qs)
    return a


def q_weights(scenario: Scenario, params: ProtocolParams, beta: float) -> np.ndarray:
    """Coefficients of Q^-1(eps_i) in E[T] + beta E[P1] at the current packet sizes."""
    mean = expected_ledger(scenario, params)
    worst = worst_case(scenario, params)[1]
    eps = params.eps_layers
    a = _layer_slopes(mean, mean.t_w + beta * mean.p_w, scenario, eps)
    return a + beta * scenario.eps * _layer_slopes(worst, worst.t_w, scenario, eps)


@dataclass(frozen=True)
class TradeoffPoint:
    """An operating point; ``beta`` is set when the point is optimal for that weight."""

    ET: float
    EP1: float
    beta: float | None
    params: ProtocolParams
    objective: float | None = None


def _objective(res, beta):
    return res.ET + beta * res.EP1


def tune_eps(scenario: Scenario, params: ProtocolParams, beta: float, max_rounds: int = 6):
    """Alternate weight extraction and the convex allocation until packet sizes settle.

    Returns the best (params, EvalResult) seen, starting from the equal split.
    """
    cur = params.with_eps(equal_split(scenario.eps))
    best_p, best_r = cur, evaluate(scenario, cur)
    seen = {cur.eps_layers}
    for _ in range(max_rounds):
        a = q_weights(scenario, cur, beta)
        sol = solve_eps(a, scenario.eps)
        if sol.degenerate:
            break
        nxt = cur.with_eps(sol.eps)
        try:
            res = evaluate(scenario, nxt)
        except ParameterError:
            # rounding in the product can put the budget a hair short
            break
        if _objective(res, beta) < _objective(best_r, beta):
            best_p, best_r = nxt, res
        if nxt.eps_layers in seen:
            break
        seen.add(nxt.eps_layers)
        cur = nxt
    return best_p, best_r


@dataclass(frozen=True)
class SearchSpace:
    Vs: tuple[tuple[int, ...], ...]
    Ws: tuple[int | None, ...]

    def candidates(self):
        for V in self.Vs:
            for W in self.Ws:
                yield V, W

    def __len__(self):
        return len(self.Vs) * len(self.Ws)


def default_w_grid(K: int) -> tuple[int, ...]:
    ws = {K}
    w = 1
    while w < K:
        ws.add(w)
        w *= 2
    return tuple(sorted(ws))


def default_search_space(scenario: Scenario, kind: str, Vs=None, Ws=None) -> SearchSpace:
    K, S = scenario.K, scenario.S
    if Vs is None:
        Vs = tuple(product(range(1, K + 1), repeat=S))
    else:
        Vs = tuple((int(v),) if np.isscalar(v) else tuple(int(x) for x in v) for v in Vs)
    if kind == GENIE:
        Ws = (None,)
    else:
        Ws = default_w_grid(K) if Ws is None else tuple(int(w) for w in Ws)
    return SearchSpace(tuple(Vs), tuple(Ws))


@dataclass(frozen=True)
class Curve:
    points: tuple[TradeoffPoint, ...]
    hull: tuple[int, ...]
    meta: dict = field(default_factory=dict, compare=False)
    optima: tuple[int, ...] = ()

    @property
    def optimal_points(self) -> list[TradeoffPoint]:
        """Per-weight optima, in the order of the weights."""
        return [self.points[i] for i in self.optima]

    @property
    def hull_points(self) -> list[TradeoffPoint]:
        return [self.points[i] for i in self.hull]

    def evaluate(self, T):
        """Time-sharing EP1 achievable at frame duration T (inf left of the hull)."""
        hx = np.array([p.ET for p in self.hull_points])
        hy = np.array([p.EP1 for p in self.hull_points])
        T = np.asarray(T, dtype=float)
        out = np.interp(T, hx, hy)
        out = np.where(T < hx[0] * (1 - 1e-12), np.inf, out)
        return float(out) if out.ndim == 0 else out


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_indices(xy) -> list[int]:
    """Vertices of the lower-left convex hull, ordered by increasing x."""
    xy = [(float(x), float(y)) for x, y in xy]
    if not xy:
        raise ValueError("hull needs at least one point")
    order = sorted(range(len(xy)), key=lambda i: (xy[i][0], xy[i][1]))
    chain: list[int] = []
    for i in order:
        if chain and xy[chain[-1]][0] == xy[i][0]:
            continue  # same x, larger or equal y
        while len(chain) >= 2 and _cross(xy[chain[-2]], xy[chain[-1]], xy[i]) <= 0:
            chain.pop()
        chain.append(i)
    # keep the part with decreasing y: beyond the minimum of y, points are dominated
    ys = [xy[i][1] for i in chain]
    stop = int(np.argmin(ys))
    return chain[: stop + 1]


def hull(points) -> Curve:
    points = sorted(points, key=lambda p: (p.ET, p.EP1))
    idx = hull_indices([(p.ET, p.EP1) for p in points])
    return Curve(tuple(points), tuple(idx))


def _make_params(kind, V, W, scenario):
    if kind == GENIE:
        return ProtocolParams.genie(V, scenario.eps)
    return ProtocolParams(kind, V, W, equal_split(scenario.eps))


def _points_for_beta(scenario, kind, beta, space, optimize, flat):
    """Best point at ``beta`` plus every point evaluated on the way."""
    best, seen = None, []
    for V, W in space.candidates():
        key = (V, W)
        if key not in flat:
            p = _make_params(kind, V, W, scenario)
            r = evaluate(scenario, p)
            flat[key] = TradeoffPoint(r.ET, r.EP1, None, p)
        if kind != GENIE and optimize:
            params, res = tune_eps(scenario, flat[key].params, beta)
        else:
            params, res = flat[key].params, flat[key]
        obj = _objective(res, beta)
        pt = TradeoffPoint(res.ET, res.EP1, float(beta), params, obj)
        seen.append(pt)
        # candidates arrive in ascending (V, W) order so strict improvement breaks ties
        if best is None or obj < best.objective - TIE_TOL * abs(best.objective):
            best = pt
    return best, seen


def best_for_beta(
    scenario: Scenario, kind: str, beta: float, space: SearchSpace, optimize: bool = True
) -> TradeoffPoint:
    return _points_for_beta(scenario, kind, float(beta), space, optimize, {})[0]


def sweep(
    scenario: Scenario,
    kind: str,
    betas=None,
    search_space: SearchSpace | None = None,
    optimize: bool = True,
) -> Curve:
    """Optimal operating point for each weight, plus the time-sharing hull.

    The hull is taken over every evaluated point (all candidates at all
    weights, and the equal-split allocation of each candidate), since
    time-sharing between any two of them is achievable.  ``points`` holds
    the per-weight optima followed by the hull vertices not among them.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown protocol kind {kind!r}")
    if kind == FIXED and scenario.S != 1:
        raise ValueError("the fixed protocol requires a single message size")
    space = default_search_space(scenario, kind) if search_space is None else search_space
    if len(space) == 0:
        raise ValueError("empty search space")
    betas = default_betas() if betas is None else np.asarray(list(betas), dtype=float)
    if betas.size == 0:
        raise ValueError("at least one beta is required")
    space = SearchSpace(tuple(sorted(space.Vs)), tuple(sorted(space.Ws, key=lambda w: -1 if w is None else w)))
    flat: dict = {}
    optima, cloud = [], []
    for b in betas:
        best, seen = _points_for_beta(scenario, kind, float(b), space, optimize, flat)
        optima.append(best)
        cloud.extend(seen)
        log.debug("beta=%g -> %s", b, best)
    cloud.extend(flat.values())
    extra = [cloud[i] for i in hull_indices([(p.ET, p.EP1) for p in cloud])]
    have = {(p.ET, p.EP1) for p in optima}
    # hull vertices that are not optima for any weight carry no weight
    pts = optima + [replace(p, beta=None, objective=None) for p in extra if (p.ET, p.EP1) not in have]
    curve = hull(pts)
    pos = {id(p): i for i, p in enumerate(curve.points)}
    meta = {
        "kind": kind,
        "betas": [float(b) for b in betas],
        "Vs": [list(v) for v in space.Vs],
        "Ws": [w for w in space.Ws],
        "eps_opt": bool(optimize and kind != GENIE),
    }
    return Curve(curve.points, curve.hull, meta, tuple(pos[id(p)] for p in optima))


def genie_points(scenario: Scenario, Vs=None) -> list[TradeoffPoint]:
    """All genie operating points of a search space, for plotting dominated ones."""
    space = default_search_space(scenario, GENIE, Vs)
    out = []
    for V, _ in space.candidates():
        p = ProtocolParams.genie(V, scenario.eps)
        r = evaluate(scenario, p)
        out.append(TradeoffPoint(r.ET, r.EP1, None, p))
    return out


__all__ = [
    "EpsAllocation",
    "solve_eps",
    "optimize_eps",
    "q_weights",
    "tune_eps",
    "TradeoffPoint",
    "SearchSpace",
    "default_search_space",
    "default_w_grid",
    "Curve",
    "hull",
    "hull_indices",
    "sweep",
    "best_for_beta",
    "genie_points",
]
