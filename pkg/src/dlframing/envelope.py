"""Convex and concave envelopes of sampled functions.

The multivariate lower convex envelope of the per-packet cost
``phi(x) = N(alpha . x) * (1 + beta * sum(x) / K)`` is evaluated through a
decomposition into one-dimensional envelopes of the single-size costs
``phi_s(x) = N(alpha_s * x) * (1 + beta * x / K)``, combined by a convex
minimization over the simplex.  A direct two-dimensional hull is provided as
an independent check.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.spatial import ConvexHull

from .fbl import n_code
from .scenario import Scenario

LOWER = "lower"
UPPER = "upper"

DEFAULT_GRID = 2048
ZETA_FLOOR = 1e-6
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SampledFunction:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError("xs and ys must be 1-D arrays of equal length")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("xs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)


@dataclass(frozen=True)
class EnvelopeFn:
    """Piecewise-linear envelope; extrapolates the end slopes."""

    xs: np.ndarray
    ys: np.ndarray
    direction: str
    _knots: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = [float(v) for v in self.xs]
        ys = [float(v) for v in self.ys]
        sl = [(ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)] or [0.0]
        object.__setattr__(self, "_knots", (xs, ys, sl))

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.ys) / np.diff(self.xs)

    def scalar(self, x: float) -> float:
        xs, ys, sl = self._knots
        i = bisect_right(xs, x) - 1
        i = min(max(i, 0), len(sl) - 1)
        return ys[i] + sl[i] * (x - xs[i])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs, ys = self.xs, self.ys
        out = np.interp(x, xs, ys)
        if len(xs) > 1:
            s = self.slopes
            out = np.where(x > xs[-1], ys[-1] + s[-1] * (x - xs[-1]), out)
            out = np.where(x < xs[0], ys[0] + s[0] * (x - xs[0]), out)
        return float(out) if out.ndim == 0 else out


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def envelope_1d(f: SampledFunction, direction: str = LOWER) -> EnvelopeFn:
    """Lower convex (or upper concave) hull of the samples of ``f``."""
    if len(f.xs) < 2:
        raise ValueError("an envelope needs at least two samples")
    if direction not in (LOWER, UPPER):
        raise ValueError(f"direction must be {LOWER!r} or {UPPER!r}")
    sign = 1.0 if direction == LOWER else -1.0
    pts = list(zip(f.xs.tolist(), (sign * f.ys).tolist()))
    hull = []
    for p in pts:
        # collinear points are dropped so knots are strict vertices
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) <= 0:
            hull.pop()
        hull.append(p)
    xs = np.array([p[0] for p in hull])
    ys = sign * np.array([p[1] for p in hull])
    return EnvelopeFn(xs, ys, direction)


def phi(x, beta: float, scenario: Scenario) -> float:
    """Per-packet cost of a packet holding ``x[s]`` messages of size ``alphas[s]``."""
    x = np.asarray(x, dtype=float)
    bits = float(np.dot(scenario.alphas, x))
    return float(n_code(bits, scenario.context())) * (1.0 + beta * float(x.sum()) / scenario.K)


def phi_single(x, beta: float, scenario: Scenario, s: int):
    x = np.asarray(x, dtype=float)
    return np.asarray(n_code(scenario.alphas[s] * x, scenario.context())) * (1.0 + beta * x / scenario.K)


def sample_grid(cap: float, grid_n: int = DEFAULT_GRID) -> np.ndarray:
    """Uniform grid on [0, cap] merged with the integers in that range."""
    uniform = np.linspace(0.0, cap, grid_n)
    ints = np.arange(0, int(np.floor(cap)) + 1, dtype=float)
    return np.unique(np.concatenate([uniform, ints]))


@lru_cache(maxsize=512)
def single_envelope(
    scenario: Scenario, beta: float, s: int, domain_cap: float | None = None, grid_n: int = DEFAULT_GRID
) -> EnvelopeFn:
    cap = float(scenario.K if domain_cap is None else domain_cap)
    xs = sample_grid(cap, grid_n)
    return envelope_1d(SampledFunction(xs, phi_single(xs, beta, scenario, s)), LOWER)


def _golden_min(fn, lo, hi, iters=80):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    t = 0.5 * (a + b)
    return t, fn(t)


def combine_envelopes(x, envs, zeta_floor: float = ZETA_FLOOR, rtol: float = 1e-10) -> float:
    """min over the open simplex of sum_s zeta_s * envs[s](x_s / zeta_s).

    Each envelope is only known on its sampled domain ``[0, cap_s]``, so
    ``zeta_s >= x_s / cap_s`` is enforced; the linear extension past the cap
    would undercut the function it stands for.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("phi_breve is defined for nonnegative arguments only")
    # zero coordinates contribute zeta_s * env(0) = 0, so their weight goes to the rest
    active = [i for i in range(len(x)) if x[i] > 0]
    if not active:
        return 0.0
    xa = [float(x[i]) for i in active]
    fa = [envs[i].scalar for i in active]
    lb = np.array([xa[j] / float(envs[i].xs[-1]) for j, i in enumerate(active)])
    if lb.sum() > 1.0 + 1e-12:
        raise ValueError("x lies outside the domain covered by the envelopes")
    if len(active) == 1:
        return fa[0](xa[0])
    lb = np.maximum(lb, zeta_floor)

    def total(z):
        return sum(z[j] * fa[j](xa[j] / z[j]) for j in range(len(z)))

    if len(active) == 2:
        f0, f1 = fa
        x0, x1 = xa

        def f(t):
            return t * f0(x0 / t) + (1.0 - t) * f1(x1 / (1.0 - t))

        lo, hi = lb[0], 1.0 - lb[1]
        if hi <= lo:
            return float(f(0.5 * (lo + hi)))
        _, val = _golden_min(f, lo, hi, iters=60)
        return float(val)

    # pairwise coordinate descent on the feasible simplex, slack spread evenly to start
    z = lb + max(0.0, 1.0 - lb.sum()) / len(lb)
    best = total(z)
    for _ in range(200):
        prev = best
        for i, j in combinations(range(len(z)), 2):
            mass = z[i] + z[j]
            lo, hi = lb[i] / mass, 1.0 - lb[j] / mass
            if hi <= lo:
                continue

            def f(t, i=i, j=j, mass=mass):
                zi, zj = t * mass, (1.0 - t) * mass
                return zi * fa[i](xa[i] / zi) + zj * fa[j](xa[j] / zj)

            t, _ = _golden_min(f, lo, hi, iters=60)
            z[i], z[j] = t * mass, (1.0 - t) * mass
        best = total(z)
        if prev - best <= rtol * abs(best):
            break
    return float(best)


def phi_breve(
    x, beta: float, scenario: Scenario, domain_cap: float | None = None, grid_n: int = DEFAULT_GRID,
    zeta_floor: float = ZETA_FLOOR,
) -> float:
    """Lower convex envelope of ``phi`` at ``x`` via one-dimensional envelopes."""
    x = np.asarray(x, dtype=float)
    if x.shape != (scenario.S,):
        raise ValueError(f"x must have {scenario.S} components")
    if np.any(x < 0):
        raise ValueError("phi_breve is defined for nonnegative arguments only")
    envs = [single_envelope(scenario, float(beta), s, domain_cap, grid_n) for s in range(scenario.S)]
    return combine_envelopes(x, envs, zeta_floor)


@dataclass(frozen=True)
class HullSurface:
    """Lower convex hull of a sampled function of two variables."""

    normals: np.ndarray
    offsets: np.ndarray
    scale: float

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        vals = -(self.normals[:, 0] * x[0] + self.normals[:, 1] * x[1] + self.offsets) / self.normals[:, 2]
        return float(vals.max()) * self.scale


@lru_cache(maxsize=64)
def direct_hull_2d(scenario: Scenario, beta: float, grid_n: int) -> HullSurface:
    if scenario.S != 2:
        raise NotImplementedError("the direct envelope oracle supports two message sizes only")
    axis = np.linspace(0.0, scenario.K, grid_n)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    bits = scenario.alphas[0] * g1 + scenario.alphas[1] * g2
    vals = np.asarray(n_code(bits, scenario.context())) * (1.0 + beta * (g1 + g2) / scenario.K)
    # a packet carries at most K messages in total
    keep = (g1 + g2 <= scenario.K * (1.0 + 1e-12)).ravel()
    scale = float(vals.max())
    pts = np.column_stack([g1.ravel(), g2.ravel(), vals.ravel() / scale])[keep]
    hull = ConvexHull(pts)
    eq = hull.equations
    lower = eq[eq[:, 2] < -1e-12]
    return HullSurface(lower[:, :3], lower[:, 3], scale)


def phi_breve_direct_2d(x, beta: float, scenario: Scenario, grid_n: int | None = None) -> float:
    """Brute-force lower convex envelope of ``phi`` on a grid.

    The grid covers [0, K]^2 restricted to the feasible triangle
    ``x1 + x2 <= K``.
    """
    if scenario.S != 2:
        raise NotImplementedError("the direct envelope oracle supports two message sizes only")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or x.sum() > scenario.K:
        raise ValueError("x must lie in the triangle x >= 0, x1 + x2 <= K")
    if not np.any(x > 0):
        return 0.0
    n = 8 * scenario.K + 1 if grid_n is None else int(grid_n)
    return direct_hull_2d(scenario, float(beta), n)(x)
