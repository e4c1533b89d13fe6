"""Genie-aided lower bound on E[T] + beta * E[P1] and its trade-off curve."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .combinat import compositions, multinomial_pmf, n_compositions
from .envelope import DEFAULT_GRID, phi_breve, single_envelope
from .scenario import Scenario

EXACT_LIMIT = 200_000
MC_DRAWS = 1_000_000


def default_betas(n: int = 61, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


@dataclass(frozen=True)
class BoundPoint:
    beta: float
    value: float
    stderr: float = 0.0
    method: str = "exact"


def _check_beta(beta):
    if not beta >= 0:
        raise ValueError(f"beta must be nonnegative, got {beta!r}")


def lower_bound_point(
    beta: float,
    scenario: Scenario,
    method: str = "auto",
    n_draws: int = MC_DRAWS,
    seed: int = 0,
    grid_n: int = DEFAULT_GRID,
) -> BoundPoint:
    """Lower bound on E[T] + beta E[P1] valid for every genie-aided protocol.

    The expectation over the multinomial count vector is enumerated exactly
    when the number of outcomes is at most ``EXACT_LIMIT``; otherwise it is
    estimated from ``n_draws`` seeded draws.
    """
    _check_beta(beta)
    beta = float(beta)
    S, K = scenario.S, scenario.K
    if method == "auto":
        method = "exact" if n_compositions(K, S + 1) <= EXACT_LIMIT else "mc"
    probs = np.array(scenario.size_probs)

    if method == "exact":
        counts = compositions(K, S + 1)
        weights = multinomial_pmf(counts, probs)
    elif method == "mc":
        rng = np.random.default_rng(seed)
        draws = rng.multinomial(K, probs, size=n_draws)
        counts, freq = np.unique(draws, axis=0, return_counts=True)
        weights = freq / n_draws
    else:
        raise ValueError(f"unknown method {method!r}")

    cache: dict[tuple, float] = {}
    terms = np.zeros(len(counts))
    for row, L in enumerate(counts):
        active = L[:S]
        total = int(active.sum())
        if total == 0:
            continue
        g = math.gcd(*map(int, active))
        key = tuple(int(v) // g for v in active)
        if key not in cache:
            cache[key] = phi_breve(active / total, beta, scenario, grid_n=grid_n)
        terms[row] = total * cache[key]

    value = float(np.dot(weights, terms))
    stderr = 0.0
    if method == "mc":
        var = float(np.dot(weights, (terms - value) ** 2))
        stderr = math.sqrt(var / n_draws)
    return BoundPoint(beta, value, stderr, method)


def corollary_s1(beta: float, scenario: Scenario, grid_n: int = DEFAULT_GRID) -> BoundPoint:
    """Closed form of the bound for a single message size."""
    if scenario.S != 1:
        raise NotImplementedError("the single-size closed form needs exactly one message size")
    _check_beta(beta)
    env = single_envelope(scenario, float(beta), 0, None, grid_n)
    return BoundPoint(float(beta), (1.0 - scenario.q) * scenario.K * float(env(1.0)))


@dataclass(frozen=True)
class BoundCurve:
    """Combined lower bound in the (E[T], E[P1]) plane.

    Each weight contributes the half-plane ``P >= (value - T) / beta``; the
    curve is their pointwise maximum.
    """

    betas: np.ndarray
    values: np.ndarray
    frame: np.ndarray
    power: np.ndarray
    vertex_frame: np.ndarray
    vertex_power: np.ndarray

    def line(self, i: int, T):
        return (self.values[i] - np.asarray(T, dtype=float)) / self.betas[i]

    def evaluate(self, T):
        T = np.asarray(T, dtype=float)
        out = np.max((self.values[:, None] - T.reshape(1, -1)) / self.betas[:, None], axis=0)
        return float(out[0]) if T.ndim == 0 else out.reshape(T.shape)

    @property
    def min_frame(self) -> float:
        """Frame duration where the two smallest weights intersect."""
        if len(self.vertex_frame):
            return float(self.vertex_frame[0])
        return float(self.values[0])


def _line_vertices(betas, values):
    # upper envelope of lines with slopes -1/beta, ascending in slope
    order = np.argsort(betas)
    keep: list[int] = []

    def meet(i, j):
        bi, bj = betas[i], betas[j]
        return (values[i] * bj - values[j] * bi) / (bj - bi)

    for idx in order:
        if keep and betas[keep[-1]] == betas[idx]:
            if values[idx] <= values[keep[-1]]:
                continue
            keep.pop()
        while len(keep) >= 2 and meet(keep[-2], keep[-1]) >= meet(keep[-1], idx):
            keep.pop()
        keep.append(idx)
    vt = np.array([meet(a, b) for a, b in zip(keep, keep[1:])])
    vp = np.array([(values[a] - t) / betas[a] for a, t in zip(keep, vt)])
    return vt, vp


def bound_curve(
    betas, scenario: Scenario, frame_grid=None, n_grid: int = 200, grid_n: int = DEFAULT_GRID
) -> BoundCurve:
    betas = np.asarray(list(betas), dtype=float)
    if betas.size == 0:
        raise ValueError("at least one beta is required")
    if np.any(betas <= 0):
        raise ValueError("curve weights must be positive")
    values = np.array([lower_bound_point(b, scenario, grid_n=grid_n).value for b in betas])
    vt, vp = _line_vertices(betas, values)
    if frame_grid is None:
        if len(vt):
            frame_grid = np.linspace(vt.min(), vt.max(), n_grid)
        else:
            frame_grid = np.linspace(0.5 * values[0], values[0], n_grid)
    frame_grid = np.asarray(frame_grid, dtype=float)
    curve = BoundCurve(betas, values, frame_grid, np.zeros_like(frame_grid), vt, vp)
    object.__setattr__(curve, "power", curve.evaluate(frame_grid))
    return curve
