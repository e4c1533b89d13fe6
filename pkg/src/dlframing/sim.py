"""Seeded Monte Carlo simulation of downlink frames.

Each frame draws the message sizes, lays out the packet schedule of the
protocol, and draws one decode outcome per (packet, listening user).  A user
that fails a control packet is charged the worst-case frame duration on top
of its scheduled receive time, and an active user fails if any packet it
listens to fails.

Random streams come from numpy's PCG64 seeded with ``[seed, batch]``; the
batch size is fixed, so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fbl import fbl_context, n_code
from .protocols import (
    CONTROL_LAYER,
    FIXED,
    GENIE,
    HEADER_LAYER,
    POINTER_LAYER,
    VARIABLE,
    ProtocolParams,
    activity_bits,
    build_schedule,
    header_bits,
    partition_groups,
    pointer_bits,
    size_bits,
    user_groups,
    worst_case,
)
from .scenario import Scenario

BATCH = 4096
WORKERS_ENV = "DLFRAMING_WORKERS"


@dataclass(frozen=True)
class ScheduledPacket:
    index: int
    role: str
    layer: int
    start: float
    length: float
    eps: float
    audience: tuple[int, ...]


@dataclass(frozen=True)
class _Compiled:
    packets: tuple[ScheduledPacket, ...]
    lengths: np.ndarray
    eps: np.ndarray
    hears: np.ndarray  # (packets, K) bool
    control: np.ndarray  # (packets,) bool
    on_time: np.ndarray
    stop: np.ndarray
    T: float


@dataclass(frozen=True)
class FrameTrace:
    sizes: np.ndarray
    schedule: tuple[ScheduledPacket, ...]
    T: float
    on_time: np.ndarray
    decoded: np.ndarray
    stop: np.ndarray
    control_failed: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.sizes > 0

    @property
    def P1(self) -> float:
        return float(self.on_time.mean())


class FrameModel:
    """Protocol-specific schedule compiler shared by all frames of a run."""

    def __init__(self, scenario: Scenario, params: ProtocolParams):
        params.validate(scenario)
        self.scenario = scenario
        self.params = params
        self.ptr = pointer_bits(scenario, params) if params.kind == VARIABLE else ()
        self.p_worst = worst_case(scenario, params)[0] if params.kind != GENIE else 0.0
        self.values = np.array((0,) + scenario.alphas, dtype=np.int64)
        probs = np.array((scenario.q,) + tuple((1.0 - scenario.q) * p for p in scenario.ps))
        self.cdf = np.cumsum(probs)
        self.cdf[-1] = 1.0
        self._cache: dict[tuple, _Compiled] = {}

    def draw_sizes(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        u = rng.random((n, self.scenario.K))
        return self.values[np.searchsorted(self.cdf, u, side="right")]

    def compile(self, sizes) -> _Compiled:
        key = tuple(int(d) for d in sizes)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        sc, params = self.scenario, self.params
        pk = build_schedule(sc, params, key, ptr_bits=self.ptr)
        eps = np.array([params.eps_layers[p.layer] for p in pk], dtype=float)
        lengths = np.array(
            [float(n_code(p.bits, fbl_context(sc.P, params.eps_layers[p.layer]))) for p in pk], dtype=float
        )
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]]) if len(pk) else np.zeros(0)
        hears = np.zeros((len(pk), sc.K), dtype=bool)
        for i, p in enumerate(pk):
            hears[i, list(p.audience)] = True
        ends = starts + lengths
        stop = np.where(hears, ends[:, None], 0.0).max(axis=0) if len(pk) else np.zeros(sc.K)
        packets = tuple(
            ScheduledPacket(i, p.role, p.layer, float(s), float(l), float(e), p.audience)
            for i, (p, s, l, e) in enumerate(zip(pk, starts, lengths, eps))
        )
        out = _Compiled(
            packets,
            lengths,
            eps,
            hears,
            np.array([p.is_control for p in pk], dtype=bool),
            lengths @ hears if len(pk) else np.zeros(sc.K),
            stop,
            float(lengths.sum()),
        )
        if len(self._cache) < 200_000:
            self._cache[key] = out
        return out

    def frame(self, rng: np.random.Generator, sizes=None) -> FrameTrace:
        sizes = self.draw_sizes(rng)[0] if sizes is None else np.asarray(sizes, dtype=np.int64)
        c = self.compile(sizes)
        fail = (rng.random(c.hears.shape) < c.eps[:, None]) & c.hears
        ctrl_fail = fail[c.control].any(axis=0)
        msg_fail = fail[~c.control].any(axis=0)
        on_time = c.on_time + np.where(ctrl_fail, self.p_worst, 0.0)
        decoded = ~(ctrl_fail | msg_fail)
        return FrameTrace(sizes, c.packets, c.T, on_time, decoded, c.stop.copy(), ctrl_fail)


def simulate_frame(scenario: Scenario, params: ProtocolParams, rng, sizes=None) -> FrameTrace:
    """One frame; ``rng`` is a numpy Generator or an integer seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return FrameModel(scenario, params).frame(rng, sizes)


@dataclass(frozen=True)
class SimReport:
    n_frames: int
    seed: int
    ET_hat: float
    ET_se: float
    EP1_hat: float
    EP1_se: float
    err_rate_active: float
    n_active: int
    n_errors: int
    worst_case_charges: int

    @property
    def ci_infinite(self) -> bool:
        return not math.isfinite(self.ET_se)

    def err_se(self, p: float) -> float:
        """Binomial standard error of the active error rate under failure probability p."""
        return math.sqrt(p * (1.0 - p) / self.n_active) if self.n_active else math.inf


class BatchModel:
    """Vectorized frame statistics computed from per-group counts.

    Gives the same receive times as the explicit schedule.  Failure events
    are drawn per user in aggregate: with independent per-(packet, listener)
    outcomes, a user misses some control packet with probability
    ``1 - prod_l (1 - eps_l)^{c_l}``, where ``c_l`` counts the layer-l
    control packets it hears.
    """

    def __init__(self, model: FrameModel):
        self.m = model
        sc, p = model.scenario, model.params
        self.msg_eps = p.eps_layers[-1]
        self.groups = [range(sc.K)] if p.kind == GENIE else user_groups(sc.K, p.W)
        self._len: dict[tuple, float] = {}
        self._tables: dict[tuple, tuple] = {}

    def length(self, bits: int, layer: int) -> float:
        key = (bits, layer)
        if key not in self._len:
            eps = self.m.params.eps_layers[layer]
            self._len[key] = float(n_code(bits, fbl_context(self.m.scenario.P, eps))) if bits > 0 else 0.0
        return self._len[key]

    def _class_table(self, s: int, w: int):
        # T[m]: time of m grouped messages; R[m, r]: length of the packet holding rank r
        key = (s, w)
        if key not in self._tables:
            sc, p = self.m.scenario, self.m.params
            ctx = fbl_context(sc.P, self.msg_eps)
            T = np.zeros(w + 1)
            R = np.zeros((w + 1, w))
            for m in range(1, w + 1):
                r = 0
                for g in partition_groups(m, p.V[s]):
                    ell = float(n_code(sc.alphas[s] * g, ctx))
                    T[m] += ell
                    R[m, r : r + g] = ell
                    r += g
            self._tables[key] = (T, R)
        return self._tables[key]

    def receive_times(self, sizes: np.ndarray):
        """Frame durations, scheduled receive times and control-packet counts per layer."""
        m = self.m
        sc, p = m.scenario, m.params
        n, K = sizes.shape
        cls = np.searchsorted(m.values, sizes)  # 0 inactive, s + 1 for alphas[s]
        T = np.zeros(n)
        on = np.zeros((n, K))
        cnt = np.zeros((n, K, 3), dtype=np.int64)

        def control(bits, layer, cols):
            ell = self.length(bits, layer)
            if ell > 0.0:
                T[:] += ell
                on[:, cols] += ell
                cnt[:, cols, layer] += 1

        if p.kind == FIXED:
            control(header_bits(K, p.W), HEADER_LAYER, slice(None))
        elif p.kind == VARIABLE:
            for b, ug in zip(m.ptr, self.groups[1:]):
                control(b, POINTER_LAYER, slice(ug.start, ug.stop))
        for ug in self.groups:
            cols = slice(ug.start, ug.stop)
            w = len(ug)
            sub = cls[:, cols]
            if p.kind == FIXED:
                u = (sub > 0).sum(axis=1)
                bits = np.array([activity_bits(w, k) for k in range(w + 1)])
                ell = np.array([self.length(int(b), CONTROL_LAYER) for b in bits])
                T += ell[u]
                on[:, cols] += ell[u][:, None]
                cnt[:, cols, CONTROL_LAYER] += (bits[u] > 0)[:, None]
            elif p.kind == VARIABLE:
                control(size_bits(w, sc.S), CONTROL_LAYER, cols)
            for s in range(sc.S):
                mask = sub == s + 1
                k_s = mask.sum(axis=1)
                rank = np.clip(np.cumsum(mask, axis=1) - 1, 0, None)
                Ts, Rs = self._class_table(s, w)
                T += Ts[k_s]
                on[:, cols] += np.where(mask, Rs[k_s[:, None], rank], 0.0)
        return cls, T, on, cnt

    def run(self, rng: np.random.Generator, n: int):
        m = self.m
        sizes = m.draw_sizes(rng, n)
        cls, T, on, cnt = self.receive_times(sizes)
        if m.params.kind == GENIE:
            ctrl_fail = np.zeros(on.shape, dtype=bool)
        else:
            p_ctrl = -np.expm1((cnt * np.log1p(-np.asarray(m.params.eps_layers))).sum(axis=2))
            ctrl_fail = rng.random(on.shape) < p_ctrl
        active = cls > 0
        msg_fail = active & (rng.random(on.shape) < self.msg_eps)
        on += np.where(ctrl_fail, m.p_worst, 0.0)
        return T, on, active, ctrl_fail, active & (ctrl_fail | msg_fail)


def _run_batch(args):
    scenario, params, seed, batch, n = args
    rng = np.random.default_rng([seed, batch])
    T, on, active, ctrl_fail, failed = BatchModel(FrameModel(scenario, params)).run(rng, n)
    P1 = on.mean(axis=1)
    return np.array(
        [T.sum(), (T * T).sum(), P1.sum(), (P1 * P1).sum(), active.sum(), failed.sum(), ctrl_fail.sum(), n],
        dtype=float,
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def mc_estimate(
    scenario: Scenario, params: ProtocolParams, n_frames: int, seed: int = 0, workers: int | None = None
) -> SimReport:
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    params.validate(scenario)
    jobs = []
    for b, start in enumerate(range(0, n_frames, BATCH)):
        jobs.append((scenario, params, int(seed), b, min(BATCH, n_frames - start)))
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_batch, jobs))
    else:
        parts = [_run_batch(j) for j in jobs]
    tot = np.zeros(8)
    for p in parts:  # fixed order keeps the sums bit-identical
        tot += p
    n = n_frames
    ET, EP = tot[0] / n, tot[2] / n
    if n > 1:
        se_t = math.sqrt(max(tot[1] / n - ET * ET, 0.0) * n / (n - 1) / n)
        se_p = math.sqrt(max(tot[3] / n - EP * EP, 0.0) * n / (n - 1) / n)
    else:
        se_t = se_p = math.inf
    n_act, n_err = int(tot[4]), int(tot[5])
    return SimReport(
        n, int(seed), float(ET), se_t, float(EP), se_p,
        n_err / n_act if n_act else 0.0, n_act, n_err, int(tot[6]),
    )
