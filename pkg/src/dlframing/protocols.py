"""Analytic evaluation of the genie-aided, fixed-size and variable-size framings.

Every protocol is described twice: as a per-realization packet schedule
(:func:`build_schedule`, used by the simulator) and as an expected packet
ledger (:func:`expected_ledger`) from which E[T] and E[P1] follow exactly.
Power is the average receive-ON time over the K users.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .combinat import binomial_pmf, ceil_log2_int, compositions
from .fbl import fbl_context, n_code
from .scenario import Scenario

GENIE = "genie"
FIXED = "fixed"
VARIABLE = "variable"
KINDS = (GENIE, FIXED, VARIABLE)

# layer indices into eps_layers
POINTER_LAYER = 0
HEADER_LAYER = 0
CONTROL_LAYER = 1
MESSAGE_LAYER = 2

RELIABILITY_RTOL = 1e-12


class ParameterError(ValueError):
    """Protocol parameters violate a range constraint."""


class BudgetError(ParameterError):
    """Per-layer error probabilities exceed the reliability budget."""


def equal_split(eps_total: float, n: int = 3) -> tuple[float, ...]:
    """Per-layer error probabilities with prod(1 - eps_i) = 1 - eps_total."""
    e = -math.expm1(math.log1p(-eps_total) / n)
    return (e,) * n


def partition_groups(m: int, V: int) -> list[int]:
    """Split ``m`` users into ceil(m / V) groups whose sizes differ by at most one."""
    if V < 1:
        raise ValueError(f"group cap must be at least 1, got {V!r}")
    if m < 0:
        raise ValueError("number of users must be nonnegative")
    if m == 0:
        return []
    G = -(-m // V)
    base, extra = divmod(m, G)
    return [base + 1] * extra + [base] * (G - extra)


def header_bits(K: int, W: int) -> int:
    """First-layer size of the fixed protocol: ceil(ceil(K/W) * log2(W))."""
    return math.ceil(-(-K // W) * math.log2(W))


def activity_bits(n: int, u: int) -> int:
    """Bits naming which ``u`` of the ``n`` users of a group are active."""
    return ceil_log2_int(math.comb(n, u))


def size_bits(n: int, S: int) -> int:
    """Second-layer size of the variable protocol: ceil(n * log2(S + 1))."""
    return math.ceil(n * math.log2(S + 1))


@dataclass(frozen=True)
class ProtocolParams:
    kind: str
    V: tuple[int, ...]
    W: int | None = None
    eps_layers: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown protocol kind {self.kind!r}")
        V = (int(self.V),) if np.isscalar(self.V) else tuple(int(v) for v in self.V)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "eps_layers", tuple(float(e) for e in self.eps_layers))
        if self.W is not None:
            object.__setattr__(self, "W", int(self.W))

    @classmethod
    def genie(cls, V, eps: float) -> "ProtocolParams":
        return cls(GENIE, V, None, (eps,))

    @classmethod
    def fixed(cls, V, W: int, eps_layers) -> "ProtocolParams":
        return cls(FIXED, V, W, tuple(eps_layers))

    @classmethod
    def variable(cls, V, W: int, eps_layers) -> "ProtocolParams":
        return cls(VARIABLE, V, W, tuple(eps_layers))

    def with_eps(self, eps_layers) -> "ProtocolParams":
        return ProtocolParams(self.kind, self.V, self.W, tuple(eps_layers))

    @property
    def reliability(self) -> float:
        return math.prod(1.0 - e for e in self.eps_layers)

    def validate(self, scenario: Scenario) -> None:
        K = scenario.K
        if len(self.V) != scenario.S:
            raise ParameterError(f"need one group cap per message size, got {self.V}")
        if any(not 1 <= v <= K for v in self.V):
            raise ParameterError(f"group caps must lie in 1..{K}, got {self.V}")
        if self.kind == GENIE:
            if len(self.eps_layers) != 1:
                raise ParameterError("the genie protocol takes a single error probability")
            if not 0.0 < self.eps_layers[0] <= scenario.eps * (1 + RELIABILITY_RTOL):
                raise BudgetError("genie code error probability exceeds the target")
            return
        if self.kind == FIXED and scenario.S != 1:
            raise ParameterError("the fixed protocol requires a single message size")
        if self.W is None or not 1 <= self.W <= K:
            raise ParameterError(f"user-group size must lie in 1..{K}, got {self.W}")
        if len(self.eps_layers) != 3 or any(not 0.0 <= e < 1.0 for e in self.eps_layers):
            raise ParameterError("three per-layer error probabilities in [0, 1) are required")
        if self.reliability < (1.0 - scenario.eps) * (1.0 - RELIABILITY_RTOL):
            raise BudgetError(
                f"layer budget {self.eps_layers} gives reliability {self.reliability!r} "
                f"below 1 - eps = {1.0 - scenario.eps!r}"
            )


@dataclass(frozen=True)
class EvalResult:
    """Analytic averages of one protocol configuration.

    ``EP1`` includes the reliability charge ``eps * p_worst``, so for q = 0
    with a single all-user packet it can sit marginally above ``ET``.
    """

    ET: float
    EP1: float
    p_worst: float
    err_active: float
    err_inactive: float = 0.0


@dataclass
class Ledger:
    """Packets grouped by (layer, bits) with their expected multiplicities.

    ``t_w`` is the expected number of such packets per frame and ``p_w`` the
    expected number of listeners divided by K.
    """

    layer: np.ndarray
    bits: np.ndarray
    t_w: np.ndarray
    p_w: np.ndarray

    @classmethod
    def from_dict(cls, acc: dict) -> "Ledger":
        keys = sorted(k for k in acc if k[1] > 0)
        return cls(
            np.array([k[0] for k in keys], dtype=np.int64),
            np.array([k[1] for k in keys], dtype=np.int64),
            np.array([acc[k][0] for k in keys], dtype=float),
            np.array([acc[k][1] for k in keys], dtype=float),
        )

    def lengths(self, P: float, eps_layers) -> np.ndarray:
        out = np.zeros(len(self.bits))
        for layer in np.unique(self.layer):
            sel = self.layer == layer
            out[sel] = n_code(self.bits[sel], fbl_context(P, eps_layers[layer]))
        return out

    def totals(self, P: float, eps_layers) -> tuple[float, float]:
        n = self.lengths(P, eps_layers)
        return float(self.t_w @ n), float(self.p_w @ n)


def _add(acc, layer, bits, t, p):
    if bits <= 0 or (t == 0 and p == 0):
        return
    cur = acc.get((layer, bits))
    if cur is None:
        acc[(layer, bits)] = [t, p]
    else:
        cur[0] += t
        cur[1] += p


def _cost(P, bits, eps):
    return 0.0 if bits <= 0 else float(n_code(bits, fbl_context(P, eps)))


@lru_cache(maxsize=4096)
def class_costs(P: float, alpha: int, V: int, eps: float, m_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame time and summed listener time of the grouped messages of m users, m = 0..m_max."""
    T = np.zeros(m_max + 1)
    Psum = np.zeros(m_max + 1)
    ctx = fbl_context(P, eps)
    for m in range(1, m_max + 1):
        g = np.array(partition_groups(m, V))
        lens = np.asarray(n_code(alpha * g, ctx))
        T[m] = lens.sum()
        Psum[m] = (g * lens).sum()
    return T, Psum


def user_groups(K: int, W: int) -> list[range]:
    out, start = [], 0
    for n in partition_groups(K, W):
        out.append(range(start, start + n))
        start += n
    return out


# ---------------------------------------------------------------------------
# worst-case frame duration


def _max_class_profile(scenario, params, n):
    """Largest message-layer time over size profiles of ``n`` users."""
    eps3 = params.eps_layers[-1]
    tables = [class_costs(scenario.P, a, v, eps3, n)[0] for a, v in zip(scenario.alphas, params.V)]
    comps = compositions(n, scenario.S + 1)[:, : scenario.S]
    totals = sum(tables[s][comps[:, s]] for s in range(scenario.S))
    best = int(np.argmax(totals))
    return float(totals[best]), comps[best]


def ug_max_length(scenario: Scenario, params: ProtocolParams, n: int) -> float:
    if params.kind == FIXED:
        eps2, eps3 = params.eps_layers[1:]
        T = class_costs(scenario.P, scenario.alphas[0], params.V[0], eps3, n)[0]
        return max(_cost(scenario.P, activity_bits(n, u), eps2) + T[u] for u in range(n + 1))
    msg, _ = _max_class_profile(scenario, params, n)
    return _cost(scenario.P, size_bits(n, scenario.S), params.eps_layers[1]) + msg


def pointer_bits(scenario: Scenario, params: ProtocolParams) -> tuple[int, ...]:
    """Widths of the pointers to user groups 2..B.

    Offsets are counted from the start of the first user group, using the
    largest possible length of every preceding group.
    """
    sizes = partition_groups(scenario.K, params.W)
    out, offset = [], 0.0
    for n in sizes[:-1]:
        offset += ug_max_length(scenario, params, n)
        out.append(math.ceil(math.log2(offset)) if offset > 1.0 else 0)
    return tuple(out)


def worst_case(scenario: Scenario, params: ProtocolParams) -> tuple[float, Ledger]:
    """Largest frame duration over all size realizations, with its packet ledger."""
    P, K = scenario.P, scenario.K
    acc: dict = {}
    if params.kind == GENIE:
        eps = params.eps_layers[0]
        tables = [class_costs(P, a, v, eps, K)[0] for a, v in zip(scenario.alphas, params.V)]
        comps = compositions(K, scenario.S + 1)[:, : scenario.S]
        totals = sum(tables[s][comps[:, s]] for s in range(scenario.S))
        prof = comps[int(np.argmax(totals))]
        for s, m in enumerate(prof):
            for g in partition_groups(int(m), params.V[s]):
                _add(acc, 0, scenario.alphas[s] * g, 1.0, 0.0)
    elif params.kind == FIXED:
        eps2, eps3 = params.eps_layers[1:]
        _add(acc, HEADER_LAYER, header_bits(K, params.W), 1.0, 0.0)
        for n in partition_groups(K, params.W):
            T = class_costs(P, scenario.alphas[0], params.V[0], eps3, n)[0]
            u = max(range(n + 1), key=lambda u: (_cost(P, activity_bits(n, u), eps2) + T[u], u))
            _add(acc, CONTROL_LAYER, activity_bits(n, u), 1.0, 0.0)
            for g in partition_groups(u, params.V[0]):
                _add(acc, MESSAGE_LAYER, scenario.alphas[0] * g, 1.0, 0.0)
    else:
        for b in pointer_bits(scenario, params):
            _add(acc, POINTER_LAYER, b, 1.0, 0.0)
        for n in partition_groups(K, params.W):
            _add(acc, CONTROL_LAYER, size_bits(n, scenario.S), 1.0, 0.0)
            _, prof = _max_class_profile(scenario, params, n)
            for s, m in enumerate(prof):
                for g in partition_groups(int(m), params.V[s]):
                    _add(acc, MESSAGE_LAYER, scenario.alphas[s] * g, 1.0, 0.0)
    ledger = Ledger.from_dict(acc)
    return ledger.totals(P, params.eps_layers)[0], ledger


def worst_case_power(scenario: Scenario, params: ProtocolParams) -> float:
    """Worst-case receive time charged for undetected control errors."""
    params.validate(scenario)
    return worst_case(scenario, params)[0]


# ---------------------------------------------------------------------------
# expected ledgers


def _grouped_messages(acc, scenario, alpha, V, n, p_active, layer):
    pmf = binomial_pmf(n, p_active)
    K = scenario.K
    for m in range(1, n + 1):
        w = float(pmf[m])
        if w == 0.0:
            continue
        for g in partition_groups(m, V):
            _add(acc, layer, alpha * g, w, w * g / K)


@lru_cache(maxsize=2048)
def _base_ledger(scenario: Scenario, kind: str, V: tuple, W: int | None) -> Ledger:
    # everything except the pointer layer, whose widths depend on eps
    K, q = scenario.K, scenario.q
    acc: dict = {}
    if kind == GENIE:
        for s, (a, p) in enumerate(zip(scenario.alphas, scenario.ps)):
            _grouped_messages(acc, scenario, a, V[s], K, (1.0 - q) * p, 0)
    elif kind == FIXED:
        _add(acc, HEADER_LAYER, header_bits(K, W), 1.0, 1.0)
        for n in partition_groups(K, W):
            pmf = binomial_pmf(n, 1.0 - q)
            for u in range(n + 1):
                _add(acc, CONTROL_LAYER, activity_bits(n, u), float(pmf[u]), float(pmf[u]) * n / K)
            _grouped_messages(acc, scenario, scenario.alphas[0], V[0], n, 1.0 - q, MESSAGE_LAYER)
    else:
        for n in partition_groups(K, W):
            _add(acc, CONTROL_LAYER, size_bits(n, scenario.S), 1.0, n / K)
            for s, (a, p) in enumerate(zip(scenario.alphas, scenario.ps)):
                _grouped_messages(acc, scenario, a, V[s], n, (1.0 - q) * p, MESSAGE_LAYER)
    return Ledger.from_dict(acc)


def expected_ledger(scenario: Scenario, params: ProtocolParams) -> Ledger:
    base = _base_ledger(scenario, params.kind, params.V, params.W)
    if params.kind != VARIABLE or params.W >= scenario.K:
        return base
    sizes = partition_groups(scenario.K, params.W)
    acc: dict = {}
    for b, n in zip(pointer_bits(scenario, params), sizes[1:]):
        _add(acc, POINTER_LAYER, b, 1.0, n / scenario.K)
    ptr = Ledger.from_dict(acc)
    return Ledger(*(np.concatenate([getattr(ptr, f), getattr(base, f)]) for f in ("layer", "bits", "t_w", "p_w")))


def evaluate(scenario: Scenario, params: ProtocolParams) -> EvalResult:
    params.validate(scenario)
    ledger = expected_ledger(scenario, params)
    ET, EP = ledger.totals(scenario.P, params.eps_layers)
    p_worst = worst_case(scenario, params)[0]
    if params.kind == GENIE:
        return EvalResult(ET, EP, p_worst, params.eps_layers[0], 0.0)
    e1, e2, _ = params.eps_layers
    # undetected control errors: worst-case receive time with weight eps
    EP += scenario.eps * p_worst
    return EvalResult(ET, EP, p_worst, 1.0 - params.reliability, 1.0 - (1.0 - e1) * (1.0 - e2))


def genie_eval(scenario: Scenario, V, eps_code: float | None = None) -> EvalResult:
    eps = scenario.eps if eps_code is None else eps_code
    return evaluate(scenario, ProtocolParams.genie(V, eps))


def fixed_eval(scenario: Scenario, V, W: int, eps_layers) -> EvalResult:
    return evaluate(scenario, ProtocolParams.fixed(V, W, eps_layers))


def variable_eval(scenario: Scenario, V, W: int, eps_layers) -> EvalResult:
    return evaluate(scenario, ProtocolParams.variable(V, W, eps_layers))


# ---------------------------------------------------------------------------
# per-realization schedule


@dataclass(frozen=True)
class Packet:
    role: str
    layer: int
    bits: int
    audience: tuple[int, ...]

    @property
    def is_control(self) -> bool:
        return self.role != "message"


def _message_packets(out, sizes, users, alpha, V, layer):
    members = [k for k in users if sizes[k] == alpha]
    start = 0
    for g in partition_groups(len(members), V):
        out.append(Packet("message", layer, alpha * g, tuple(members[start : start + g])))
        start += g


def build_schedule(scenario: Scenario, params: ProtocolParams, sizes, ptr_bits=None) -> list[Packet]:
    """Packets of one frame, in transmission order; zero-bit packets are omitted.

    ``sizes[k]`` is the message size of user k (0 when inactive).
    """
    K = scenario.K
    sizes = [int(d) for d in sizes]
    if len(sizes) != K:
        raise ValueError(f"expected {K} message sizes")
    out: list[Packet] = []
    everyone = tuple(range(K))
    if params.kind == GENIE:
        for s, a in enumerate(scenario.alphas):
            _message_packets(out, sizes, everyone, a, params.V[s], 0)
    elif params.kind == FIXED:
        out.append(Packet("header", HEADER_LAYER, header_bits(K, params.W), everyone))
        for ug in user_groups(K, params.W):
            u = sum(1 for k in ug if sizes[k] > 0)
            out.append(Packet("activity", CONTROL_LAYER, activity_bits(len(ug), u), tuple(ug)))
            _message_packets(out, sizes, ug, scenario.alphas[0], params.V[0], MESSAGE_LAYER)
    else:
        groups = user_groups(K, params.W)
        ptr = pointer_bits(scenario, params) if ptr_bits is None else ptr_bits
        for b, ug in zip(ptr, groups[1:]):
            out.append(Packet("pointer", POINTER_LAYER, b, tuple(ug)))
        for ug in groups:
            out.append(Packet("sizes", CONTROL_LAYER, size_bits(len(ug), scenario.S), tuple(ug)))
            for s, a in enumerate(scenario.alphas):
                _message_packets(out, sizes, ug, a, params.V[s], MESSAGE_LAYER)
    return [p for p in out if p.bits > 0]
