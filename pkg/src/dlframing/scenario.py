from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from .fbl import ChannelParams, FblContext, fbl_context


@dataclass(frozen=True)
class Scenario:
    """Downlink broadcast scenario.

    Each of the ``K`` users is inactive with probability ``q`` and otherwise
    receives a message of ``alphas[s]`` bits with probability ``ps[s]``.
    """

    channel: ChannelParams
    eps: float
    K: int
    q: float
    alphas: tuple[int, ...]
    ps: tuple[float, ...] = field(default=())

    def __post_init__(self):
        alphas = tuple(int(a) for a in self.alphas)
        ps = tuple(float(p) for p in self.ps) if self.ps else ((1.0,) if len(alphas) == 1 else ())
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "ps", ps)
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        object.__setattr__(self, "K", int(self.K))
        # q = 0 is admitted: the deterministic four-user example uses it
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must lie in [0, 1), got {self.q!r}")
        if not alphas:
            raise ValueError("at least one message size is required")
        if any(a <= 0 for a in alphas) or any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("message sizes must be positive and strictly increasing")
        if len(ps) != len(alphas):
            raise ValueError("ps must have one probability per message size")
        if any(p < 0 for p in ps) or not math.isclose(sum(ps), 1.0, abs_tol=1e-9):
            raise ValueError("ps must be nonnegative and sum to 1")

    @classmethod
    def make(cls, P=1.0, eps=1e-4, K=16, q=0.5, alphas=(100,), ps=None) -> "Scenario":
        return cls(ChannelParams(float(P)), float(eps), K, float(q), tuple(alphas), tuple(ps or ()))

    @property
    def P(self) -> float:
        return self.channel.P

    @property
    def S(self) -> int:
        return len(self.alphas)

    @property
    def size_probs(self) -> tuple[float, ...]:
        """Probabilities of the S+1 size classes, inactive class last."""
        return tuple((1.0 - self.q) * p for p in self.ps) + (self.q,)

    @property
    def mean_size(self) -> float:
        return (1.0 - self.q) * sum(a * p for a, p in zip(self.alphas, self.ps))

    def context(self, eps: float | None = None) -> FblContext:
        return fbl_context(self.P, self.eps if eps is None else eps)

    def as_dict(self) -> dict:
        return {
            "P": self.P,
            "eps": self.eps,
            "K": self.K,
            "q": self.q,
            "alphas": list(self.alphas),
            "ps": list(self.ps),
        }

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
