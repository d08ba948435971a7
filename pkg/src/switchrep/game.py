"""Donation-game payoffs, fitness and per-rule replicator coefficients.

Both coefficients are the weak-selection (first order in omega) drift rates
of ``dx/dt = alpha * x * (1 - x)`` on a k-regular graph; for omega close
to 1 they are extrapolations, not exact rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import InvalidParams

C = 1
D = 0


@dataclass(frozen=True)
class GameParams:
    """Selection strength, degree, benefit and cost (plus population size).

    ``n`` is only needed by the agent-based engine and may be left as None.
    ``omega = 0`` is accepted so that neutral-drift runs can be expressed.
    """

    omega: float
    k: int
    b: float
    c: float
    n: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if isinstance(self.k, bool) or int(self.k) != self.k:
            raise InvalidParams(f"degree k must be an integer, got {self.k!r}")
        if self.k <= 2:
            raise InvalidParams(f"degree k must exceed 2, got {self.k}")
        if not (math.isfinite(self.b) and math.isfinite(self.c)):
            raise InvalidParams("b and c must be finite")
        if not 0 < self.c < self.b:
            raise InvalidParams(f"need 0 < c < b, got b={self.b}, c={self.c}")
        if not 0 <= self.omega <= 1:
            raise InvalidParams(f"omega must lie in [0, 1], got {self.omega}")
        if self.n is not None:
            if int(self.n) != self.n or self.n <= self.k:
                raise InvalidParams(f"population size n={self.n} must be an integer > k={self.k}")
            if (self.n * self.k) % 2:
                raise InvalidParams(f"n*k must be even for a k-regular graph (n={self.n}, k={self.k})")

    @property
    def payoffs(self) -> "PayoffMatrix":
        return PayoffMatrix.from_benefit_cost(self.b, self.c)


@dataclass(frozen=True)
class PayoffMatrix:
    """Row player's payoff against each opponent strategy."""

    cc: float
    cd: float
    dc: float
    dd: float

    @classmethod
    def from_benefit_cost(cls, b: float, c: float) -> "PayoffMatrix":
        return cls(cc=b - c, cd=-c, dc=b, dd=0.0)

    def __call__(self, me, other) -> float:
        me, other = _as_strategy(me), _as_strategy(other)
        if me == C:
            return self.cc if other == C else self.cd
        return self.dc if other == C else self.dd


class RuleKind(str, Enum):
    PC = "PC"
    IM = "IM"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class UpdateRule:
    """A strategy update rule and its replicator coefficient."""

    kind: RuleKind
    alpha: float

    @classmethod
    def pc(cls, p: GameParams) -> "UpdateRule":
        return cls(RuleKind.PC, coefficient_pc(p))

    @classmethod
    def im(cls, p: GameParams) -> "UpdateRule":
        return cls(RuleKind.IM, coefficient_im(p))

    @classmethod
    def custom(cls, alpha: float) -> "UpdateRule":
        if not math.isfinite(alpha):
            raise InvalidParams(f"custom coefficient must be finite, got {alpha}")
        return cls(RuleKind.CUSTOM, float(alpha))

    @property
    def label(self) -> str:
        if self.kind is RuleKind.CUSTOM:
            return f"Custom({self.alpha:g})"
        return self.kind.value


def coefficient_pc(p: GameParams) -> float:
    """Pairwise-comparison coefficient, -omega k (k-2) c / (2 (k-1)).

    Strictly negative whenever omega > 0: defection is always favoured.
    """
    p.validate()
    k = p.k
    return -p.omega * k * (k - 2) * p.c / (2 * (k - 1))


def coefficient_im(p: GameParams) -> float:
    """Imitation coefficient; its sign is that of ``b - (k+2) c``."""
    p.validate()
    k = p.k
    margin = im_margin(p)
    return p.omega * k * k * (k - 2) * margin / ((k + 1) ** 2 * (k - 1))


def im_margin(p: GameParams) -> float:
    """b - (k+2) c, snapped to 0 within rounding of the boundary b = (k+2) c."""
    margin = p.b - (p.k + 2) * p.c
    if abs(margin) <= 1e-12 * p.b:
        return 0.0
    return margin


def _as_strategy(s) -> int:
    if s in ("C", "c", 1, True):
        return C
    if s in ("D", "d", 0, False):
        return D
    raise ValueError(f"strategy must be C or D, got {s!r}")


def accumulated_payoff(strategy_self, neighbor_strategies: Iterable, b: float, c: float) -> float:
    """Sum of pairwise donation-game payoffs against every neighbour."""
    m = PayoffMatrix.from_benefit_cost(b, c)
    return float(sum(m(strategy_self, s) for s in neighbor_strategies))


def fitness(payoff: float, omega: float) -> float:
    return 1.0 - omega + omega * payoff
