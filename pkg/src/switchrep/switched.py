"""Periodically switched replicator dynamics.

Within one period ``[0, T)`` the rules are active one after the other on the
windows ``[t_{i-1}, t_i)``; each window runs ``dx/dt = alpha_i x (1 - x)``.
Because every subsystem shares the logistic vector field, the switched
trajectory stays logistic in an accumulated exponent

    x(t) = 1 / (1 + r exp(-Lambda(t))),   r = (1 - x0) / x0,

where ``Lambda(t)`` integrates the active coefficient up to ``t``. The
exponent grows by exactly ``S = sum_i alpha_i (t_i - t_{i-1})`` per period,
and the sign of ``S`` decides everything asymptotic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DegenerateSchedule, InvalidParams
from .game import UpdateRule


@dataclass(frozen=True)
class SwitchSchedule:
    """Activation sequence, interior switching instants and period.

    ``instants`` holds t_1 < ... < t_{m-1}; t_0 = 0 and t_m = period are
    implicit.
    """

    rules: tuple
    instants: tuple
    period: float

    def __init__(self, rules: Sequence[UpdateRule], instants: Sequence[float], period: float):
        object.__setattr__(self, "rules", tuple(rules))
        object.__setattr__(self, "instants", tuple(float(t) for t in instants))
        object.__setattr__(self, "period", float(period))
        self._validate()

    def _validate(self):
        m = len(self.rules)
        if m < 1:
            raise InvalidParams("a schedule needs at least one rule")
        if len(self.instants) != m - 1:
            raise InvalidParams(
                f"{m} rules need {m - 1} interior switching instants, got {len(self.instants)}"
            )
        if not (math.isfinite(self.period) and self.period > 0):
            raise InvalidParams(f"period must be positive, got {self.period}")
        b = self.boundaries
        if any(not math.isfinite(t) for t in b) or any(b[i + 1] <= b[i] for i in range(m)):
            raise InvalidParams(f"need 0 < t_1 < ... < t_(m-1) < T, got instants={self.instants}, T={self.period}")

    @classmethod
    def two_rules(cls, first: UpdateRule, second: UpdateRule, t1: float, period: float):
        return cls((first, second), (t1,), period)

    @property
    def m(self) -> int:
        return len(self.rules)

    @property
    def boundaries(self) -> tuple:
        """(t_0, t_1, ..., t_m) with t_0 = 0 and t_m = T."""
        return (0.0, *self.instants, self.period)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.rules], dtype=float)

    @property
    def durations(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    @property
    def drift_sum(self) -> float:
        """S, the exponent gained over one full period."""
        # fsum keeps exactly cancelling schedules at S = 0
        return math.fsum(self.alphas * self.durations)

    def rotated(self, shift: int) -> "SwitchSchedule":
        """Same cyclic sequence of windows started at rule ``shift``."""
        shift %= self.m
        rules = self.rules[shift:] + self.rules[:shift]
        d = self.durations
        d = np.concatenate([d[shift:], d[:shift]])
        return SwitchSchedule(rules, np.cumsum(d)[:-1], self.period)


class StablePoint(str, Enum):
    FULL_COOPERATION = "FullCooperation"
    FULL_DEFECTION = "FullDefection"
    NEUTRAL = "Neutral"


@dataclass(frozen=True)
class Classification:
    s_value: float
    stable_point: StablePoint
    equilibria: tuple = (0.0, 1.0)

    @property
    def limit(self) -> float | None:
        """Long-run cooperator fraction for interior starts (None if neutral)."""
        if self.stable_point is StablePoint.FULL_COOPERATION:
            return 1.0
        if self.stable_point is StablePoint.FULL_DEFECTION:
            return 0.0
        return None


def _split_time(s: SwitchSchedule, t: float):
    theta = math.floor(t / s.period)
    phase = t - theta * s.period
    # guard the floor against rounding on exact multiples of T
    if phase < 0:
        theta -= 1
        phase += s.period
    elif phase >= s.period:
        theta += 1
        phase -= s.period
    return theta, phase


def signal_at(s: SwitchSchedule, t: float):
    """Active rule at time ``t`` (right-continuous).

    Returns ``(i, (start, end))`` with ``i`` the 1-based rule position in the
    activation sequence and ``[start, end)`` the active window in absolute
    time.
    """
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    theta, phase = _split_time(s, t)
    b = s.boundaries
    i = 1
    while i < s.m and phase >= b[i]:
        i += 1
    base = theta * s.period
    return i, (base + b[i - 1], base + b[i])


def lambda_exponent(s: SwitchSchedule, t):
    """Accumulated exponent Lambda(t) = integral of the active coefficient.

    Evaluated as theta*S + (completed windows of this period) + partial
    window, which keeps it continuous across switches and stable for large t.
    Accepts scalars or arrays.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    b = np.asarray(s.boundaries)
    alphas = s.alphas
    cum = np.concatenate([[0.0], np.cumsum(alphas * np.diff(b))])
    theta = np.floor(t_arr / s.period)
    phase = t_arr - theta * s.period
    low = phase < 0
    theta = np.where(low, theta - 1, theta)
    phase = np.where(low, phase + s.period, phase)
    # times meant to sit on a switching instant can land a few ulps off it
    # after the period split; snap them so S = 0 stays exactly periodic
    tol = 8 * np.finfo(float).eps * np.maximum(np.abs(t_arr), s.period)
    near = np.argmin(np.abs(phase[..., None] - b), axis=-1)
    snap = np.abs(phase - b[near]) <= tol
    phase = np.where(snap, b[near], phase)
    high = phase >= s.period
    theta = np.where(high, theta + 1, theta)
    phase = np.where(high, phase - s.period, phase)
    idx = np.searchsorted(b[1:-1], phase, side="right")
    lam = theta * s.drift_sum + cum[idx] + alphas[idx] * (phase - b[idx])
    if np.ndim(t) == 0:
        return float(lam)
    return lam


def logistic_from_exponent(x0: float, lam):
    """1 / (1 + r e^{-lam}) with r = (1-x0)/x0, overflow-safe in both tails."""
    lam = np.asarray(lam, dtype=float)
    if not 0.0 <= x0 <= 1.0:
        raise ValueError(f"x0 must lie in [0, 1], got {x0}")
    if x0 == 0.0 or x0 == 1.0:
        # boundary equilibria; the closed form would divide by x0
        out = np.full(lam.shape, float(x0))
        return float(out) if out.ndim == 0 else out
    r = (1.0 - x0) / x0
    with np.errstate(over="ignore"):
        pos = lam >= 0
        e_neg = np.exp(-np.where(pos, lam, 0.0))
        e_pos = np.exp(np.where(pos, 0.0, lam))
        out = np.where(pos, 1.0 / (1.0 + r * e_neg), e_pos / (e_pos + r))
    return float(out) if out.ndim == 0 else out


def trajectory_at(s: SwitchSchedule, x0: float, t, t0: float = 0.0):
    """Exact cooperator fraction at time(s) ``t``, starting from ``x0`` at ``t0``."""
    if not 0.0 <= x0 <= 1.0:
        raise ValueError(f"x0 must lie in [0, 1], got {x0}")
    lam = lambda_exponent(s, t)
    if t0:
        lam = lam - lambda_exponent(s, t0)
    return logistic_from_exponent(x0, lam)


def classify(s: SwitchSchedule) -> Classification:
    S = s.drift_sum
    if S > 0:
        point = StablePoint.FULL_COOPERATION
    elif S < 0:
        point = StablePoint.FULL_DEFECTION
    else:
        point = StablePoint.NEUTRAL
    return Classification(S, point)


def critical_instant_two_rules(alpha1: float, alpha2: float, period: float) -> float:
    """Switching instant t_1 at which a two-rule drift sum changes sign.

    With rule 1 on [0, t_1) and rule 2 on [t_1, T), S(t_1) = alpha1 t_1 +
    alpha2 (T - t_1) vanishes at alpha2 T / (alpha2 - alpha1). The value is
    only a usable switching instant when it lies strictly inside (0, T).
    """
    if alpha1 == alpha2:
        raise DegenerateSchedule("equal coefficients: the drift sum never changes sign in t_1")
    return alpha2 * period / (alpha2 - alpha1)


def boundary_sequence(s: SwitchSchedule, x0: float, v: int, theta_max: int) -> np.ndarray:
    """x(theta T + t_v) for theta = 0..theta_max."""
    if not 0 <= v < s.m:
        raise ValueError(f"v must lie in 0..{s.m - 1}, got {v}")
    if not 0 < x0 < 1:
        raise ValueError(f"x0 must lie in (0, 1), got {x0}")
    t = np.arange(theta_max + 1) * s.period + s.boundaries[v]
    return np.asarray(trajectory_at(s, x0, t))


def enumerate_activation_sequences(rules: Sequence[UpdateRule]) -> list:
    """Every ordering of the given rules (m! activation sequences)."""
    return list(itertools.permutations(rules))


_LOCAL_SEARCH = 64


def convergence_period(s: SwitchSchedule, x0: float, tol: float = 1e-3) -> int | None:
    """Smallest theta with |x(theta T) - limit| < tol, found by inverting the logistic.

    Returns None for a neutral schedule (no limit) and 0 when x0 already
    qualifies.
    """
    if not 0 < x0 < 1:
        raise ValueError(f"x0 must lie in (0, 1), got {x0}")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    S = s.drift_sum
    if S == 0:
        return None
    r = (1.0 - x0) / x0
    if S > 0:
        # 1 - x < tol  <=>  theta S > ln(r (1 - tol) / tol)
        need = math.log(r * (1.0 - tol) / tol)
        limit = 1.0
    else:
        # x < tol  <=>  theta |S| > ln((1 - tol) / (tol r))
        need = math.log((1.0 - tol) / (tol * r))
        limit = 0.0
    if need < 0:
        theta = 0
    else:
        theta = math.floor(need / abs(S)) + 1
    # absorb floating-point error at the boundary by a short local search
    def ok(th):
        return abs(trajectory_at(s, x0, th * s.period) - limit) < tol

    for _ in range(_LOCAL_SEARCH):
        if theta > 0 and ok(theta - 1):
            theta -= 1
        elif not ok(theta):
            theta += 1
        else:
            break
    return theta
