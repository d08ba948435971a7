"""Pair-approximation dynamics for pairwise-comparison and imitation updating.

The state is ``(x_C, x_{C|C})``: the cooperator fraction and the probability
that a neighbour of a cooperator cooperates. Both vector fields are the
leading-order (in omega) expressions; the ``o(omega)`` remainders are dropped.

Writing ``q = (x_{C|C} - x_C) / (1 - x_C)`` and
``w = (1 - 2 x_C + x_{C|C}) / (1 - x_C)``::

    PC:  dx_C/dt     = omega/2 * x_C (1 - x_{C|C}) [(k-1) b q - k c - b]
         dx_{C|C}/dt = (1 - x_{C|C}) / k * [1 - (k-1) q]
    IM:  dx_C/dt     = omega k x_C (1 - x_{C|C}) / (k+1)^2
                       * {-2 (k c + b) + (k-1) b q [2 + (k-1) w] - k (k-1) c w}
         dx_{C|C}/dt = 2 (1 - x_{C|C}) / (k+1) * [1 - (k-1) q]

Derivation note (IM drift): the typeset bracket admits several groupings of
the ``k (k-1) c w`` term. Expanding the microscopic imitation probabilities
to first order in omega and summing over the binomial neighbourhood gives
exactly the grouping above, with ``-k (k-1) c w`` outside the ``(k-1) b q``
factor. On the slow manifold ``q = 1/(k-1)`` and ``w = k/(k-1)``, and the
drift reduces to ``omega k^2 (k-2) [b - (k+2) c] / ((k+1)^2 (k-1)) x (1-x)``.
``tests/test_pair_approx.py`` re-derives the drift numerically from the
microscopic rates as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidParams, SingularState, StepTooLarge
from .game import GameParams, RuleKind
from .switched import SwitchSchedule, signal_at

RULE_PC = 0
RULE_IM = 1

_SINGULAR_EPS = 1e-12
MAX_COMPONENT_MOVE = 0.1


@dataclass(frozen=True)
class PairState:
    x_c: float
    x_cc_given_c: float

    def __post_init__(self):
        for name, v in (("x_c", self.x_c), ("x_cc_given_c", self.x_cc_given_c)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.x_c < 1.0 and self.x_c * (1.0 - self.x_cc_given_c) > 1.0 - self.x_c + 1e-12:
            raise ValueError("inconsistent pair state: x_C (1 - x_{C|C}) exceeds 1 - x_C")

    @classmethod
    def on_manifold(cls, x_c: float, k: int) -> "PairState":
        return cls(x_c, slow_manifold(x_c, k))


@dataclass(frozen=True)
class Closure:
    x_d: float
    x_d_given_c: float
    x_c_given_d: float
    x_d_given_d: float
    x_cc: float
    x_cd: float
    x_dd: float


def closure(state: PairState) -> Closure:
    """All pair and conditional frequencies implied by ``(x_C, x_{C|C})``."""
    x, y = state.x_c, state.x_cc_given_c
    x_d = 1.0 - x
    x_cd = x * (1.0 - y)
    if x_d <= 0.0:
        raise SingularState("x_{C|D} is undefined when x_C = 1")
    x_c_given_d = x_cd / x_d
    return Closure(
        x_d=x_d,
        x_d_given_c=1.0 - y,
        x_c_given_d=x_c_given_d,
        x_d_given_d=1.0 - x_c_given_d,
        x_cc=x * y,
        x_cd=x_cd,
        x_dd=1.0 - 2.0 * x + x * y,
    )


def slow_manifold(x_c, k: int):
    """x_{C|C} on the attracting curve where the pair correlation settles."""
    if k <= 2:
        raise InvalidParams("k must exceed 2")
    if np.ndim(x_c):
        x_c = np.asarray(x_c, dtype=float)
    return 1.0 / (k - 1) + (k - 2) / (k - 1) * x_c


@njit(cache=True, nogil=True)
def _ratio_terms(x, y):
    # (x_{C|C} - x_C)/(1 - x_C) and (1 - 2x_C + x_{C|C})/(1 - x_C); flag = singular
    one_minus = 1.0 - x
    if one_minus < _SINGULAR_EPS:
        return 0.0, 0.0, y >= x
    return (y - x) / one_minus, (1.0 - 2.0 * x + y) / one_minus, True


@njit(cache=True, nogil=True)
def _field_pc(x, y, omega, k, b, c):
    q, _, ok = _ratio_terms(x, y)
    if 1.0 - x < _SINGULAR_EPS:
        if not ok:
            raise ValueError("singular pair state at x_C = 1")
        return 0.0, 0.0
    dx = omega * 0.5 * x * (1.0 - y) * ((k - 1) * b * q - k * c - b)
    dy = (1.0 - y) / k * (1.0 - (k - 1) * q)
    return dx, dy


@njit(cache=True, nogil=True)
def _field_im(x, y, omega, k, b, c):
    q, w, ok = _ratio_terms(x, y)
    if 1.0 - x < _SINGULAR_EPS:
        if not ok:
            raise ValueError("singular pair state at x_C = 1")
        return 0.0, 0.0
    pre = k * x * (1.0 - y) / ((k + 1) ** 2)
    brace = -2.0 * (k * c + b) + (k - 1) * b * q * (2.0 + (k - 1) * w) - k * (k - 1) * c * w
    dx = omega * pre * brace
    dy = 2.0 * (1.0 - y) / (k + 1) * (1.0 - (k - 1) * q)
    return dx, dy


@njit(cache=True, nogil=True)
def _field(rule, x, y, omega, k, b, c):
    if rule == 0:
        return _field_pc(x, y, omega, k, b, c)
    return _field_im(x, y, omega, k, b, c)


def _unpack(state):
    if isinstance(state, PairState):
        return state.x_c, state.x_cc_given_c
    x, y = state
    return float(x), float(y)


def _checked(fn, state, p: GameParams):
    x, y = _unpack(state)
    if 1.0 - x < _SINGULAR_EPS and y < x:
        raise SingularState(f"vector field undefined at x_C={x}, x_C|C={y}")
    return fn(x, y, float(p.omega), float(p.k), float(p.b), float(p.c))


def field_pc(state, p: GameParams) -> tuple:
    """(dx_C/dt, dx_{C|C}/dt) under pairwise-comparison updating."""
    return _checked(_field_pc, state, p)


def field_im(state, p: GameParams) -> tuple:
    """(dx_C/dt, dx_{C|C}/dt) under imitation updating."""
    return _checked(_field_im, state, p)


@njit(cache=True, nogil=True)
def _advance(rule, x, y, span, h, omega, k, b, c, max_move):
    # ceil(span/h) equal RK4 substeps, so segment ends are hit exactly
    nsub = int(math.ceil(span / h - 1e-9))
    if nsub < 1:
        nsub = 1
    dt = span / nsub
    clamp = 0.0
    moved = 0.0
    for _ in range(nsub):
        k1x, k1y = _field(rule, x, y, omega, k, b, c)
        k2x, k2y = _field(rule, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, omega, k, b, c)
        k3x, k3y = _field(rule, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, omega, k, b, c)
        k4x, k4y = _field(rule, x + dt * k3x, y + dt * k3y, omega, k, b, c)
        nx = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        ny = y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        mv = max(abs(nx - x), abs(ny - y))
        if mv > moved:
            moved = mv
        if mv > max_move:
            return x, y, clamp, moved, False
        cx = min(max(nx, 0.0), 1.0)
        cy = min(max(ny, 0.0), 1.0)
        cl = max(abs(cx - nx), abs(cy - ny))
        if cl > clamp:
            clamp = cl
        x, y = cx, cy
    return x, y, clamp, moved, True


@dataclass
class PairTrajectory:
    t: np.ndarray
    x_c: np.ndarray
    x_cc: np.ndarray
    max_clamp: float

    def closures_ok(self, tol: float = 1e-10) -> bool:
        """Probability identities hold at every sample with x_C < 1."""
        for x, y in zip(self.x_c, self.x_cc):
            if x >= 1.0:
                continue
            cl = closure(PairState(float(x), float(y)))
            if abs(cl.x_cc + 2 * cl.x_cd + cl.x_dd - 1.0) > tol:
                return False
            if abs(cl.x_c_given_d + cl.x_d_given_d - 1.0) > tol:
                return False
        return True


def _rule_code(rule) -> int:
    kind = getattr(rule, "kind", rule)
    if kind in (RuleKind.PC, "PC", RULE_PC):
        return RULE_PC
    if kind in (RuleKind.IM, "IM", RULE_IM):
        return RULE_IM
    raise InvalidParams(f"pair-approximation engine supports PC and IM rules only, got {kind!r}")


def _switch_times(s: SwitchSchedule, t_end: float) -> list:
    out = []
    n_periods = int(math.floor(t_end / s.period)) + 1
    for theta in range(n_periods + 1):
        base = theta * s.period
        for tb in s.boundaries[:-1]:
            t = base + tb
            if 0.0 < t < t_end:
                out.append(t)
    return out


def integrate_switched_pair(
    initial,
    s: SwitchSchedule,
    p: GameParams,
    t_end: float,
    step: float = 1e-3,
    sample_dt: float | None = None,
) -> PairTrajectory:
    """Fixed-step RK4 of the pair system with the rule chosen by the schedule.

    Steps are shortened locally to land on every switching instant and every
    sample time. After each step the state is clamped to the unit box; the
    largest clamp correction is reported. Raises StepTooLarge if a single step
    moves either component by more than 0.1.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    codes = [_rule_code(r) for r in s.rules]
    x, y = _unpack(initial)
    PairState(x, y)
    if sample_dt is None:
        sample_dt = t_end
    n_samples = int(math.floor(t_end / sample_dt + 1e-9))
    sample_times = [j * sample_dt for j in range(1, n_samples + 1)]
    if not sample_times or sample_times[-1] < t_end - 1e-12:
        sample_times.append(t_end)
    breaks = sorted(set(sample_times) | set(_switch_times(s, t_end)))
    sample_set = set(sample_times)

    om, kf, b, c = float(p.omega), float(p.k), float(p.b), float(p.c)
    ts, xs, ys = [0.0], [x], [y]
    t = 0.0
    max_clamp = 0.0
    for tb in breaks:
        rule = codes[signal_at(s, t)[0] - 1]
        x, y, cl, moved, ok = _advance(rule, x, y, tb - t, step, om, kf, b, c, MAX_COMPONENT_MOVE)
        if not ok:
            raise StepTooLarge(f"a step near t={t:g} moved the state by {moved:.3g} > {MAX_COMPONENT_MOVE}")
        max_clamp = max(max_clamp, cl)
        t = tb
        if tb in sample_set:
            ts.append(tb)
            xs.append(x)
            ys.append(y)
    return PairTrajectory(np.array(ts), np.array(xs), np.array(ys), max_clamp)
