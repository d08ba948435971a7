"""Pair-approximation checks, including an independent microscopic oracle.

The oracle builds the expected flip rates of a focal player directly from
the update rules (binomial neighbourhoods, exact Fermi probability for PC,
fitness-proportional choice for IM) and differentiates them in omega at 0
by a central difference. It never touches the closed-form vector fields.
"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from switchrep.errors import InvalidParams, SingularState, StepTooLarge
from switchrep.game import GameParams, UpdateRule
from switchrep.pair_approx import (
    PairState,
    closure,
    field_im,
    field_pc,
    integrate_switched_pair,
    slow_manifold,
)
from switchrep.switched import SwitchSchedule

from conftest import two_rule


def _binom(k, p):
    return np.array([math.comb(k, i) * p**i * (1 - p) ** (k - i) for i in range(k + 1)])


def micro_dx(rule, x, y, omega, k, b, c):
    """Expected change rate of x_C from the microscopic update rule."""
    l = np.arange(k + 1)
    x_cd = x * (1 - y) / (1 - x)  # x_{C|D}
    # expected payoffs of a neighbour of the focal player
    pi_c_of_d = (k - 1) * y * b - k * c  # C neighbour of a D focal
    pi_d_of_c = ((k - 1) * x_cd + 1) * b  # D neighbour of a C focal
    pi_c_of_c = ((k - 1) * y + 1) * b - k * c
    pi_d_of_d = (k - 1) * x_cd * b
    pi_focal_d = l * b
    pi_focal_c = l * b - k * c
    if rule == "PC":
        fermi = lambda d: 1.0 / (1.0 + np.exp(-omega * d))
        gain = l / k * fermi(pi_c_of_d - pi_focal_d)
        loss = (k - l) / k * fermi(pi_d_of_c - pi_focal_c)
    else:
        g = lambda p: 1 - omega + omega * p
        gain = l * g(pi_c_of_d) / (l * g(pi_c_of_d) + (k - l) * g(pi_d_of_d) + g(pi_focal_d))
        loss = (k - l) * g(pi_d_of_c) / (l * g(pi_c_of_c) + (k - l) * g(pi_d_of_c) + g(pi_focal_c))
    return (1 - x) * _binom(k, x_cd) @ gain - x * _binom(k, y) @ loss


def micro_drift(rule, x, y, k, b, c, h=1e-6):
    return (micro_dx(rule, x, y, h, k, b, c) - micro_dx(rule, x, y, -h, k, b, c)) / (2 * h)


def _valid_states():
    return st.tuples(st.floats(0.02, 0.95), st.floats(0.02, 0.98)).filter(
        lambda s: s[0] * (1 - s[1]) <= 1 - s[0] - 1e-3
    )


@given(_valid_states(), st.integers(3, 7), st.floats(0.05, 0.5), st.floats(1.1, 15.0))
@pytest.mark.parametrize("rule,field", [("PC", field_pc), ("IM", field_im)])
def test_drift_matches_microscopic_rates(rule, field, state, k, c, ratio):
    x, y = state
    b = c * ratio
    p = GameParams(1.0, k, b, c)
    got = field((x, y), p)[0]
    want = micro_drift(rule, x, y, k, b, c)
    assert got == pytest.approx(want, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("field", [field_pc, field_im])
def test_drift_vanishes_without_selection(field):
    p = GameParams(0.0, 4, 2.0, 0.2)
    for x, y in [(0.2, 0.3), (0.5, 0.9), (0.7, 0.6)]:
        assert field((x, y), p)[0] == 0.0


@given(st.floats(0.0, 0.999), st.integers(3, 9))
@pytest.mark.parametrize("field", [field_pc, field_im])
def test_fast_component_vanishes_on_manifold(field, x, k):
    p = GameParams(0.01, k, 2.0, 0.2)
    assert abs(field((x, slow_manifold(x, k)), p)[1]) < 1e-13


@pytest.mark.parametrize("k", [3, 4, 6])
def test_im_drift_on_manifold_is_logistic(k):
    p = GameParams(0.01, k, 2.0, 0.2)
    alpha = UpdateRule.im(p).alpha
    for x in np.linspace(0.01, 0.99, 50):
        got = field_im((x, slow_manifold(x, k)), p)[0]
        assert got == pytest.approx(alpha * x * (1 - x), rel=1e-12)


def test_pc_drift_on_manifold_is_logistic():
    p = GameParams(0.01, 4, 2.0, 0.2)
    alpha = UpdateRule.pc(p).alpha
    for x in np.linspace(0.01, 0.99, 50):
        assert field_pc((x, slow_manifold(x, 4)), p)[0] == pytest.approx(alpha * x * (1 - x), rel=1e-12)


@given(_valid_states())
def test_closure_identities(state):
    cl = closure(PairState(*state))
    assert cl.x_cc + 2 * cl.x_cd + cl.x_dd == pytest.approx(1.0, abs=1e-12)
    assert cl.x_c_given_d + cl.x_d_given_d == pytest.approx(1.0, abs=1e-12)
    assert 0 <= cl.x_c_given_d <= 1


def test_singular_states():
    p = GameParams(0.01, 4, 2.0, 0.2)
    with pytest.raises(SingularState):
        closure(PairState(1.0, 1.0))
    with pytest.raises(SingularState):
        field_pc((1.0, 0.5), p)
    # full cooperation is a fixed point
    assert field_im((1.0, 1.0), p) == (0.0, 0.0)


def test_inconsistent_state_rejected():
    with pytest.raises(ValueError):
        PairState(0.9, 0.1)


def test_rk4_is_fourth_order():
    p = GameParams(0.01, 4, 2.0, 0.2)
    s = two_rule("PC", "IM", 2.0, p)
    ref = integrate_switched_pair((0.3, 0.3), s, p, 20.0, step=1e-3)
    errs = []
    for h in (0.4, 0.2):
        tr = integrate_switched_pair((0.3, 0.3), s, p, 20.0, step=h)
        errs.append(abs(tr.x_cc[-1] - ref.x_cc[-1]))
    assert 10 < errs[0] / errs[1] < 24


def test_off_manifold_start_is_attracted():
    p = GameParams(0.01, 4, 2.0, 0.2)
    for order in (("PC", "PC"), ("IM", "IM")):
        s = two_rule(*order, 2.0, p)
        tr = integrate_switched_pair((0.5, 0.5), s, p, 50.0, sample_dt=1.0)
        gap = np.abs(tr.x_cc - slow_manifold(tr.x_c, 4))
        assert gap[-1] < 1e-3
        # fast relaxation over the first few time units
        assert gap[10] < gap[0] / 20


def test_clamping_is_negligible_and_closures_hold():
    p = GameParams(0.01, 4, 2.0, 0.2)
    s = two_rule("IM", "PC", 3.0, p)
    tr = integrate_switched_pair((0.05, 0.05), s, p, 200.0, sample_dt=5.0)
    assert tr.max_clamp <= 1e-9
    assert tr.closures_ok()


def test_full_cooperation_start_stays_put():
    p = GameParams(0.01, 4, 2.0, 0.2)
    tr = integrate_switched_pair(PairState.on_manifold(1.0, 4), two_rule("PC", "IM", 2.0, p), p, 30.0, sample_dt=10.0)
    assert np.all(tr.x_c == 1.0) and np.all(tr.x_cc == 1.0)


def test_oversized_step_is_refused():
    p = GameParams(0.01, 4, 2.0, 0.2)
    with pytest.raises(StepTooLarge):
        integrate_switched_pair((0.5, 0.0), two_rule("PC", "IM", 2.0, p), p, 10.0, step=2.0)


def test_custom_rules_are_rejected():
    p = GameParams(0.01, 4, 2.0, 0.2)
    s = SwitchSchedule([UpdateRule.custom(0.01)], [], 5.0)
    with pytest.raises(InvalidParams):
        integrate_switched_pair((0.5, 0.5), s, p, 10.0)


def test_closure_examples():
    cl = closure(PairState(0.5, 0.5))
    assert (cl.x_c_given_d, cl.x_d_given_d, cl.x_cc) == (0.5, 0.5, 0.25)
    cl = closure(PairState(0.5, 1.0))
    assert cl.x_c_given_d == 0.0 and cl.x_dd == 0.5


def test_field_pc_hand_values():
    dx, dy = field_pc((0.5, 0.5), GameParams(0.01, 4, 2.0, 0.2))
    assert dx == pytest.approx(0.01 * 0.125 * -2.8, abs=1e-15)
    assert dy == pytest.approx(0.125, abs=1e-15)


def test_slow_manifold_examples():
    assert slow_manifold(1.0, 4) == 1.0
    assert slow_manifold(0.0, 4) == pytest.approx(1 / 3)
    assert slow_manifold(0.5, 4) == pytest.approx(2 / 3)


@pytest.mark.parametrize("field", [field_pc, field_im])
def test_fast_component_vanishes_on_both_manifolds(field):
    p = GameParams(0.01, 4, 2.0, 0.2)
    for x in np.linspace(0.0, 0.99, 60):
        assert abs(field((x, 1.0), p)[0]) <= 1e-12 and abs(field((x, 1.0), p)[1]) <= 1e-12
        assert abs(field((x, slow_manifold(x, 4)), p)[1]) <= 1e-12


@pytest.mark.parametrize("field", [field_pc, field_im])
def test_jacobian_matches_directional_probe(field):
    p = GameParams(0.01, 4, 2.0, 0.2)
    rng = np.random.default_rng(3)
    h = 1e-6
    for x, y in [(0.2, 0.4), (0.5, 0.6), (0.7, 0.85)]:
        f = lambda s: np.array(field(tuple(s), p))
        s0 = np.array([x, y])
        jac = np.column_stack([(f(s0 + h * e) - f(s0 - h * e)) / (2 * h) for e in np.eye(2)])
        for _ in range(4):
            v = rng.normal(size=2)
            probe = (f(s0 + h * v) - f(s0 - h * v)) / (2 * h)
            assert np.allclose(jac @ v, probe, rtol=1e-6, atol=1e-12)


def test_near_boundary_stays_in_box():
    p = GameParams(0.01, 4, 2.0, 0.2)
    tr = integrate_switched_pair((1e-9, 1e-9), two_rule("PC", "IM", 2.0, p), p, 100.0, sample_dt=1.0)
    assert np.all((tr.x_c >= 0) & (tr.x_c <= 1)) and np.all((tr.x_cc >= 0) & (tr.x_cc <= 1))


def test_clamp_bound_at_coarse_step():
    p = GameParams(0.01, 4, 2.0, 0.2)
    for start in [(0.5, 0.5), (0.9, 0.95), (0.02, 0.02)]:
        tr = integrate_switched_pair(start, two_rule("IM", "PC", 2.0, p), p, 300.0, step=1e-2, sample_dt=1.0)
        assert tr.max_clamp <= 1e-9 and tr.closures_ok(1e-10)


def test_im_only_on_manifold_tracks_logistic_over_500():
    # required match: 1e-4 over [0, 500] from an on-manifold start
    p = GameParams(0.01, 4, 2.0, 0.2)
    s = SwitchSchedule([UpdateRule.im(p)], [], 5.0)
    tr = integrate_switched_pair(PairState.on_manifold(0.5, 4), s, p, 500.0, sample_dt=0.5)
    from switchrep.switched import trajectory_at

    dev = np.max(np.abs(tr.x_c - trajectory_at(s, 0.5, tr.t)))
    assert dev < 1e-4, f"sup deviation {dev:.3e}"
