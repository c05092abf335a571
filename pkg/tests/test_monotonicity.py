from fractions import Fraction as F

import pytest

from perclocal.cayley import cyclic, free_abelian, heisenberg, make_oracle, product
from perclocal.graph import ball
from perclocal.monotonicity import (LiftError, LiftMap, check_lift_property, coupled_exploration,
                                    lifted_connected, marginal_law_check)

Z1, Z2, Z3 = (make_oracle(free_abelian(d)) for d in (1, 2, 3))
T5 = make_oracle(product(cyclic(5), cyclic(5)))
HEIS = make_oracle(heisenberg())

Z2_Z1 = LiftMap(Z2, Z1, lambda v: (v[0],))
Z1_Z2 = LiftMap(Z1, Z2, lambda v: (v[0], 0))
Z2_T5 = LiftMap(Z2, T5, lambda v: (v[0] % 5, v[1] % 5))
Z3_Z2 = LiftMap(Z3, Z2, lambda v: v[:2])
H_Z2 = LiftMap(HEIS, Z2, lambda v: v[:2])


@pytest.mark.parametrize("lift,ok", [(Z2_Z1, True), (Z1_Z2, False), (Z2_T5, True), (Z3_Z2, True), (H_Z2, True)])
def test_lift_property(lift, ok):
    rep = check_lift_property(lift, ball(lift.source, None, 6), ball(lift.target, None, 3))
    assert rep.ok == ok and rep.checked > 0
    if not ok:
        assert ((0,), (0, 1)) in rep.failures


def test_p_zero_stops_at_root():
    run = coupled_exploration(Z2_Z1, (0,), (0, 0), 0.0, 1, 100)
    assert run.terminated and run.history == [(0, 0, 1, 0, 1, True)]
    assert run.base_state.closed_set == [(0,)] and run.lifted_state.closed_set == [(0, 0)]


def test_p_one_explores_max_steps():
    run = coupled_exploration(Z2_Z1, (0,), (0, 0), 1.0, 1, 100)
    assert len(run.base_state.open_set) == len(run.lifted_state.open_set) == 100
    assert lifted_connected(Z2_Z1, run) and not run.terminated


def test_deterministic():
    a = coupled_exploration(Z3_Z2, (0, 0), (0, 0, 0), 0.5, 42, 300)
    b = coupled_exploration(Z3_Z2, (0, 0), (0, 0, 0), 0.5, 42, 300)
    assert a.history == b.history and a.lifted_state.open_set == b.lifted_state.open_set


def test_reveals_each_vertex_once():
    run = coupled_exploration(H_Z2, (0, 0), (0, 0, 0), 0.6, 3, 500)
    for st in (run.base_state, run.lifted_state):
        seen = st.open_set + st.closed_set
        assert len(seen) == len(set(seen))


def test_size_equality_three_to_two():
    for seed in range(1000):
        run = coupled_exploration(Z3_Z2, (0, 0), (0, 0, 0), 0.4, seed, 200)
        assert all(row[5] for row in run.history)
        assert lifted_connected(Z3_Z2, run)


def test_lift_failure_is_hard():
    with pytest.raises(LiftError):
        coupled_exploration(Z1_Z2, (0, 0), (0,), 1.0, 0, 10)


def test_bad_root_pair():
    with pytest.raises(ValueError):
        coupled_exploration(Z2_Z1, (1,), (0, 0), 0.5, 0, 10)


def test_horizon_one():
    rep = marginal_law_check(Z2_Z1, F(1, 3), 1)
    assert rep.ok and rep.base_tail == rep.lifted_tail == [F(1, 3)]


@pytest.mark.parametrize("lift", [Z2_Z1, Z2_T5, Z3_Z2])
def test_marginal_law_horizon_6(lift):
    rep = marginal_law_check(lift, F(1, 2), 6)
    assert rep.base_iid and rep.lifted_iid and rep.sizes_equal and rep.dominance


def test_marginal_law_p_zero():
    rep = marginal_law_check(Z2_T5, F(0), 5)
    assert rep.ok and all(t == 0 for t in rep.base_tail + rep.lifted_tail)


def test_horizon_guard():
    with pytest.raises(ValueError):
        marginal_law_check(Z2_Z1, F(1, 2), 13)


def test_tails_known_values():
    # Z^2 -> Z, index rule, p = 1/2: P(base >= 2) = P(root open, some neighbour open among first reveals)
    rep = marginal_law_check(Z2_Z1, F(1, 2), 6, rules=("index",))
    assert rep.base_tail[:2] == [F(1, 2), F(3, 8)]
