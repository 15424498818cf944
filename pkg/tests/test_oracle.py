from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from budgetmech.core import Agent, LinearCap, PiecewiseConcave
from budgetmech.numbers import mpq
from budgetmech.oracle import (
    CertificateError,
    OptSolution,
    capped_certificate,
    efficiency_order,
    loo_linear,
    opt_capped,
    opt_concave,
    opt_linear,
    opt_linear_excl,
)
from reference import brute_linear, lp_capped, lp_concave


def agents(pairs, tids=None):
    return [Agent(i, mpq(v), mpq(c), None if tids is None else tids[i]) for i, (v, c) in enumerate(pairs)]


THREE = agents([(6, 2), (4, 4), (5, 10)])
FIVE = agents([(4, 2)] * 5)


@pytest.mark.parametrize("pairs, order", [
    ([(6, 2), (4, 4), (5, 10)], (0, 1, 2)),
    ([(1, 0), (9, 1)], (0, 1)),
    ([(2, 2), (1, 1)], (0, 1)),
    ([(0, 0), (1, 5)], (1, 0)),
])
def test_efficiency_order(pairs, order):
    assert efficiency_order(agents(pairs)) == order


def test_opt_linear_hand_examples():
    sol = opt_linear(THREE, mpq(10))
    assert sol.value == 12
    assert [sol.x[i] for i in range(3)] == [1, 1, mpq(2, 5)]
    assert sol.marginal_index == 2
    assert opt_linear(agents([(1, 2)]), mpq(1)).value == mpq(1, 2)
    five = opt_linear(FIVE, mpq(10))
    assert five.value == 20 and all(x == 1 for x in five.x.values())
    assert five.marginal_index is None


def test_opt_linear_excl_hand_examples():
    assert opt_linear_excl(THREE, mpq(10), 0) == 7
    assert opt_linear_excl(agents([(5, 4)]), mpq(10), 0) == 0
    assert all(opt_linear_excl(FIVE, mpq(10), i) == 16 for i in range(5))
    assert loo_linear(THREE, mpq(10)) == {0: 7, 1: 6 + 5 * mpq(8, 10), 2: 10}


def test_zero_cost_agents_are_free():
    sol = opt_linear(agents([(3, 0), (1, 1)]), mpq(1))
    assert sol.value == 4


CAPPED = agents([(4, 2)] * 3 + [(4, 4)] * 2, tids=[0, 0, 0, 1, 1])


def test_opt_capped_hand_example():
    sol = opt_capped(CAPPED, mpq(10), {0: 6, 1: 8}, certify=True)
    assert sol.value == 13
    assert [sol.x[i] for i in range(5)] == [1, mpq(1, 2), 0, 1, mpq(3, 4)]
    lam, mu = capped_certificate(CAPPED, mpq(10), {0: 6, 1: 8}, sol)
    assert lam == 1 and mu == {0: mpq(1, 2), 1: 0}


def test_opt_capped_loose_and_zero_caps():
    loose = opt_capped(CAPPED, mpq(10), {0: 100, 1: 100}, certify=True)
    assert loose.value == opt_linear(CAPPED, mpq(10)).value
    zero = opt_capped(CAPPED, mpq(10), {0: LinearCap(0), 1: 0}, certify=True)
    assert zero.value == 0 and all(x == 0 for x in zero.x.values())


def test_certificate_rejects_suboptimal():
    sol = opt_capped(CAPPED, mpq(10), {0: 6, 1: 8})
    worse = OptSolution(sol.value - 4, {**sol.x, 3: mpq(0)}, sol.order)
    with pytest.raises(CertificateError):
        capped_certificate(CAPPED, mpq(10), {0: 6, 1: 8}, worse)


def test_opt_concave_hand_example():
    l = PiecewiseConcave(((0, 0), (5, 5), (6, mpq(11, 2))))
    sol = opt_concave(agents([(5, 2)] * 3, [0, 0, 0]), mpq(6), {0: l})
    assert sol.value == 10
    assert [sol.x_star[i] for i in range(3)] == [1, 1, 1]
    assert [sol.v_star[i] for i in range(3)] == [5, mpq(5, 2), mpq(5, 2)]
    assert [sol.v_hat[i] for i in range(3)] == [5, mpq(5, 2), mpq(5, 2)]


def test_opt_concave_identity_matches_linear():
    ident = PiecewiseConcave(((0, 0), (10**6, 10**6)))
    typed = agents([(6, 2), (4, 4), (5, 10)], [0, 0, 0])
    sol = opt_concave(typed, mpq(10), {0: ident})
    lin = opt_linear(THREE, mpq(10))
    assert sol.value == lin.value
    for i in range(3):
        assert sol.v_star[i] == THREE[i].value * sol.x_star[i]
        assert sol.v_hat[i] == THREE[i].value


def test_opt_concave_caps_match_capped():
    caps = {0: LinearCap(6), 1: LinearCap(8)}
    assert opt_concave(CAPPED, mpq(10), caps).value == opt_capped(CAPPED, mpq(10), caps).value
    pwl = {t: PiecewiseConcave(((0, 0), (m.cap, m.cap)), tail_slope=0) for t, m in caps.items()}
    assert opt_concave(CAPPED, mpq(10), pwl).value == 13


# --------------------------------------------------------------------------
# randomized cross-checks against the independent references

val = st.fractions(min_value=0, max_value=10, max_denominator=4)
cost = st.fractions(min_value=0, max_value=12, max_denominator=8)
pair_lists = st.lists(st.tuples(val, cost), min_size=1, max_size=7)
budgets = st.fractions(min_value=Fraction(1, 2), max_value=15, max_denominator=4)


@given(pair_lists, budgets)
def test_opt_linear_equals_vertex_enumeration(pairs, B):
    assert opt_linear(agents(pairs), mpq(B)).value == brute_linear(pairs, B)


@given(pair_lists, budgets)
def test_loo_matches_exclusion(pairs, B):
    ags = agents(pairs)
    loo = loo_linear(ags, mpq(B))
    for a in ags:
        assert loo[a.id] == opt_linear_excl(ags, mpq(B), a.id)


@given(pair_lists, budgets, st.data())
def test_opt_capped_certified_and_matches_lp(pairs, B, data):
    t = data.draw(st.integers(1, 3))
    tids = [data.draw(st.integers(0, t - 1)) for _ in pairs]
    caps = {j: mpq(data.draw(st.fractions(min_value=0, max_value=20, max_denominator=4))) for j in range(t)}
    ags = agents(pairs, tids)
    sol = opt_capped(ags, mpq(B), caps, certify=True)
    assert abs(float(sol.value) - lp_capped(pairs, tids, caps, B)) < 1e-7


slopes = st.lists(st.sampled_from([Fraction(2), Fraction(3, 2), Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(0)]),
                  min_size=1, max_size=3, unique=True)


@given(pair_lists, budgets, st.data())
def test_opt_concave_matches_lp(pairs, B, data):
    t = data.draw(st.integers(1, 2))
    tids = [data.draw(st.integers(0, t - 1)) for _ in pairs]
    curves, ref = {}, {}
    for j in range(t):
        ss = sorted(data.draw(slopes), reverse=True)
        pts, x, y = [(0, 0)], Fraction(0), Fraction(0)
        for s in ss[:-1]:
            x += data.draw(st.integers(1, 8))
            y += s * (x - pts[-1][0])
            pts.append((x, y))
        l = PiecewiseConcave(tuple((mpq(a), mpq(b)) for a, b in pts), tail_slope=mpq(ss[-1]))
        curves[j] = l
        ref[j] = ([(Fraction(a), Fraction(b)) for a, b in pts], ss[-1])
    sol = opt_concave(agents(pairs, tids), mpq(B), curves)
    assert abs(float(sol.value) - lp_concave(pairs, tids, ref, B)) < 1e-7
    # the marginal split reproduces the value and each type is a prefix
    assert sum(sol.v_star.values()) == sol.value
    for j, order in sol.per_type_order.items():
        xs = [sol.x_star[i] for i in order]
        partial = [x for x in xs if 0 < x < 1]
        assert len(partial) <= 1
