from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from budgetmech.core import Kind, LinearCap, MechanismParams, ParameterError, PiecewiseConcave, gen_random
from budgetmech.mechanisms import (
    Greedy,
    Star,
    allocate,
    check_params,
    guarantee,
    objective,
    params_default,
    run_da,
    run_da_cap,
    run_da_con,
    run_da_theta,
)
from budgetmech.numbers import QSurd, mpq
from conftest import make_instance

SQRT5 = QSurd(0, 1, 5)
DA = params_default(Kind.DA)


def same_outcome(a, b):
    fields = ("x", "branch", "rho", "tau", "opt", "opt_minus", "eligible", "order", "target")
    return all(getattr(a, f) == getattr(b, f) for f in fields)


def test_default_params():
    assert DA.alpha == (3 - SQRT5) / 2 and DA.beta == (SQRT5 - 1) / 2
    assert math.isclose(float(DA.alpha), 0.381966, abs_tol=1e-6)
    assert math.isclose(float(DA.beta), 0.618034, abs_tol=1e-6)
    th = params_default(Kind.DA_THETA, mpq(3, 2))
    assert (th.alpha, th.beta) == (mpq(1, 2), 1)
    assert params_default(Kind.DA_THETA, 3).alpha == mpq(1, 3)
    assert guarantee(DA) == (SQRT5 + 1) / (SQRT5 - 1)
    assert guarantee(params_default(Kind.DA_THETA, 2)) == 2


@pytest.mark.parametrize("t, gamma", [(2, 4.80), (3, 5.83), (4, 6.86)])
def test_concave_guarantee_table(t, gamma):
    p = params_default(Kind.DA_CON, t)
    assert abs(float((1 + p.beta) / p.beta) - gamma) < 1e-2
    assert guarantee(p) == (1 + p.beta) / p.beta
    assert p.alpha == p.beta / (1 + p.beta)


def test_theta_parameter_constraint():
    bad = MechanismParams(Kind.DA_THETA, mpq(3, 5), mpq(1))
    with pytest.raises(ParameterError):
        check_params(bad, 2)
    inst = make_instance(10, [(4, 2)] * 2, theta=2)
    with pytest.raises(ParameterError):
        run_da_theta(inst, bad)


def test_da_single_agent_star():
    out = run_da(make_instance(10, [(5, 4)]), DA)
    assert out.branch == Star(0) and out.x == (1,)
    assert out.rho[0] == float("inf")


def test_da_five_agents():
    inst = make_instance(10, [(4, 2)] * 5)
    out = run_da(inst, DA)
    a = DA.alpha
    assert isinstance(out.branch, Greedy) and out.branch.deselected == frozenset()
    assert all(r == mpq(1, 4) for r in out.rho.values())
    assert out.target == 20 * a
    assert out.x == (1, (20 * a - 4) / 4, 0, 0, 0)
    assert math.isclose(float(out.x[1]), 0.9098, abs_tol=1e-4)
    assert out.tau[0] == 40 / (a * (1 + DA.beta) * 16)
    assert math.isclose(float(out.tau[0]), 4.045, abs_tol=1e-3)
    assert objective(inst, Kind.DA, out.x) == 20 * a


def test_da_star_three():
    inst = make_instance(10, [(6, 2), (4, 4), (5, 10)])
    out = run_da(inst, DA)
    assert out.rho[0] == mpq(6, 7)
    assert out.branch == Star(0) and out.x == (1, 0, 0)
    assert guarantee(DA) * 6 >= out.opt == 12


def test_da_theta_five_agents():
    inst = make_instance(10, [(4, 2)] * 5, theta=1)
    out = run_da_theta(inst, params_default(Kind.DA_THETA, 1))
    assert out.x == (1, 1, mpq(1, 2), 0, 0)
    assert out.tau == {}
    single = run_da_theta(make_instance(10, [(5, 4)], theta=1), params_default(Kind.DA_THETA, 1))
    assert single.branch == Star(0) and single.x == (1,)


CAPPED = dict(types={0: LinearCap(6), 1: LinearCap(8)}, tids=[0, 0, 0, 1, 1])


def test_da_cap_hand_example():
    inst = make_instance(10, [(4, 2)] * 3 + [(4, 4)] * 2, **CAPPED)
    out = run_da_cap(inst, DA)
    a = DA.alpha
    assert out.opt == 13
    assert all(r < DA.beta for r in out.rho.values())
    assert out.x == (1, (13 * a - 4) / 4, 0, 0, 0)
    assert math.isclose(float(out.x[1]), 0.2413, abs_tol=1e-3)


def test_da_cap_zero_caps():
    inst = make_instance(10, [(4, 2)] * 3, types={0: LinearCap(0)}, tids=[0, 0, 0])
    out = run_da_cap(inst, DA)
    assert out.opt == 0 and out.x == (0, 0, 0)


def test_da_con_star():
    l = PiecewiseConcave(((0, 0), (5, 5), (6, mpq(11, 2))))
    inst = make_instance(6, [(5, 2)] * 3, types={0: l}, tids=[0, 0, 0])
    p = params_default(Kind.DA_CON, 1)
    assert math.isclose(float(p.beta), 0.3660, abs_tol=1e-4)
    out = run_da_con(inst, p)
    assert out.opt == 10
    assert all(om == mpq(15, 2) for om in out.opt_minus.values())
    assert out.rho[0] == mpq(2, 3)
    assert isinstance(out.branch, Star)


def test_da_con_two_identity_types_guarantee():
    ident = PiecewiseConcave(((0, 0), (1, 1)))
    inst = make_instance(10, [(4, 2), (3, 2), (5, 4), (2, 1), (6, 5)], types={0: ident, 1: ident},
                         tids=[0, 1, 0, 1, 0])
    p = params_default(Kind.DA_CON, 2)
    out = run_da_con(inst, p)
    assert guarantee(p) * objective(inst, Kind.DA_CON, out.x) >= out.opt


def test_over_budget_agents_never_win():
    inst = make_instance(5, [(100, 6), (1, 1), (1, 1)])
    out = run_da(inst, DA)
    assert out.x[0] == 0 and 0 not in out.eligible


def test_no_eligible_agents():
    out = run_da(make_instance(1, [(1, 2)]), DA)
    assert out.x == (0,)


# --------------------------------------------------------------------------
# reductions on generated instances

@given(st.integers(0, 10**9), st.integers(1, 9))
def test_loose_caps_reduce_to_da(seed, n):
    base = gen_random(seed, n, "plain")
    total = sum(a.value for a in base.agents)
    typed = base.with_agents([a.__class__(a.id, a.value, a.cost, a.id % 2) for a in base.agents])
    typed = typed.__class__(typed.budget, typed.agents, {0: LinearCap(total), 1: LinearCap(total)})
    assert same_outcome(run_da_cap(typed, DA), run_da(base, DA))


@given(st.integers(0, 10**9), st.integers(1, 9))
def test_identity_type_reduces_to_da(seed, n):
    base = gen_random(seed, n, "plain")
    big = sum(a.value for a in base.agents) + 1
    ident = PiecewiseConcave(((0, 0), (big, big)))
    typed = base.__class__(base.budget, tuple(a.__class__(a.id, a.value, a.cost, 0) for a in base.agents), {0: ident})
    p = params_default(Kind.DA_CON, 1)
    lin = MechanismParams(Kind.DA, p.alpha, p.beta)
    assert same_outcome(run_da_con(typed, p), run_da(base, lin))


@given(st.integers(0, 10**9), st.integers(1, 10))
def test_allocation_is_feasible_and_meets_guarantee(seed, n):
    for profile, kind in (("plain", Kind.DA), ("capped", Kind.DA_CAP), ("concave", Kind.DA_CON)):
        kw = {} if profile == "plain" else {"types": 1 + seed % 3}
        inst = gen_random(seed, n, profile, **kw)
        p = params_default(kind, len(inst.type_ids) if kind is Kind.DA_CON else None)
        out = allocate(inst, p)
        assert all(0 <= xi <= 1 for xi in out.x)
        assert guarantee(p) * objective(inst, kind, out.x) >= out.opt
        if kind is Kind.DA and isinstance(out.branch, Greedy):
            assert not out.branch.deselected
