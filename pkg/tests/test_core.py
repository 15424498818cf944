from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from budgetmech.core import (
    Agent,
    Instance,
    InstanceError,
    LinearCap,
    MechanismParams,
    Kind,
    ParameterError,
    PiecewiseConcave,
    gen_random,
    parse_instance,
    serialize_instance,
    validate,
)
from budgetmech.numbers import mpq
from conftest import make_instance


def test_parse_minimal():
    inst = parse_instance('{"budget":"10","agents":[{"v":"5","c":"4"}]}')
    assert inst.budget == 10
    assert inst.agents == (Agent(0, mpq(5), mpq(4)),)


def test_parse_symmetric_two_agent_instance():
    inst = parse_instance('{"budget":"1","agents":[{"v":"1","c":"1"},{"v":"1","c":"1"}]}')
    assert inst.budget == 1
    assert [(a.value, a.cost) for a in inst.agents] == [(1, 1), (1, 1)]


def test_parse_rejects_theta_violation():
    with pytest.raises(InstanceError, match="efficiency ratio 8 > 2"):
        parse_instance('{"budget":"10","theta":"2","agents":[{"v":"1","c":"1"},{"v":"1","c":"8"}]}')


@pytest.mark.parametrize("text", [
    "not json",
    "[]",
    '{"agents":[]}',
    '{"budget":"0","agents":[]}',
    '{"budget":"5","agents":[{"v":"1"}]}',
    '{"budget":"5","agents":[{"v":"-1","c":"1"}]}',
    '{"budget":"5","agents":[{"v":"1","c":"x"}]}',
    '{"budget":"5","agents":[{"v":"1","c":"1","t":0}]}',
    '{"budget":"5","agents":[{"v":"1","c":"1","t":0},{"v":"1","c":"1"}],"types":{"0":{"cap":"1"}}}',
    '{"budget":"5","agents":[{"v":"1","c":"1","t":0}],"types":{"0":{"pwl":[["0","0"],["1","1"],["2","3"]]}}}',
])
def test_parse_errors(text):
    with pytest.raises(InstanceError):
        parse_instance(text)


def test_validate_warns_over_budget():
    inst = make_instance(5, [(1, 10), (1, 1)])
    issues = validate(inst)
    assert len(issues) == 1
    assert issues[0].level == "warning"
    assert "agent excluded from N" in issues[0].message
    assert [a.id for a in inst.eligible()] == [1]


def test_validate_missing_type_valuation():
    inst = make_instance(5, [(1, 1)], types={}, tids=[3])
    assert any(v.level == "error" and "type 3" in v.message for v in validate(inst))


def test_valid_instance_has_no_issues():
    assert validate(make_instance(10, [(6, 2), (4, 4), (5, 10)])) == []


def test_piecewise_concave_eval_and_advance():
    l = PiecewiseConcave(((0, 0), (5, 5), (6, mpq(11, 2))))
    assert l.slopes == (1, mpq(1, 2), mpq(1, 2))
    assert l(15) == 10
    assert l(mpq(5, 2)) == mpq(5, 2)
    assert l.advance(0, 7) == (9, 2)  # lands on the tail past x = 6
    assert l.advance(0, mpq(11, 2)) == (6, 1)
    assert l.advance(2, 3) == (3, 0)
    assert l.kinks == 2


@pytest.mark.parametrize("pts", [
    ((1, 0), (2, 1)),
    ((0, 0), (0, 1)),
    ((0, 0), (1, 1), (2, 3)),
    ((0, 0), (1, 1), (2, 0)),
])
def test_piecewise_concave_rejects(pts):
    with pytest.raises(InstanceError):
        PiecewiseConcave(pts)


def test_linear_cap():
    m = LinearCap(6)
    assert m(4) == 4 and m(9) == 6
    assert m.as_pwl()(100) == 6
    zero = LinearCap(0)
    assert zero(5) == 0 and zero.as_pwl()(5) == 0
    with pytest.raises(InstanceError):
        LinearCap(-1)


def test_mechanism_params_validation():
    with pytest.raises(ParameterError):
        MechanismParams(Kind.DA, mpq(0), mpq(1))
    with pytest.raises(ParameterError):
        MechanismParams(Kind.DA, mpq(2), mpq(1))
    with pytest.raises(ParameterError):
        MechanismParams(Kind.DA, mpq(1, 2), mpq(0))


def test_instance_ids_must_be_contiguous():
    with pytest.raises(InstanceError):
        Instance(mpq(1), (Agent(1, mpq(1), mpq(1)),))


def test_gen_random_deterministic():
    assert gen_random(1, 3, "plain") == gen_random(1, 3, "plain")
    assert gen_random(1, 3, "plain") != gen_random(2, 3, "plain")


def test_gen_theta_profile_attains_ratio():
    inst = gen_random(7, 5, "theta", theta=2)
    effs = [a.value / a.cost for a in inst.eligible()]
    assert max(effs) / min(effs) == 2
    assert validate(inst) == []


def test_gen_concave_profile_contract():
    inst = gen_random(7, 4, "concave", types=2)
    for t in inst.type_ids:
        l = inst.valuation(t)
        assert l.breakpoints[0] == (0, 0)
        assert len(l.breakpoints) <= 4
        s = l.slopes
        assert all(a > b for a, b in zip(s[:-1], s[1:-1]))


@given(st.integers(0, 2**63 - 1), st.integers(1, 9), st.sampled_from(["plain", "theta", "capped", "concave"]))
def test_generated_instances_roundtrip(seed, n, profile):
    kw = {"theta": mpq(3, 2)} if profile == "theta" else {"types": 1 + seed % 3} if profile != "plain" else {}
    inst = gen_random(seed, n, profile, **kw)
    assert [v for v in validate(inst) if v.level == "error"] == []
    text = serialize_instance(inst)
    again = parse_instance(text)
    assert serialize_instance(again) == text
    assert again.agents == inst.agents and again.budget == inst.budget and again.theta == inst.theta
    if inst.typed:
        for t in inst.type_ids:
            for y in (mpq(0), mpq(1, 3), mpq(7), mpq(1000)):
                assert again.valuation(t)(y) == inst.valuation(t)(y)
    json.loads(text)
