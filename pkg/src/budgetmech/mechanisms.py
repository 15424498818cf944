"""The four allocation rules.

Every rule has the same skeleton: restrict to agents within budget, compute
each agent's stand-alone worth ``rho`` relative to the optimum without it,
and either hand everything to the single most valuable agent (the *star*
branch) or greedily fill an ``alpha`` share of the fractional optimum,
dropping agents whose cost exceeds their threat.  The variants differ in
the optimum they use, the worth numerator, and the greedy order.

Allocations are exact.  With the irrational default parameters the
allocation values live in a real quadratic field (see
:class:`~budgetmech.numbers.QSurd`).  Payments are added by
:mod:`budgetmech.payments`.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Any

from .core import Instance, Kind, LinearCap, MechanismParams, ParameterError, PiecewiseConcave
from .numbers import QSurd, as_rational, mpq, sqrt_rational
from .oracle import (
    BUDGET,
    FULL,
    efficiency_key,
    loo_linear,
    opt_capped,
    opt_concave,
    opt_linear,
)

__all__ = [
    "Star",
    "Greedy",
    "Outcome",
    "params_default",
    "check_params",
    "guarantee",
    "run_da",
    "run_da_theta",
    "run_da_cap",
    "run_da_con",
    "allocate",
    "objective",
    "opt_value",
]

_ZERO = mpq(0)
_ONE = mpq(1)
_SQRT5 = QSurd(0, 1, 5)


@dataclass(frozen=True)
class Star:
    winner: int


@dataclass(frozen=True)
class Greedy:
    k: int | None
    deselected: frozenset = frozenset()


@dataclass(frozen=True)
class Outcome:
    kind: Kind
    params: MechanismParams
    x: tuple
    branch: Star | Greedy
    rho: dict
    tau: dict
    opt: mpq
    opt_minus: dict
    eligible: tuple[int, ...]
    order: tuple[int, ...] = ()
    target: Any = None
    p: tuple | None = None
    p_error: tuple | None = None
    # per-agent structural key describing how x_i depends on the agent's
    # own declared cost; consumed by the curve builder
    forms: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def winners(self) -> tuple[int, ...]:
        return tuple(i for i, xi in enumerate(self.x) if xi > 0)

    @property
    def star(self) -> bool:
        return isinstance(self.branch, Star)


# --------------------------------------------------------------------------
# parameters


def params_default(kind: Kind, aux=None) -> MechanismParams:
    """Canonical ``(alpha, beta)`` for each mechanism.

    ``aux`` is ``theta`` for DA-theta and the number of types for DA-con.
    """
    kind = Kind(kind)
    if kind in (Kind.DA, Kind.DA_CAP):
        beta = (_SQRT5 - 1) / 2
        alpha = (3 - _SQRT5) / 2  # (sqrt5-1)/(sqrt5+1)
        return MechanismParams(kind, alpha, beta)
    if kind is Kind.DA_THETA:
        if aux is None:
            raise ParameterError("DA-theta needs theta")
        theta = as_rational(aux)
        if theta < 1:
            raise ParameterError(f"theta must be >= 1, got {theta}")
        return MechanismParams(kind, min(mpq(1, 2), 1 / theta), _ONE)
    if aux is None:
        raise ParameterError("DA-con needs the number of types")
    t = int(aux)
    if t < 1 or t != aux:
        raise ParameterError(f"number of types must be a positive integer, got {aux}")
    beta = sqrt_rational((t + 1) * (t + 5)) / (2 * (1 + t)) - mpq(1, 2)
    return MechanismParams(kind, beta / (1 + beta), beta)


def check_params(params: MechanismParams, theta=None) -> None:
    """Reject parameters outside the feasible region of their mechanism."""
    if params.kind is Kind.DA_THETA:
        if theta is None:
            raise ParameterError("DA-theta needs a theta-competitive instance")
        bound = min(1 / mpq(theta), 1 / (1 + params.beta))
        if params.alpha > bound:
            raise ParameterError(
                f"alpha = {float(params.alpha):.6g} exceeds min(1/theta, 1/(1+beta)) = {float(bound):.6g}"
            )


def guarantee(params: MechanismParams):
    """Approximation factor ``max((1+beta)/beta, 1/alpha)`` of the rule."""
    a = (1 + params.beta) / params.beta
    b = 1 / params.alpha
    return a if a >= b else b


# --------------------------------------------------------------------------
# shared skeleton


def _star_choice(N, numer, opt_minus):
    """Return (rho dict, argmax id).  rho is +inf when opt_-i is 0 and the
    numerator is positive, and 0 when the numerator is 0."""
    rho = {}
    best, best_id = None, None
    for a in N:
        num = numer[a.id]
        om = opt_minus[a.id]
        if num == 0:
            r = _ZERO
        elif om == 0:
            r = float("inf")
        else:
            r = num / om
        rho[a.id] = r
        if best is None or r > best:
            best, best_id = r, a.id
    return rho, best_id


def _rho_reaches(r, beta) -> bool:
    return r == float("inf") if isinstance(r, float) else r >= beta


@functools.lru_cache(maxsize=64)
def _threat_factor(alpha, beta):
    return 1 / (alpha * (1 + beta))


def _threat(weight, B, params, om):
    if om == 0:
        return float("inf")
    return _threat_factor(params.alpha, params.beta) * (weight * B / om)


def _exceeds(cost, tau) -> bool:
    return not isinstance(tau, float) and cost > tau


def _greedy_prefix(seq, target):
    """Minimal k with sum of weights reaching target.

    ``seq`` is a list of (id, weight).  Returns (k position, prefix before k)
    or (None, total) when the target is 0 or unreachable.
    """
    if target <= 0:
        return None, _ZERO
    P = _ZERO
    for pos, (_, w) in enumerate(seq):
        if w > 0 and P + w >= target:
            return pos, P
        P += w
    return None, P


def _empty(instance, params):
    return Outcome(params.kind, params, tuple(_ZERO for _ in instance.agents), Greedy(None), {}, {}, _ZERO, {}, ())


def _star_outcome(instance, params, winner, rho, tau, opt, opt_minus, N, track):
    x = [_ZERO] * instance.n
    x[winner] = _ONE
    forms = {}
    if track is not None:
        forms[track] = ("C", x[track])
    return Outcome(params.kind, params, tuple(x), Star(winner), rho, tau, opt, opt_minus,
                   tuple(a.id for a in N), forms=forms)


# --------------------------------------------------------------------------
# DA and DA-theta


def _run_linear(instance: Instance, params: MechanismParams, threats: bool, track):
    B = instance.budget
    N = instance.eligible()
    if not N:
        return _empty(instance, params)
    ordered = sorted(N, key=efficiency_key)
    opt_minus = loo_linear(N, B)
    rho, istar = _star_choice(N, {a.id: a.value for a in N}, opt_minus)
    tau = {a.id: _threat(a.value, B, params, opt_minus[a.id]) for a in N} if threats else {}
    sol = opt_linear(N, B)
    if _rho_reaches(rho[istar], params.beta):
        return _star_outcome(instance, params, istar, rho, tau, sol.value, opt_minus, N, track)
    target = params.alpha * sol.value
    seq = [(a.id, a.value) for a in ordered]
    pos, P = _greedy_prefix(seq, target)
    x = [_ZERO] * instance.n
    k = None
    if pos is not None:
        for j, _ in seq[:pos]:
            x[j] = _ONE
        k = seq[pos][0]
        x[k] = (target - P) / instance.agents[k].value
    deselected = set()
    if threats and pos is not None:
        for j, _ in seq[: pos + 1]:
            if _exceeds(instance.agents[j].cost, tau[j]):
                x[j] = _ZERO
                deselected.add(j)
    forms = {}
    if track is not None:
        if track == k and track not in deselected:
            full = frozenset(j for j, v in sol.x.items() if v == 1 and j != track)
            forms[track] = ("K", P, full, sol.marginal_index, sol.x.get(track, _ZERO) == 1)
        else:
            forms[track] = ("C", x[track])
    return Outcome(params.kind, params, tuple(x), Greedy(k, frozenset(deselected)), rho, tau,
                   sol.value, opt_minus, tuple(a.id for a in N), tuple(j for j, _ in seq), target, forms=forms)


def run_da(instance: Instance, params: MechanismParams, *, track: int | None = None) -> Outcome:
    return _run_linear(instance, params, True, track)


def run_da_theta(instance: Instance, params: MechanismParams, *, track: int | None = None,
                 check: bool = True) -> Outcome:
    if check:
        check_params(params, instance.theta)
    return _run_linear(instance, params, False, track)


# --------------------------------------------------------------------------
# DA-cap


def _caps(instance: Instance) -> dict:
    if not instance.typed:
        raise ParameterError("DA-cap needs typed agents")
    caps = {}
    for t in instance.type_ids:
        tv = instance.valuation(t)
        if not isinstance(tv, LinearCap):
            raise ParameterError(f"type {t} has no linear cap")
        caps[t] = tv.cap
    return caps


def _cap_struct(sol, skip=None):
    return tuple((j, sol.states[j]) for j in sol.order if sol.states[j] != "Z" and j != skip)


def run_da_cap(instance: Instance, params: MechanismParams, *, track: int | None = None) -> Outcome:
    B = instance.budget
    caps = _caps(instance)
    N = instance.eligible()
    if not N:
        return _empty(instance, params)
    ordered = sorted(N, key=efficiency_key)
    opt_minus = {a.id: opt_capped(N, B, caps, skip=a.id, ordered=ordered).value for a in N}
    numer = {a.id: min(a.value, caps[a.type_id]) for a in N}
    rho, istar = _star_choice(N, numer, opt_minus)
    tau = {a.id: _threat(a.value, B, params, opt_minus[a.id]) for a in N}
    sol = opt_capped(N, B, caps, ordered=ordered)
    if _rho_reaches(rho[istar], params.beta):
        return _star_outcome(instance, params, istar, rho, tau, sol.value, opt_minus, N, track)
    target = params.alpha * sol.value
    seq = [(j, instance.agents[j].value * sol.x[j]) for j in sol.order]
    pos, P = _greedy_prefix(seq, target)
    x = [_ZERO] * instance.n
    k = None
    if pos is not None:
        for j, _ in seq[:pos]:
            x[j] = sol.x[j]
        k = seq[pos][0]
        x[k] = (target - P) / instance.agents[k].value
    deselected = set()
    if pos is not None:
        for j, _ in seq[: pos + 1]:
            if _exceeds(instance.agents[j].cost, tau[j]):
                x[j] = _ZERO
                deselected.add(j)
    forms = {}
    if track is not None:
        if track in deselected or x[track] == 0:
            forms[track] = ("C", x[track])
        elif track == k:
            forms[track] = ("K", P, pos, _cap_struct(sol))
        elif sol.states[track] == BUDGET:
            forms[track] = ("XB", sol.budget_left + instance.agents[track].cost * sol.x[track])
        else:
            forms[track] = ("C", x[track])
    return Outcome(params.kind, params, tuple(x), Greedy(k, frozenset(deselected)), rho, tau,
                   sol.value, opt_minus, tuple(a.id for a in N), tuple(j for j, _ in seq), target, forms=forms)


# --------------------------------------------------------------------------
# DA-con


def _curves(instance: Instance) -> dict:
    if not instance.typed:
        raise ParameterError("DA-con needs typed agents")
    out = {}
    for t in instance.type_ids:
        tv = instance.valuation(t)
        out[t] = tv.as_pwl() if isinstance(tv, LinearCap) else tv
    return out


def _con_order_key(a, vstar):
    v = vstar[a.id]
    if v == 0:
        # never selected; keep them in plain efficiency order
        return (2,) + efficiency_key(a)
    if a.cost == 0:
        return (0, _ZERO, a.id)
    return (1, -(v / a.cost), a.id)


def _con_struct(sol: Any, instance: Instance, curves: dict):
    """Discrete structure of a concave optimum: type orders plus, per agent,
    the valuation segments holding the ends of its selected value range."""
    parts = []
    for t in sorted(sol.per_type_order):
        l = curves[t]
        y = _ZERO
        row = []
        for j in sol.per_type_order[t]:
            xs = sol.x_star[j]
            y2 = y + instance.agents[j].value * xs
            state = "F" if xs == 1 else ("Z" if xs == 0 else "P")
            row.append((j, state, l.segment_index(y), l.segment_index(y2)))
            y = y2
        parts.append((t, tuple(row)))
    return (tuple(parts), sol.budget_marginal)


def run_da_con(instance: Instance, params: MechanismParams, *, track: int | None = None) -> Outcome:
    B = instance.budget
    curves = _curves(instance)
    N = instance.eligible()
    if not N:
        return _empty(instance, params)
    opt_minus = {a.id: opt_concave(N, B, curves, skip=a.id).value for a in N}
    numer = {a.id: curves[a.type_id](a.value) for a in N}
    rho, istar = _star_choice(N, numer, opt_minus)
    sol = opt_concave(N, B, curves)
    tau = {a.id: _threat(sol.v_hat[a.id], B, params, opt_minus[a.id]) for a in N}
    if _rho_reaches(rho[istar], params.beta):
        return _star_outcome(instance, params, istar, rho, tau, sol.value, opt_minus, N, track)
    target = params.alpha * sol.value
    ordered = sorted(N, key=lambda a: _con_order_key(a, sol.v_star))
    seq = [(a.id, sol.v_star[a.id]) for a in ordered]
    pos, P = _greedy_prefix(seq, target)
    x = [_ZERO] * instance.n
    k = None
    seg = None
    if pos is not None:
        for j, _ in seq[:pos]:
            x[j] = sol.x_star[j]
        k = seq[pos][0]
        ak = instance.agents[k]
        l = curves[ak.type_id]
        y = _ZERO
        for j in sol.per_type_order[ak.type_id]:
            if j == k:
                break
            y += instance.agents[j].value * sol.x_star[j]
        delta, seg = l.advance(y, target - P)
        x[k] = delta / ak.value
    deselected = set()
    if pos is not None:
        for j, _ in seq[: pos + 1]:
            if _exceeds(instance.agents[j].cost, tau[j]):
                x[j] = _ZERO
                deselected.add(j)
    forms = {}
    if track is not None:
        if track in deselected or x[track] == 0:
            forms[track] = ("C", x[track])
        elif track == k:
            forms[track] = ("K", tuple(j for j, _ in seq[: pos + 1]), seg, _con_struct(sol, instance, curves))
        elif track == sol.budget_marginal:
            forms[track] = ("XB", _con_struct(sol, instance, curves))
        else:
            forms[track] = ("C", x[track])
    return Outcome(params.kind, params, tuple(x), Greedy(k, frozenset(deselected)), rho, tau,
                   sol.value, opt_minus, tuple(a.id for a in N), tuple(j for j, _ in seq), target, forms=forms)


# --------------------------------------------------------------------------
# dispatch and evaluation

_RUNNERS = {
    Kind.DA: run_da,
    Kind.DA_THETA: run_da_theta,
    Kind.DA_CAP: run_da_cap,
    Kind.DA_CON: run_da_con,
}


def allocate(instance: Instance, params: MechanismParams, *, track: int | None = None) -> Outcome:
    """Run the allocation rule named by ``params.kind`` (no payments)."""
    if params.kind is Kind.DA_THETA:
        return run_da_theta(instance, params, track=track)
    return _RUNNERS[params.kind](instance, params, track=track)


def objective(instance: Instance, kind: Kind, x) -> Any:
    """Value ``v(x)`` under the valuation model of ``kind``."""
    if kind in (Kind.DA, Kind.DA_THETA):
        return sum((a.value * x[a.id] for a in instance.agents), _ZERO)
    totals: dict = {}
    for a in instance.agents:
        totals[a.type_id] = totals.get(a.type_id, _ZERO) + a.value * x[a.id]
    out = _ZERO
    for t, V in totals.items():
        tv = instance.valuation(t)
        out = out + tv(V)
    return out


def opt_value(instance: Instance, kind: Kind):
    """Fractional optimum over the eligible agents for ``kind``'s model."""
    N = instance.eligible()
    B = instance.budget
    if kind in (Kind.DA, Kind.DA_THETA):
        return opt_linear(N, B).value
    if kind is Kind.DA_CAP:
        return opt_capped(N, B, _caps(instance)).value
    return opt_concave(N, B, _curves(instance)).value
