"""Exact fractional optima.

Three solvers share one idea: sort by value per unit cost and fill the
budget greedily.  The linear case is fractional knapsack, the capped case
truncates each agent at its type's remaining cap, and the concave case
splits every agent into pieces along the breakpoints of its type's
valuation and fills pieces by marginal density.

Agents are passed as sequences of :class:`~budgetmech.core.Agent`; results
are keyed by agent id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import Agent, LinearCap, PiecewiseConcave
from .numbers import mpq

__all__ = [
    "OptSolution",
    "ConcaveOptSolution",
    "CertificateError",
    "efficiency_key",
    "efficiency_order",
    "opt_linear",
    "opt_linear_excl",
    "loo_linear",
    "opt_capped",
    "capped_certificate",
    "opt_concave",
]

_ZERO = mpq(0)
_ONE = mpq(1)

# agent states in a capped/concave optimum
FULL, BUDGET, CAP, NONE = "F", "B", "C", "Z"


class CertificateError(AssertionError):
    """The capped optimum could not be certified by LP duality."""


@dataclass(frozen=True)
class OptSolution:
    value: mpq
    x: dict[int, mpq]
    order: tuple[int, ...]
    marginal_index: int | None = None
    states: dict[int, str] = field(default_factory=dict)
    budget_left: mpq = _ZERO


@dataclass(frozen=True)
class ConcaveOptSolution:
    value: mpq
    x_star: dict[int, mpq]
    v_star: dict[int, mpq]
    v_hat: dict[int, mpq]
    per_type_order: dict[int, tuple[int, ...]]
    type_totals: dict[int, mpq] = field(default_factory=dict)
    budget_marginal: int | None = None


def efficiency_key(a: Agent):
    """Sort key: zero-cost agents first, then by ``v/c`` descending, then id.

    Zero-value agents sort last whatever their cost.
    """
    if a.value == 0:
        return (2, _ZERO, a.id)
    if a.cost == 0:
        return (0, _ZERO, a.id)
    return (1, -(a.value / a.cost), a.id)


def efficiency_order(agents: Sequence[Agent]) -> tuple[int, ...]:
    return tuple(a.id for a in sorted(agents, key=efficiency_key))


def _fill(ordered: Sequence[Agent], B, skip: int | None = None):
    """Greedy prefix fill; returns (value, {id: x}, marginal id)."""
    rem = B
    value = _ZERO
    x = {}
    marginal = None
    for a in ordered:
        if a.id == skip:
            continue
        if a.value == 0:
            break
        if a.cost <= rem:
            x[a.id] = _ONE
            rem -= a.cost
            value += a.value
            continue
        frac = rem / a.cost
        if frac > 0:
            x[a.id] = frac
            value += a.value * frac
        marginal = a.id
        break
    return value, x, marginal


def opt_linear(agents: Sequence[Agent], B) -> OptSolution:
    ordered = sorted(agents, key=efficiency_key)
    value, xs, marginal = _fill(ordered, B)
    x = {a.id: xs.get(a.id, _ZERO) for a in agents}
    if marginal is not None and x[marginal] == 0:
        marginal = None
    used = sum((a.cost * x[a.id] for a in agents), _ZERO)
    return OptSolution(value, x, tuple(a.id for a in ordered), marginal, budget_left=B - used)


def opt_linear_excl(agents: Sequence[Agent], B, excluded: int) -> mpq:
    return opt_linear([a for a in agents if a.id != excluded], B).value


def loo_linear(agents: Sequence[Agent], B) -> dict[int, mpq]:
    """``opt`` without each agent in turn, sharing a single sort."""
    ordered = sorted(agents, key=efficiency_key)
    return {a.id: _fill(ordered, B, skip=a.id)[0] for a in agents}


# --------------------------------------------------------------------------
# capped-linear


def _cap_of(tv) -> mpq:
    if isinstance(tv, LinearCap):
        return tv.cap
    return mpq(tv)


def opt_capped(
    agents: Sequence[Agent],
    B,
    caps: Mapping[int, object],
    *,
    certify: bool = False,
    skip: int | None = None,
    ordered: Sequence[Agent] | None = None,
) -> OptSolution:
    """Greedy with truncation at the remaining budget and the remaining cap.

    ``caps`` maps type id to a cap (a rational or a :class:`LinearCap`).
    With ``certify`` the result is checked by :func:`capped_certificate`.
    """
    if ordered is None:
        ordered = sorted(agents, key=efficiency_key)
    cap_left = {t: _cap_of(m) for t, m in caps.items()}
    rem = B
    value = _ZERO
    x: dict[int, mpq] = {}
    states: dict[int, str] = {}
    marginal = None
    for a in ordered:
        if a.id == skip:
            continue
        t = a.type_id
        if a.value == 0 or cap_left[t] == 0 or (rem == 0 and a.cost > 0):
            x[a.id] = _ZERO
            states[a.id] = NONE
            continue
        frac, state = _ONE, FULL
        cap_frac = cap_left[t] / a.value
        if cap_frac < frac:
            frac, state = cap_frac, CAP
        if a.cost > 0:
            budget_frac = rem / a.cost
            if budget_frac < frac:
                frac, state = budget_frac, BUDGET
        x[a.id] = frac
        states[a.id] = state
        if state == BUDGET:
            marginal = a.id
        rem -= a.cost * frac
        cap_left[t] -= a.value * frac
        value += a.value * frac
    sol = OptSolution(value, x, tuple(a.id for a in ordered if a.id != skip), marginal, states, rem)
    if certify:
        pool = [a for a in agents if a.id != skip]
        capped_certificate(pool, B, caps, sol)
    return sol


def capped_certificate(agents: Sequence[Agent], B, caps: Mapping[int, object], sol: OptSolution):
    """Exhibit dual multipliers ``(lam, mu)`` proving ``sol`` optimal.

    Candidate budget prices are 0 and every agent's efficiency.  For each
    candidate the cap prices are the smallest ones consistent with the
    agents left unsaturated; the pair is accepted when complementary
    slackness holds and the dual objective equals the primal value, all in
    exact arithmetic.  Raises :class:`CertificateError` if no candidate works.
    """
    caps = {t: _cap_of(m) for t, m in caps.items()}
    x = sol.x
    by_type: dict[int, list[Agent]] = {}
    for a in agents:
        by_type.setdefault(a.type_id, []).append(a)
    used = sum((a.cost * x[a.id] for a in agents), _ZERO)
    filled = {t: sum((a.value * x[a.id] for a in by_type.get(t, ())), _ZERO) for t in caps}
    primal = sum((a.value * x[a.id] for a in agents), _ZERO)
    if used > B or any(filled[t] > caps[t] for t in caps) or primal != sol.value:
        raise CertificateError("primal solution infeasible or value mismatch")
    lams = {_ZERO} | {a.value / a.cost for a in agents if a.cost > 0 and a.value > 0}
    for lam in sorted(lams):
        if lam > 0 and used != B:
            continue
        mu = {}
        for t in caps:
            m = _ZERO
            for a in by_type.get(t, ()):
                if x[a.id] < 1 and a.value > 0:
                    m = max(m, 1 - lam * a.cost / a.value)
            mu[t] = m
        if any(mu[t] > 0 and filled[t] != caps[t] for t in caps):
            continue
        ok = True
        for a in agents:
            r = a.value * (1 - mu[a.type_id]) - lam * a.cost
            xi = x[a.id]
            if (xi == 1 and r < 0) or (xi == 0 and r > 0) or (0 < xi < 1 and r != 0):
                ok = False
                break
        if not ok:
            continue
        dual = lam * B + sum((mu[t] * caps[t] for t in caps), _ZERO)
        dual += sum((max(_ZERO, a.value * (1 - mu[a.type_id]) - lam * a.cost) for a in agents), _ZERO)
        if dual == primal:
            return lam, mu
    raise CertificateError("no dual certificate found")


# --------------------------------------------------------------------------
# piecewise-linear concave


def _as_pwl(tv) -> PiecewiseConcave:
    if isinstance(tv, LinearCap):
        return tv.as_pwl()
    return tv


def _pieces(seq: Sequence[Agent], l: PiecewiseConcave):
    """Split a type's ordered agents at the valuation breakpoints.

    Yields ``(slope, agent, length)`` with ``length`` in value units.
    """
    pts, slopes = l.breakpoints, l.slopes
    s = _ZERO
    seg = 0
    for a in seq:
        lo, hi = s, s + a.value
        pos = lo
        while pos < hi:
            while seg + 1 < len(pts) and pts[seg + 1][0] <= pos:
                seg += 1
            end = pts[seg + 1][0] if seg + 1 < len(pts) else hi
            end = min(end, hi)
            yield slopes[seg], a, end - pos
            pos = end
        s = hi


def opt_concave(
    agents: Sequence[Agent],
    B,
    curves: Mapping[int, object],
    *,
    skip: int | None = None,
) -> ConcaveOptSolution:
    """Greedy over marginal densities ``slope * v / c``.

    Ties go to the lower type id, then to the earlier piece within the type.
    Pieces of one type come out in sequence, so ``x*`` has prefix structure
    within every type and at most one fractional agent per type; no
    redistribution step is needed.
    """
    curves = {t: _as_pwl(tv) for t, tv in curves.items()}
    by_type: dict[int, list[Agent]] = {}
    for a in agents:
        if a.id != skip:
            by_type.setdefault(a.type_id, []).append(a)
    per_type = {t: sorted(seq, key=efficiency_key) for t, seq in by_type.items()}

    pieces = []
    for t in sorted(per_type):
        for seq, (slope, a, length) in enumerate(_pieces(per_type[t], curves[t])):
            if slope == 0 or a.value == 0 or length == 0:
                continue
            if a.cost == 0:
                key = (0, _ZERO, t, seq)
            else:
                key = (1, -(slope * a.value / a.cost), t, seq)
            pieces.append((key, a, length))
    pieces.sort(key=lambda p: p[0])

    rem = B
    taken: dict[int, mpq] = {}
    marginal = None
    for _, a, length in pieces:
        cost = a.cost * length / a.value
        if cost <= rem:
            take = length
        else:
            take = length * rem / cost
            cost = rem
            if marginal is None and rem > 0:
                marginal = a.id
        if take > 0:
            taken[a.id] = taken.get(a.id, _ZERO) + take
        rem -= cost

    x_star, v_star, v_hat, totals = {}, {}, {}, {}
    for t, seq in per_type.items():
        l = curves[t]
        y = yh = _ZERO
        ly = lyh = _ZERO
        for a in seq:
            xi = taken.get(a.id, _ZERO) / a.value if a.value else _ZERO
            x_star[a.id] = xi
            y2 = y + a.value * xi
            ly2 = l(y2)
            v_star[a.id] = ly2 - ly
            y, ly = y2, ly2
            yh2 = yh + a.value
            lyh2 = l(yh2)
            v_hat[a.id] = lyh2 - lyh
            yh, lyh = yh2, lyh2
        totals[t] = y
    if marginal is not None and x_star[marginal] in (0, 1):
        marginal = None
    value = sum(v_star.values(), _ZERO)
    return ConcaveOptSolution(
        value,
        x_star,
        v_star,
        v_hat,
        {t: tuple(a.id for a in seq) for t, seq in per_type.items()},
        totals,
        marginal,
    )
