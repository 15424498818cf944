"""Executable checks of the mechanism properties.

Each check returns a :class:`Verdict`; a failing verdict always carries a
witness.  :func:`run_audit` bundles them into an :class:`AuditReport`.
Grid-based truthfulness is evidence, not proof: the report records how many
deviations were tried.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import mpmath
from scipy import integrate

from .core import Agent, Instance, Kind, LinearCap, MechanismParams, PiecewiseConcave, serialize_instance
from .mechanisms import Outcome, Star, allocate, guarantee, objective, opt_value, params_default
from .numbers import QSurd, format_number, mpq, rational_approx, to_mpf
from .oracle import efficiency_key, opt_concave, opt_linear
from .payments import AllocationCurve, CurveError, allocation_curve, integrate_tail, payment_vector

__all__ = [
    "Verdict",
    "AuditReport",
    "Fixture",
    "check_truthfulness",
    "check_individual_rationality",
    "check_budget",
    "check_monotonicity",
    "check_approximation",
    "check_cost_bounds",
    "check_curve_agreement",
    "check_quadrature",
    "quadrature_tail",
    "fixtures",
    "tight_family",
    "run_audit",
]

TRUTH_TOL = mpq(1, 10**6)
IR_TOL = mpq(1, 10**9)
BUDGET_TOL = mpq(1, 10**6)
APPROX_TOL = mpq(1, 10**9)
QUAD_TOL = 1e-9
UNIFORM_POINTS = 32
STEP_TOL = mpq(1, 10**12)


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str  # pass | fail | skip
    witness: Any = None
    slack: Any = None

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def csv(self) -> str:
        w = "" if self.witness is None else json.dumps(self.witness, default=str).replace(",", ";")
        s = "" if self.slack is None else f"{float(self.slack):.6g}"
        return f"{self.name},{self.status},{w},{s}"


@dataclass
class AuditReport:
    digest: str
    kind: Kind
    params: MechanismParams
    verdicts: list[Verdict]
    ratio: float | None
    max_truth_violation: float
    payments_total: float
    budget: float
    grid_size: int
    segment_counts: dict = field(default_factory=dict)
    anomalies: list = field(default_factory=list)
    opt: Any = None
    value: Any = None

    @property
    def passed(self) -> bool:
        return all(v.ok for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        return next(v for v in self.verdicts if v.name == name)

    def csv(self) -> str:
        return "\n".join(v.csv() for v in self.verdicts) + "\n"

    def summary(self) -> dict:
        return {
            "digest": self.digest,
            "kind": self.kind.value,
            "alpha": format_number(self.params.alpha),
            "beta": format_number(self.params.beta),
            "passed": self.passed,
            "ratio": self.ratio,
            "max_truth_violation": self.max_truth_violation,
            "payments_total": self.payments_total,
            "budget": self.budget,
            "grid_size": self.grid_size,
            "opt": None if self.opt is None else format_number(self.opt),
            "value": None if self.value is None else format_number(self.value),
            "segment_counts": self.segment_counts,
            "anomalies": self.anomalies,
            "verdicts": [
                {"name": v.name, "status": v.status, "witness": v.witness,
                 "slack": None if v.slack is None else float(v.slack)}
                for v in self.verdicts
            ],
        }


def digest(instance: Instance) -> str:
    return hashlib.sha256(serialize_instance(instance).encode()).hexdigest()[:16]


def _f(x) -> float:
    return float(to_mpf(x)) if isinstance(x, QSurd) else float(x)


# --------------------------------------------------------------------------
# mechanism properties


def _tail(curve, b) -> mpmath.mpf:
    return integrate_tail(curve, b)[0]


def deviation_grid(curve: AllocationCurve, B) -> list[mpq]:
    """Breakpoints +- 1e-6*B, segment midpoints and 32 uniform points."""
    eps = B * TRUTH_TOL
    pts = set()
    for bp in [s.u_lo for s in curve.segments] + [curve.u_max]:
        for u in (bp - eps, bp, bp + eps):
            if 0 <= u <= B:
                pts.add(rational_approx(u))
    for s in curve.segments:
        pts.add(rational_approx((s.u_lo + s.u_hi) / 2))
    for k in range(UNIFORM_POINTS):
        pts.add(B * mpq(k, UNIFORM_POINTS - 1))
    return sorted(pts)


def check_truthfulness(instance: Instance, params: MechanismParams, i: int,
                       curve: AllocationCurve | None = None) -> tuple[Verdict, int]:
    """Utility of the truthful report against every grid deviation.

    Returns the verdict and the grid size.
    """
    if curve is None:
        curve = allocation_curve(instance, params, i)
    B = instance.budget
    c = instance.agents[i].cost
    tol = float(B * TRUTH_TOL)
    with mpmath.workprec(128):
        truthful = _tail(curve, c) if allocate(instance, params).x[i] > 0 else mpmath.mpf(0)
        worst, witness = -mpmath.inf, None
        grid = deviation_grid(curve, B)
        for b in grid:
            xb = allocate(instance.with_cost(i, b), params).x[i]
            util = to_mpf(b - c) * to_mpf(xb) + _tail(curve, b) if xb > 0 else mpmath.mpf(0)
            gain = util - truthful
            if gain > worst:
                worst, witness = gain, {"agent": i, "deviation": format_number(b), "gain": float(gain)}
    status = "fail" if worst > tol else "pass"
    return Verdict("truthfulness", status, witness if status == "fail" else None, float(worst)), len(grid)


def check_individual_rationality(instance: Instance, outcome: Outcome) -> Verdict:
    tol = float(instance.budget * IR_TOL)
    worst, witness = None, None
    for a in instance.agents:
        gap = float(outcome.p[a.id]) - _f(a.cost * outcome.x[a.id])
        if worst is None or gap < worst:
            worst, witness = gap, {"agent": a.id, "utility": gap}
    if worst is None:
        return Verdict("individual_rationality", "pass", None, 0.0)
    status = "fail" if worst < -tol else "pass"
    return Verdict("individual_rationality", status, witness if status == "fail" else None, worst)


def check_budget(instance: Instance, outcome: Outcome) -> Verdict:
    total = sum(float(p) for p in outcome.p)
    limit = float(instance.budget * (1 + BUDGET_TOL))
    status = "fail" if total > limit else "pass"
    witness = {"total": total, "budget": float(instance.budget)} if status == "fail" else None
    return Verdict("budget", status, witness, float(instance.budget) - total)


def check_monotonicity(curves: Sequence[AllocationCurve]) -> Verdict:
    """Every segment non-increasing and within [0, 1]; no upward step
    between consecutive segments.

    The slope test is exact.  Range and step tests allow ``STEP_TOL`` since
    boundaries found from quadratic roots are rounded rationals.
    """
    tol = STEP_TOL
    for curve in curves:
        prev_end = None
        for s in curve.segments:
            lo, hi = s.u_lo, s.u_hi
            if s.d != 0 and not lo > 0:
                return Verdict("monotonicity", "fail", {"agent": curve.agent, "u": 0, "reason": "pole"})
            # derivative b - d/u^2 is monotone in u, so its sign at the ends decides
            for u in (lo, hi):
                if u > 0 and s.b * u * u > s.d:
                    return Verdict("monotonicity", "fail",
                                   {"agent": curve.agent, "u": _f(u), "reason": "increasing segment"})
            start = s.at(lo) if lo > 0 or s.d == 0 else None
            end = s.at(hi)
            for v in (start, end):
                if v is not None and not (-tol <= v <= 1 + tol):
                    return Verdict("monotonicity", "fail",
                                   {"agent": curve.agent, "u": _f(lo), "reason": "value outside [0, 1]"})
            if prev_end is not None and start is not None and start > prev_end + tol:
                return Verdict("monotonicity", "fail",
                               {"agent": curve.agent, "u": _f(lo), "reason": "upward step",
                                "before": _f(prev_end), "after": _f(start)})
            prev_end = end
    return Verdict("monotonicity", "pass")


def check_approximation(instance: Instance, params: MechanismParams, outcome: Outcome) -> tuple[Verdict, float | None]:
    opt = opt_value(instance, params.kind)
    val = objective(instance, params.kind, outcome.x)
    gamma = guarantee(params)
    ratio = None if val == 0 else _f(opt / val)
    ok = gamma * val >= opt * (1 - APPROX_TOL)
    witness = None if ok else {"opt": _f(opt), "value": _f(val), "gamma": _f(gamma)}
    return Verdict("approximation", "pass" if ok else "fail", witness, _f(gamma * val - opt)), ratio


# --------------------------------------------------------------------------
# cost-per-value bounds


def _critical_cost_bound(N, B, alpha, sol) -> Verdict:
    opt = sol.value
    if opt == 0:
        return Verdict("critical_cost_bound", "skip")
    target = alpha * opt
    acc = mpq(0)
    for j in sol.order:
        a = next(x for x in N if x.id == j)
        acc += a.value * sol.x[j]
        if acc >= target:
            lhs = a.cost / a.value * (1 - alpha) * opt
            ok = lhs <= B
            return Verdict("critical_cost_bound", "pass" if ok else "fail",
                           None if ok else {"k": j, "lhs": _f(lhs)}, _f(B - lhs))
    return Verdict("critical_cost_bound", "skip")


def _prefix_cost_share(N, B, alpha, sol) -> Verdict:
    opt = sol.value
    if opt == 0:
        return Verdict("prefix_cost_share", "skip")
    target = alpha * opt
    acc, cost = mpq(0), mpq(0)
    for j in sol.order:
        a = next(x for x in N if x.id == j)
        w = a.value * sol.x[j]
        if w > 0 and acc + w >= target:
            xk = (target - acc) / a.value
            cost = cost + a.cost * xk
            ok = cost <= alpha * B
            return Verdict("prefix_cost_share", "pass" if ok else "fail",
                           None if ok else {"k": j, "cost": _f(cost)}, _f(alpha * B - cost))
        acc += w
        cost += a.cost * sol.x[j]
    return Verdict("prefix_cost_share", "skip")


def _concave_critical_cost_bound(instance, params, outcome) -> Verdict:
    N = instance.eligible()
    B = instance.budget
    rho_star = max(outcome.rho.values()) if outcome.rho else 0
    if not outcome.rho or (isinstance(rho_star, float) or rho_star > params.beta):
        return Verdict("concave_critical_cost_bound", "skip")
    curves = {t: instance.valuation(t) for t in instance.type_ids}
    sol = opt_concave(N, B, curves)
    if sol.value == 0:
        return Verdict("concave_critical_cost_bound", "skip")
    t = len(instance.type_ids)
    alpha = params.alpha
    order = sorted(N, key=lambda a: (2, 0, a.id) if sol.v_star[a.id] == 0 else
                   ((0, 0, a.id) if a.cost == 0 else (1, -(sol.v_star[a.id] / a.cost), a.id)))
    target = alpha * sol.value
    acc = mpq(0)
    for a in order:
        w = sol.v_star[a.id]
        if w > 0 and acc + w >= target:
            lhs = a.cost / w * (1 - alpha - t * params.beta) * sol.value
            ok = lhs <= B
            return Verdict("concave_critical_cost_bound", "pass" if ok else "fail",
                           None if ok else {"k": a.id, "lhs": _f(lhs)}, _f(B - lhs))
        acc += w
    return Verdict("concave_critical_cost_bound", "skip")


def check_cost_bounds(instance: Instance, params: MechanismParams,
                             outcome: Outcome | None = None) -> list[Verdict]:
    """Exact checks of the cost-per-value bounds behind budget feasibility
    and the approximation guarantee.

    The linear bounds use the linear optimum of the eligible agents; the
    concave bound runs only for DA-con when no single agent triggered the
    star branch.
    """
    N = instance.eligible()
    B = instance.budget
    sol = opt_linear(N, B)
    out = [_critical_cost_bound(N, B, params.alpha, sol), _prefix_cost_share(N, B, params.alpha, sol)]
    if params.kind is Kind.DA_CON:
        if outcome is None:
            outcome = allocate(instance, params)
        out.append(_concave_critical_cost_bound(instance, params, outcome))
    return out


def check_mechanism_bounds(instance: Instance, params: MechanismParams, outcome: Outcome,
                           curves: Sequence[AllocationCurve]) -> list[Verdict]:
    """Threat no-op, payment <= x*tau, star-branch value bound and the
    DA-theta threshold bound."""
    out = []
    B = instance.budget
    canonical = _is_canonical(instance, params)
    kind = params.kind
    if kind is not Kind.DA_THETA:
        if isinstance(outcome.branch, Star) or not canonical:
            out.append(Verdict("threat_noop", "skip"))
        elif kind is Kind.DA:
            des = sorted(outcome.branch.deselected)
            out.append(Verdict("threat_noop", "fail" if des else "pass",
                               {"deselected": des} if des else None))
        else:
            # only claimed for DA; elsewhere a deselection is recorded, not failed
            des = sorted(outcome.branch.deselected)
            out.append(Verdict("threat_noop", "skip", {"deselected": des} if des else None))
        worst, witness = None, None
        if not isinstance(outcome.branch, Star):
            for j in outcome.winners:
                tau = outcome.tau[j]
                if isinstance(tau, float):
                    continue
                slack = _f(outcome.x[j] * tau) + float(B * IR_TOL) - float(outcome.p[j])
                if worst is None or slack < worst:
                    worst, witness = slack, {"agent": j, "payment": float(outcome.p[j]), "bound": _f(outcome.x[j] * tau)}
        if worst is None:
            out.append(Verdict("payment_threat_bound", "skip"))
        else:
            out.append(Verdict("payment_threat_bound", "fail" if worst < 0 else "pass",
                               witness if worst < 0 else None, worst))
    if isinstance(outcome.branch, Star):
        w = outcome.branch.winner
        a = instance.agents[w]
        if kind is Kind.DA_CAP:
            num = min(a.value, instance.valuation(a.type_id).cap)
        elif kind is Kind.DA_CON:
            num = instance.valuation(a.type_id)(a.value)
        else:
            num = a.value
        bound = params.beta / (1 + params.beta) * outcome.opt
        ok = num >= bound
        out.append(Verdict("star_bound", "pass" if ok else "fail",
                           None if ok else {"winner": w, "value": _f(num), "bound": _f(bound)}, _f(num - bound)))
    else:
        out.append(Verdict("star_bound", "skip"))
    if kind is Kind.DA_THETA and instance.theta is not None:
        if isinstance(outcome.branch, Star) or not outcome.winners:
            out.append(Verdict("theta_threshold", "skip"))
        else:
            worst, witness = None, None
            for j in outcome.winners:
                limit = min(B, instance.theta * instance.agents[j].cost)
                slack = limit - curves[j].u_max
                if worst is None or slack < worst:
                    worst, witness = slack, {"agent": j, "threshold": _f(curves[j].u_max), "limit": _f(limit)}
            ok = worst >= 0
            out.append(Verdict("theta_threshold", "pass" if ok else "fail", None if ok else witness, _f(worst)))
    return out


def _is_canonical(instance: Instance, params: MechanismParams) -> bool:
    kind = params.kind
    if kind is Kind.DA_THETA:
        return False
    aux = len(instance.type_ids) if kind is Kind.DA_CON else None
    try:
        ref = params_default(kind, aux)
    except Exception:
        return False
    return (ref.alpha, ref.beta) == (params.alpha, params.beta)


# --------------------------------------------------------------------------
# curve checks


def check_curve_agreement(instance: Instance, params: MechanismParams, curves: Sequence[AllocationCurve],
                          points: int = 64, seed: int = 0) -> Verdict:
    """Curve value against a fresh run of the allocation rule at random
    declared costs: exact where the form is rational, within 1e-12 on
    hyperbolic pieces."""
    rng = random.Random(seed)
    B = instance.budget
    for curve in curves:
        for _ in range(points):
            u = B * mpq(rng.randrange(1, 2**40), 2**40)
            x = allocate(instance.with_cost(curve.agent, u), params).x[curve.agent]
            y = curve.at(u)
            if x != y and abs(_f(x) - _f(y)) > 1e-12:
                return Verdict("curve_agreement", "fail",
                               {"agent": curve.agent, "u": format_number(u), "rule": _f(x), "curve": _f(y)})
    return Verdict("curve_agreement", "pass", None, None)


def quadrature_tail(curve: AllocationCurve, b) -> float:
    """Independent numeric integral of the curve over ``[b, u_max]``, one
    adaptive quadrature per segment."""
    total = 0.0
    for s in curve.segments:
        if s.u_hi <= b:
            continue
        lo = _f(s.u_lo if s.u_lo > b else b)
        hi = _f(s.u_hi)
        a_, b_, d_ = (_f(v) for v in s.coeffs)
        val, _ = integrate.quad(lambda u: a_ + b_ * u + d_ / u, lo, hi, epsabs=1e-14, epsrel=1e-13)
        total += val
    return total


def check_quadrature(instance: Instance, curves: Sequence[AllocationCurve]) -> Verdict:
    tol = QUAD_TOL * float(instance.budget)
    worst, witness = 0.0, None
    for curve in curves:
        for b in (mpq(0), instance.agents[curve.agent].cost):
            closed = float(integrate_tail(curve, b)[0])
            numeric = quadrature_tail(curve, b)
            diff = abs(closed - numeric)
            if diff > worst:
                worst, witness = diff, {"agent": curve.agent, "from": _f(b), "closed": closed, "quad": numeric}
    status = "fail" if worst > tol else "pass"
    return Verdict("quadrature", status, witness if status == "fail" else None, tol - worst)


# --------------------------------------------------------------------------
# fixtures


@dataclass(frozen=True)
class Fixture:
    name: str
    instance: Instance
    kind: Kind
    expected: dict
    aux: Any = None

    def params(self) -> MechanismParams:
        return params_default(self.kind, self.aux)


def _inst(B, pairs, theta=None, types=None, tids=None):
    agents = tuple(Agent(i, mpq(v), mpq(c), None if tids is None else tids[i]) for i, (v, c) in enumerate(pairs))
    return Instance(mpq(B), agents, types, theta)


def tight_family(n: int, v=1, c=None, B=1) -> Instance:
    """``n`` identical agents whose costs exactly exhaust the budget."""
    B = mpq(B)
    c = B / n if c is None else mpq(c)
    return _inst(B, [(v, c)] * n)


def fixtures() -> list[Fixture]:
    out = [
        Fixture("LB-3-I1", _inst(1, [(1, 1), (1, 1)]), Kind.DA, {"opt": mpq(1)}),
        Fixture("LB-3-I2", _inst(1, [(1, mpq(1, 100)), (1, 1)]), Kind.DA, {"opt": 2 - mpq(1, 100)}),
    ]
    for theta in (mpq(2), mpq(3)):
        hi = theta / (theta + 1)
        lo = 1 / (theta + 1)
        out.append(Fixture(f"LB-4-I1(theta={theta})", _inst(1, [(1, hi), (1, hi)], theta=theta),
                           Kind.DA_THETA, {"opt": 1 + 1 / theta}, theta))
        out.append(Fixture(f"LB-4-I2(theta={theta})", _inst(1, [(1, lo), (1, hi)], theta=theta),
                           Kind.DA_THETA, {"opt": mpq(2)}, theta))
    for n in range(2, 11):
        out.append(Fixture(f"tight-{n}", tight_family(n, 4, 2, 2 * n), Kind.DA, {"opt": mpq(4 * n)}))
    out += [
        Fixture("single-agent", _inst(10, [(5, 4)]), Kind.DA, {"opt": mpq(5), "payments": [mpq(10)]}),
        Fixture("five-agents", _inst(10, [(4, 2)] * 5), Kind.DA, {"opt": mpq(20)}),
        Fixture("star-three", _inst(10, [(6, 2), (4, 4), (5, 10)]), Kind.DA, {"opt": mpq(12), "star": 0}),
        Fixture("five-agents-theta1", _inst(10, [(4, 2)] * 5, theta=1), Kind.DA_THETA,
                {"opt": mpq(20), "x": [1, 1, mpq(1, 2), 0, 0]}, mpq(1)),
        Fixture("capped-two-types",
                _inst(10, [(4, 2)] * 3 + [(4, 4)] * 2, types={0: LinearCap(6), 1: LinearCap(8)},
                      tids=[0, 0, 0, 1, 1]),
                Kind.DA_CAP, {"opt": mpq(13)}),
        Fixture("concave-one-type",
                _inst(6, [(5, 2)] * 3, types={0: PiecewiseConcave(((0, 0), (5, 5), (6, mpq(11, 2))))},
                      tids=[0, 0, 0]),
                Kind.DA_CON, {"opt": mpq(10), "star": 0}, 1),
    ]
    return out


# --------------------------------------------------------------------------
# aggregate


def run_audit(instance: Instance, params: MechanismParams, *, agreement_points: int = 64,
              quadrature: bool = True, cost_bounds: bool = True, seed: int = 0) -> AuditReport:
    """Run every check; property failures are reported, never raised."""
    outcome = allocate(instance, params)
    verdicts: list[Verdict] = []
    try:
        curves = [allocation_curve(instance, params, a.id) for a in instance.agents]
    except CurveError as exc:
        verdicts.append(Verdict("curves", "fail", {"error": str(exc)}))
        return AuditReport(digest(instance), params.kind, params, verdicts, None, float("nan"),
                           float("nan"), float(instance.budget), 0)
    pays = payment_vector(instance, params, outcome, curves)
    outcome = replace(outcome, p=tuple(p.value for p in pays), p_error=tuple(p.error_bound for p in pays))
    worst_err = max((p.error_bound for p in pays), default=0.0)
    verdicts.append(Verdict("payment_error", "pass" if worst_err < 1e-9 * float(instance.budget) else "fail",
                            None, worst_err))
    grid = 0
    worst_truth, truth_witness = -float("inf"), None
    for a in instance.agents:
        v, g = check_truthfulness(instance, params, a.id, curves[a.id])
        grid += g
        if v.slack > worst_truth or v.status == "fail":
            worst_truth = v.slack
            truth_witness = v
    if truth_witness is None:
        truth_witness = Verdict("truthfulness", "pass", None, 0.0)
        worst_truth = 0.0
    verdicts.append(truth_witness)
    verdicts.append(check_individual_rationality(instance, outcome))
    verdicts.append(check_budget(instance, outcome))
    verdicts.append(check_monotonicity(curves))
    approx, ratio = check_approximation(instance, params, outcome)
    verdicts.append(approx)
    counts = {c.agent: len(c.segments) for c in curves}
    kinks = 0
    if instance.typed:
        kinks = max(getattr(instance.valuation(t), "kinks", 1) for t in instance.type_ids)
    limit = instance.n * (kinks + 2)
    anomalies = [c.agent for c in curves if len(c.segments) > limit]
    verdicts.append(Verdict("efficiency", "pass", {"anomalies": anomalies} if anomalies else None,
                            max(counts.values(), default=0)))
    verdicts.extend(check_mechanism_bounds(instance, params, outcome, curves))
    if cost_bounds:
        verdicts.extend(check_cost_bounds(instance, params, outcome))
    if agreement_points:
        verdicts.append(check_curve_agreement(instance, params, curves, agreement_points, seed))
    if quadrature:
        verdicts.append(check_quadrature(instance, curves))
    return AuditReport(
        digest(instance), params.kind, params, verdicts, ratio, float(worst_truth),
        sum(float(p) for p in outcome.p), float(instance.budget), grid, counts, anomalies,
        outcome.opt, objective(instance, params.kind, outcome.x),
    )
