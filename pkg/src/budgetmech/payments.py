"""Allocation curves and threshold payments.

For an agent ``i`` the allocation curve is ``u -> x_i(u, c_-i)``: the share
``i`` would receive had it declared cost ``u``.  Every allocation rule here
is monotone, so the payment

    p_i = c_i * x_i + integral of x_i(u) du from c_i to the end of the curve

makes truthful reporting a dominant strategy.

Curves are built by re-running the allocation rule as a black box.  Each run
also returns a structural key for agent ``i`` (see ``Outcome.forms``); two
runs with the same key share one closed form ``a + b*u + d/u``.  Constant
keys carry their value, other keys are fitted exactly from three samples
and checked against every further sample.  Boundaries between forms are
located by solving ``f_left(u) = f_right(u)`` where the curve is continuous
and by bisection down to a floor width where it jumps; the bisected widths
are charged to the curve's error bound.
"""

from __future__ import annotations

import bisect
import os
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import mpmath

from .core import Instance, Kind, MechanismParams
from .mechanisms import Outcome, allocate
from .numbers import QSurd, mpq, rational_approx, rational_between, to_mpf

__all__ = [
    "Segment",
    "AllocationCurve",
    "Payment",
    "CurveError",
    "allocation_curve",
    "threshold_bid",
    "integrate_tail",
    "payment_vector",
    "run_with_payments",
    "segment_cap",
]

_ZERO = mpq(0)
_ONE = mpq(1)
_FLOOR = mpq(1, 10**12)
_PREC = 128
DEFAULT_SEGMENT_CAP = 10_000


class CurveError(RuntimeError):
    """The curve could not be resolved (a fitted form failed verification or
    the segment cap was exceeded)."""


def segment_cap() -> int:
    raw = os.environ.get("BUDGETMECH_SEGMENT_CAP")
    return int(raw) if raw else DEFAULT_SEGMENT_CAP


@dataclass(frozen=True)
class Segment:
    """``x(u) = a + b*u + d/u`` on ``[u_lo, u_hi)``."""

    u_lo: Any
    u_hi: Any
    a: Any
    b: Any = _ZERO
    d: Any = _ZERO

    @property
    def form(self) -> str:
        if self.d != 0:
            return "hyperbolic"
        if self.b != 0:
            return "affine"
        return "const"

    def at(self, u):
        if self.d == 0:
            return self.a + self.b * u
        return self.a + self.b * u + self.d / u

    @property
    def coeffs(self):
        return (self.a, self.b, self.d)


@dataclass(frozen=True)
class AllocationCurve:
    agent: int
    segments: tuple[Segment, ...]
    u_max: Any
    error_bound: float = 0.0
    evaluations: int = 0
    budget: Any = None

    def at(self, u):
        """Curve value at ``u`` (0 at or beyond ``u_max``)."""
        if not self.segments or u >= self.u_max or u < 0:
            return _ZERO
        idx = bisect.bisect_right([s.u_lo for s in self.segments], u) - 1
        return self.segments[max(idx, 0)].at(u)

    def breakpoints(self) -> list:
        return [s.u_lo for s in self.segments[1:]] + ([self.u_max] if self.segments else [])


@dataclass(frozen=True)
class Payment:
    value: mpmath.mpf
    error_bound: float

    def __float__(self):
        return float(self.value)


# --------------------------------------------------------------------------
# form fitting


def _solve3(rows, rhs):
    """Gaussian elimination on a 3x3 system over exact numbers."""
    m = [list(r) + [v] for r, v in zip(rows, rhs)]
    n = 3
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / m[col][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def _fit(samples):
    """Exact ``(a, b, d)`` through three ``(u, x)`` samples."""
    rows = [(_ONE, u, 1 / u) for u, _ in samples]
    return tuple(_solve3(rows, [x for _, x in samples]))


def _eval_form(f, u):
    a, b, d = f
    return a + b * u + d / u


def _roots(fl, fr, lo, hi):
    """Points in ``[lo, hi]`` where two forms meet; exact when the equation
    is linear in ``u`` or ``1/u``."""
    da, db, dd = (p - q for p, q in zip(fl, fr))
    out = []
    if db == 0 and dd == 0:
        return out
    if db == 0:
        if da != 0:
            out.append(-dd / da)
    elif dd == 0:
        out.append(-da / db)
    else:
        # db*u^2 + da*u + dd = 0, solved numerically then rounded
        with mpmath.workprec(256):
            A, Bc, C = to_mpf(db), to_mpf(da), to_mpf(dd)
            disc = Bc * Bc - 4 * A * C
            if disc < 0:
                return out
            s = mpmath.sqrt(disc)
            for r in ((-Bc + s) / (2 * A), (-Bc - s) / (2 * A)):
                man, exp = mpmath.mpf(r).man_exp
                out.append(mpq(int(man)) * (mpq(2) ** int(exp)) if exp >= 0
                           else mpq(int(man), 1 << int(-exp)))
    return [r for r in out if lo <= r <= hi]


# --------------------------------------------------------------------------
# curve construction


class _Builder:
    def __init__(self, instance: Instance, params: MechanismParams, i: int):
        self.instance = instance
        self.params = params
        self.i = i
        self.B = instance.budget
        self.floor = self.B * _FLOOR
        self.cache: dict = {}
        self.forms: dict = {}
        self.samples: dict = {}  # key -> list of (u, x)
        self.error = mpq(0)

    def eval(self, u):
        hit = self.cache.get(u)
        if hit is not None:
            return hit
        out = allocate(self.instance.with_cost(self.i, u), self.params, track=self.i)
        xi = out.x[self.i]
        key = out.forms[self.i]
        res = (xi, key)
        self.cache[u] = res
        if key[0] == "C":
            self.forms.setdefault(key, (key[1], _ZERO, _ZERO))
        else:
            self.samples.setdefault(key, []).append((u, xi))
            self._try_fit(key)
        f = self.forms.get(key)
        if f is not None and _eval_form(f, u) != xi:
            raise CurveError(f"agent {self.i}: form for key {key!r} fails at u={u}")
        return res

    def _try_fit(self, key):
        pts = self.samples[key]
        if key in self.forms:
            return
        if len(pts) < 5:
            return
        f = _fit(pts[:3])
        for u, x in pts[3:]:
            if _eval_form(f, u) != x:
                raise CurveError(f"agent {self.i}: samples under key {key!r} do not share a form")
        self.forms[key] = f

    def form_of(self, key):
        return self.forms.get(key)

    # ------------------------------------------------------------------
    def interval(self, a, b):
        """Resolve the open interval ``(a, b)``; returns [(lo, hi, form)]."""
        frac = min(self.floor / rational_approx(b - a), mpq(1, 12))
        us = [rational_between(a, b, frac), rational_between(a, b, mpq(1, 2)),
              rational_between(a, b, 1 - frac)]
        pts = sorted({u: None for u in us})
        for u in pts:
            self.eval(u)
        resolved: dict = {}
        while True:
            if self._ensure_forms(pts, a, b):
                continue
            progressed = False
            for idx in range(len(pts) - 1):
                p, q = pts[idx], pts[idx + 1]
                kp, kq = self.cache[p][1], self.cache[q][1]
                if kp == kq or (p, q) in resolved:
                    continue
                new = self._resolve_gap(p, q, kp, kq, resolved)
                if new:
                    for u in new:
                        self._add(pts, u)
                    progressed = True
                    break
            if not progressed:
                break
        return self._assemble(pts, a, b, resolved)

    def _add(self, pts, u) -> bool:
        self.eval(u)
        idx = bisect.bisect_left(pts, u)
        if idx < len(pts) and pts[idx] == u:
            return False
        pts.insert(idx, u)
        return True

    def _ensure_forms(self, pts, a, b) -> bool:
        """Sample more points for any key seen here that still lacks a form.
        Returns True when points were added."""
        for idx, u in enumerate(pts):
            key = self.cache[u][1]
            if key in self.forms:
                continue
            s = idx
            while s > 0 and self.cache[pts[s - 1]][1] == key:
                s -= 1
            t = idx
            while t + 1 < len(pts) and self.cache[pts[t + 1]][1] == key:
                t += 1
            left = pts[s - 1] if s > 0 else a
            right = pts[t + 1] if t + 1 < len(pts) else b
            if right - left < self.floor:
                continue  # sliver; left to the gap resolver
            new = [rational_between(left, pts[s]), rational_between(pts[t], right)]
            for j in range(s, t):
                new.append(rational_between(pts[j], pts[j + 1]))
            added = [self._add(pts, v) for v in new]
            if any(added):
                return True
        return False
        return False

    def _resolve_gap(self, p, q, kp, kq, resolved):
        fl, fr = self.form_of(kp), self.form_of(kq)
        if fl is not None and fr is not None:
            if fl == fr:
                m = rational_between(p, q)
                km = self.eval(m)[1]
                if self.form_of(km) == fl:
                    resolved[(p, q)] = (m, 0)
                    return None
                return [m]
            probes = []
            for r in _roots(fl, fr, p, q):
                # a root on a sample point needs a probe on one side only
                eta = self.floor / 4
                if r > p:
                    eta = min(eta, (r - p) / 2)
                if r < q:
                    eta = min(eta, (q - r) / 2)
                rl = p if r == p else (rational_between(r - eta, r) if isinstance(r, QSurd) else r - eta)
                rr = q if r == q else (rational_between(r, r + eta) if isinstance(r, QSurd) else r + eta)
                if self.form_of(self.eval(rl)[1]) == fl and self.form_of(self.eval(rr)[1]) == fr:
                    # the boundary sits at r; record it on the innermost pair
                    resolved[(rl, rr)] = (r, 0)
                    return [u for u in (rl, rr) if u != p and u != q] or None
                probes += [u for u in (rl, rr) if u != p and u != q]
            if probes:
                return probes
        if q - p < self.floor:
            resolved[(p, q)] = ((p + q) / 2, q - p)
            return None
        return [rational_between(p, q)]

    def _assemble(self, pts, a, b, resolved):
        out = []
        start = a
        for idx in range(len(pts) - 1):
            p, q = pts[idx], pts[idx + 1]
            kp, kq = self.cache[p][1], self.cache[q][1]
            if kp == kq:
                continue
            r, err = resolved[(p, q)]
            self.error += err
            out.append((start, r, kp))
            start = r
        out.append((start, b, self.cache[pts[-1]][1]))
        segs = []
        for lo, hi, key in out:
            if not hi > lo:
                continue
            f = self.form_of(key)
            if f is None:
                # unresolved sliver: constant at the observed value, width charged
                sample = next(u for u in pts if self.cache[u][1] == key)
                f = (self.cache[sample][0], _ZERO, _ZERO)
                self.error += hi - lo
            segs.append((lo, hi, f))
        return segs


def _candidates(instance: Instance, kind: Kind, params: MechanismParams, i: int):
    B = instance.budget
    me = instance.agents[i]
    pts = {_ZERO, B}
    if me.value > 0:
        for a in instance.agents:
            if a.id == i or a.value == 0 or a.cost > B:
                continue
            if kind is Kind.DA_CON and a.type_id != me.type_id:
                continue
            u = a.cost * me.value / a.value
            if 0 < u < B:
                pts.add(u)
    if kind in (Kind.DA, Kind.DA_CAP):
        base = allocate(instance.with_cost(i, B), params)
        tau = base.tau.get(i)
        if tau is not None and not isinstance(tau, float) and 0 < tau < B:
            pts.add(tau)
    return sorted(pts)


def allocation_curve(instance: Instance, params: MechanismParams, i: int) -> AllocationCurve:
    """The curve ``u -> x_i(u, c_-i)`` on ``[0, B]``, trimmed after its last
    nonzero segment."""
    kind = params.kind
    builder = _Builder(instance, params, i)
    cands = _candidates(instance, kind, params, i)
    raw = []
    for a, b in zip(cands, cands[1:]):
        raw.extend(builder.interval(a, b))
    merged: list[list] = []
    for lo, hi, f in raw:
        if merged and merged[-1][2] == f:
            merged[-1][1] = hi
        else:
            merged.append([lo, hi, f])
    while merged and merged[-1][2] == (0, 0, 0):
        merged.pop()
    cap = segment_cap()
    if len(merged) > cap:
        raise CurveError(f"agent {i}: {len(merged)} segments exceed the cap of {cap}")
    segs = tuple(Segment(lo, hi, *f) for lo, hi, f in merged)
    u_max = segs[-1].u_hi if segs else _ZERO
    return AllocationCurve(i, segs, u_max, float(builder.error), len(builder.cache), instance.budget)


def threshold_bid(curve: AllocationCurve):
    """Largest declared cost that still wins: the end of the last nonzero
    segment."""
    return curve.u_max


# --------------------------------------------------------------------------
# integration


def _segment_integral(s: Segment, lo, hi):
    a, b, d = (to_mpf(v) for v in s.coeffs)
    L, H = to_mpf(lo), to_mpf(hi)
    val = a * (H - L)
    if s.b != 0:
        val += b * (H * H - L * L) / 2
    if s.d != 0:
        if not lo > 0:
            raise CurveError("hyperbolic segment reaches u = 0")
        val += d * mpmath.log(H / L)
    return val


def integrate_tail(curve: AllocationCurve, b) -> tuple[mpmath.mpf, float]:
    """``integral of x(u) du`` over ``[b, u_max]`` and an absolute error bound.

    Closed-form antiderivatives are evaluated at 128-bit precision; the bound
    adds the curve's own localisation error.
    """
    with mpmath.workprec(_PREC):
        total = mpmath.mpf(0)
        for s in curve.segments:
            if s.u_hi <= b:
                continue
            lo = s.u_lo if s.u_lo > b else b
            total += _segment_integral(s, lo, s.u_hi)
        scale = float(abs(total)) + float(curve.u_max or 0) + 1.0
        rounding = scale * 2.0 ** (-_PREC + 8) * max(1, len(curve.segments))
        return +total, curve.error_bound + rounding


def payment_vector(instance: Instance, params: MechanismParams, outcome: Outcome | None = None,
                   curves: Sequence[AllocationCurve] | None = None) -> list[Payment]:
    """Threshold payment of every agent; losers are paid 0."""
    if outcome is None:
        outcome = allocate(instance, params)
    pays = []
    for a in instance.agents:
        xi = outcome.x[a.id]
        if xi == 0:
            pays.append(Payment(mpmath.mpf(0), 0.0))
            continue
        curve = curves[a.id] if curves is not None else allocation_curve(instance, params, a.id)
        with mpmath.workprec(_PREC):
            tail, err = integrate_tail(curve, a.cost)
            pays.append(Payment(to_mpf(a.cost * xi) + tail, err))
    return pays


def run_with_payments(instance: Instance, params: MechanismParams) -> tuple[Outcome, list[AllocationCurve]]:
    """Allocation, payments and every agent's curve."""
    outcome = allocate(instance, params)
    curves = [allocation_curve(instance, params, a.id) for a in instance.agents]
    pays = payment_vector(instance, params, outcome, curves)
    outcome = replace(outcome, p=tuple(p.value for p in pays), p_error=tuple(p.error_bound for p in pays))
    return outcome, curves
