"""Instance data model, validation, random generation and file I/O.

All numbers here are exact ``mpq`` rationals.  An :class:`Instance` is
immutable; counterfactual declarations are modelled by building a new one
with :meth:`Instance.with_cost`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np

from .numbers import as_rational, format_number, mpq

__all__ = [
    "Agent",
    "LinearCap",
    "PiecewiseConcave",
    "TypeValuation",
    "Instance",
    "Kind",
    "MechanismParams",
    "Violation",
    "InstanceError",
    "ParameterError",
    "parse_instance",
    "serialize_instance",
    "load_instance",
    "validate",
    "gen_random",
    "theta_violation",
]


class InstanceError(ValueError):
    """Malformed or invalid instance data."""


class ParameterError(ValueError):
    """Mechanism parameters outside their feasible region."""


@dataclass(frozen=True)
class Agent:
    id: int
    value: mpq
    cost: mpq
    type_id: int | None = None


@dataclass(frozen=True)
class PiecewiseConcave:
    """Concave, non-decreasing piecewise-linear ``l`` with ``l(0) = 0``.

    ``breakpoints`` starts at ``(0, 0)``; past the last breakpoint ``l``
    continues with ``tail_slope`` (by default the slope of the last segment).
    """

    breakpoints: tuple[tuple[mpq, mpq], ...]
    tail_slope: mpq | None = None

    def __post_init__(self):
        pts = tuple((mpq(x), mpq(y)) for x, y in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if not pts or pts[0] != (0, 0):
            raise InstanceError("piecewise valuation must start at (0, 0)")
        slopes = []
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if not x1 > x0:
                raise InstanceError("breakpoint inputs must be strictly increasing")
            if y1 < y0:
                raise InstanceError("valuation must be non-decreasing")
            slopes.append((y1 - y0) / (x1 - x0))
        if self.tail_slope is None:
            if not slopes:
                raise InstanceError("need two breakpoints or an explicit tail slope")
            object.__setattr__(self, "tail_slope", slopes[-1])
        else:
            object.__setattr__(self, "tail_slope", mpq(self.tail_slope))
        slopes.append(self.tail_slope)
        if self.tail_slope < 0:
            raise InstanceError("valuation must be non-decreasing")
        for s0, s1 in zip(slopes, slopes[1:]):
            if s1 > s0:
                raise InstanceError("segment slopes must be non-increasing (concave)")
        object.__setattr__(self, "_slopes", tuple(slopes))

    @property
    def slopes(self) -> tuple[mpq, ...]:
        """Slope of each segment; the last entry is the unbounded tail."""
        return self._slopes

    def segment_index(self, y) -> int:
        """Index of the segment containing ``y`` (left-closed)."""
        pts = self.breakpoints
        k = 0
        while k + 1 < len(pts) and y >= pts[k + 1][0]:
            k += 1
        return k

    def __call__(self, y):
        if y <= 0:
            return mpq(0)
        k = self.segment_index(y)
        x0, y0 = self.breakpoints[k]
        return y0 + self._slopes[k] * (y - x0)

    def advance(self, start, gain):
        """Smallest ``delta >= 0`` with ``l(start + delta) - l(start) == gain``.

        Returns ``(delta, segment)`` where ``segment`` is the index of the
        segment the endpoint lands in.  ``gain`` must be attainable.
        """
        pts, slopes = self.breakpoints, self._slopes
        k = self.segment_index(start)
        pos, acc = start, 0
        while True:
            end = pts[k + 1][0] if k + 1 < len(pts) else None
            s = slopes[k]
            if end is not None:
                room = s * (end - pos)
                if acc + room >= gain and s > 0:
                    return pos + (gain - acc) / s - start, k
                acc += room
                pos = end
                k += 1
                continue
            if s == 0:
                raise ValueError("gain not attainable on flat tail")
            return pos + (gain - acc) / s - start, k

    @property
    def kinks(self) -> int:
        return len(self.breakpoints) - 1


@dataclass(frozen=True)
class LinearCap:
    """``l(x) = min(x, cap)``."""

    cap: mpq

    def __post_init__(self):
        object.__setattr__(self, "cap", mpq(self.cap))
        if self.cap < 0:
            raise InstanceError("cap must be non-negative")

    def as_pwl(self) -> PiecewiseConcave:
        if self.cap == 0:
            return PiecewiseConcave(((0, 0),), tail_slope=0)
        return PiecewiseConcave(((0, 0), (self.cap, self.cap)), tail_slope=0)

    def __call__(self, y):
        return y if y < self.cap else self.cap

    @property
    def kinks(self) -> int:
        return 1


TypeValuation = Union[LinearCap, PiecewiseConcave]


class Kind(enum.Enum):
    DA = "da"
    DA_THETA = "da-theta"
    DA_CAP = "da-cap"
    DA_CON = "da-con"


@dataclass(frozen=True)
class MechanismParams:
    kind: Kind
    alpha: object
    beta: object

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class Instance:
    budget: mpq
    agents: tuple[Agent, ...]
    type_valuations: Mapping[int, TypeValuation] | None = None
    theta: mpq | None = None
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "budget", mpq(self.budget))
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.theta is not None:
            object.__setattr__(self, "theta", mpq(self.theta))
        if self.type_valuations is not None:
            object.__setattr__(self, "type_valuations", dict(self.type_valuations))
        if not self.budget > 0:
            raise InstanceError("budget must be positive")
        ids = [a.id for a in self.agents]
        if sorted(ids) != list(range(len(ids))):
            raise InstanceError("agent ids must be unique and contiguous from 0")

    def agent(self, i: int) -> Agent:
        return self.agents[i]

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def typed(self) -> bool:
        return any(a.type_id is not None for a in self.agents)

    @property
    def type_ids(self) -> tuple[int, ...]:
        return tuple(sorted({a.type_id for a in self.agents if a.type_id is not None}))

    def valuation(self, type_id: int) -> TypeValuation:
        return self.type_valuations[type_id]

    def eligible(self) -> tuple[Agent, ...]:
        """The set ``N`` of agents whose declared cost is within budget."""
        return tuple(a for a in self.agents if a.cost <= self.budget)

    def with_cost(self, i: int, cost) -> "Instance":
        agents = list(self.agents)
        agents[i] = replace(agents[i], cost=cost)
        return replace(self, agents=tuple(agents))

    def with_agents(self, agents: Sequence[Agent]) -> "Instance":
        return replace(self, agents=tuple(agents))


@dataclass(frozen=True)
class Violation:
    level: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


# --------------------------------------------------------------------------
# validation


def theta_violation(agents: Sequence[Agent], budget, theta):
    """First pair ``(hi, lo)`` with ``eff(hi) > theta * eff(lo)``, or None.

    Only agents with cost within budget are considered.  Efficiencies are
    compared by cross-multiplication so zero costs need no special casing.
    """
    pool = [a for a in agents if a.cost <= budget]
    for hi in pool:
        for lo in pool:
            if hi.value * lo.cost > theta * lo.value * hi.cost:
                return hi, lo
    return None


def validate(instance: Instance) -> list[Violation]:
    out: list[Violation] = []
    B = instance.budget
    for a in instance.agents:
        if a.value < 0:
            out.append(Violation("error", f"agent {a.id} has negative value"))
        if a.cost < 0:
            out.append(Violation("error", f"agent {a.id} has negative cost"))
        if a.cost > B:
            out.append(
                Violation("warning", f"agent {a.id} has cost {a.cost} > B; agent excluded from N")
            )
    typed = [a.type_id is not None for a in instance.agents]
    if any(typed) and not all(typed):
        out.append(Violation("error", "either every agent has a type or none does"))
    vals = instance.type_valuations or {}
    for a in instance.agents:
        if a.type_id is not None and a.type_id not in vals:
            out.append(Violation("error", f"agent {a.id} references type {a.type_id} with no valuation"))
    if instance.theta is not None:
        if instance.theta < 1:
            out.append(Violation("error", f"theta must be >= 1, got {instance.theta}"))
        else:
            bad = theta_violation(instance.agents, B, instance.theta)
            if bad is not None:
                hi, lo = bad
                if lo.value == 0 or hi.cost == 0:
                    ratio = "inf"
                else:
                    ratio = format_number((hi.value / hi.cost) / (lo.value / lo.cost))
                out.append(
                    Violation(
                        "error",
                        f"theta-competitiveness violated by agents {hi.id} and {lo.id}: "
                        f"efficiency ratio {ratio} > {format_number(instance.theta)}",
                    )
                )
    return out


# --------------------------------------------------------------------------
# file format


def _num(obj, what):
    if isinstance(obj, bool) or not isinstance(obj, (str, int, float)):
        raise InstanceError(f"{what}: expected a rational string, got {obj!r}")
    try:
        return as_rational(obj)
    except (ValueError, ZeroDivisionError) as exc:
        raise InstanceError(f"{what}: {exc}") from exc


def _parse_type(key, spec):
    if not isinstance(spec, dict):
        raise InstanceError(f"type {key}: expected an object")
    if "cap" in spec:
        return LinearCap(_num(spec["cap"], f"type {key} cap"))
    if "pwl" in spec:
        pts = spec["pwl"]
        if not isinstance(pts, list) or not all(isinstance(p, list) and len(p) == 2 for p in pts):
            raise InstanceError(f"type {key}: pwl must be a list of [x, y] pairs")
        return PiecewiseConcave(tuple((_num(x, f"type {key}"), _num(y, f"type {key}")) for x, y in pts))
    raise InstanceError(f"type {key}: expected 'cap' or 'pwl'")


def parse_instance(data: bytes | str) -> Instance:
    """Parse and validate the JSON instance format; raise on any error."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InstanceError("instance must be a JSON object")
    if "budget" not in obj or "agents" not in obj:
        raise InstanceError("instance needs 'budget' and 'agents'")
    budget = _num(obj["budget"], "budget")
    raw_agents = obj["agents"]
    if not isinstance(raw_agents, list):
        raise InstanceError("'agents' must be a list")
    agents = []
    seen = set()
    for pos, ra in enumerate(raw_agents):
        if not isinstance(ra, dict) or "v" not in ra or "c" not in ra:
            raise InstanceError(f"agent {pos}: needs 'v' and 'c'")
        aid = ra.get("id", pos)
        if not isinstance(aid, int) or isinstance(aid, bool):
            raise InstanceError(f"agent {pos}: id must be an integer")
        if aid in seen:
            raise InstanceError(f"duplicate agent id {aid}")
        seen.add(aid)
        t = ra.get("t")
        if t is not None and (not isinstance(t, int) or isinstance(t, bool) or t < 0):
            raise InstanceError(f"agent {aid}: type must be a natural number")
        agents.append(Agent(aid, _num(ra["v"], f"agent {aid} v"), _num(ra["c"], f"agent {aid} c"), t))
    agents.sort(key=lambda a: a.id)
    types = None
    if "types" in obj:
        if not isinstance(obj["types"], dict):
            raise InstanceError("'types' must be an object")
        types = {}
        for key, spec in obj["types"].items():
            try:
                tid = int(key)
            except ValueError as exc:
                raise InstanceError(f"type id {key!r} is not an integer") from exc
            types[tid] = _parse_type(key, spec)
    theta = _num(obj["theta"], "theta") if obj.get("theta") is not None else None
    try:
        inst = Instance(budget, tuple(agents), types, theta)
    except InstanceError:
        raise
    errors = [v for v in validate(inst) if v.level == "error"]
    if errors:
        raise InstanceError("; ".join(v.message for v in errors))
    return inst


def serialize_instance(instance: Instance) -> str:
    obj: dict = {"budget": format_number(instance.budget)}
    if instance.theta is not None:
        obj["theta"] = format_number(instance.theta)
    agents = []
    for a in instance.agents:
        ra = {"v": format_number(a.value), "c": format_number(a.cost)}
        if a.type_id is not None:
            ra["t"] = a.type_id
        agents.append(ra)
    obj["agents"] = agents
    if instance.type_valuations:
        types = {}
        for tid in sorted(instance.type_valuations):
            tv = instance.type_valuations[tid]
            if isinstance(tv, LinearCap):
                types[str(tid)] = {"cap": format_number(tv.cap)}
            else:
                pts = [[format_number(x), format_number(y)] for x, y in tv.breakpoints]
                if len(pts) < 2 or tv.tail_slope != tv.slopes[-2]:
                    # pin the tail with one extra point
                    x, y = tv.breakpoints[-1]
                    pts.append([format_number(x + 1), format_number(y + tv.tail_slope)])
                types[str(tid)] = {"pwl": pts}
        obj["types"] = types
    return json.dumps(obj, indent=1)


def load_instance(path) -> Instance:
    with open(path, "rb") as fh:
        return parse_instance(fh.read())


# --------------------------------------------------------------------------
# random generation

_SLOPES = [mpq(2), mpq(3, 2), mpq(1), mpq(3, 4), mpq(1, 2), mpq(1, 4), mpq(0)]


def _rat(rng, lo: int, hi: int, den: int) -> mpq:
    return mpq(int(rng.integers(lo, hi + 1)), den)


def gen_random(seed: int, n: int, profile: str = "plain", *, theta=None, types: int | None = None) -> Instance:
    """Deterministic random instance.

    Budget is an integer in [5, 20].  Values are ``k/d`` with ``d`` in
    {1, 2, 4} and ``k/d`` in [1/d, 10].  Plain and typed profiles draw costs as
    ``B*k/16`` with ``k`` in [1, 18], so roughly one agent in nine lands above
    the budget.  ``theta`` draws efficiency multipliers ``1 + (theta-1)*k/8``
    with both extremes present, then scales costs so the largest one is
    ``B*k/8`` for ``k`` in [3, 8].  ``capped`` draws caps as ``k/8`` of the
    type's total value, ``k`` in [2, 10].  ``concave`` draws 1 to 3 segments
    with distinct decreasing slopes from {2, 3/2, 1, 3/4, 1/2, 1/4, 0}.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    B = mpq(int(rng.integers(5, 21)))

    def value():
        d = int(rng.choice([1, 2, 4]))
        return _rat(rng, 1, 10 * d, d)

    values = [value() for _ in range(n)]
    if profile == "theta":
        th = as_rational(theta if theta is not None else 2)
        if th < 1:
            raise ValueError("theta must be >= 1")
        ks = [int(rng.integers(0, 9)) for _ in range(n)]
        ks[0] = 0
        if n > 1:
            ks[1] = 8
        perm = rng.permutation(n)
        ks = [ks[p] for p in perm]
        mult = [1 + (th - 1) * mpq(k, 8) for k in ks]
        top = max(v / m for v, m in zip(values, mult))
        scale = B * mpq(int(rng.integers(3, 9)), 8) / top
        costs = [v * scale / m for v, m in zip(values, mult)]
        agents = tuple(Agent(i, values[i], costs[i]) for i in range(n))
        return Instance(B, agents, None, th)

    costs = [B * mpq(int(rng.integers(1, 19)), 16) for _ in range(n)]
    if profile == "plain":
        return Instance(B, tuple(Agent(i, values[i], costs[i]) for i in range(n)))

    t = int(types if types is not None else 2)
    if t < 1:
        raise ValueError("types must be at least 1")
    tids = [int(rng.integers(0, t)) for _ in range(n)]
    agents = tuple(Agent(i, values[i], costs[i], tids[i]) for i in range(n))
    totals = {j: sum((values[i] for i in range(n) if tids[i] == j), mpq(0)) or mpq(1) for j in range(t)}
    vals: dict[int, TypeValuation] = {}
    if profile == "capped":
        for j in range(t):
            vals[j] = LinearCap(totals[j] * mpq(int(rng.integers(2, 11)), 8))
    elif profile == "concave":
        for j in range(t):
            m = int(rng.integers(1, 4))
            idx = sorted(rng.choice(len(_SLOPES) - 1, size=m, replace=False).tolist())
            slopes = [_SLOPES[k] for k in idx]
            if m > 1 and rng.random() < 0.3:
                slopes[-1] = mpq(0)
            pts = [(mpq(0), mpq(0))]
            for s in slopes:
                w = totals[j] * mpq(int(rng.integers(1, 5)), 8)
                x0, y0 = pts[-1]
                pts.append((x0 + w, y0 + s * w))
            vals[j] = PiecewiseConcave(tuple(pts))
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return Instance(B, agents, vals)
