"""Command-line front end.

Exit codes: 0 ok, 1 property failure, 2 input error, 3 infeasible
parameters.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace

import mpmath

from .audit import run_audit
from .core import Instance, InstanceError, Kind, MechanismParams, ParameterError, gen_random, load_instance, serialize_instance, validate
from .mechanisms import Star, check_params, objective, params_default
from .numbers import format_number, mpq, parse_number, parse_rational, to_mpf
from .payments import CurveError, allocation_curve, run_with_payments

EXIT_OK, EXIT_PROPERTY, EXIT_INPUT, EXIT_PARAMS = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write(text: str, out: str | None) -> None:
    """Write to ``out`` atomically, or to stdout."""
    if not out:
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".budgetmech-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, out)


def _num(text: str, what: str):
    try:
        return parse_number(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise _Fail(EXIT_INPUT, f"bad {what}: {text!r}") from exc


def _load(args) -> Instance:
    try:
        inst = load_instance(args.instance)
    except OSError as exc:
        raise _Fail(EXIT_INPUT, f"cannot read {args.instance}: {exc.strerror}") from exc
    except InstanceError as exc:
        raise _Fail(EXIT_INPUT, f"invalid instance: {exc}") from exc
    if getattr(args, "theta", None) is not None:
        inst = replace(inst, theta=_num(args.theta, "theta"))
        errors = [v for v in validate(inst) if v.level == "error"]
        if errors:
            raise _Fail(EXIT_INPUT, "; ".join(v.message for v in errors))
    return inst


def _params(args, inst: Instance) -> MechanismParams:
    kind = Kind(args.mech)
    try:
        if kind is Kind.DA_THETA:
            if inst.theta is None:
                raise _Fail(EXIT_INPUT, "da-theta needs a theta (instance field or --theta)")
            base = params_default(kind, inst.theta)
        elif kind is Kind.DA_CON:
            if not inst.typed:
                raise _Fail(EXIT_INPUT, "da-con needs typed agents with piecewise valuations")
            t = int(args.types) if args.types is not None else len(inst.type_ids)
            base = params_default(kind, t)
        else:
            if kind is Kind.DA_CAP and not inst.typed:
                raise _Fail(EXIT_INPUT, "da-cap needs typed agents with caps")
            base = params_default(kind)
        alpha = _num(args.alpha, "alpha") if args.alpha is not None else base.alpha
        beta = _num(args.beta, "beta") if args.beta is not None else base.beta
        params = MechanismParams(kind, alpha, beta)
        check_params(params, inst.theta)
    except ParameterError as exc:
        raise _Fail(EXIT_PARAMS, f"infeasible parameters: {exc}") from exc
    return params


def _f(x) -> str:
    if not isinstance(x, (float, mpmath.mpf)):
        x = to_mpf(x)
    return format(float(x), ".12g")


def cmd_run(args) -> int:
    inst = _load(args)
    params = _params(args, inst)
    try:
        outcome, _ = run_with_payments(inst, params)
    except CurveError as exc:
        raise _Fail(EXIT_PROPERTY, f"payment curve failed: {exc}") from exc
    branch = f"star:{outcome.branch.winner}" if isinstance(outcome.branch, Star) else "greedy"
    if args.format == "summary":
        obj = {
            "mechanism": params.kind.value,
            "alpha": format_number(params.alpha),
            "beta": format_number(params.beta),
            "branch": branch,
            "opt": format_number(outcome.opt),
            "value": format_number(objective(inst, params.kind, outcome.x)),
            "agents": [
                {
                    "id": a.id,
                    "x": format_number(outcome.x[a.id]),
                    "p": _f(outcome.p[a.id]),
                    "p_error": outcome.p_error[a.id],
                    "rho": None if a.id not in outcome.rho else _f(outcome.rho[a.id]),
                    "tau": None if a.id not in outcome.tau else _f(outcome.tau[a.id]),
                }
                for a in inst.agents
            ],
        }
        _write(json.dumps(obj, indent=1) + "\n", args.out)
        return EXIT_OK
    lines = [f"# branch={branch} opt={format_number(outcome.opt)} value={format_number(objective(inst, params.kind, outcome.x))}",
             "agent,x,p,p_error,rho,tau"]
    for a in inst.agents:
        rho = _f(outcome.rho[a.id]) if a.id in outcome.rho else ""
        tau = _f(outcome.tau[a.id]) if a.id in outcome.tau else ""
        lines.append(f"{a.id},{format_number(outcome.x[a.id])},{_f(outcome.p[a.id])},{outcome.p_error[a.id]:.3g},{rho},{tau}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_curve(args) -> int:
    inst = _load(args)
    params = _params(args, inst)
    if not 0 <= args.agent < inst.n:
        raise _Fail(EXIT_INPUT, f"no agent {args.agent}")
    try:
        curve = allocation_curve(inst, params, args.agent)
    except CurveError as exc:
        raise _Fail(EXIT_PROPERTY, f"curve failed: {exc}") from exc
    rows = ["u_lo,u_hi,form,a,b,d"]
    for s in curve.segments:
        rows.append(",".join([format_number(s.u_lo), format_number(s.u_hi), s.form] +
                             [format_number(v) for v in s.coeffs]))
    _write("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    if args.instance:
        insts = [_load(args)]
    else:
        if args.seed is None:
            raise _Fail(EXIT_INPUT, "audit needs an instance file or --seed for a generated batch")
        insts = [_generate(args, args.seed + k) for k in range(args.count)]
    reports = [run_audit(inst, _params(args, inst), seed=args.seed or 0) for inst in insts]
    if args.format == "summary":
        body = [r.summary() for r in reports]
        _write(json.dumps(body[0] if len(body) == 1 else body, indent=1, default=str) + "\n", args.out)
    else:
        out = ["check_name,status,worst_witness,slack"]
        for r in reports:
            if len(reports) > 1:
                out.append(f"# instance {r.digest}")
            out.append(r.csv().rstrip("\n"))
        _write("\n".join(out) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_PROPERTY


def _generate(args, seed: int) -> Instance:
    kw = {}
    if args.profile == "theta":
        kw["theta"] = _num(args.theta, "theta") if args.theta is not None else mpq(2)
    if args.profile in ("capped", "concave"):
        kw["types"] = int(args.types) if args.types is not None else 1
    try:
        return gen_random(seed, args.n, args.profile, **kw)
    except ValueError as exc:
        raise _Fail(EXIT_INPUT, str(exc)) from exc


def cmd_gen(args) -> int:
    inst = _generate(args, args.seed if args.seed is not None else 0)
    _write(serialize_instance(inst) + "\n", args.out)
    return EXIT_OK


def divisible_bound(theta) -> mpq:
    return (5 * theta * theta - 1) / (4 * theta * theta)


def indivisible_bound(theta) -> mpq:
    return 3 - 1 / theta


def cmd_bounds(args) -> int:
    if args.theta is not None:
        thetas = [parse_rational(t) for t in args.theta.split(",")]
    else:
        lo, hi, step = (parse_rational(v) for v in (args.lo, args.hi, args.step))
        if step <= 0 or hi < lo:
            raise _Fail(EXIT_INPUT, "need step > 0 and hi >= lo")
        thetas, t = [], lo
        while t <= hi:
            thetas.append(t)
            t += step
    if any(t < 1 for t in thetas):
        raise _Fail(EXIT_INPUT, "theta must be >= 1")
    rows = ["theta,divisible,indivisible"]
    for t in thetas:
        rows.append(f"{format_number(t)},{format_number(divisible_bound(t))},{format_number(indivisible_bound(t))}")
    _write("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="budgetmech", description="Budget-feasible mechanisms for divisible agents.")
    sub = p.add_subparsers(dest="command", required=True)

    def mech_flags(sp, instance_required=True):
        if instance_required:
            sp.add_argument("instance")
        else:
            sp.add_argument("instance", nargs="?")
        sp.add_argument("--mech", choices=[k.value for k in Kind], default="da")
        sp.add_argument("--alpha", help="override alpha (rational, decimal or a+b*sqrt(d))")
        sp.add_argument("--beta", help="override beta")
        sp.add_argument("--theta", help="theta for da-theta (overrides the instance field)")
        sp.add_argument("--types", type=int, help="number of types t for da-con parameters")
        sp.add_argument("--out")

    sp = sub.add_parser("run", help="allocation and payments")
    mech_flags(sp)
    sp.add_argument("--format", choices=["csv", "summary"], default="csv")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("curve", help="allocation curve of one agent as CSV")
    mech_flags(sp)
    sp.add_argument("--agent", type=int, default=0)
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("audit", help="check the mechanism properties")
    mech_flags(sp, instance_required=False)
    sp.add_argument("--format", choices=["csv", "summary"], default="csv")
    sp.add_argument("--seed", type=int, help="without an instance: first seed of a generated batch")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--n", type=int, default=6)
    sp.add_argument("--profile", choices=["plain", "theta", "capped", "concave"], default="plain")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("gen", help="seeded random instance")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--profile", choices=["plain", "theta", "capped", "concave"], default="plain")
    sp.add_argument("--theta")
    sp.add_argument("--types", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("bounds", help="lower-bound curves over theta as CSV")
    sp.add_argument("--theta", help="comma-separated theta values")
    sp.add_argument("--lo", default="1")
    sp.add_argument("--hi", default="10")
    sp.add_argument("--step", default="1/4")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"budgetmech: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"budgetmech: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
