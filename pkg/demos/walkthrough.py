"""Run each mechanism on a named fixture and print allocation, payments
and the audit result."""

from __future__ import annotations

from budgetmech.audit import fixtures, run_audit
from budgetmech.mechanisms import guarantee, objective
from budgetmech.numbers import format_number, to_mpf
from budgetmech.payments import run_with_payments

PICK = ["five-agents", "five-agents-theta1", "capped-two-types", "concave-one-type", "star-three"]

by_name = {f.name: f for f in fixtures()}
for name in PICK:
    f = by_name[name]
    params = f.params()
    outcome, _ = run_with_payments(f.instance, params)
    value = objective(f.instance, params.kind, outcome.x)
    print(f"{name}: {params.kind.value}, budget {format_number(f.instance.budget)}, "
          f"opt {format_number(outcome.opt)}, value {format_number(value)}, "
          f"guarantee {float(to_mpf(guarantee(params))):.4f}")
    for a in f.instance.agents:
        print(f"  agent {a.id}: x={format_number(outcome.x[a.id])}  p={float(outcome.p[a.id]):.6f}")
    report = run_audit(f.instance, params, quadrature=False)
    failed = [v.name for v in report.verdicts if v.status == "fail"]
    print(f"  audit: {'pass' if report.passed else 'FAIL ' + ', '.join(failed)}")
