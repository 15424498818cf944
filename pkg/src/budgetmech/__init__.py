"""Budget-feasible procurement mechanisms for divisible agents.

Four allocation rules (linear, theta-competitive, capped and concave
valuations), exact fractional optima, threshold payments from allocation
curves, and an audit of the mechanism properties.
"""

from __future__ import annotations

from .core import (
    Agent,
    Instance,
    InstanceError,
    Kind,
    LinearCap,
    MechanismParams,
    ParameterError,
    PiecewiseConcave,
    gen_random,
    load_instance,
    parse_instance,
    serialize_instance,
    validate,
)
from .mechanisms import Greedy, Outcome, Star, allocate, guarantee, objective, opt_value, params_default
from .numbers import QSurd, format_number, parse_number
from .oracle import opt_capped, opt_concave, opt_linear
from .payments import AllocationCurve, Payment, allocation_curve, integrate_tail, payment_vector, run_with_payments

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AllocationCurve",
    "Greedy",
    "Instance",
    "InstanceError",
    "Kind",
    "LinearCap",
    "MechanismParams",
    "Outcome",
    "ParameterError",
    "Payment",
    "PiecewiseConcave",
    "QSurd",
    "Star",
    "allocate",
    "allocation_curve",
    "format_number",
    "gen_random",
    "guarantee",
    "integrate_tail",
    "load_instance",
    "objective",
    "opt_capped",
    "opt_concave",
    "opt_linear",
    "opt_value",
    "params_default",
    "parse_instance",
    "parse_number",
    "payment_vector",
    "run_with_payments",
    "serialize_instance",
    "validate",
]
