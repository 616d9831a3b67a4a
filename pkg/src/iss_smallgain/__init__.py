"""Small-gain verification for networks of ISS subsystems with mixed sum/max gains."""
from .kfun import (
    FnClass,
    GridSpec,
    Identity,
    Linear,
    PiecewiseLinear,
    Power,
    ScalarFn,
    Zero,
    combine,
    compose,
    format_fn,
    inverse,
    less_than_id,
    parse_fn,
)
from .network import GainNetwork, apply_D, apply_gamma, apply_mu, condensation

__all__ = [
    "FnClass",
    "GridSpec",
    "Identity",
    "Linear",
    "PiecewiseLinear",
    "Power",
    "ScalarFn",
    "Zero",
    "combine",
    "compose",
    "format_fn",
    "inverse",
    "less_than_id",
    "parse_fn",
    "GainNetwork",
    "apply_D",
    "apply_gamma",
    "apply_mu",
    "condensation",
]

__version__ = "0.1.0"
