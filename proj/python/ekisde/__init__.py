"""Ensemble Kalman inversion: tamed, Euler-Maruyama and Tikhonov-regularized schemes."""

import json

from ._core import (
    ConfigError,
    ForwardModel,
    InverseProblem,
    Variant,
    covariance,
    decompose_observation,
    extend_tikhonov,
    figure1,
    fit_order,
    range_projector,
    simulate,
    spread_energy,
    step_em,
    step_tamed,
)
from ._core import run_scenario as _run_scenario
from ._core import verify_scenario as _verify_scenario

__all__ = [
    "ConfigError",
    "ForwardModel",
    "InverseProblem",
    "Variant",
    "covariance",
    "decompose_observation",
    "extend_tikhonov",
    "figure1",
    "fit_order",
    "range_projector",
    "run_scenario",
    "simulate",
    "spread_energy",
    "step_em",
    "step_tamed",
    "verify_scenario",
]


def run_scenario(text, seed=None, jobs=1):
    """Run a TOML scenario given as text and return the report payload as a dict."""
    return json.loads(_run_scenario(text, seed, jobs))


def verify_scenario(text, seed=None):
    """Run the property suite on a TOML scenario; returns a list of report dicts."""
    return json.loads(_verify_scenario(text, seed))
