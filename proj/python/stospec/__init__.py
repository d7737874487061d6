"""Pitchfork SDE spectral laboratory.

The heavy lifting lives in the compiled ``_core`` module. This package adds
``run`` which returns the result envelope as a dict.
"""

import json

from ._core import (
    ConfigError,
    RootUnavailable,
    artifact_version,
    canonical_config,
    config_hash,
    conjugacy_delta,
    conjugacy_table,
    fixed_point,
    ftle,
    log_x_grid,
    lyapunov_quadrature,
    moment,
    run_config,
    simulate,
    stationary_density,
)

__all__ = [
    "ConfigError",
    "RootUnavailable",
    "artifact_version",
    "canonical_config",
    "config_hash",
    "conjugacy_delta",
    "conjugacy_table",
    "fixed_point",
    "ftle",
    "log_x_grid",
    "lyapunov_quadrature",
    "moment",
    "run",
    "run_config",
    "simulate",
    "stationary_density",
]


def run(config_text, workers=1, seed_offset=0, out_dir=None):
    """Run the study described by ``config_text`` and return the envelope dict.

    Files are written only when ``out_dir`` is given.
    """
    return json.loads(run_config(config_text, workers, seed_offset, out_dir or ""))
