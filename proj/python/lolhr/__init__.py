"""Python access to the lolhr library."""

import json

from ._lolhr import (
    ConfigError,
    EvaluatorError,
    directional_pf,
    ds_rmax,
    hvi,
    is_latin,
    lhs,
    monte_carlo_pf,
    nondominated,
    normal_cdf,
    normal_icdf,
    problem_ids,
    problem_responses,
    run_json,
)

__all__ = [
    "ConfigError",
    "EvaluatorError",
    "directional_pf",
    "ds_rmax",
    "hvi",
    "is_latin",
    "lhs",
    "monte_carlo_pf",
    "nondominated",
    "normal_cdf",
    "normal_icdf",
    "problem_ids",
    "problem_responses",
    "run",
]


def run(config, seed, heavy=False):
    """Run one seed of a config (dict or JSON text) and return the record as a dict.

    The config uses the same schema as the command line tool; ``seeds`` may be
    omitted and defaults to ``[seed]``.
    """
    if isinstance(config, str):
        config = json.loads(config)
    config = dict(config)
    config.setdefault("seeds", [seed])
    return json.loads(run_json(json.dumps(config), seed, heavy))
