"""branchlab: Monte Carlo laboratory for critical age-dependent branching
Markov processes, their genealogies, and their measure-valued scaling limit."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Brownian,
    Deterministic,
    DerivedConstants,
    Exponential,
    Gamma,
    ModelSpec,
    MotionLaw,
    OffspringLaw,
    TimeInhomogeneous,
    UniformLifetime,
    ValidatedModel,
    binary_exponential_model,
    derived_constants,
    limit_age_cdf,
    parse_model_config,
    validate_model,
)
from .rng import RandomStream, stream  # noqa: F401
