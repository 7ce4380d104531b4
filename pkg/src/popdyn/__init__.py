"""Stochastic population-dynamics toolkit.

Simulators for birth-death chains, their scaling-limit diffusions,
continuous-state branching processes, branching diffusions with random
catastrophes, measure-valued individual-based models, cell-division trees and
branching Markov processes on Galton-Watson genealogies, each validated
against closed-form identities (extinction probabilities, Laplace exponents,
moment formulas, single-lineage many-to-one identities).
"""

from . import bd, catastrophe, csbp, gwtree, kernel, scaling, splitting, structpop
from .kernel import DEFAULTS, RngStream

__all__ = [
    "bd", "catastrophe", "csbp", "gwtree", "kernel", "scaling", "splitting",
    "structpop", "DEFAULTS", "RngStream",
]

__version__ = "0.1.0"
