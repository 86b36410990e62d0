"""Decreasing-step truncated Euler schemes for jump SDEs.

Simulation of jump-type stochastic differential equations driven by a
Poisson point measure, approximation of their invariant probability
measures with a decreasing-step truncated Euler scheme, and the numerical
diagnostics that certify the scheme: step-sequence inequalities, jump-size
truncation rules, synchronous-coupling contraction, pathwise Malliavin
derivatives, and empirical-distance convergence studies.
"""

from .steps import StepSequence, TimeGrid, check_step_lemma, omega_bar

__version__ = "0.1.0"
