"""Numerical laboratory for noise-regularized linear transport.

Subpackages: drift (vector-field catalogue), noise (Brownian paths and
smoothing), flow (characteristics SDE and stochastic flows), parabolic
(1-d solvers and the drift-removing transform), transport (solutions,
weak-form residuals, commutators), harness/experiments (named experiment
runner behind the `lab` CLI).
"""

__version__ = "0.1.0"

from . import drift, noise, flow, parabolic, transport, harness, experiments  # noqa: F401
