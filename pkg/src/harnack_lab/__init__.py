"""Spectral-Galerkin simulation of semilinear SPDEs and Monte Carlo checks of Harnack-type bounds."""

import os

# The default TBB layer warns on this platform; OpenMP/workqueue behave identically
# for our kernels because every output element is written by exactly one iteration.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
