"""Kolmogorov-Arnold networks with spline edges that sparsify, prune and
snap to closed-form library functions, plus the data and analysis tooling
around them.

Hot loops run under numba when it is installed; set ``WBKAN_DISABLE_NUMBA=1``
to force the pure-numpy path.
"""
from .errors import (ConfigError, DataError, DivergenceError, DomainError, KanError,
                     NumericalError, UnsnappedError)
from .library import BASIS_NAMES, DEFAULT_LIBRARY
from .network import (EdgeActivation, KanNetwork, backward, forward, init_network,
                      load_model, save_model)
from .spline import SplineGrid, basis_derivatives, basis_values
from .symbolic import emit_formula, fit_affine, refine, snap_edge, snap_network, snap_samples
from .training import TrainConfig, prune, train

__version__ = "0.1.0"
