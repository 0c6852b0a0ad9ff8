"""Dynamic decoder-weight interpolation for exemplar-free continual learning."""
from .errors import *  # noqa: F401,F403
from .estimator import (EstimatorConfig, FactorVector, argmax_onehot, estimate_factors, fuse_max,
                        likelihood_vector, temp_softmax)
from .prototypes import (KdePrototype, KmeansPrototype, MvnPrototype, PrototypeStore, kde_fit,
                         kde_log_density, kmeans_fit, kmeans_score, mvn_fit, mvn_log_pdf)
from .weightspace import WeightSet, ws_axpy, ws_interpolate, ws_max_abs_diff, ws_sub

__version__ = "0.1.0"
