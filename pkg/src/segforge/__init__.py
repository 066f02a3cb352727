"""Guest segmentation for hotel property-management data."""
__version__ = "0.1.0"

from .errors import ConfigError, DataError, ModelError, SegforgeError
from .pms import Dataset, ingest, validate
from .golden import match_merge, phonetic_key
from .features import build_features, reduce_dimensionality
from .cluster import distance_matrix, gower_distance, ward_cluster, cut
from .selection import elbow_table, optimal_k, run_trials, build_model, propagate_1nn
from .timeline import snapshot, transitions, flow_export
from .synth import GeneratorConfig, generate

__all__ = [
    "__version__", "SegforgeError", "ConfigError", "DataError", "ModelError",
    "Dataset", "ingest", "validate", "match_merge", "phonetic_key",
    "build_features", "reduce_dimensionality", "distance_matrix", "gower_distance",
    "ward_cluster", "cut", "elbow_table", "optimal_k", "run_trials", "build_model",
    "propagate_1nn", "snapshot", "transitions", "flow_export", "GeneratorConfig", "generate",
]
