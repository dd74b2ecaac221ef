"""fedco: federated training simulator with batch-size / aggregation-frequency co-optimization."""

from ._backend import BACKEND_NAME, available_backends

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "available_backends", "__version__"]
