"""Forward simulation and convexification inversion for the 2D Riemannian RTE."""

from ._accel import USE_NUMBA, backend_name

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "backend_name", "__version__"]
