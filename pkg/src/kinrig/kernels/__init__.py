"""Hot numeric kernels, each with a numba and a numpy implementation."""
from ._backend import HAS_NUMBA, get_backend, set_backend, use_backend

__all__ = ["HAS_NUMBA", "get_backend", "set_backend", "use_backend"]
