"""Kernel backend selection.

The compiled Cython kernels are used when importable; setting the
environment variable ``MDNS_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("MDNS_PURE_PYTHON"):
    backend = compiled_backend
else:
    backend = python_backend

BACKEND = backend.BACKEND
nonstat_correlation_matrix = backend.nonstat_correlation_matrix
nonstat_cov = backend.nonstat_cov
nonstat_cross = backend.nonstat_cross
gauss_logpdf = backend.gauss_logpdf
day_logpdf = backend.day_logpdf

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "nonstat_correlation_matrix",
    "nonstat_cov",
    "nonstat_cross",
    "gauss_logpdf",
    "day_logpdf",
]
