"""Kernel backend selection.

The compiled extension is used when it was built and importable; setting
``FEDWMSAM_PURE_PYTHON=1`` forces the numpy fallback.  Both backends expose
``quad_local_steps`` and ``subset_mean_sq`` with identical signatures.
"""
import os

from . import _pykernels as python_backend
from ._pykernels import PERT_MOMENTUM, PERT_NONE, PERT_SAM

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("FEDWMSAM_PURE_PYTHON") != "1":
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = python_backend
    BACKEND = "python"

quad_local_steps = backend.quad_local_steps
subset_mean_sq = backend.subset_mean_sq

__all__ = [
    "BACKEND", "PERT_MOMENTUM", "PERT_NONE", "PERT_SAM", "backend",
    "compiled_backend", "python_backend", "quad_local_steps", "subset_mean_sq",
]
