"""Hot kernels, compiled when possible.

``dual_active_set`` resolves to the Cython extension if it was built and
to the pure-Python implementation otherwise. Setting the environment
variable ``PRSMPC_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import qp_py

try:
    if os.environ.get("PRSMPC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _qpcore
except ImportError:
    _qpcore = None

BACKEND = "cython" if _qpcore is not None else "python"
dual_active_set = _qpcore.dual_active_set if _qpcore is not None else qp_py.dual_active_set

OPTIMAL = qp_py.OPTIMAL
INFEASIBLE = qp_py.INFEASIBLE
ITERATION_LIMIT = qp_py.ITERATION_LIMIT

__all__ = ["BACKEND", "dual_active_set", "qp_py", "_qpcore", "OPTIMAL", "INFEASIBLE", "ITERATION_LIMIT"]
