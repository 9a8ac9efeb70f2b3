"""Kernel dispatch: numba-compiled fast path with a pure-numpy fallback.

Set SQAR_NO_NUMBA=1 before import to force the numpy path (useful for
debugging and for the benchmark baseline).  ``BACKEND`` records which path
was selected.
"""

import os

from . import _numpy

BACKEND = "numpy"

if os.environ.get("SQAR_NO_NUMBA", "") not in ("1", "true", "yes"):
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = _numpy
else:
    _impl = _numpy

sq_pmf_flat = _impl.sq_pmf_flat
sq_pmf_flat_vjp = _impl.sq_pmf_flat_vjp
categorical_rows = _impl.categorical_rows
entropy_rows = _impl.entropy_rows
