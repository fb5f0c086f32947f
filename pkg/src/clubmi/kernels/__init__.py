"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``CLUBMI_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _pairwise_py as python_backend

compiled_backend = None
if not os.environ.get("CLUBMI_PURE_PYTHON"):
    try:
        from . import _pairwise as compiled_backend
    except ImportError:
        compiled_backend = None

BACKEND = "cython" if compiled_backend is not None else "python"
_impl = compiled_backend if compiled_backend is not None else python_backend


def pair_logprob(mu, logvar, y):
    return _impl.pair_logprob(
        np.ascontiguousarray(mu), np.ascontiguousarray(logvar), np.ascontiguousarray(y)
    )


def pair_logprob_backward(grad, mu, logvar, y):
    return _impl.pair_logprob_backward(
        np.ascontiguousarray(grad),
        np.ascontiguousarray(mu),
        np.ascontiguousarray(logvar),
        np.ascontiguousarray(y),
    )
