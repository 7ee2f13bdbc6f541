"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``DRIFTBENCH_KERNELS=python`` is set, the numpy fallback is used.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DRIFTBENCH_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def backends():
    """Map of every importable backend name to its module."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out


cosine_scores = _impl.cosine_scores
cosine_argmax = _impl.cosine_argmax
linear_scores = _impl.linear_scores
linear_argmax = _impl.linear_argmax
mean_update = _impl.mean_update
gated_update = _impl.gated_update
sgd_softmax_step = _impl.sgd_softmax_step
