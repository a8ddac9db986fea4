"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``STREAMLID_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("STREAMLID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" / "python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def recurrent_pool(h, w, eta0, sum0, sumsq0, with_std):
    return _impl.recurrent_pool(h, w, eta0, sum0, sumsq0, with_std)


def causal_depthwise_conv(x, kernel, bias, history):
    return _impl.causal_depthwise_conv(x, kernel, bias, history)


def continuity_run(top):
    return _impl.continuity_run(top)
