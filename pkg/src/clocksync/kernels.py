"""Hot-loop kernels, compiled when available.

Set ``CLOCKSYNC_PURE=1`` in the environment to force the numpy fallback.
``BACKEND`` names the implementation in use.
"""
import os

from . import _pykernels

_FORCE_PURE = os.environ.get("CLOCKSYNC_PURE", "") not in ("", "0")

try:
    if _FORCE_PURE:
        raise ImportError("pure backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"

phase_conjugate = _impl.phase_conjugate
scale_axis = _impl.scale_axis
coherence_mean = _impl.coherence_mean
categorical_sample = _impl.categorical_sample

BACKENDS = {"numpy": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
else:
    try:
        from . import _ckernels

        BACKENDS["cython"] = _ckernels
    except ImportError:
        pass
