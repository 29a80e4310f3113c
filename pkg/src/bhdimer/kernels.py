"""Kernel selection: compiled extension if importable, numpy fallback otherwise.

Set ``BHDIMER_PURE=1`` to force the fallback (used by the benchmark and the
kernel-equivalence tests).
"""

import os

from . import _fallback

BACKEND = "python"
impl = _fallback

if os.environ.get("BHDIMER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        impl = _fallback

cf4_steps = impl.cf4_steps
rk4_mean_field = impl.rk4_mean_field
cascade = impl.cascade

__all__ = ["BACKEND", "cf4_steps", "rk4_mean_field", "cascade"]
