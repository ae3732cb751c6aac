"""Optional numba acceleration.

Set ``BANDITPROBE_DISABLE_NUMBA=1`` to force the pure-numpy code paths even
when numba is importable. The flag is read once at import time.
"""

import os

_DISABLED = os.environ.get("BANDITPROBE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by BANDITPROBE_DISABLE_NUMBA")
    from numba import njit  # type: ignore

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):  # type: ignore
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
