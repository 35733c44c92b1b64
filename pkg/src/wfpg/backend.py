"""Selects the compiled kernel core when available, the numpy fallback
otherwise.  Set WFPG_PURE_PYTHON=1 to force the fallback, WFPG_THREADS to
cap the compiled core's worker count.
"""

import os

from . import _fallback

_forced_pure = os.environ.get("WFPG_PURE_PYTHON", "") == "1"
_active = _fallback
if not _forced_pure:
    try:
        from . import _kernelshim

        _active = _kernelshim
    except ImportError:
        _active = _fallback


def get():
    return _active


def set_backend(module):
    """Swap the active backend (used by tests and benchmarks)."""
    global _active
    _active = module


def compiled_available():
    try:
        from . import _kernelshim  # noqa: F401

        return True
    except ImportError:
        return False


def workers():
    """Worker count for the compiled kernels (WFPG_THREADS, default 1).

    Kernels write per-element slots only, so results are identical for any
    worker count; raise this on machines whose cores actually scale.
    """
    env = os.environ.get("WFPG_THREADS")
    if env:
        return max(1, int(env))
    return 1
