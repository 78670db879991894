"""Kernel backend selection.

``STOCHHEAT_BACKEND`` picks the implementation of the per-level tree
kernels:

* ``numba`` - numba-compiled loops (default when numba imports cleanly),
* ``numpy`` - the pure-numpy fallback.

``STOCHHEAT_THREADS`` caps the numba thread pool; it is the only runtime
environment variable the CLI honours besides the backend switch.
"""

import os

from . import _kernels_numpy

_ENV_VAR = "STOCHHEAT_BACKEND"
_THREADS_VAR = "STOCHHEAT_THREADS"

_active = None
_active_name = None


def _load(name):
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        threads = os.environ.get(_THREADS_VAR)
        if threads:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        return _kernels_numba
    raise ValueError(f"unknown backend {name!r} (expected 'numba' or 'numpy')")


def select_backend(name=None):
    """Force a backend by name; ``None`` re-reads the environment."""
    global _active, _active_name
    if name is None:
        name = os.environ.get(_ENV_VAR, "").strip().lower() or "auto"
    if name == "auto":
        try:
            _active = _load("numba")
            _active_name = "numba"
        except Exception:
            _active = _kernels_numpy
            _active_name = "numpy"
    else:
        _active = _load(name)
        _active_name = name
    return _active


def kernels():
    """The active kernel module (selected lazily on first use)."""
    if _active is None:
        select_backend()
    return _active


def backend_name():
    if _active is None:
        select_backend()
    return _active_name
