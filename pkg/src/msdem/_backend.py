"""Kernel backend selection.

The compiled extension is used when it imports; ``MSDEM_BACKEND=python``
forces the numpy fallback (``cython`` makes a missing extension an error).
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)


def load(name=None):
    name = (name or os.environ.get("MSDEM_BACKEND", "auto")).lower()
    if name == "python":
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        if name == "cython":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        return _kernels_py
    return _kernels


kernels = load()
BACKEND = kernels.BACKEND
