"""Selects the TRP propagation kernel at import time.

The compiled ``_trpkernel`` extension is used when it was built; otherwise the
pure-Python ``_pykernel`` is used. Setting ``NOCPREP_PURE_PYTHON=1`` forces the
fallback.
"""

import logging
import os

from . import _pykernel

log = logging.getLogger(__name__)

try:
    from . import _trpkernel
except ImportError:  # extension not built
    _trpkernel = None

_FORCE_PYTHON = os.environ.get("NOCPREP_PURE_PYTHON", "") not in ("", "0")

KERNELS = {"python": _pykernel}
if _trpkernel is not None:
    KERNELS["cython"] = _trpkernel

BACKEND = "python" if (_FORCE_PYTHON or _trpkernel is None) else "cython"
if BACKEND == "python" and not _FORCE_PYTHON:
    log.info("compiled kernel unavailable; using pure-Python propagation")


def get_kernel(name=None):
    """Return the kernel module for ``name`` (default: the selected backend)."""
    name = name or BACKEND
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"kernel {name!r} not available; have {sorted(KERNELS)}") from None


def propagate_trp(*args, backend=None, **kwargs):
    return get_kernel(backend).propagate_trp(*args, **kwargs)
