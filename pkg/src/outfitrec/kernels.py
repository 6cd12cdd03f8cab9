"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or when ``OUTFITREC_PURE_PYTHON`` is set to a truthy
value before import. Both backends expose the same four functions.
"""

import importlib
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("outfitrec._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


def _select():
    if os.environ.get("OUTFITREC_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
        return "python", _pykernels
    try:
        return "cython", load_backend("cython")
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return "python", _pykernels


BACKEND, _impl = _select()

pair_messages_forward = _impl.pair_messages_forward
pair_messages_backward = _impl.pair_messages_backward
scatter_add_rows = _impl.scatter_add_rows
category_cooccurrence = _impl.category_cooccurrence
