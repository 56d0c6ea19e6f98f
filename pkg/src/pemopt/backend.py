"""Selects the compiled kernel core, falling back to pure numpy.

Set ``PEMOPT_BACKEND=python`` to force the fallback (``cython`` to require the
extension). ``NAME`` reports which implementation is active.
"""
import importlib
import os

from . import _kernels_py


def load(name=None):
    """Return ``(name, module)`` for the requested or best available backend."""
    name = (name or os.environ.get("PEMOPT_BACKEND", "")).lower() or None
    if name == "python":
        return "python", _kernels_py
    try:
        mod = importlib.import_module("pemopt._kernels")
    except ImportError:
        if name == "cython":
            raise
        return "python", _kernels_py
    return "cython", mod


NAME, kernels = load()
project = kernels.project
retract = kernels.retract
residuals = kernels.residuals
