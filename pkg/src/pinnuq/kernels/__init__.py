"""Hot-path kernels with engine selection at import time.

The compiled extension (``pinnuq.kernels._core``, Cython) is preferred
when importable; otherwise the pure-numpy implementation is used.  Set
``PINNUQ_ENGINE=numpy`` or ``PINNUQ_ENGINE=compiled`` to force one.
Both engines implement the same contract and are cross-checked in the
test suite; ``benchmarks/bench_engines.py`` compares their throughput.
"""

from __future__ import annotations

import os

from .numpy_backend import NumpyMlpKernel

try:
    from ._core import CompiledMlpKernel

    _HAVE_COMPILED = True
except ImportError:  # extension not built
    CompiledMlpKernel = None
    _HAVE_COMPILED = False

__all__ = [
    "make_kernel",
    "engine_name",
    "available_engines",
    "NumpyMlpKernel",
    "CompiledMlpKernel",
]


def available_engines():
    return ("compiled", "numpy") if _HAVE_COMPILED else ("numpy",)


def _select():
    forced = os.environ.get("PINNUQ_ENGINE", "").strip().lower()
    if forced == "numpy":
        return "numpy"
    if forced == "compiled":
        if not _HAVE_COMPILED:
            raise ImportError(
                "PINNUQ_ENGINE=compiled but the extension is not built"
            )
        return "compiled"
    if forced and forced != "auto":
        raise ValueError(f"unknown PINNUQ_ENGINE {forced!r}")
    return "compiled" if _HAVE_COMPILED else "numpy"


_ENGINE = _select()


def engine_name() -> str:
    return _ENGINE


def make_kernel(spec, points, order, engine=None):
    """Batched network/derivative kernel bound to a fixed point set."""
    eng = engine or _ENGINE
    if eng == "compiled":
        if not _HAVE_COMPILED:
            raise ImportError("compiled kernel engine is not available")
        return CompiledMlpKernel(spec, points, order)
    if eng == "numpy":
        return NumpyMlpKernel(spec, points, order)
    raise ValueError(f"unknown engine {eng!r}")
