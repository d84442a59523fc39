"""Lattice-kernel backend selection.

Imports the compiled Cython kernels when they were built, otherwise falls
back to the pure-Python reference implementation.  Both expose the same
functions with bit-identical behavior.  Set ``DESKLM_PURE_PYTHON=1`` to force
the pure backend (used by the benchmark and the equivalence tests).
"""

from __future__ import annotations

import os

from . import _lattice_py

if os.environ.get("DESKLM_PURE_PYTHON"):
    _impl = _lattice_py
else:
    try:
        from . import _lattice_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _lattice_py

BACKEND = "compiled" if _impl is not _lattice_py else "pure-python"

viterbi = _impl.viterbi
estep = _impl.estep
fnv1a64 = _impl.fnv1a64


def backends() -> dict:
    """All importable backends, keyed by name (for benchmarks/tests)."""
    out = {"pure-python": _lattice_py}
    try:
        from . import _lattice_cy
        out["compiled"] = _lattice_cy
    except ImportError:
        pass
    return out
