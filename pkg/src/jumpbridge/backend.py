"""Backend selection for the Euler kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``JUMPBRIDGE_PURE_PYTHON=1`` is set, the NumPy fallback
takes over. Both expose ``simulate_chunk`` and ``linear_recurrence``.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _namespace(mod, name):
    return SimpleNamespace(name=name, simulate_chunk=mod.simulate_chunk,
                           linear_recurrence=mod.linear_recurrence)


PYTHON = _namespace(_fallback, "python")
COMPILED = _namespace(_compiled, "compiled") if _compiled is not None else None

if COMPILED is not None and os.environ.get("JUMPBRIDGE_PURE_PYTHON", "") != "1":
    DEFAULT = COMPILED
else:
    DEFAULT = PYTHON

BACKEND = DEFAULT.name


def get_backend(name: str | None = None):
    """Return a backend namespace by name ('compiled' or 'python'); None gives the default."""
    if name is None:
        return DEFAULT
    if name == "python":
        return PYTHON
    if name == "compiled":
        if COMPILED is None:
            raise RuntimeError("compiled kernels are not available; build the extension")
        return COMPILED
    raise ValueError(f"unknown backend {name!r}")
