"""Backend selection for the Monte-Carlo kernel.

The compiled extension is used when it imports; otherwise the numpy
implementation.  ``REFOCUS_KERNEL=python`` forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
evolve_cos_phi = _kernels_py.evolve_cos_phi

if os.environ.get("REFOCUS_KERNEL", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        evolve_cos_phi = _compiled.evolve_cos_phi
        BACKEND = "compiled"


def get_kernel(name=None):
    """Return ``evolve_cos_phi`` for ``"compiled"``, ``"python"`` or the default."""
    if name is None:
        return evolve_cos_phi
    if name == "python":
        return _kernels_py.evolve_cos_phi
    if name == "compiled":
        from . import _kernels as _compiled

        return _compiled.evolve_cos_phi
    raise ValueError(f"unknown kernel backend {name!r}")
