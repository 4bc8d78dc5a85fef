"""Backend selection for the training kernel.

The compiled extension is used when it imports; set ``FEDPRINT_PURE_PYTHON=1``
to force the numpy fallback. Both expose ``sgd_epochs`` with one signature.
"""

import os

from fedprint import _kernels_py

try:
    from fedprint import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py.sgd_epochs}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.sgd_epochs

if _compiled is not None and os.environ.get("FEDPRINT_PURE_PYTHON", "") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"

sgd_epochs = BACKENDS[BACKEND]


def get_sgd_epochs(name=None):
    """Return the kernel for ``name`` (default: the active backend)."""
    if name is None:
        return sgd_epochs
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
