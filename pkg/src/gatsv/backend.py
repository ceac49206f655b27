"""Kernel backend selection.

The numpy module implements the full kernel surface.  When the compiled
extension is present, the hot kernels it provides (pairwise attention
logits, row softmax/log-sum-exp and their adjoints, the PRNG fill) are
swapped in over the numpy base; plain matrix products and elementwise
ops stay on numpy, which is already a compiled kernel and faster at
these sizes.  ``GATV_BACKEND`` overrides:

    auto    accelerate when the extension is importable (default)
    c       require the extension, error if missing
    python  numpy only, even when the extension exists

The accelerated and numpy paths agree bit-for-bit on random streams and
to ~1e-12 relative on the swapped reductions (summation order differs).
"""

import os
from types import SimpleNamespace

from gatsv import _kernels_py

_choice = os.environ.get("GATV_BACKEND", "auto").lower()

if _choice not in ("auto", "c", "python"):
    raise RuntimeError(f"GATV_BACKEND must be auto, c or python, got {_choice!r}")


def _compose(base, accel):
    """Base surface with the accelerated kernels swapped in."""
    funcs = {
        name: getattr(base, name)
        for name in dir(base)
        if not name.startswith("_") and callable(getattr(base, name))
    }
    for name in dir(accel):
        if not name.startswith("_") and name != "NAME" and callable(getattr(accel, name)):
            funcs[name] = getattr(accel, name)
    return SimpleNamespace(NAME=accel.NAME, **funcs)


if _choice == "python":
    kernels = _kernels_py
else:
    try:
        from gatsv import _kernels

        kernels = _compose(_kernels_py, _kernels)
    except ImportError:
        if _choice == "c":
            raise
        kernels = _kernels_py

BACKEND = kernels.NAME


def available_backends():
    """Importable kernel surfaces keyed by name."""
    mods = {"python": _kernels_py}
    try:
        from gatsv import _kernels

        mods["c"] = _compose(_kernels_py, _kernels)
    except ImportError:
        pass
    return mods
