"""Kernel backend selection.

The hot per-sample kernels exist twice: compiled (Cython, ``_kernels_cy``)
and pure NumPy (``_kernels_np``). The compiled module is preferred when it
imports; set ``SEPSA_BACKEND=python`` or ``SEPSA_BACKEND=compiled`` to force
one side. ``sepsa bench`` compares the two.
"""

import os

from . import _kernels_np

_REQUESTED = os.environ.get("SEPSA_BACKEND", "auto").lower()

if _REQUESTED not in ("auto", "compiled", "python"):
    raise ValueError(
        f"SEPSA_BACKEND={_REQUESTED!r} not recognized; use auto, compiled, or python"
    )

if _REQUESTED == "python":
    kernels = _kernels_np
    name = "python"
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]

        name = "compiled"
    except ImportError:
        if _REQUESTED == "compiled":
            raise ImportError(
                "SEPSA_BACKEND=compiled but sepsa._kernels_cy is not built; "
                "reinstall with `pip install -e . --no-build-isolation`"
            ) from None
        kernels = _kernels_np
        name = "python"


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels_cy  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    return tuple(names)


def get_kernels(which):
    """Return the kernel module for an explicit backend name."""
    if which == "python":
        return _kernels_np
    if which == "compiled":
        from . import _kernels_cy

        return _kernels_cy
    raise ValueError(f"unknown backend {which!r}")
