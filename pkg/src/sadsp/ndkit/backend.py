"""Kernel backend selection.

Imports the compiled kernels when available, otherwise the pure-Python
reference. SADSP_PURE_PY=1 forces the fallback regardless, which is how the
parity tests and the benchmark pin one side. Both modules export the same
functions over flat float64 buffers and agree bit-for-bit.
"""

import os

if os.environ.get("SADSP_PURE_PY"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

K = kernels


def backend_name() -> str:
    """Name of the kernel set actually in use ('cython' or 'python')."""
    return K.BACKEND
