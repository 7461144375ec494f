"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``VOXBAG_PURE_PYTHON=1`` to force the fallback.
``BACKEND`` names the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("VOXBAG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

im2col3d = _active.im2col3d
col2im3d = _active.col2im3d
maxpool3d_forward = _active.maxpool3d_forward
maxpool3d_backward = _active.maxpool3d_backward
split_scores = _active.split_scores
