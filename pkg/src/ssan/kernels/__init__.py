"""FSMN kernel backend selection.

Prefers the compiled Cython extension; falls back to the numpy
implementation when the extension is missing or when the environment
variable SSAN_PURE_PYTHON=1 forces the fallback.  Both backends share
one contract (see _fsmn_np) and produce bitwise-identical forward
results.
"""

import os

from . import _fsmn_np

if os.environ.get("SSAN_PURE_PYTHON", "") == "1":
    _impl = _fsmn_np
    BACKEND = "python"
else:
    try:
        from . import _fsmn as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fsmn_np
        BACKEND = "python"

fsmn_forward = _impl.fsmn_forward
fsmn_backward = _impl.fsmn_backward


def backend_name() -> str:
    return BACKEND
