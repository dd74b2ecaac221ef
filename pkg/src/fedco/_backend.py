"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available.  ``FEDCO_BACKEND=numpy|cython`` forces a choice (``cython``
raises if the extension is missing, instead of silently degrading).
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCED = os.environ.get("FEDCO_BACKEND", "auto").lower()

if _FORCED == "numpy":
    _impl = _kernels_py
elif _FORCED == "cython":
    from . import _fastcore as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _fastcore as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND_NAME: str = _impl.BACKEND_NAME
KIND_SVM: int = _impl.KIND_SVM
KIND_LOGISTIC: int = _impl.KIND_LOGISTIC

svm_batch = _impl.svm_batch
logistic_batch = _impl.logistic_batch
chain_steps = _impl.chain_steps
reservoir_apply = _impl.reservoir_apply


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import _fastcore  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names
