"""Hot numerical kernels, compiled when possible.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy fallbacks in ``_pykernels`` are selected at import. Setting
``MOEF_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from moef._kernels import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MOEF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from moef._kernels import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def available_backends() -> dict:
    backends = {"python": _pykernels}
    try:
        from moef._kernels import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends


def fft_modulus_rows(x, n_fft: int) -> np.ndarray:
    return _impl.fft_modulus_rows(x, n_fft)


def adagrad_update(param, grad, accum, lr: float, eps: float) -> None:
    """Fused in-place Adagrad update on arrays of identical shape."""
    if BACKEND == "cython" and param.flags.c_contiguous and accum.flags.c_contiguous:
        _impl.adagrad_update(
            param.reshape(-1), np.ascontiguousarray(grad).reshape(-1), accum.reshape(-1), lr, eps
        )
    else:
        _pykernels.adagrad_update(param, grad, accum, lr, eps)


def auc_pair_counts(labels, scores):
    return _impl.auc_pair_counts(labels, scores)
