"""Kernel dispatch: compiled extension when importable, NumPy otherwise.

Set ``SFBINAURAL_PURE_PYTHON=1`` to force the NumPy versions.
"""
import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("SFBINAURAL_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

spherical_jn_all = _impl.spherical_jn_all
sdm_overlap_add = _impl.sdm_overlap_add
image_sources = _impl.image_sources
