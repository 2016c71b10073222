"""Kernel selection: compiled Cython core when built, numpy fallback otherwise.

Both implementations are bit-identical by construction; ``IMPL`` reports
which one is active and ``ABISENS_FORCE_FALLBACK=1`` forces the numpy path
(used by the parity tests and the benchmark).
"""

import os

from . import _fallback

if os.environ.get("ABISENS_FORCE_FALLBACK") == "1":
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

IMPL = _impl.IMPL
first_passage_scan = _impl.first_passage_scan
sir_curves = _impl.sir_curves
mmd_terms = _impl.mmd_terms
