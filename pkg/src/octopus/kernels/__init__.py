"""Numeric kernel backend selection.

The compiled Cython extension is used when available; otherwise the
pure-numpy implementations take over with identical semantics. Set
``OCTOPUS_KERNELS=pure`` to force the fallback (useful for benchmarking
and for debugging the compiled path).
"""

import os

from . import pure as _pure

BACKEND = "pure"

if os.environ.get("OCTOPUS_KERNELS", "").lower() != "pure":
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]

        BACKEND = "fast"
    except ImportError:
        _impl = _pure
else:
    _impl = _pure

softmax_rows = _impl.softmax_rows
attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward

# Always-importable handles for backend comparison tests and benchmarks.
pure_backend = _pure
