"""Attention kernel backends.

The hot loop of the engine is multi-head scaled-dot-product attention.
Two interchangeable implementations exist:

* ``numpy``  - pure numpy (BLAS matmuls), always available
* ``c``      - Cython extension calling BLAS directly with a fused softmax

The compiled extension is built at install time when a C compiler is
present; absence is not an error.  Selection order: the
``STREAMTAG_BACKEND`` environment variable (``c``/``numpy``), then the
compiled extension if importable, then numpy.

Both backends implement::

    attention_heads(q, k, v, scale) -> out

with q (H, N, hd), k and v (H, M, hd), out (H, N, hd), all float64
C-contiguous; attention weights are softmax(q @ k.T * scale) per head.
"""

import os

from . import _numpy_backend

try:
    from . import _attn_c
except ImportError:  # extension not built; pure-python install
    _attn_c = None


def available_backends():
    names = ["numpy"]
    if _attn_c is not None:
        names.insert(0, "c")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: best available)."""
    name = name or os.environ.get("STREAMTAG_BACKEND", "auto")
    if name in ("auto", None):
        return _attn_c if _attn_c is not None else _numpy_backend
    if name == "numpy":
        return _numpy_backend
    if name == "c":
        if _attn_c is None:
            raise RuntimeError("compiled kernel backend not built")
        return _attn_c
    raise ValueError(f"unknown backend {name!r}")


_active = get_backend()


def backend_name():
    return "c" if _active is _attn_c and _attn_c is not None else "numpy"


def attention_heads(q, k, v, scale):
    return _active.attention_heads(q, k, v, scale)
