"""Execution backend selection.

Two engines implement the particle advection hot path:

* ``numba``: per-particle scalar kernels compiled with ``numba.njit``
  (``nogil=True`` so worker threads run concurrently).
* ``numpy``: pure-numpy vectorized batch stepping, used when numba is
  unavailable or explicitly disabled.

Both engines perform the same arithmetic in the same order, so results are
bitwise identical.  Selection order:

1. explicit ``backend=`` argument on the API call,
2. ``ADVECTUM_BACKEND`` environment variable (``numba`` or ``numpy``),
3. ``numba`` when importable and JIT is not disabled, else ``numpy``.

Setting ``NUMBA_DISABLE_JIT`` (numba's own switch) also routes the default to
the numpy engine, since running the kernels as interpreted Python defeats the
point of that path.
"""
from __future__ import annotations

import os

BACKENDS = ("numba", "numpy")


def numba_available() -> bool:
    if os.environ.get("NUMBA_DISABLE_JIT", "0") not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def default_backend() -> str:
    env = os.environ.get("ADVECTUM_BACKEND", "").strip().lower()
    if env:
        if env not in BACKENDS:
            raise ValueError(
                f"ADVECTUM_BACKEND={env!r}: expected one of {BACKENDS}"
            )
        if env == "numba" and not numba_available():
            raise RuntimeError(
                "ADVECTUM_BACKEND=numba but numba is not importable here"
            )
        return env
    return "numba" if numba_available() else "numpy"


def resolve_backend(backend: str | None) -> str:
    """Validate an explicit backend choice, or fall back to the default."""
    if backend is None:
        return default_backend()
    backend = backend.lower()
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}: expected one of {BACKENDS}")
    if backend == "numba" and not numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


def thread_count_from_env() -> int:
    """Worker thread default: ADVECTUM_THREADS when set, else 1."""
    raw = os.environ.get("ADVECTUM_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"ADVECTUM_THREADS={raw!r}: must be >= 1")
    return n
