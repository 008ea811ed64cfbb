"""Thread-cap handling for the RDK_THREADS environment variable.

Must be imported before numpy: BLAS/OpenMP pools read their
environment only once, at load time. RDK_THREADS=0 or unset leaves
the libraries at their own defaults.
"""

import os

_POOL_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def apply_thread_cap(env=os.environ):
    raw = env.get("RDK_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    if n <= 0:
        return None
    for var in _POOL_VARS:
        env.setdefault(var, str(n))
    return n


apply_thread_cap()
