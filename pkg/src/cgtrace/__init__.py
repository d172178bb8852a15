"""CG vs PG image forensics: acquisition traces, texture analysis, rendering and detection.

Set ``CGTRACE_THREADS`` before importing to cap BLAS / OpenMP threads.
"""

import os as _os

_threads = _os.environ.get("CGTRACE_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
