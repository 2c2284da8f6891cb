"""Keep large temporaries on the heap instead of fresh ``mmap`` pages.

glibc hands every allocation above its mmap threshold back to the kernel on
free, so a training step that builds a few dozen megabyte-sized arrays
page-faults its whole working set again on the next step. Raising the
thresholds roughly halves the step time. Elsewhere this is a no-op.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import functools

M_TRIM_THRESHOLD = -1
M_MMAP_THRESHOLD = -3
THRESHOLD = 256 << 20


@functools.cache
def tune_allocator() -> bool:
    """Raise the glibc mmap and trim thresholds once per process; report success."""
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        mallopt = ctypes.CDLL(name).mallopt
    except (OSError, AttributeError):
        return False
    mallopt.argtypes = (ctypes.c_int, ctypes.c_int)
    return bool(mallopt(M_MMAP_THRESHOLD, THRESHOLD)) and bool(mallopt(M_TRIM_THRESHOLD, THRESHOLD))
