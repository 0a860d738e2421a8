"""Process-level tuning for the numpy-heavy training loop."""
import ctypes
import sys

_done = False


def tune_allocator() -> bool:
    """Keep freed heap memory instead of returning it to the OS (glibc only).

    Every training step allocates and frees arrays of tens of megabytes; without
    this each allocation pays fresh page faults, which dominates step time.
    """
    global _done
    if _done or not sys.platform.startswith("linux"):
        return _done
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    M_TRIM_THRESHOLD, M_TOP_PAD, M_MMAP_THRESHOLD = -1, -2, -3
    ok = (libc.mallopt(M_TRIM_THRESHOLD, 2**31 - 1)
          and libc.mallopt(M_TOP_PAD, 2**28)
          and libc.mallopt(M_MMAP_THRESHOLD, 2**25))
    _done = bool(ok)
    return _done
