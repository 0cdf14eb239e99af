"""Default worker count for parallel maps."""

import os

THREADS_ENV = "LFDRMM_THREADS"


def default_threads() -> int:
    """``$LFDRMM_THREADS`` if set, else the number of usable CPUs."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n >= 1:
            return n
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1
