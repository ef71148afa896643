"""Process-wide runtime switches.

Reproducible mode forces the serial variants of the compiled kernels so that
reduction and write order is fixed regardless of the threading layer.  All
other code paths are deterministic by construction.
"""

_reproducible = False


def set_reproducible(flag: bool) -> None:
    global _reproducible
    _reproducible = bool(flag)


def reproducible() -> bool:
    return _reproducible
