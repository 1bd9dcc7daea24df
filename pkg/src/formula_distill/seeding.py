"""Deterministic seed derivation.

Python's builtin hash() is salted per process, so worker pools need a
stable function of (master seed, task identity) to hand every task its
own RNG stream that is identical no matter which worker runs it.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def stable_seed(*parts) -> int:
    """63-bit seed from sha256 over the repr of the parts.

    Parts may be ints, floats, strings or tuples/lists of those; the
    textual form is hashed, so equal values give equal seeds across
    processes and runs.
    """
    text = "\x1f".join(_canon(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def _canon(part) -> str:
    if isinstance(part, (list, tuple)):
        return "(" + ",".join(_canon(p) for p in part) + ")"
    if isinstance(part, float):
        return repr(part)
    return str(part)


def rng_from(*parts) -> np.random.Generator:
    """numpy Generator seeded by stable_seed(*parts)."""
    return np.random.default_rng(stable_seed(*parts))
