"""Small shared helpers (seed derivation, scalar/array plumbing)."""
from __future__ import annotations

import numpy as np


def subseed(*parts: int) -> int:
    """Derive a child seed from integer parts, stable across runs and platforms."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1)[0])


def as_float_array(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def maybe_scalar(out: np.ndarray, *inputs):
    """Return a Python float when every input was scalar, else the array."""
    if all(np.isscalar(v) or np.ndim(v) == 0 for v in inputs):
        return float(out[0]) if out.ndim else float(out)
    return out
