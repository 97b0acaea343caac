"""Counter-based random streams.

A stream is addressed by ``(seed, purpose, index, ...)`` and built from a
Philox generator, so replicate ``r`` always sees the same draws whatever the
thread count or execution order.
"""

import numpy as np

# Stream purposes; the first element of every path.
BOOTSTRAP = 1
REPLICATE = 2
TILT_STARTS = 3
TRUTH = 4


def split(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for stream ``path`` under ``seed``.

    Parameters
    ----------
    seed : int
        Nonnegative root seed
    *path : int
        Nonnegative stream coordinates, e.g. ``(BOOTSTRAP, r)``

    Returns
    -------
    numpy.random.Generator
        An independent Philox-backed generator

    Raises
    ------
    ValueError
        If the seed or a path coordinate is negative
    """
    if seed < 0 or any(part < 0 for part in path):
        raise ValueError(f"seed and stream path must be nonnegative, got {seed}, {path}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(part) for part in path))
    return np.random.Generator(np.random.Philox(sequence))
