"""Latin hypercube sampling and seed derivation shared by the samplers."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *names: object) -> int:
    """Derive a 64-bit child seed from a master seed and a stage path.

    The derivation hashes the textual stage path, so a stage can be re-run on
    its own without knowing how many draws earlier stages consumed.
    """
    key = ":".join([str(int(master_seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def latin_hypercube(n_samples: int, n_dims: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-cube Latin hypercube sample.

    Parameters
    ----------
    n_samples : int
        Number of rows. Each column is split into ``n_samples`` equal strata.
    n_dims : int
        Number of independent columns.
    rng : numpy.random.Generator
        Source of randomness; consumed column by column.

    Returns
    -------
    ndarray, shape (n_samples, n_dims)
        Values in [0, 1). In every column each stratum ``[k/n, (k+1)/n)`` holds
        exactly one value.
    """
    if n_samples < 1 or n_dims < 1:
        raise ValueError("n_samples and n_dims must be >= 1")
    out = np.empty((n_samples, n_dims))
    for j in range(n_dims):
        strata = rng.permutation(n_samples)
        u = (strata + rng.random(n_samples)) / n_samples
        # (k + r)/n can round up onto the next stratum edge when r -> 1
        upper = np.nextafter((strata + 1) / n_samples, 0.0)
        out[:, j] = np.minimum(u, upper)
    return out

