"""State indexing for exact enumeration over (Y, sources) configurations.

Every joint table in this package is a flat vector of length 2**(m+1) in a
fixed order: bit k of the state index holds source k's sign (bit set means
+1), and the top bit holds Y.  Source-only configuration indices use the
same low-m bits, so ``table.reshape(2, 2**m)[y_bit, config]`` addresses a
single state.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError

ENUMERATION_GUARD = 24


def check_capacity(m: int) -> None:
    if m > ENUMERATION_GUARD:
        raise CapacityError(
            f"exact enumeration supports at most {ENUMERATION_GUARD} sources, got m={m}"
        )


def sign_table(m: int, with_label: bool = True) -> np.ndarray:
    """Matrix of signs for every state, one row per state.

    Columns 0..m-1 are sources; when ``with_label`` an extra final column
    carries Y.  Entries are -1.0 or +1.0.
    """
    check_capacity(m)
    ncols = m + 1 if with_label else m
    idx = np.arange(1 << ncols, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(ncols)) & 1
    return (2.0 * bits - 1.0).astype(np.float64)


def config_bits(m: int) -> np.ndarray:
    """(2**m, m) matrix of 0/1 bits for source-only configurations."""
    check_capacity(m)
    idx = np.arange(1 << m, dtype=np.int64)
    return ((idx[:, None] >> np.arange(m)) & 1).astype(np.float64)


def config_index(values: np.ndarray) -> np.ndarray:
    """Map rows of +-1 source outputs to configuration indices."""
    values = np.asarray(values)
    m = values.shape[-1]
    check_capacity(m)
    bits = (values > 0).astype(np.int64)
    return bits @ (1 << np.arange(m, dtype=np.int64))


def values_from_config(indices: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`config_index`; returns +-1 int8 rows."""
    indices = np.asarray(indices, dtype=np.int64)
    bits = (indices[:, None] >> np.arange(m)) & 1
    return (2 * bits - 1).astype(np.int8)
