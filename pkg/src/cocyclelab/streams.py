"""Reproducible parallel random streams.

Every estimator in this package draws from streams produced by
derive_stream(master_seed, stream_index).  The construction is
counter-mode: the pair (seed, index) is the 128-bit key of a Philox
bit generator, so distinct indices give statistically independent
streams, the same pair gives the identical stream on every platform,
and no stream ever depends on how work was scheduled across threads.

Stream-index allocation convention (documented so runs can be audited):
index 0..n_blocks-1 are data blocks of a blocked estimator; a few large
fixed offsets mark auxiliary uses and cannot collide with block indices
at any realistic path count.
"""

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "derive_stream",
    "BOOTSTRAP_STREAM",
    "DIRECTION_STREAM",
    "PAIR_STREAM",
    "OUTER_STREAM",
    "GRID_NODE_STREAM",
    "THETA_STREAM",
]

_U64 = 2**64

# auxiliary stream indices, far above any block index
BOOTSTRAP_STREAM = 2**48 + 1  # bootstrap resampling inside estimators
DIRECTION_STREAM = 2**48 + 2  # fixed direction sets (d > 3 fallback)
PAIR_STREAM = 2**48 + 3       # direction pairs for the contraction diagnostic
OUTER_STREAM = 2**48 + 4      # one-step outer draws of nested estimators
GRID_NODE_STREAM = 2**48 + 2**20  # operator grid: node i draws from this + i
THETA_STREAM = 2**49          # corrector estimates: 2^16 block slots per state


def derive_stream(master_seed: int, stream_index: int) -> np.random.Generator:
    """Generator keyed by (master_seed, stream_index); same inputs, same stream."""
    if not isinstance(master_seed, (int, np.integer)):
        raise TypeError(f"master_seed must be an integer, got {type(master_seed)!r}")
    if not isinstance(stream_index, (int, np.integer)):
        raise TypeError(f"stream_index must be an integer, got {type(stream_index)!r}")
    if not (0 <= int(master_seed) < _U64):
        raise InvalidInputError("master_seed must fit in an unsigned 64-bit integer")
    if not (0 <= int(stream_index) < _U64):
        raise InvalidInputError("stream_index must fit in an unsigned 64-bit integer")
    key = np.array([int(master_seed), int(stream_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
