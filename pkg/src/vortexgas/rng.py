"""Counter-based random streams and deterministic reductions.

Streams are Philox 4x64 generators keyed by (master seed, stream id), so
any stream can be reconstructed independently of how many draws other
streams consumed.  This is what makes experiments resumable at member
granularity and bit-reproducible under any worker count.
"""

import numpy as np

RNG_ALGORITHM = "philox4x64"


def rng_stream(master_seed, stream_id):
    """Independent generator for (master_seed, stream_id), both uint64."""
    key = np.array([np.uint64(master_seed), np.uint64(stream_id)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_spec(master_seed, stream_id):
    """Manifest entry documenting how a stream was derived."""
    return {
        "algorithm": RNG_ALGORITHM,
        "key": [int(master_seed), int(stream_id)],
    }


def pairwise_sum(values, axis=0):
    """Deterministic pairwise-tree reduction.

    numpy's add.reduce is already pairwise for float arrays; wrapping it
    documents the contract: summands are ordered by member index, so the
    result does not depend on how members were scheduled across workers.
    """
    return np.add.reduce(np.asarray(values), axis=axis)
