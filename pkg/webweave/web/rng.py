"""Counter-based random numbers keyed by (seed, site) and the seed split scheme.

Site draws are a pure function of ``(seed, stream, i, j)``: a SplitMix64
finalizer applied to the key and the two site coordinates in fixed-width
uint64 arithmetic. Any sub-window, any traversal order and any thread
therefore sees the same increments.

Seeds split as root -> experiment -> replica through
``numpy.random.SeedSequence`` spawn keys, so adding replicas never changes
the streams of existing ones.
"""

import numpy as np

from webweave.web.exceptions import WebweaveParameterError

MASK64 = 0xFFFF_FFFF_FFFF_FFFF

_GOLDEN = np.uint64(0x9E37_79B9_7F4A_7C15)
_MUL1 = np.uint64(0xBF58_476D_1CE4_E5B9)
_MUL2 = np.uint64(0x94D0_49BB_1331_11EB)
_ROW = np.uint64(0xD6E8_FEB8_6659_FD93)

# streams used by the site hash; one per independent per-site quantity
INCREMENT_STREAM = 0
CLOCK_STREAM = 1


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def _as_uint64(values):
    # two's complement for negative lattice coordinates
    return np.asarray(values, dtype=np.int64).astype(np.uint64)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise WebweaveParameterError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def site_bits(seed, i, j, stream=INCREMENT_STREAM):
    """64 random bits per site; arguments broadcast against each other."""
    with np.errstate(over="ignore"):
        key = _mix64(np.asarray(seed, dtype=np.uint64) + _GOLDEN * np.uint64(stream + 1))
        z = _mix64(key ^ (_as_uint64(i) * _GOLDEN))
        return _mix64(z ^ (_as_uint64(j) * _ROW))


def site_uniform(seed, i, j, stream=INCREMENT_STREAM):
    """Uniform doubles in [0, 1) with 53 bits of resolution."""
    return (site_bits(seed, i, j, stream) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def draw_from_law(law, uniforms):
    cumulative = np.cumsum(law.weights)
    cumulative[-1] = 1.0
    index = np.searchsorted(cumulative, uniforms, side="right")
    return np.asarray(law.support, dtype=np.int64)[index]


def site_increments(law, seed, i, j):
    return draw_from_law(law, site_uniform(seed, i, j, INCREMENT_STREAM))


def stream_seed(root, *keys):
    """Derive a 64-bit seed for the stream addressed by ``keys`` under ``root``."""
    seq = np.random.SeedSequence(check_seed(root), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def replica_seeds(root, experiment_code, replicas):
    return [stream_seed(root, experiment_code, r) for r in range(replicas)]


def generator(seed, *keys):
    """A PCG64 generator for the stream addressed by ``keys`` under ``seed``."""
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))
