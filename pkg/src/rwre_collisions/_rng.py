"""Counter-based random streams.

Every random draw in the package is a pure function of a 64-bit stream key
and an integer counter, built from the SplitMix64 finaliser.  Walker
streams use the step index as counter, environments use the site index.
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT_WALKER = np.uint64(0x5851F42D4C957F2D)
_SALT_ENV = np.uint64(0x14057B7EF767814F)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S6 = np.uint64(6)
_ONE = np.uint64(1)
_LOW6 = np.uint64(63)
_INV53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def counter_bits(key, counter):
    return mix64(key + (np.uint64(counter) + _ONE) * _GOLDEN)


@nb.njit(cache=True, inline="always")
def counter_uniform(key, counter):
    """Uniform double in [0, 1) with 53 random bits."""
    return np.float64(counter_bits(key, counter) >> _S11) * _INV53


@nb.njit(cache=True, inline="always")
def srw_increment(key, t):
    # one 64-bit word feeds 64 consecutive coin flips
    word = counter_bits(key, np.int64(t) >> 6)
    bit = (word >> (np.uint64(t) & _LOW6)) & _ONE
    return 1 if bit == _ONE else -1


@nb.njit(cache=True)
def _walker_key(seed, replica, walker):
    k = mix64(seed ^ _SALT_WALKER)
    k = mix64(k + np.uint64(replica) * _GOLDEN)
    return mix64(k ^ (np.uint64(walker) + _ONE) * _M1)


@nb.njit(cache=True)
def _env_key(seed):
    return mix64(mix64(seed ^ _SALT_ENV) + _GOLDEN)


def _u64(x):
    return np.uint64(int(x) & MASK64)


@nb.njit(cache=True)
def _derive(seed, label):
    return mix64(mix64(seed) ^ (label * _GOLDEN + _ONE))


def walker_key(master_seed, replica, walker):
    """Stream key for one walker of one replica."""
    return np.uint64(_walker_key(_u64(master_seed), _u64(replica), _u64(walker)))


def walker_keys(master_seed, replica, n_walkers):
    return np.array([walker_key(master_seed, replica, w) for w in range(n_walkers)],
                    dtype=np.uint64)


def env_key(seed):
    return np.uint64(_env_key(_u64(seed)))


def derive_seed(master_seed, *labels):
    """Deterministic child seed from a master seed and integer labels."""
    k = _u64(master_seed)
    for lab in labels:
        k = np.uint64(_derive(k, _u64(lab)))
    return int(k)


@nb.njit(cache=True)
def uniforms_for_range(key, lo, hi):
    out = np.empty(hi - lo + 1)
    for x in range(lo, hi + 1):
        out[x - lo] = counter_uniform(key, x)
    return out
