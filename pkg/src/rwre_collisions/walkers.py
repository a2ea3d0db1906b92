"""Quenched simulation of d RWRE walkers and p simple random walkers in lockstep.

Walker ``w`` of replica ``r`` draws its step-``t`` randomness from
``counter_uniform(walker_key(master_seed, r, w), t)`` (RWRE) or from bit
``t % 64`` of word ``t // 64`` (SRW).  Walkers ``0..d-1`` are the RWRE
walkers and ``d..d+p-1`` the simple ones.  Because every draw is addressed
by (stream, step), any run can be resumed or replayed from a state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from . import _rng
from .environment import Environment, site_omega

# the bundled TBB is often too old for numba; prefer OpenMP when present
nb.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

NONE = -1
_RIGHT_CACHE_CAP = 1 << 22


@dataclass(frozen=True)
class EnsembleState:
    time: int
    s_positions: np.ndarray
    z_positions: np.ndarray
    s_starts: np.ndarray
    z_starts: np.ndarray
    s_keys: np.ndarray
    z_keys: np.ndarray
    master_seed: int = 0
    replica_id: int = 0

    @property
    def d(self) -> int:
        return len(self.s_positions)

    @property
    def p(self) -> int:
        return len(self.z_positions)

    def positions(self) -> np.ndarray:
        return np.concatenate([self.s_positions, self.z_positions])

    def same_parity(self) -> bool:
        return same_parity(self.s_starts, self.z_starts)


@dataclass(frozen=True)
class CollisionRecord:
    times: np.ndarray
    locations: np.ndarray
    truncated_at: int

    def __len__(self):
        return len(self.times)


def same_parity(s_starts, z_starts) -> bool:
    allpos = [int(x) for x in s_starts] + [int(z) for z in z_starts]
    return len({x % 2 for x in allpos}) <= 1


def init_ensemble(s_starts, z_starts, master_seed: int = 0, replica_id: int = 0) -> EnsembleState:
    s = np.asarray(s_starts, dtype=np.int64).reshape(-1)
    z = np.asarray(z_starts, dtype=np.int64).reshape(-1)
    d, p = len(s), len(z)
    keys = _rng.walker_keys(master_seed, replica_id, d + p)
    return EnsembleState(time=0, s_positions=s.copy(), z_positions=z.copy(),
                         s_starts=s.copy(), z_starts=z.copy(),
                         s_keys=keys[:d], z_keys=keys[d:],
                         master_seed=int(master_seed), replica_id=int(replica_id))


def rwre_increment(u: float, omega: float) -> int:
    """+1 when the uniform draw falls below omega at the current site."""
    return 1 if u < omega else -1


def walk_window(env: Environment, positions, horizon: int) -> Environment:
    """Cache window for a run: right by the horizon (capped), left by sqrt(horizon).

    Sites outside the cache are still drawn correctly on demand; the window
    only trades memory for speed.
    """
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return env
    lo = min(0, int(positions.min()) - math.isqrt(max(horizon, 0)) - 1)
    hi = max(0, int(positions.max()) + min(horizon + 1, _RIGHT_CACHE_CAP))
    if env.covers(lo, hi):
        return env
    if hi > env.hi:
        hi = max(hi, min(2 * env.hi, int(positions.max()) + _RIGHT_CACHE_CAP))
    return env.extend(lo, hi)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _advance(s_pos, z_pos, t0, nsteps, s_keys, z_keys, cache, lo, ekey, kind, values, cum):
    for t in range(t0, t0 + nsteps):
        for j in range(s_pos.shape[0]):
            w = site_omega(s_pos[j], cache, lo, ekey, kind, values, cum)
            s_pos[j] += 2 * np.int64(_rng.counter_uniform(s_keys[j], t) < w) - 1
        for i in range(z_pos.shape[0]):
            z_pos[i] += _rng.srw_increment(z_keys[i], t)


@nb.njit(cache=True, inline="always")
def _all_equal(s_pos, z_pos):
    if s_pos.shape[0] > 0:
        x = s_pos[0]
    else:
        x = z_pos[0]
    for j in range(s_pos.shape[0]):
        if s_pos[j] != x:
            return False
    for i in range(z_pos.shape[0]):
        if z_pos[i] != x:
            return False
    return True


@nb.njit(cache=True)
def _collide_one(s_pos, z_pos, t0, horizon, s_keys, z_keys, late_from,
                 cache, lo, ekey, kind, values, cum, out_t, out_x):
    """Advance to ``horizon``; return (count, last time, count with time > late_from).

    Collision times/locations are written into out_t/out_x while room remains.
    """
    count = 0
    late = 0
    last = -1
    cap = out_t.shape[0]
    if _all_equal(s_pos, z_pos):
        if count < cap:
            out_t[count] = t0
            out_x[count] = s_pos[0] if s_pos.shape[0] > 0 else z_pos[0]
        count += 1
        last = t0
        if t0 > late_from:
            late += 1
    d = s_pos.shape[0]
    p = z_pos.shape[0]
    for t in range(t0, horizon):
        for j in range(d):
            w = site_omega(s_pos[j], cache, lo, ekey, kind, values, cum)
            s_pos[j] += 2 * np.int64(_rng.counter_uniform(s_keys[j], t) < w) - 1
        for i in range(p):
            z_pos[i] += _rng.srw_increment(z_keys[i], t)
        if _all_equal(s_pos, z_pos):
            if count < cap:
                out_t[count] = t + 1
                out_x[count] = s_pos[0] if d > 0 else z_pos[0]
            count += 1
            last = t + 1
            if t + 1 > late_from:
                late += 1
    return count, last, late


@nb.njit(cache=True, parallel=True)
def collision_summary_kernel(S0, Z0, SK, ZK, horizon, late_from,
                             cache, lo, ekey, kind, values, cum):
    """Per-replica collision count, last time and late count (rows are replicas)."""
    R = S0.shape[0]
    counts = np.zeros(R, dtype=np.int64)
    lasts = np.full(R, -1, dtype=np.int64)
    lates = np.zeros(R, dtype=np.int64)
    for r in nb.prange(R):
        s = S0[r].copy()
        z = Z0[r].copy()
        bt = np.empty(0, dtype=np.int64)
        bx = np.empty(0, dtype=np.int64)
        c, l, lt = _collide_one(s, z, 0, horizon, SK[r], ZK[r], late_from,
                                cache, lo, ekey, kind, values, cum, bt, bx)
        counts[r] = c
        lasts[r] = l
        lates[r] = lt
    return counts, lasts, lates


@nb.njit(cache=True, parallel=True)
def positions_at_kernel(S0, Z0, SK, ZK, grid, cache, lo, ekey, kind, values, cum):
    """Positions of every walker at each time in the increasing ``grid``.

    Returns arrays of shape (R, len(grid), d) and (R, len(grid), p).
    """
    R = S0.shape[0]
    d = S0.shape[1]
    p = Z0.shape[1]
    G = grid.shape[0]
    outs = np.empty((R, G, d), dtype=np.int64)
    outz = np.empty((R, G, p), dtype=np.int64)
    for r in nb.prange(R):
        s = S0[r].copy()
        z = Z0[r].copy()
        t = 0
        for g in range(G):
            _advance(s, z, t, grid[g] - t, SK[r], ZK[r], cache, lo, ekey, kind, values, cum)
            t = grid[g]
            for j in range(d):
                outs[r, g, j] = s[j]
            for i in range(p):
                outz[r, g, i] = z[i]
    return outs, outz


@nb.njit(cache=True)
def _hit_rwre(x, t0, key, target, cap, cache, lo, ekey, kind, values, cum):
    if x == target:
        return 0
    for k in range(cap):
        w = site_omega(x, cache, lo, ekey, kind, values, cum)
        x += 2 * np.int64(_rng.counter_uniform(key, t0 + k) < w) - 1
        if x == target:
            return k + 1
    return -1


@nb.njit(cache=True)
def _hit_srw(z, t0, key, target, start_k, stop_k):
    """First k in [start_k, stop_k] with Z_{t0+k} == target, walking from Z_{t0} = z."""
    for k in range(start_k):
        z += _rng.srw_increment(key, t0 + k)
    if z == target:
        return start_k
    for k in range(start_k, stop_k):
        z += _rng.srw_increment(key, t0 + k)
        if z == target:
            return k + 1
    return -1


@nb.njit(cache=True, parallel=True)
def hitting_times_kernel(x0, keys, target, cap, cache, lo, ekey, kind, values, cum):
    R = keys.shape[0]
    out = np.empty(R, dtype=np.int64)
    for r in nb.prange(R):
        out[r] = _hit_rwre(x0, 0, keys[r], target, cap, cache, lo, ekey, kind, values, cum)
    return out


@nb.njit(cache=True, parallel=True)
def return_counts_kernel(x0, keys, target, grid, cache, lo, ekey, kind, values, cum):
    """Number of walkers sitting at ``target`` at each grid time."""
    R = keys.shape[0]
    G = grid.shape[0]
    hits = np.zeros((R, G), dtype=np.int8)
    for r in nb.prange(R):
        x = x0
        t = 0
        key = keys[r]
        for g in range(G):
            while t < grid[g]:
                w = site_omega(x, cache, lo, ekey, kind, values, cum)
                x += 2 * np.int64(_rng.counter_uniform(key, t) < w) - 1
                t += 1
            if x == target:
                hits[r, g] = 1
    return hits.sum(axis=0)


# ---------------------------------------------------------------------------
# public operations


def _env_args(env: Environment):
    return env.kernel_args()


def step(state: EnsembleState, env: Environment) -> EnsembleState:
    """One lockstep move of every walker; returns a new state."""
    t = state.time
    omega = np.atleast_1d(env.omega_at(state.s_positions)) if state.d else np.zeros(0)
    s = state.s_positions.copy()
    for j in range(state.d):
        s[j] += rwre_increment(_rng.counter_uniform(state.s_keys[j], t), omega[j])
    z = state.z_positions.copy()
    for i in range(state.p):
        z[i] += _rng.srw_increment(state.z_keys[i], t)
    return replace(state, time=t + 1, s_positions=s, z_positions=z)


def advance(state: EnsembleState, env: Environment, nsteps: int) -> EnsembleState:
    """``nsteps`` lockstep moves, identical to calling :func:`step` repeatedly."""
    env = walk_window(env, state.positions(), nsteps)
    s = state.s_positions.copy()
    z = state.z_positions.copy()
    _advance(s, z, state.time, int(nsteps), state.s_keys, state.z_keys, *_env_args(env))
    return replace(state, time=state.time + int(nsteps), s_positions=s, z_positions=z)


def run_collisions(state: EnsembleState, env: Environment, horizon: int) -> CollisionRecord:
    """All times n in [state.time, horizon] at which every walker shares one site."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if state.d + state.p < 2:
        raise ValueError("collisions need at least two walkers")
    env = walk_window(env, state.positions(), horizon - state.time)
    args = _env_args(env)
    late_from = np.int64(horizon)
    buf_t = np.empty(0, dtype=np.int64)
    buf_x = np.empty(0, dtype=np.int64)
    count, _, _ = _collide_one(state.s_positions.copy(), state.z_positions.copy(), state.time,
                               horizon, state.s_keys, state.z_keys, late_from, *args,
                               buf_t, buf_x)
    buf_t = np.empty(count, dtype=np.int64)
    buf_x = np.empty(count, dtype=np.int64)
    _collide_one(state.s_positions.copy(), state.z_positions.copy(), state.time, horizon,
                 state.s_keys, state.z_keys, late_from, *args, buf_t, buf_x)
    return CollisionRecord(times=buf_t, locations=buf_x, truncated_at=int(horizon))


def hitting_time(state: EnsembleState, env: Environment, target: int, cap: int,
                 walker: int = 0):
    """Steps until RWRE walker ``walker`` first sits at ``target``; None past ``cap``."""
    if cap < 0:
        raise ValueError("cap must be nonnegative")
    x = int(state.s_positions[walker])
    env = walk_window(env, [x, target], cap)
    k = _hit_rwre(x, state.time, state.s_keys[walker], int(target), int(cap), *_env_args(env))
    return None if k < 0 else int(k)


def meeting_time(state: EnsembleState, level: int, N: int, walker: int = 0):
    """U = min{k >= N : Z_k = level} counted from the state's time; None if U > 2N."""
    if state.p < 1:
        raise ValueError("meeting time needs at least one simple random walker")
    if N < 0:
        raise ValueError("N must be nonnegative")
    k = _hit_srw(int(state.z_positions[walker]), state.time, state.z_keys[walker],
                 int(level), int(N), 2 * int(N))
    return None if k < 0 else int(k)


def srw_hitting_time(state: EnsembleState, target: int, cap: int, walker: int = 0):
    """T_Z(u): steps until simple walker ``walker`` first reaches ``target``."""
    return meeting_time_from(state, target, 0, cap, walker)


def meeting_time_from(state: EnsembleState, level: int, start_k: int, stop_k: int,
                      walker: int = 0):
    k = _hit_srw(int(state.z_positions[walker]), state.time, state.z_keys[walker],
                 int(level), int(start_k), int(stop_k))
    return None if k < 0 else int(k)


@nb.njit(cache=True)
def _keys_grid(seed, replicas, n_walkers):
    out = np.empty((replicas.shape[0], n_walkers), dtype=np.uint64)
    for r in range(replicas.shape[0]):
        for w in range(n_walkers):
            out[r, w] = _rng._walker_key(seed, replicas[r], np.uint64(w))
    return out


def replica_keys(master_seed: int, replica_ids, n_walkers: int) -> np.ndarray:
    """(R, n_walkers) array of stream keys, matching :func:`init_ensemble`."""
    ids = np.asarray(replica_ids, dtype=np.uint64)
    return _keys_grid(_rng._u64(master_seed), ids, n_walkers)
