"""Exact quenched distributions by forward iteration of the transition kernel.

All sweeps run on a finite window with absorbing edges: mass that would
leave the window is moved to ``leak`` and never returns, so window results
are lower bounds that become exact when the window is wide enough
(halfwidth n + 1 for an n-step sweep).  Every sweep checks
``sum + leak == 1`` after each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .environment import Environment
from .errors import ConservationError, WindowTooSmall
from .walkers import same_parity

CONSERVATION_TOL = 1e-12
LEAK_TOL = 1e-9
MAX_EXACT_N = 1 << 14


@dataclass(frozen=True)
class ExactMarginal:
    n: int
    support_lo: int
    probs: np.ndarray
    leak: float
    max_conservation_error: float = 0.0

    @property
    def support_hi(self) -> int:
        return self.support_lo + len(self.probs) - 1

    def prob(self, k: int) -> float:
        i = k - self.support_lo
        return float(self.probs[i]) if 0 <= i < len(self.probs) else 0.0

    def as_dict(self, drop_zeros=True) -> dict:
        return {self.support_lo + i: float(p) for i, p in enumerate(self.probs)
                if p != 0 or not drop_zeros}


@nb.njit(cache=True)
def _step(p, q, up, parity):
    """One forward step from p into q; returns the mass that left the window."""
    L = p.shape[0]
    q[:] = 0.0
    out = 0.0
    for k in range(parity, L, 2):
        m = p[k]
        if m == 0.0:
            continue
        a = m * up[k]
        b = m - a
        if k + 1 < L:
            q[k + 1] += a
        else:
            out += a
        if k >= 1:
            q[k - 1] += b
        else:
            out += b
    return out


@nb.njit(cache=True)
def _kahan_total(p, leak):
    s = 0.0
    c = 0.0
    for k in range(p.shape[0]):
        y = p[k] - c
        t = s + y
        c = (t - s) - y
        s = t
    return s + leak


@nb.njit(cache=True)
def _sweep_snapshots(p0, up, start_parity, times, check, tol):
    """Advance to each time in ``times``; return snapshots, leaks and max drift."""
    L = p0.shape[0]
    p = p0.copy()
    q = np.empty(L)
    snaps = np.empty((times.shape[0], L))
    leaks = np.empty(times.shape[0])
    leak = 0.0
    drift = 0.0
    t = 0
    for g in range(times.shape[0]):
        while t < times[g]:
            leak += _step(p, q, up, (start_parity + t) % 2)
            p, q = q, p
            t += 1
            if check:
                err = abs(_kahan_total(p, leak) - 1.0)
                # written so that NaN counts as a violation
                if not err <= drift:
                    drift = err
                if not err <= tol:
                    return snaps[:g], leaks[:g], drift, t
        snaps[g] = p
        leaks[g] = leak
    return snaps, leaks, drift, -1


@nb.njit(cache=True)
def _sweep_site(p0, up, start_parity, n_max, site, absorb, check, tol):
    """Track one site for n = 0..n_max: its mass, or absorbed mass if ``absorb``."""
    L = p0.shape[0]
    p = p0.copy()
    q = np.empty(L)
    rec = np.empty(n_max + 1)
    leak = 0.0
    absorbed = 0.0
    drift = 0.0
    if absorb:
        absorbed = p[site]
        p[site] = 0.0
        rec[0] = absorbed
    else:
        rec[0] = p[site]
    for t in range(n_max):
        leak += _step(p, q, up, (start_parity + t) % 2)
        p, q = q, p
        if absorb:
            absorbed += p[site]
            p[site] = 0.0
            rec[t + 1] = absorbed
        else:
            rec[t + 1] = p[site]
        if check:
            err = abs(_kahan_total(p, leak + absorbed) - 1.0)
            if not err <= drift:
                drift = err
            if not err <= tol:
                return rec, leak, drift, t + 1
    return rec, leak, drift, -1


def _halfwidth(n_max: int, window_halfwidth) -> int:
    if window_halfwidth in (None, "auto"):
        if n_max > MAX_EXACT_N:
            raise ValueError(
                f"n={n_max} exceeds {MAX_EXACT_N}; pass window_halfwidth and accept tracked leak")
        return n_max + 1
    h = int(window_halfwidth)
    if h < 1:
        raise ValueError("window_halfwidth must be positive")
    return h


def _up_probs(env: Environment | None, lo: int, hi: int, walker: str) -> np.ndarray:
    if walker == "srw":
        return np.full(hi - lo + 1, 0.5)
    if walker != "rwre":
        raise ValueError(f"walker must be 'rwre' or 'srw', got {walker!r}")
    if env is None:
        raise ValueError("an environment is required for the RWRE kernel")
    env = env.extend(min(lo, 0), max(hi, 0))
    return np.ascontiguousarray(env.omega[lo - env.lo:hi - env.lo + 1])


def _raise_drift(at, drift):
    raise ConservationError(f"sum + leak drifted by {drift:.3e} at step {at}")


def marginal_series(env, start: int, times, window_halfwidth=None, walker: str = "rwre",
                    strict: bool = False, check: bool = True) -> list[ExactMarginal]:
    """Exact marginals P(S_n = .) started from ``start`` for every n in ``times``."""
    times = np.asarray(sorted(int(t) for t in times), dtype=np.int64)
    if times.size and times[0] < 0:
        raise ValueError("times must be nonnegative")
    n_max = int(times[-1]) if times.size else 0
    h = _halfwidth(n_max, window_halfwidth)
    lo, hi = start - h, start + h
    up = _up_probs(env, lo, hi, walker)
    p0 = np.zeros(hi - lo + 1)
    p0[start - lo] = 1.0
    snaps, leaks, drift, bad = _sweep_snapshots(p0, up, (start - lo) % 2, times, check,
                                               CONSERVATION_TOL)
    if bad >= 0:
        _raise_drift(bad, drift)
    out = []
    for n, snap, leak in zip(times, snaps, leaks):
        if strict and leak > LEAK_TOL:
            raise WindowTooSmall(f"leak {leak:.3e} at n={n} with halfwidth {h}")
        out.append(ExactMarginal(int(n), lo, snap, float(leak), float(drift)))
    return out


def exact_marginal(env, start: int, n: int, window_halfwidth=None, walker: str = "rwre",
                   strict: bool = False) -> ExactMarginal:
    """n-fold push-forward of the point mass at ``start``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return marginal_series(env, start, [n], window_halfwidth, walker, strict)[0]


def _product_sum(marginals) -> float:
    lo = max(m.support_lo for m in marginals)
    hi = min(m.support_hi for m in marginals)
    if hi < lo:
        return 0.0
    prod = np.ones(hi - lo + 1)
    for m in marginals:
        prod *= m.probs[lo - m.support_lo:hi - m.support_lo + 1]
    return float(prod.sum())


def collision_prob_series(env, s_starts, z_starts, times, window_halfwidth=None,
                          strict: bool = False) -> tuple[np.ndarray, float]:
    """P(all walkers at one site at time n) for each n, plus the max conservation drift."""
    s_starts = [int(x) for x in s_starts]
    z_starts = [int(z) for z in z_starts]
    times = sorted(int(t) for t in times)
    if not same_parity(s_starts, z_starts):
        return np.zeros(len(times)), 0.0
    series = {}
    for kind, starts in (("rwre", s_starts), ("srw", z_starts)):
        for x in set(starts):
            series[(kind, x)] = marginal_series(env, x, times, window_halfwidth, kind, strict)
    keys = [("rwre", x) for x in s_starts] + [("srw", z) for z in z_starts]
    drift = max(m[0].max_conservation_error for m in series.values())
    out = np.array([_product_sum([series[k][g] for k in keys]) for g in range(len(times))])
    return out, float(drift)


def exact_collision_prob(env, s_starts, z_starts, n: int, window_halfwidth=None,
                         strict: bool = False) -> float:
    """sum_k prod_j P(S^j_n = k) prod_i P(Z^i_n = k) from independent exact marginals."""
    return float(collision_prob_series(env, s_starts, z_starts, [n], window_halfwidth,
                                       strict)[0][0])


@dataclass(frozen=True)
class SiteSeries:
    values: np.ndarray
    leak: float
    max_conservation_error: float


def _site_sweep(env, start, site, n_max, window_halfwidth, absorb, walker="rwre"):
    h = _halfwidth(n_max, window_halfwidth)
    lo, hi = start - h, start + h
    if not lo <= site <= hi:
        return SiteSeries(np.zeros(n_max + 1), 0.0, 0.0)
    up = _up_probs(env, lo, hi, walker)
    p0 = np.zeros(hi - lo + 1)
    p0[start - lo] = 1.0
    rec, leak, drift, bad = _sweep_site(p0, up, (start - lo) % 2, int(n_max), site - lo,
                                        absorb, True, CONSERVATION_TOL)
    if bad >= 0:
        _raise_drift(bad, drift)
    return SiteSeries(rec, float(leak), float(drift))


def return_probability_series(env, b: int, k_max: int, window_halfwidth=None) -> SiteSeries:
    """P^b[S_k = b] for k = 0..k_max in one sweep."""
    return _site_sweep(env, b, b, k_max, window_halfwidth, absorb=False)


def exact_return_probability(env, b: int, k: int, window_halfwidth=None) -> float:
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k % 2:
        return 0.0
    return float(return_probability_series(env, b, k, window_halfwidth).values[k])


def exact_hitting_cdf(env, start: int, target: int, n_max: int, window_halfwidth=None,
                      walker: str = "rwre") -> SiteSeries:
    """P^start[tau(target) <= n] for n = 0..n_max, by absorbing mass at the target."""
    return _site_sweep(env, start, target, n_max, window_halfwidth, absorb=True, walker=walker)
