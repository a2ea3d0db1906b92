"""Ladder epochs, excursion heights and the factorial schedule N_i, f_i.

Indexing: ``e`` and ``H`` are indexed from 0 exactly like the ladder
epochs; ``sigma`` and ``b`` are indexed from schedule index ``i = 1``, so
``sigma[i - 1]`` holds sigma(i).  The schedule arrays ``log_N`` and ``f``
follow the same ``i - 1`` convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from decimal import ROUND_FLOOR, ROUND_HALF_EVEN, Decimal, localcontext

import numba as nb
import numpy as np

from .environment import Environment
from .errors import EpsilonOutOfRange, TheoremRegimeWarning


@dataclass(frozen=True)
class Schedule:
    C0: float
    epsilon: float
    kappa: float
    log_N: np.ndarray
    N_exact: tuple[int, ...]
    f: np.ndarray
    theorem_regime: bool = True

    @property
    def i_max(self) -> int:
        return len(self.log_N)

    @property
    def i_reachable(self) -> int:
        """Largest i whose N_i is known exactly (fits under the horizon cap)."""
        return len(self.N_exact)

    def N(self, i: int) -> int:
        return self.N_exact[i - 1]

    def f_of(self, i: int) -> float:
        return float(self.f[i - 1])


def default_epsilon(kappa: float) -> float:
    return (1.0 - kappa) / (4.0 * kappa)


def _exact_N(C0: float, epsilon: float, kappa: float, i: int, digits: int) -> int:
    """floor(C0 * i^(1+eps) * (i!)^((1+eps)/kappa)) in decimal arithmetic."""
    with localcontext() as ctx:
        ctx.prec = digits + 40
        one_eps = Decimal(1) + Decimal(epsilon)
        log_val = (Decimal(C0).ln() + one_eps * Decimal(i).ln()
                   + one_eps / Decimal(kappa) * Decimal(math.factorial(i)).ln())
        val = log_val.exp()
        # ln/exp round-off can land just below an exact integer (e.g. 2 * 4^1.5 * 24^6)
        nearest = val.to_integral_value(rounding=ROUND_HALF_EVEN)
        if abs(val - nearest) <= val.scaleb(-(digits + 20)):
            return int(nearest)
        return int(val.to_integral_value(rounding=ROUND_FLOOR))


def make_schedule(kappa: float, epsilon="auto", C0: float = 2.0, i_max: int = 30,
                  horizon_cap: int = 10**7) -> Schedule:
    """Build N_i and f_i for i = 1..i_max.

    ``log_N`` is kept for every i; ``N_exact`` only for the prefix with
    N_i <= horizon_cap, since deeper levels cannot be simulated anyway.
    """
    if not kappa > 0:
        raise EpsilonOutOfRange(f"kappa must be positive, got {kappa}")
    if C0 <= 1:
        raise ValueError(f"C0 must exceed 1, got {C0}")
    if epsilon in (None, "auto"):
        epsilon = default_epsilon(kappa)
    epsilon = float(epsilon)
    upper = (1.0 - kappa) / (2.0 * kappa)
    if not 0.0 < epsilon < upper:
        raise EpsilonOutOfRange(
            f"epsilon={epsilon} outside (0, (1-kappa)/(2 kappa)) = (0, {upper:.6g})")
    regime = kappa < 0.5
    if not regime:
        warnings.warn(f"kappa={kappa} is outside 0 < kappa < 1/2", TheoremRegimeWarning,
                      stacklevel=2)

    idx = np.arange(1, i_max + 1, dtype=np.float64)
    lgam = np.array([math.lgamma(i + 1) for i in range(1, i_max + 1)])
    log_N = math.log(C0) + (1 + epsilon) * np.log(idx) + (1 + epsilon) / kappa * lgam

    exact = []
    log_cap = math.log(horizon_cap) if horizon_cap > 0 else -math.inf
    for i in range(1, i_max + 1):
        if log_N[i - 1] > log_cap + 1.0:
            break
        n = _exact_N(C0, epsilon, kappa, i, digits=int(log_N[i - 1] / math.log(10)) + 2)
        if n > horizon_cap:
            break
        exact.append(n)

    f = log_N - math.log(C0) - (1 + epsilon) * np.log(idx)
    for i, n in enumerate(exact, start=1):
        # use the floored integer where we have it
        log_N[i - 1] = math.log(n) if n > 0 else -math.inf
        f[i - 1] = math.log(n / C0) - (1 + epsilon) * math.log(i)
    log_N.flags.writeable = False
    f.flags.writeable = False
    return Schedule(C0=float(C0), epsilon=epsilon, kappa=float(kappa), log_N=log_N,
                    N_exact=tuple(exact), f=f, theorem_regime=regime)


@dataclass(frozen=True)
class LadderStructure:
    e: np.ndarray
    H: np.ndarray
    V_e: np.ndarray
    sigma: np.ndarray = None
    b: np.ndarray = None

    @property
    def n_excursions(self) -> int:
        return len(self.H)


@nb.njit(cache=True)
def _ladder_scan(v, x_max):
    e = np.empty(x_max + 1, dtype=np.int64)
    h = np.empty(x_max + 1)
    e[0] = 0
    n = 1
    base = v[0]
    peak = v[0]
    for k in range(1, x_max + 1):
        vk = v[k]
        if vk <= base:
            h[n - 1] = peak - base
            e[n] = k
            n += 1
            base = vk
            peak = vk
        elif vk > peak:
            peak = vk
    return e[:n].copy(), h[:n - 1].copy()


def ladder_decomposition(env: Environment, x_max: int) -> LadderStructure:
    """Weak descending ladder epochs of V on [0, x_max] and the completed heights.

    The excursion still open at ``x_max`` is dropped.
    """
    if x_max < 0:
        raise ValueError("x_max must be nonnegative")
    env = env.extend(0, x_max)
    v = env.potential_cache[-env.lo:-env.lo + x_max + 1]
    e, h = _ladder_scan(v, x_max)
    return LadderStructure(e=e, H=h, V_e=v[e].copy())


@nb.njit(cache=True)
def _sigma_scan(h, f):
    sig = np.empty(f.shape[0], dtype=np.int64)
    k = 0
    n = 0
    for i in range(f.shape[0]):
        while k < h.shape[0] and h[k] < f[i]:
            k += 1
        if k == h.shape[0]:
            break
        sig[n] = k
        n += 1
        k += 1
    return sig[:n].copy()


def sigma_and_b(ladder: LadderStructure, schedule) -> LadderStructure:
    """Fill sigma(i) and b_i = e_sigma(i) for every i locatable in the ladder.

    ``schedule`` may be a :class:`Schedule` or a plain sequence f_1, f_2, ...
    A result shorter than the schedule means the window ran out.
    """
    f = schedule.f if isinstance(schedule, Schedule) else np.asarray(schedule, float)
    sig = _sigma_scan(np.asarray(ladder.H, dtype=np.float64), np.asarray(f, dtype=np.float64))
    return replace(ladder, sigma=sig, b=ladder.e[sig])


@dataclass(frozen=True)
class BBoundCheck:
    ok: np.ndarray
    margin: np.ndarray


def check_b_bound(ladder: LadderStructure, schedule, kappa: float | None = None) -> BBoundCheck:
    """Compare b_i with i * exp(kappa f_i); margin is log b_i - (log i + kappa f_i)."""
    if ladder.b is None:
        raise ValueError("ladder has no sigma/b; call sigma_and_b first")
    f = schedule.f if isinstance(schedule, Schedule) else np.asarray(schedule, float)
    if kappa is None:
        kappa = schedule.kappa
    n = len(ladder.b)
    i = np.arange(1, n + 1, dtype=np.float64)
    log_bound = np.log(i) + kappa * np.asarray(f[:n], dtype=np.float64)
    with np.errstate(divide="ignore"):
        margin = np.log(ladder.b.astype(np.float64)) - log_bound
    ok = ladder.b <= i * np.exp(kappa * np.asarray(f[:n], dtype=np.float64))
    return BBoundCheck(ok=ok, margin=margin)
