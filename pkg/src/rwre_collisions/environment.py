"""Environment laws, the Kesten exponent, and realised environments on Z.

A law is the distribution of a single site probability ``omega_0``.  An
:class:`Environment` is a window of an i.i.d. field drawn from a law, in
which site ``x`` is a pure function of ``(seed, x)``; windows can therefore
be extended at any time without disturbing values already drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _rng
from .errors import (
    DegenerateLaw,
    EllipticityViolated,
    LawError,
    NoRootBelowCap,
    NotTransientRight,
    ProbSumMismatch,
    QuadratureNotConverged,
    SupportOutsideUnitInterval,
)

TWO_POINT = "two_point"
FINITE_SUPPORT = "finite_support"
UNIFORM_INTERVAL = "uniform_interval"
KINDS = (TWO_POINT, FINITE_SUPPORT, UNIFORM_INTERVAL)

# integer codes understood by the numba kernels
KIND_DISCRETE = 0
KIND_UNIFORM = 1

KAPPA_CAP = 64.0
KAPPA_TOL = 1e-12
QUAD_TOL = 1e-13
PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EnvironmentLaw:
    kind: str
    atoms: tuple[tuple[float, float], ...] = ()
    bounds: tuple[float, float] | None = None
    epsilon0: float = field(default=0.0)

    @property
    def is_discrete(self) -> bool:
        return self.kind != UNIFORM_INTERVAL

    @property
    def non_arithmetic(self) -> bool:
        return self.kind == UNIFORM_INTERVAL

    def support(self) -> tuple[float, float]:
        if self.is_discrete:
            vals = [v for v, p in self.atoms if p > 0]
            return min(vals), max(vals)
        return self.bounds

    def kernel_params(self):
        """(kind code, values, cumulative probabilities) for the numba kernels."""
        if self.is_discrete:
            vals = np.array([v for v, _ in self.atoms], dtype=np.float64)
            cum = np.cumsum([p for _, p in self.atoms])
            cum[-1] = 1.0
            return KIND_DISCRETE, vals, cum.astype(np.float64)
        lo, hi = self.bounds
        return KIND_UNIFORM, np.array([lo, hi], dtype=np.float64), np.zeros(0)

    def to_descriptor(self) -> dict:
        if self.is_discrete:
            return {"kind": self.kind, "atoms": [[v, p] for v, p in self.atoms]}
        return {"kind": self.kind, "lo": self.bounds[0], "hi": self.bounds[1]}


def parse_law_string(text: str) -> dict:
    """Parse the compact CLI form into a descriptor.

    ``two_point:0.75@0.6,0.25@0.4`` (value@prob pairs) or
    ``uniform_interval:0.6,0.75``.
    """
    try:
        kind, _, body = text.partition(":")
        kind = kind.strip()
        if kind == UNIFORM_INTERVAL:
            lo, hi = (float(t) for t in body.split(","))
            return {"kind": kind, "lo": lo, "hi": hi}
        atoms = []
        for tok in body.split(","):
            v, _, p = tok.partition("@")
            atoms.append([float(v), float(p) if p else 1.0])
        return {"kind": kind, "atoms": atoms}
    except ValueError as exc:
        raise LawError(f"malformed law string {text!r}: {exc}") from None


def make_law(desc) -> EnvironmentLaw:
    """Validate a law descriptor (dict, compact string, or law) and build the law."""
    if isinstance(desc, EnvironmentLaw):
        return desc
    if isinstance(desc, str):
        desc = parse_law_string(desc)
    if not isinstance(desc, dict) or "kind" not in desc:
        raise LawError(f"law descriptor must be a table with a 'kind' key, got {desc!r}")
    kind = desc["kind"]
    if kind not in KINDS:
        raise LawError(f"unknown law kind {kind!r}; expected one of {KINDS}")

    if kind == UNIFORM_INTERVAL:
        extra = set(desc) - {"kind", "lo", "hi"}
        if extra:
            raise LawError(f"unknown keys in uniform_interval law: {sorted(extra)}")
        try:
            lo, hi = float(desc["lo"]), float(desc["hi"])
        except (KeyError, TypeError, ValueError):
            raise LawError("uniform_interval needs numeric 'lo' and 'hi'") from None
        if not (0.0 < lo < 1.0 and 0.0 < hi < 1.0):
            raise SupportOutsideUnitInterval(f"bounds ({lo}, {hi}) not inside (0, 1)")
        if not lo < hi:
            raise LawError(f"uniform_interval needs lo < hi, got ({lo}, {hi})")
        eps0 = min(lo, 1.0 - hi)
        if eps0 <= 0:
            raise EllipticityViolated(f"epsilon0 = {eps0}")
        return EnvironmentLaw(kind, bounds=(lo, hi), epsilon0=eps0)

    extra = set(desc) - {"kind", "atoms"}
    if extra:
        raise LawError(f"unknown keys in {kind} law: {sorted(extra)}")
    try:
        atoms = tuple((float(v), float(p)) for v, p in desc["atoms"])
    except (KeyError, TypeError, ValueError):
        raise LawError("discrete law needs 'atoms' as [[value, prob], ...]") from None
    if not atoms:
        raise LawError("discrete law has no atoms")
    if kind == TWO_POINT and len(atoms) > 2:
        raise LawError(f"two_point law takes at most 2 atoms, got {len(atoms)}")
    for v, p in atoms:
        if not 0.0 < v < 1.0:
            raise SupportOutsideUnitInterval(f"atom value {v} not in (0, 1)")
        if p < 0 or not math.isfinite(p):
            raise ProbSumMismatch(f"atom probability {p} is not a probability")
    total = math.fsum(p for _, p in atoms)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbSumMismatch(f"atom probabilities sum to {total!r}")
    vals = [v for v, p in atoms if p > 0]
    eps0 = min(min(vals), 1.0 - max(vals))
    if eps0 <= 0:
        raise EllipticityViolated(f"epsilon0 = {eps0}")
    return EnvironmentLaw(kind, atoms=atoms, epsilon0=eps0)


def log_rho(omega):
    """log((1 - omega) / omega), written so that log_rho(1 - w) == -log_rho(w) exactly."""
    return np.log1p(-omega) - np.log(omega) if np.ndim(omega) else (
        math.log1p(-omega) - math.log(omega))


# ---------------------------------------------------------------------------
# moment transform and Kesten exponent


def _adaptive_simpson(f, a, b, tol, max_depth=48):
    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureNotConverged(
                f"adaptive Simpson failed on [{a}, {b}] (delta={delta:.3e})")
        return (recurse(a, m, fa, flm, fm, left, tol / 2, depth + 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2, depth + 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, b - a)
    # large moments are only needed to relative accuracy
    tol = max(tol, 1e-15 * abs(whole))
    # split once so that a symmetric integrand cannot fool the first test
    m = 0.5 * (a + b)
    return (recurse(a, m, fa, f(0.5 * (a + m)), fm,
                    simpson(fa, f(0.5 * (a + m)), fm, m - a), tol / 2, 1)
            + recurse(m, b, fm, f(0.5 * (m + b)), fb,
                      simpson(fm, f(0.5 * (m + b)), fb, b - m), tol / 2, 1))


def rho_moment(law: EnvironmentLaw, s: float) -> float:
    """E[rho_0 ** s], the moment transform whose positive root of 1 is kappa."""
    if not math.isfinite(s):
        raise ValueError(f"s must be finite, got {s}")
    if s == 0:
        return 1.0
    if law.is_discrete:
        return math.fsum(p * ((1.0 - v) / v) ** s for v, p in law.atoms)
    lo, hi = law.bounds
    width = hi - lo
    return _adaptive_simpson(lambda w: ((1.0 - w) / w) ** s / width, lo, hi, QUAD_TOL)


def mean_log_rho(law: EnvironmentLaw) -> float:
    if law.is_discrete:
        return math.fsum(p * log_rho(v) for v, p in law.atoms)
    lo, hi = law.bounds
    # antiderivative of log(1-w) - log(w)
    def prim(w):
        return -(1 - w) * math.log(1 - w) - w * math.log(w)
    return (prim(hi) - prim(lo)) / (hi - lo)


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    residual: float
    mean_log_rho: float


def solve_kappa(law: EnvironmentLaw) -> KappaResult:
    """Positive root of E[rho_0 ** s] = 1, by doubling then bisection."""
    law = make_law(law)
    if law.is_discrete and all(log_rho(v) == 0.0 for v, p in law.atoms if p > 0):
        raise DegenerateLaw("rho_0 == 1 almost surely; every s solves the equation")
    m = mean_log_rho(law)
    if m >= 0:
        raise NotTransientRight(f"E[log rho_0] = {m:.6g} >= 0")

    lo, hi = 0.0, 1.0
    while True:
        val = rho_moment(law, hi)
        if abs(val - 1.0) == 0.0:
            return KappaResult(hi, 0.0, m)
        if val > 1.0:
            break
        lo = hi
        hi *= 2.0
        if hi > KAPPA_CAP:
            raise NoRootBelowCap(
                f"E[rho_0^s] <= 1 for all s <= {KAPPA_CAP:g} (law is ballistic, kappa > cap)")

    best, best_res = hi, abs(val - 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = rho_moment(law, mid)
        res = abs(val - 1.0)
        if res < best_res:
            best, best_res = mid, res
        if res == 0.0:
            break
        if val > 1.0:
            hi = mid
        else:
            lo = mid
        if best_res <= KAPPA_TOL * 1e-3 and hi - lo <= 4 * math.ulp(hi):
            break
    if best_res > KAPPA_TOL:
        raise QuadratureNotConverged(f"bisection stalled with residual {best_res:.3e}")
    return KappaResult(best, best_res, m)


# ---------------------------------------------------------------------------
# realised environments


@nb.njit(cache=True, inline="always")
def omega_from_uniform(u, kind, values, cum):
    if kind == KIND_UNIFORM:
        return values[0] + (values[1] - values[0]) * u
    for j in range(cum.shape[0]):
        if u < cum[j]:
            return values[j]
    return values[cum.shape[0] - 1]


@nb.njit(cache=True)
def _draw_omega(key, x, kind, values, cum):
    return omega_from_uniform(_rng.counter_uniform(key, x), kind, values, cum)


@nb.njit(cache=True)
def site_omega(x, cache, lo, key, kind, values, cum):
    """omega_x from the cached window, or drawn afresh outside it."""
    # kept tiny so LLVM inlines it into the walk loops
    i = x - lo
    if i >= 0 and i < cache.shape[0]:
        return cache[i]
    return _draw_omega(key, x, kind, values, cum)


@nb.njit(cache=True)
def _fill_omega(key, lo, hi, kind, values, cum):
    out = np.empty(hi - lo + 1)
    for x in range(lo, hi + 1):
        out[x - lo] = omega_from_uniform(_rng.counter_uniform(key, x), kind, values, cum)
    return out


@nb.njit(cache=True)
def _potential_from_logrho(lr, lo, hi):
    # double-double prefix sums outward from 0: V(x) is the correctly rounded
    # value of the exact sum, so lattice laws produce exact ties
    v = np.zeros(hi - lo + 1)
    s_hi, s_lo = 0.0, 0.0
    for x in range(1, hi + 1):
        a = lr[x - lo]
        t = s_hi + a
        bp = t - s_hi
        err = (s_hi - (t - bp)) + (a - bp)
        s_lo += err
        s_hi = t + s_lo
        s_lo = s_lo - (s_hi - t)
        v[x - lo] = s_hi
    s_hi, s_lo = 0.0, 0.0
    for x in range(-1, lo - 1, -1):
        a = -lr[x + 1 - lo]
        t = s_hi + a
        bp = t - s_hi
        err = (s_hi - (t - bp)) + (a - bp)
        s_lo += err
        s_hi = t + s_lo
        s_lo = s_lo - (s_hi - t)
        v[x - lo] = s_hi
    return v


class Environment:
    """An immutable realised window ``[lo, hi]`` of the i.i.d. field omega."""

    def __init__(self, law: EnvironmentLaw, seed: int, window: tuple[int, int], pinned=None):
        lo, hi = int(window[0]), int(window[1])
        if not lo <= 0 <= hi:
            raise ValueError(f"window must contain 0, got ({lo}, {hi})")
        self.law = law
        self.seed = int(seed)
        self.lo, self.hi = lo, hi
        self.key = _rng.env_key(seed)
        kind, values, cum = law.kernel_params()
        self._kparams = (kind, values, cum)
        omega = _fill_omega(self.key, lo, hi, kind, values, cum)
        self._pinned = pinned
        self._wider = None
        if pinned is not None:
            p_lo, p_vals = pinned
            if p_lo < lo or p_lo + len(p_vals) - 1 > hi:
                raise ValueError("pinned sites must lie inside the window")
            omega[p_lo - lo:p_lo - lo + len(p_vals)] = p_vals
        pot = _potential_from_logrho(log_rho(omega), lo, hi)
        omega.flags.writeable = False
        pot.flags.writeable = False
        self.omega = omega
        self.potential_cache = pot

    @property
    def window(self) -> tuple[int, int]:
        return self.lo, self.hi

    def kernel_args(self):
        """Arguments consumed by :func:`site_omega` inside numba kernels."""
        kind, values, cum = self._kparams
        return self.omega, self.lo, self.key, kind, values, cum

    def covers(self, lo: int, hi: int) -> bool:
        return self.lo <= lo and hi <= self.hi

    def extend(self, lo: int, hi: int) -> "Environment":
        """Environment over the union of the current window and ``[lo, hi]``."""
        if self.covers(lo, hi):
            return self
        # repeated callers (one hitting query per replica) reuse the last extension
        wider = self._wider
        if wider is not None and wider.covers(lo, hi):
            return wider
        wider = Environment(self.law, self.seed, (min(lo, self.lo), max(hi, self.hi)),
                            self._pinned)
        self._wider = wider
        return wider

    @classmethod
    def from_values(cls, omega_by_site: dict, law=None, seed: int = 0) -> "Environment":
        """Environment with the given omega at the given sites, ``law`` elsewhere.

        Sites between the given ones that are not listed are drawn from the law,
        which defaults to ``two_point:0.5@1``.
        """
        law = make_law(law or {"kind": TWO_POINT, "atoms": [[0.5, 1.0]]})
        sites = sorted(int(x) for x in omega_by_site)
        lo, hi = min(sites[0], 0), max(sites[-1], 0)
        base = _fill_omega(_rng.env_key(seed), sites[0], sites[-1], *law.kernel_params())
        for x, w in omega_by_site.items():
            if not 0.0 < w < 1.0:
                raise SupportOutsideUnitInterval(f"omega {w} at site {x} not in (0, 1)")
            base[int(x) - sites[0]] = float(w)
        return cls(law, seed, (lo, hi), (sites[0], base))

    def omega_at(self, x):
        """omega at site(s) x; sites outside the window are drawn on demand."""
        x = np.asarray(x, dtype=np.int64)
        inside = (x >= self.lo) & (x <= self.hi)
        if np.all(inside):
            out = self.omega[x - self.lo]
        else:
            kind, values, cum = self._kparams
            out = np.array([site_omega(int(xx), self.omega, self.lo, self.key,
                                       kind, values, cum) for xx in x.ravel()])
            out = out.reshape(x.shape)
        return out if out.ndim else float(out)

    def V(self, x) -> float:
        return potential(self, x)

    def __eq__(self, other):
        return (isinstance(other, Environment) and self.law == other.law
                and self.seed == other.seed and self.window == other.window
                and np.array_equal(self.omega, other.omega))

    def __repr__(self):
        return f"Environment({self.law.kind}, seed={self.seed}, window={self.window})"


def sample_environment(law, seed: int, window: tuple[int, int]) -> Environment:
    return Environment(make_law(law), seed, window)


def potential(env: Environment, x: int) -> float:
    """V(x); extends the window when x falls outside it."""
    x = int(x)
    if not env.lo <= x <= env.hi:
        env = env.extend(min(x, 0), max(x, 0))
    return float(env.potential_cache[x - env.lo])
