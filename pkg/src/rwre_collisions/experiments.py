"""Monte Carlo and DP probes of the collision regimes.

Almost-sure, infinite-time statements cannot be checked by simulation.
Every report therefore carries :data:`PROXY_NOTE` and states results as
finite-horizon statistics with sample sizes and standard errors.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, _rng
from .environment import Environment, make_law, sample_environment, solve_kappa
from .errors import (
    ArithmeticLawWarning,
    ConfigError,
    DegenerateFit,
    KappaError,
    ParityWarning,
    RangeError,
    ScheduleOutOfReach,
)
from .landscape import Schedule, ladder_decomposition, sigma_and_b
from .oracle import (
    MAX_EXACT_N,
    collision_prob_series,
    exact_hitting_cdf,
    return_probability_series,
)
from .walkers import (
    collision_summary_kernel,
    hitting_times_kernel,
    positions_at_kernel,
    replica_keys,
    return_counts_kernel,
    same_parity,
    walk_window,
)

SCHEMA_VERSION = "1"
BUILD_ID = f"rwre_collisions-{__version__}"
PROXY_NOTE = ("finite-horizon proxy: almost-sure infinite-time statements are not "
              "reproducible by simulation; all figures are truncated at the stated horizon")
PROBES = ("collisions", "regime", "exponent", "return", "hitting", "srw-decay", "lil")

# labels for derive_seed
_ENV, _WALK, _BOOT = 1, 2, 3


@dataclass
class ExperimentConfig:
    law: dict = field(default_factory=lambda: {"kind": "two_point",
                                               "atoms": [[0.75, 0.6], [0.25, 0.4]]})
    d: int = 1
    p: int = 1
    s_starts: tuple = (0,)
    z_starts: tuple = (0,)
    horizon: int = 10**6
    replicas: int = 200
    environments: int = 20
    master_seed: int = 0
    # probe-specific
    kappa: float | None = None
    epsilon: float | str = "auto"
    C0: float = 2.0
    horizon_cap: int = 10**7
    i_list: tuple = (1, 2, 3)
    n_grid: tuple | None = None
    envelope_constant: float = 2.0
    bootstrap: int = 2000
    mode: str = "dp"
    x_start: int = 0
    window_halfwidth: int | None = None

    def __post_init__(self):
        self.s_starts = tuple(int(x) for x in self.s_starts)
        self.z_starts = tuple(int(z) for z in self.z_starts)
        if self.n_grid is not None:
            self.n_grid = tuple(int(n) for n in self.n_grid)
        self.i_list = tuple(int(i) for i in self.i_list)

    def validate(self):
        for name in ("horizon", "replicas", "environments"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d < 0 or self.p < 0:
            raise ConfigError("d and p must be nonnegative")
        if len(self.s_starts) != self.d or len(self.z_starts) != self.p:
            raise ConfigError(f"need {self.d} RWRE and {self.p} SRW starts, got "
                              f"{len(self.s_starts)} and {len(self.z_starts)}")
        if self.mode not in ("dp", "mc"):
            raise ConfigError(f"mode must be 'dp' or 'mc', got {self.mode!r}")
        make_law(self.law)
        return self

    @property
    def parity_ok(self) -> bool:
        return same_parity(self.s_starts, self.z_starts)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("s_starts", "z_starts", "i_list", "n_grid"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out


@dataclass
class RunReport:
    probe: str
    config: dict
    seed: int
    estimates: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    note: str = PROXY_NOTE
    arrays: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "build_id": BUILD_ID,
            "probe": self.probe,
            "note": self.note,
            "seed": self.seed,
            "config": self.config,
            "estimates": self.estimates,
            "tables": self.tables,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _estimate(value, se=None, n=None, **extra):
    out = {"value": value, "se": se, "n": n}
    out.update(extra)
    return out


def _kappa_info(law) -> dict:
    try:
        res = solve_kappa(law)
        return {"kappa": res.kappa, "residual": res.residual, "mean_log_rho": res.mean_log_rho}
    except KappaError as exc:
        return {"kappa": None, "error": f"{type(exc).__name__}: {exc}"}


def environment_for(cfg: ExperimentConfig, e: int) -> Environment:
    return sample_environment(cfg.law, _rng.derive_seed(cfg.master_seed, _ENV, e), (0, 0))


def _start_arrays(cfg, R):
    S0 = np.tile(np.asarray(cfg.s_starts, dtype=np.int64), (R, 1)).reshape(R, cfg.d)
    Z0 = np.tile(np.asarray(cfg.z_starts, dtype=np.int64), (R, 1)).reshape(R, cfg.p)
    return S0, Z0


def _keys(cfg, e, R):
    K = replica_keys(_rng.derive_seed(cfg.master_seed, _WALK, e), np.arange(R), cfg.d + cfg.p)
    return np.ascontiguousarray(K[:, :cfg.d]), np.ascontiguousarray(K[:, cfg.d:])


# ---------------------------------------------------------------------------
# collisions


def collision_experiment(cfg: ExperimentConfig) -> RunReport:
    """Collision counts up to the horizon for R replicas in each of E environments."""
    cfg.validate()
    if cfg.d + cfg.p < 2:
        raise ConfigError("a collision needs at least two walkers (d + p >= 2)")
    if not cfg.parity_ok:
        warnings.warn("starting points have mixed parity; no collision is possible",
                      ParityWarning, stacklevel=2)
    law = make_law(cfg.law)
    T, R, E = cfg.horizon, cfg.replicas, cfg.environments
    late_from = T // 2
    counts = np.zeros((E, R), dtype=np.int64)
    lasts = np.zeros((E, R), dtype=np.int64)
    lates = np.zeros((E, R), dtype=np.int64)
    S0, Z0 = _start_arrays(cfg, R)
    for e in range(E):
        env = walk_window(environment_for(cfg, e), list(cfg.s_starts) + list(cfg.z_starts), T)
        SK, ZK = _keys(cfg, e, R)
        c, l, lt = collision_summary_kernel(S0, Z0, SK, ZK, T, late_from, *env.kernel_args())
        counts[e], lasts[e], lates[e] = c, l, lt

    survived = (lates > 0)
    n = E * R
    surv = float(survived.mean())
    rows = [{"environment": e, "replica": r, "count": int(counts[e, r]),
             "last_time": int(lasts[e, r]), "late_count": int(lates[e, r])}
            for e in range(E) for r in range(R)]
    env_rows = [{"environment": e, "median_count": float(np.median(counts[e])),
                 "mean_count": float(counts[e].mean()),
                 "survival_fraction": float(survived[e].mean())} for e in range(E)]
    any_col = counts > 0
    est = {
        "median_count": _estimate(float(np.median(counts)), n=n),
        "mean_count": _estimate(float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(n))
                                if n > 1 else None, n),
        "survival_fraction": _estimate(surv, math.sqrt(surv * (1 - surv) / n), n,
                                       window=[late_from, T]),
        "any_collision_fraction": _estimate(float(any_col.mean()), None, n),
        "median_last_time": _estimate(float(np.median(lasts[any_col])) if any_col.any()
                                      else None, n=int(any_col.sum())),
        "parity_ok": cfg.parity_ok,
        "law": _kappa_info(law),
    }
    report = RunReport("collisions", cfg.to_dict(), cfg.master_seed, est,
                       {"replicas": rows, "environments": env_rows})
    report.arrays = {"counts": counts, "lasts": lasts, "lates": lates}
    return report


@dataclass
class ComparisonReport:
    median_count: dict
    survival: dict
    bootstrap: int
    labels: tuple

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "build_id": BUILD_ID, "note": PROXY_NOTE,
                "labels": list(self.labels), "bootstrap": self.bootstrap,
                "median_count": self.median_count, "survival": self.survival}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"


def _boot_stats(report: RunReport, B: int):
    """Cluster bootstrap over environments; draws depend only on the report itself."""
    counts, lates = report.arrays["counts"], report.arrays["lates"]
    E = counts.shape[0]
    rng = np.random.default_rng(_rng.derive_seed(report.seed, _BOOT, E, counts.shape[1]))
    med = np.empty(B)
    surv = np.empty(B)
    for b in range(B):
        idx = rng.integers(0, E, E)
        med[b] = np.median(counts[idx])
        surv[b] = (lates[idx] > 0).mean()
    return med, surv


def _ci(x):
    x = x[~np.isnan(x)]
    if x.size == 0:
        return [None, None]
    # nearest-rank quantiles stay defined when ratios hit inf
    return [float(np.quantile(x, 0.025, method="nearest")),
            float(np.quantile(x, 0.975, method="nearest"))]


def _safe_ratio(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((a == 0) & (b == 0), np.nan, np.divide(a, b))


def regime_compare(a, b, bootstrap: int | None = None) -> ComparisonReport:
    """Paired statistics of two collision experiments (configs or finished reports)."""
    ra = a if isinstance(a, RunReport) else collision_experiment(a)
    rb = b if isinstance(b, RunReport) else collision_experiment(b)
    B = bootstrap or int(ra.config.get("bootstrap", 2000))
    ma, sa = _boot_stats(ra, B)
    mb, sb = _boot_stats(rb, B)
    med_a = float(np.median(ra.arrays["counts"]))
    med_b = float(np.median(rb.arrays["counts"]))
    surv_a = float((ra.arrays["lates"] > 0).mean())
    surv_b = float((rb.arrays["lates"] > 0).mean())
    ratio = float(_safe_ratio(np.float64(surv_a), np.float64(surv_b)))
    ratio_reps = _safe_ratio(sa, sb)
    ratio_ci = _ci(ratio_reps)
    median = {"a": med_a, "b": med_b, "diff": med_a - med_b, "diff_ci": _ci(ma - mb)}
    survival = {"a": surv_a, "b": surv_b, "diff": surv_a - surv_b, "diff_ci": _ci(sa - sb),
                "ratio": ratio, "ratio_ci": ratio_ci,
                "ratio_ci_excludes_one": bool(ratio_ci[0] is not None
                                              and (ratio_ci[0] > 1 or ratio_ci[1] < 1))}
    labels = (ra.estimates["law"].get("kappa"), rb.estimates["law"].get("kappa"))
    return ComparisonReport(median, survival, B, labels)


# ---------------------------------------------------------------------------
# displacement exponent


def dyadic_grid(lo: int, hi: int) -> tuple[int, ...]:
    out = []
    n = int(lo)
    while n <= hi:
        out.append(n)
        n *= 2
    return tuple(out)


def fit_loglog(x, y) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.unique(x).size < 2:
        raise DegenerateFit("need at least two distinct grid points for a slope")
    if np.any(y <= 0) or np.any(x <= 0):
        raise DegenerateFit("log-log fit needs positive values")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def displacement_exponent(cfg: ExperimentConfig, n_grid=None) -> RunReport:
    """Slope of log median(S_n) against log n, pooled over E x R walkers from s_starts[0]."""
    cfg.validate()
    law = make_law(cfg.law)
    if not law.non_arithmetic:
        warnings.warn(f"{law.kind} law has arithmetic log(rho_0); the n^kappa scale is "
                      "not guaranteed", ArithmeticLawWarning, stacklevel=2)
    grid = tuple(n_grid or cfg.n_grid or dyadic_grid(10**4, cfg.horizon))
    if len(grid) < 2:
        raise DegenerateFit("horizon grid has fewer than two points")
    grid_arr = np.asarray(sorted(grid), dtype=np.int64)
    x0 = cfg.s_starts[0] if cfg.s_starts else 0
    E, R = cfg.environments, cfg.replicas
    pos = np.empty((E, R, len(grid_arr)), dtype=np.int64)
    S0 = np.full((R, 1), x0, dtype=np.int64)
    Z0 = np.zeros((R, 0), dtype=np.int64)
    for e in range(E):
        env = walk_window(environment_for(cfg, e), [x0], int(grid_arr[-1]))
        K = replica_keys(_rng.derive_seed(cfg.master_seed, _WALK, e), np.arange(R), 1)
        s, _ = positions_at_kernel(S0, Z0, K, np.zeros((R, 0), np.uint64), grid_arr,
                                   *env.kernel_args())
        pos[e] = s[:, :, 0] - x0
    flat = pos.reshape(E * R, -1)
    med = np.median(flat, axis=0)
    slope, intercept = fit_loglog(grid_arr, med)

    rng = np.random.default_rng(_rng.derive_seed(cfg.master_seed, _BOOT, E, R))
    reps = []
    for _ in range(cfg.bootstrap):
        if E > 1:
            sample = pos[rng.integers(0, E, E)].reshape(E * R, -1)
        else:
            sample = flat[rng.integers(0, R, R)]
        m = np.median(sample, axis=0)
        if np.all(m > 0):
            reps.append(np.polyfit(np.log(grid_arr), np.log(m), 1)[0])
    kinfo = _kappa_info(law)
    est = {"slope": _estimate(slope, float(np.std(reps, ddof=1)) if len(reps) > 1 else None,
                              E * R, ci=_ci(np.asarray(reps)), intercept=intercept),
           "law": kinfo,
           "non_arithmetic": law.non_arithmetic}
    if kinfo["kappa"] is not None:
        est["slope_minus_kappa"] = slope - kinfo["kappa"]
    rows = [{"n": int(n), "median": float(m), "q25": float(np.quantile(flat[:, g], 0.25)),
             "q75": float(np.quantile(flat[:, g], 0.75))}
            for g, (n, m) in enumerate(zip(grid_arr, med))]
    report = RunReport("exponent", cfg.to_dict(), cfg.master_seed, est, {"exponent": rows})
    report.arrays = {"positions": pos, "grid": grid_arr}
    return report


# ---------------------------------------------------------------------------
# trap probes


def locate_b(env: Environment, schedule: Schedule, i: int, x_max: int = 1 << 14,
             x_limit: int = 1 << 24):
    """b_i for environment ``env``, widening the ladder scan until sigma(i) is found."""
    while True:
        lad = sigma_and_b(ladder_decomposition(env, x_max), schedule)
        if len(lad.b) >= i:
            return int(lad.b[i - 1]), lad
        if x_max >= x_limit:
            raise ScheduleOutOfReach(f"sigma({i}) not located within [0, {x_max}]")
        x_max *= 2


def _require_exact(schedule: Schedule, i: int) -> int:
    if i < 1 or i > schedule.i_reachable:
        raise ScheduleOutOfReach(
            f"N_{i} has no exact value under the horizon cap (reachable i <= "
            f"{schedule.i_reachable})")
    return schedule.N(i)


def return_grid(N: int) -> np.ndarray:
    """Even k with N/2 <= k < 2N."""
    k0 = (N + 1) // 2
    k0 += k0 % 2
    return np.arange(k0, 2 * N, 2, dtype=np.int64)


def return_probability_probe(env: Environment, schedule: Schedule, i_list, mode="dp",
                             replicas=10**4, seed=0, window_halfwidth=None) -> RunReport:
    """Minimum over k in [N_i/2, 2N_i) of P^{b_i}[S_k = b_i], per schedule index i."""
    if mode not in ("dp", "mc"):
        raise ConfigError(f"mode must be 'dp' or 'mc', got {mode!r}")
    rows, arrays = [], {}
    for i in i_list:
        N = _require_exact(schedule, i)
        b, _ = locate_b(env, schedule, i)
        grid = return_grid(N)
        if grid.size == 0:
            continue
        kmax = int(grid[-1])
        if mode == "dp":
            h = window_halfwidth or (kmax + 1 if kmax <= MAX_EXACT_N else 2048)
            ser = return_probability_series(env, b, kmax, h)
            vals = ser.values[grid]
            se = np.zeros_like(vals)
            leak = ser.leak
        else:
            env_w = walk_window(env, [b], kmax)
            keys = replica_keys(_rng.derive_seed(seed, i), np.arange(replicas), 1)[:, 0].copy()
            hits = return_counts_kernel(b, keys, b, grid, *env_w.kernel_args())
            vals = hits / replicas
            se = np.sqrt(vals * (1 - vals) / replicas)
            leak = None
        j = int(np.argmin(vals))
        rows.append({"i": int(i), "b_i": b, "N_i": N, "grid_size": int(grid.size),
                     "min_prob": float(vals[j]), "argmin_k": int(grid[j]), "se": float(se[j]),
                     "leak": leak, "mode": mode})
        arrays[int(i)] = {"k": grid, "prob": vals, "se": se}
    report = RunReport("return", {"mode": mode, "i_list": list(i_list), "replicas": replicas,
                                  "env_seed": env.seed, "C0": schedule.C0,
                                  "epsilon": schedule.epsilon, "kappa": schedule.kappa},
                       seed, {}, {"return": rows})
    report.arrays = arrays
    return report


def hitting_probe(env: Environment, schedule: Schedule, i: int, x: int, replicas=10**4,
                  seed=0, dp_check=True, window_halfwidth=None) -> dict:
    """Estimate P^x[tau(b_i) <= N_i / 10] with its standard error."""
    N = _require_exact(schedule, i)
    b, _ = locate_b(env, schedule, i)
    cap = N // 10
    out = {"i": int(i), "x": int(x), "b_i": b, "N_i": N, "cap": cap, "replicas": replicas}
    if x == b:
        out.update(estimate=1.0, se=0.0, dp=1.0, dp_leak=0.0)
        return out
    env_w = walk_window(env, [x, b], cap)
    keys = replica_keys(_rng.derive_seed(seed, i, x & _rng.MASK64), np.arange(replicas),
                        1)[:, 0].copy()
    tau = hitting_times_kernel(int(x), keys, int(b), int(cap), *env_w.kernel_args())
    est = float(np.mean(tau >= 0))
    out.update(estimate=est, se=math.sqrt(est * (1 - est) / replicas))
    if dp_check:
        h = window_halfwidth or (abs(b - x) + cap + 1 if cap <= MAX_EXACT_N else
                                 abs(b - x) + 2048)
        ser = exact_hitting_cdf(env, int(x), int(b), cap, h)
        out.update(dp=float(ser.values[cap]), dp_leak=ser.leak)
    return out


# ---------------------------------------------------------------------------
# several simple random walkers, LIL envelope


def multi_srw_decay(env, z_starts, n_grid, s_starts=(0,), window_halfwidth=None) -> RunReport:
    """Exact P(all walkers coincide at n) on ``n_grid`` and its log-log slope."""
    z_starts = [int(z) for z in z_starts]
    if len(z_starts) < 3:
        raise ConfigError(f"srw-decay probe needs p >= 3 simple random walkers, got p="
                          f"{len(z_starts)}")
    grid = sorted(int(n) for n in n_grid)
    if len(grid) < 2:
        raise DegenerateFit("n_grid needs at least two points")
    probs, drift = collision_prob_series(env, s_starts, z_starts, grid, window_halfwidth)
    slope, intercept = fit_loglog(grid, probs)
    est = {"slope": _estimate(slope, intercept=intercept, n=len(grid)),
           "max_conservation_error": drift}
    rows = [{"n": n, "prob": float(p)} for n, p in zip(grid, probs)]
    report = RunReport("srw-decay", {"s_starts": list(s_starts), "z_starts": z_starts,
                                     "n_grid": grid,
                                     "env_seed": env.seed if env is not None else None},
                       env.seed if env is not None else 0, est, {"srw_decay": rows})
    report.arrays = {"prob": probs, "n": np.asarray(grid)}
    return report


def lil_envelope(n, constant=2.0):
    n = np.asarray(n, dtype=np.float64)
    return constant * np.sqrt(2.0 * n * np.log(np.log(n)))


def lil_envelope_check(replicas=100, n_grid=None, constant=2.0, seed=0, z_start=0) -> RunReport:
    """Fraction of (replica, n) pairs with |Z_n - z_0| above constant * sqrt(2 n log log n)."""
    grid = tuple(n_grid or dyadic_grid(10**3, 10**6))
    if min(grid) < 3:
        raise RangeError("envelope needs n >= 3 so that log log n > 0")
    grid_arr = np.asarray(sorted(grid), dtype=np.int64)
    R = int(replicas)
    K = replica_keys(_rng.derive_seed(seed, _WALK, 0), np.arange(R), 1)
    dummy = np.zeros(1)
    _, z = positions_at_kernel(np.zeros((R, 0), np.int64), np.full((R, 1), z_start, np.int64),
                               np.zeros((R, 0), np.uint64), K, grid_arr,
                               dummy, 0, np.uint64(0), 0, np.array([0.5, 0.5]), np.ones(1))
    dev = np.abs(z[:, :, 0] - z_start)
    viol = dev > lil_envelope(grid_arr, constant)[None, :]
    rate = float(viol.mean())
    n = viol.size
    est = {"violation_rate": _estimate(rate, math.sqrt(rate * (1 - rate) / n), n),
           "violations": int(viol.sum()), "constant": constant}
    rows = [{"n": int(m), "envelope": float(lil_envelope(m, constant)),
             "violations": int(viol[:, g].sum()), "max_abs": int(dev[:, g].max())}
            for g, m in enumerate(grid_arr)]
    report = RunReport("lil", {"replicas": R, "n_grid": [int(m) for m in grid_arr],
                               "constant": constant, "z_start": z_start}, seed, est,
                       {"lil": rows})
    report.arrays = {"abs_z": dev, "grid": grid_arr}
    return report
