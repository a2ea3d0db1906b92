"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``[PASS]``/``[FAIL]`` line (collected again in the
terminal summary). All randomness hangs off MASTER_SEED; nothing is tuned
per criterion.
"""

import functools
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from rwre_collisions import _rng
from rwre_collisions.cli import write_csv
from rwre_collisions.environment import make_law, sample_environment, solve_kappa
from rwre_collisions.errors import KappaError
from rwre_collisions.experiments import (
    _ENV,
    _WALK,
    ExperimentConfig,
    collision_experiment,
    displacement_exponent,
    dyadic_grid,
    lil_envelope_check,
    multi_srw_decay,
    regime_compare,
)
from rwre_collisions.landscape import ladder_decomposition, make_schedule, sigma_and_b
from rwre_collisions.oracle import collision_prob_series
from rwre_collisions.walkers import (
    init_ensemble,
    positions_at_kernel,
    replica_keys,
    run_collisions,
    walk_window,
)

MASTER_SEED = 1


def two_point(kappa):
    """{(3/4, q), (1/4, 1 - q)} with E[rho^kappa] = 1, i.e. q / (1 - q) = 3^kappa."""
    q = 3**kappa / (1 + 3**kappa)
    return {"kind": "two_point", "atoms": [[0.75, q], [0.25, 1 - q]]}


LOW, HIGH = two_point(0.25), two_point(0.8)


def csv_bytes(name, columns, rows) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out.csv"
        write_csv(path, name, columns, rows)
        return path.read_bytes()


# --- runners for criteria 2-5; each returns (passed, detail, artifacts) -----


def run_dp_mc():
    R, times = 10**5, [8, 16, 32]
    worst, drift, cases, rows = 0.0, 0.0, 0, []
    for e in range(5):
        env = sample_environment(LOW, _rng.derive_seed(MASTER_SEED, _ENV, e), (0, 0))
        env = walk_window(env, [0, 0], max(times))
        exact, d = collision_prob_series(env, [0], [0], times)
        drift = max(drift, d)
        K = replica_keys(_rng.derive_seed(MASTER_SEED, _WALK, e), np.arange(R), 2)
        S0 = np.zeros((R, 1), np.int64)
        s, z = positions_at_kernel(S0, S0.copy(), np.ascontiguousarray(K[:, :1]),
                                   np.ascontiguousarray(K[:, 1:]), np.array(times, np.int64),
                                   *env.kernel_args())
        freq = np.mean(s[:, :, 0] == z[:, :, 0], axis=0)
        for n, f, p in zip(times, freq, exact):
            band = 4 * math.sqrt(f * (1 - f) / R)
            if band > 0:
                worst = max(worst, abs(f - p) / band)
            elif f != p:
                worst = math.inf
            cases += 1
            rows.append({"environment": e, "n": n, "mc": float(f), "exact": float(p),
                         "band": band})
    art = {"dp_mc.csv": csv_bytes("acceptance.dp_mc", ["environment", "n", "mc", "exact",
                                                       "band"], rows)}
    detail = f"{cases} cases, max |mc - exact| / band = {worst:.3f}"
    return worst <= 1.0, detail, art, drift


def run_regime():
    common = dict(horizon=10**6, replicas=200, environments=20, master_seed=MASTER_SEED,
                  bootstrap=2000)
    ra = collision_experiment(ExperimentConfig(law=LOW, **common))
    rb = collision_experiment(ExperimentConfig(law=HIGH, **common))
    cmp = regime_compare(ra, rb)
    med, surv = cmp.median_count, cmp.survival
    ok = (med["a"] > med["b"] and surv["ratio"] >= 2 and surv["ratio_ci_excludes_one"])
    detail = (f"median {med['a']:g} vs {med['b']:g}; survival {surv['a']:.4f} vs "
              f"{surv['b']:.4f}, ratio {surv['ratio']:.3g}, 95% CI {surv['ratio_ci']}")
    art = {"regime_low.json": ra.to_json().encode(), "regime_high.json": rb.to_json().encode(),
           "regime_compare.json": cmp.to_json().encode()}
    return ok, detail, art


def run_exponent():
    grid = dyadic_grid(10**4, 10**6)
    law = {"kind": "uniform_interval", "lo": 0.6, "hi": 0.75}
    rep = displacement_exponent(ExperimentConfig(law=law, environments=50, replicas=10,
                                                 master_seed=MASTER_SEED, bootstrap=200),
                                n_grid=grid)
    slope = rep.estimates["slope"]["value"]
    try:
        kappa = solve_kappa(make_law(law)).kappa
        ok = abs(slope - kappa) <= 0.15
        detail = f"slope {slope:.4f}, kappa {kappa:.4f}"
    except KappaError as exc:
        ok = False
        detail = f"slope {slope:.4f}; target undefined, {type(exc).__name__}: {exc}"
    ctl = displacement_exponent(ExperimentConfig(law={"kind": "two_point", "atoms": [[0.75, 1.0]]},
                                                 environments=50, replicas=10,
                                                 master_seed=MASTER_SEED, bootstrap=200),
                                n_grid=grid)
    ctl_slope = ctl.estimates["slope"]["value"]
    ctl_ok = abs(ctl_slope - 1.0) <= 0.05
    art = {"exponent.json": rep.to_json().encode(), "exponent_control.json": ctl.to_json().encode()}
    return (ok, detail), (ctl_ok, f"slope {ctl_slope:.4f}"), art


def run_srw_decay():
    grid = dyadic_grid(2**6, 2**12)
    env = sample_environment(LOW, _rng.derive_seed(MASTER_SEED, _ENV, 0), (0, 0))
    rep = multi_srw_decay(env, [0, 0, 0], grid)
    ctl = multi_srw_decay(None, [0, 0, 0], grid, s_starts=())
    slope, ctl_slope = rep.estimates["slope"]["value"], ctl.estimates["slope"]["value"]
    drift = max(rep.estimates["max_conservation_error"], ctl.estimates["max_conservation_error"])
    art = {"srw_decay.json": rep.to_json().encode(),
           "srw_decay_control.json": ctl.to_json().encode()}
    return ((slope <= -1.4, f"slope {slope:.4f}"),
            (abs(ctl_slope + 1.0) <= 0.1, f"slope {ctl_slope:.4f}"), art, drift)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def first_run(name):
    return timed({"dp_mc": run_dp_mc, "regime": run_regime, "exponent": run_exponent,
                  "srw_decay": run_srw_decay}[name])


# --- criteria ---------------------------------------------------------------


def test_criterion_1_kappa_closed_form(report_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for q in np.round(np.arange(0.55, 0.951, 0.05), 2):
        law = make_law({"kind": "two_point", "atoms": [[0.75, q], [0.25, 1 - q]]})
        worst = max(worst, abs(solve_kappa(law).kappa - math.log(q / (1 - q)) / math.log(3)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 1.0
    report_criterion("1 kappa closed form", ok, f"max error {worst:.2e}, {elapsed:.3f} s")
    assert ok


def test_criterion_2_dp_mc_equivalence(report_criterion):
    (ok, detail, _, _), elapsed = first_run("dp_mc")
    ok = ok and elapsed < 60
    report_criterion("2 DP-MC equivalence", ok, f"{detail}, {elapsed:.1f} s")
    assert ok


def test_criterion_3_regime_separation(report_criterion):
    (ok, detail, _), elapsed = first_run("regime")
    ok = ok and elapsed < 600
    report_criterion("3 regime separation", ok, f"{detail}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_displacement_exponent(report_criterion):
    ((ok, detail), (ctl_ok, ctl_detail), _), elapsed = first_run("exponent")
    report_criterion("4 displacement exponent, uniform(0.6, 0.75)", ok, detail)
    report_criterion("4 displacement exponent, omega = 3/4 control", ctl_ok,
                     f"{ctl_detail}, {elapsed:.1f} s for both")
    assert ctl_ok and elapsed < 600
    assert ok, detail


def test_criterion_5_triple_srw_decay(report_criterion):
    ((ok, detail), (ctl_ok, ctl_detail), _, _), elapsed = first_run("srw_decay")
    both = ok and ctl_ok and elapsed < 120
    report_criterion("5 triple-SRW decay", both,
                     f"kappa 0.25 {detail}; pure SRW {ctl_detail}; {elapsed:.1f} s")
    assert both


def _ladder_violations(V, lad, f):
    e, H, sig, b = lad.e, lad.H, lad.sigma, lad.b
    bad = 0
    bad += int(e[0] != 0)
    bad += int(np.sum(np.diff(e) <= 0))
    bad += int(np.sum(e < np.arange(len(e))))
    bad += int(np.sum(np.diff(V[e]) > 0))
    bad += int(np.sum(H < 0))
    bad += int(np.sum(np.diff(sig) <= 0))
    prev = -1
    for i, k in enumerate(sig):
        bad += int(H[k] < f[i])
        bad += int(np.any(H[prev + 1:k] >= f[i]))
        prev = k
    bad += int(not np.array_equal(b, e[sig]))
    return bad


def _rescan(V, f):
    n = len(V) - 1
    e = [0]
    while True:
        nxt = next((k for k in range(e[-1] + 1, n + 1) if V[k] <= V[e[-1]]), None)
        if nxt is None:
            break
        e.append(nxt)
    H = [max(V[k] - V[e[i]] for k in range(e[i], e[i + 1] + 1)) for i in range(len(e) - 1)]
    sig, prev = [], -1
    for fi in f:
        k = next((k for k in range(prev + 1, len(H)) if H[k] >= fi), None)
        if k is None:
            break
        sig.append(k)
        prev = k
    return e, H, sig, [e[k] for k in sig]


def test_criterion_6_ladder_invariants(report_criterion):
    t0 = time.perf_counter()
    sched = make_schedule(0.25, "auto")
    violations = 0
    for e in range(1000):
        env = sample_environment(LOW, _rng.derive_seed(MASTER_SEED, _ENV, e), (0, 10**5))
        lad = sigma_and_b(ladder_decomposition(env, 10**5), sched)
        violations += _ladder_violations(env.potential_cache, lad, sched.f)
    mismatches = 0
    for e in range(10):
        env = sample_environment(LOW, _rng.derive_seed(MASTER_SEED, _ENV, 10**6 + e), (0, 1000))
        lad = sigma_and_b(ladder_decomposition(env, 1000), sched)
        ref = _rescan(list(env.potential_cache), list(sched.f))
        got = (list(lad.e), list(lad.H), list(lad.sigma), list(lad.b))
        mismatches += int(got != ref)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and mismatches == 0 and elapsed < 120
    report_criterion("6 ladder invariants", ok,
                     f"{violations} violations over 1000 environments, {mismatches}/10 rescan "
                     f"mismatches, {elapsed:.1f} s")
    assert ok


PARITY_CASES = [([0], [1]), ([0, 2], [5]), ([1], [0, 0, 2]), ([0, 1], [0])]


def test_criterion_7_parity_fuzz(report_criterion):
    t0 = time.perf_counter()
    steps, collisions, broken = 10**6, 0, 0
    sample_times = np.unique(np.linspace(1, steps, 997).astype(np.int64))
    for c, (s0, z0) in enumerate(PARITY_CASES):
        env = sample_environment(LOW, _rng.derive_seed(MASTER_SEED, _ENV, c), (0, 0))
        seed = _rng.derive_seed(MASTER_SEED, _WALK, c)
        collisions += len(run_collisions(init_ensemble(s0, z0, seed, 0), env, steps))
        R = 8
        env = walk_window(env, s0 + z0, steps)
        K = replica_keys(seed, np.arange(R), len(s0) + len(z0))
        S0 = np.tile(np.array(s0, np.int64), (R, 1))
        Z0 = np.tile(np.array(z0, np.int64), (R, 1))
        s, z = positions_at_kernel(S0, Z0, np.ascontiguousarray(K[:, :len(s0)]),
                                   np.ascontiguousarray(K[:, len(s0):]), sample_times,
                                   *env.kernel_args())
        pos = np.concatenate([s, z], axis=2)
        start = np.array(s0 + z0)[None, None, :]
        broken += int(np.sum((pos - start - sample_times[None, :, None]) % 2 != 0))
    elapsed = time.perf_counter() - t0
    ok = collisions == 0 and broken == 0 and elapsed < 60
    report_criterion("7 parity fuzz", ok,
                     f"{len(PARITY_CASES)} x {steps} steps: {collisions} collisions, "
                     f"{broken} parity breaks at {len(sample_times)} sampled times, "
                     f"{elapsed:.1f} s")
    assert ok


def test_criterion_8_conservation(report_criterion):
    # the sweeps raise ConservationError in-loop; this reports the worst step seen
    (_, _, _, drift_dp), _ = first_run("dp_mc")
    (_, _, _, drift_srw), _ = first_run("srw_decay")
    drift = max(drift_dp, drift_srw)
    ok = drift <= 1e-12
    report_criterion("8 conservation", ok, f"max |sum + leak - 1| = {drift:.2e} over "
                                           "criteria 2 and 5")
    assert ok


def test_criterion_9_lil_envelope(report_criterion):
    t0 = time.perf_counter()
    rep = lil_envelope_check(replicas=100, n_grid=dyadic_grid(10**3, 10**6), seed=MASTER_SEED)
    rate = rep.estimates["violation_rate"]["value"]
    elapsed = time.perf_counter() - t0
    ok = rate <= 1e-3 and elapsed < 60
    report_criterion("9 LIL envelope", ok,
                     f"violation rate {rate:g} ({rep.estimates['violations']} of "
                     f"{rep.estimates['violation_rate']['n']}), {elapsed:.1f} s")
    assert ok


@pytest.mark.parametrize("name", ["dp_mc", "regime", "exponent", "srw_decay"])
def test_criterion_10_determinism(name, report_criterion):
    first = first_run(name)[0]
    second = {"dp_mc": run_dp_mc, "regime": run_regime, "exponent": run_exponent,
              "srw_decay": run_srw_decay}[name]()
    art_a = next(x for x in first if isinstance(x, dict))
    art_b = next(x for x in second if isinstance(x, dict))
    same = sorted(art_a) == sorted(art_b) and all(art_a[k] == art_b[k] for k in art_a)
    report_criterion(f"10 determinism ({name})", same,
                     f"{len(art_a)} files byte-identical" if same else "outputs differ")
    assert same
