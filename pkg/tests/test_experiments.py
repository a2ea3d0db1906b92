import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwre_collisions.environment import Environment, sample_environment
from rwre_collisions.errors import (
    ArithmeticLawWarning,
    ConfigError,
    DegenerateFit,
    ParityWarning,
    RangeError,
    ScheduleOutOfReach,
)
from rwre_collisions.experiments import (
    PROXY_NOTE,
    SCHEMA_VERSION,
    ExperimentConfig,
    RunReport,
    collision_experiment,
    displacement_exponent,
    dyadic_grid,
    fit_loglog,
    hitting_probe,
    lil_envelope,
    lil_envelope_check,
    locate_b,
    multi_srw_decay,
    regime_compare,
    return_grid,
    return_probability_probe,
)
from rwre_collisions.landscape import make_schedule

Q_QUARTER = 3**0.25 / (1 + 3**0.25)
QUARTER = {"kind": "two_point", "atoms": [[0.75, Q_QUARTER], [0.25, 1 - Q_QUARTER]]}
KAPPA_ONE = {"kind": "two_point", "atoms": [[0.75, 0.75], [0.25, 0.25]]}
BALLISTIC = {"kind": "two_point", "atoms": [[0.75, 1.0]]}


def small(**kw):
    base = dict(law=QUARTER, horizon=20_000, replicas=20, environments=3, master_seed=5,
                bootstrap=200)
    base.update(kw)
    return ExperimentConfig(**base)


# --- collisions -------------------------------------------------------------


def test_collision_report_shape_and_header():
    rep = collision_experiment(small())
    d = json.loads(rep.to_json())
    assert d["schema_version"] == SCHEMA_VERSION
    assert d["note"] == PROXY_NOTE
    assert d["seed"] == 5
    assert d["config"]["horizon"] == 20_000
    assert rep.arrays["counts"].shape == (3, 20)
    assert len(rep.tables["replicas"]) == 60
    for key in ("median_count", "mean_count", "survival_fraction"):
        assert rep.estimates[key]["n"] == 60
    assert rep.estimates["mean_count"]["se"] > 0


def test_collision_counts_match_single_replica_runs():
    from rwre_collisions import _rng
    from rwre_collisions.experiments import _WALK, environment_for
    from rwre_collisions.walkers import init_ensemble, run_collisions

    cfg = small(environments=2, replicas=4, horizon=5000)
    rep = collision_experiment(cfg)
    for e in range(2):
        env = environment_for(cfg, e)
        for r in range(4):
            st_ = init_ensemble([0], [0], _rng.derive_seed(cfg.master_seed, _WALK, e), r)
            rec = run_collisions(st_, env, cfg.horizon)
            assert rep.arrays["counts"][e, r] == len(rec)
            assert rep.arrays["lasts"][e, r] == (rec.times[-1] if len(rec) else -1)
            assert rep.arrays["lates"][e, r] == int(np.sum(rec.times > cfg.horizon // 2))


def test_kappa_one_collisions_die_out_early():
    rep = collision_experiment(small(law=KAPPA_ONE, horizon=100_000, replicas=50))
    lasts = rep.arrays["lasts"]
    assert np.median(lasts[lasts >= 0]) < 1000
    assert rep.estimates["survival_fraction"]["value"] < 0.1


def test_needs_two_walkers():
    with pytest.raises(ConfigError):
        collision_experiment(small(d=1, p=0, z_starts=()))


def test_mixed_parity_warns_and_reports_zero():
    with pytest.warns(ParityWarning):
        rep = collision_experiment(small(z_starts=(1,)))
    assert rep.arrays["counts"].sum() == 0


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(replicas=0), dict(environments=0),
                                dict(mode="both"), dict(s_starts=(0, 0))])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small(**kw).validate()


def test_reports_are_byte_reproducible():
    assert collision_experiment(small()).to_json() == collision_experiment(small()).to_json()


# --- regime comparison ------------------------------------------------------


def test_self_comparison_is_null():
    rep = collision_experiment(small())
    cmp = regime_compare(rep, rep)
    assert cmp.median_count["diff"] == 0.0
    lo, hi = cmp.median_count["diff_ci"]
    assert lo <= 0.0 <= hi
    lo, hi = cmp.survival["diff_ci"]
    assert lo <= 0.0 <= hi


def test_swapping_negates_the_comparison():
    a = collision_experiment(small())
    b = collision_experiment(small(law=KAPPA_ONE))
    ab, ba = regime_compare(a, b), regime_compare(b, a)
    assert ab.median_count["diff"] == -ba.median_count["diff"]
    assert ab.survival["diff"] == -ba.survival["diff"]
    assert ab.median_count["diff_ci"] == [-x for x in reversed(ba.median_count["diff_ci"])]
    assert ab.survival["diff_ci"] == [-x for x in reversed(ba.survival["diff_ci"])]


def test_comparison_accepts_configs():
    cmp = regime_compare(small(environments=2), small(environments=2, law=KAPPA_ONE))
    assert cmp.labels[1] == 1.0
    assert json.loads(cmp.to_json())["bootstrap"] == 200


# --- displacement exponent --------------------------------------------------


def test_fit_recovers_a_power_law():
    n = np.array(dyadic_grid(16, 4096), dtype=float)
    slope, intercept = fit_loglog(n, 3.0 * n**0.4)
    assert slope == pytest.approx(0.4, abs=1e-12)
    assert intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_needs_two_points():
    with pytest.raises(DegenerateFit):
        fit_loglog([10], [1.0])
    with pytest.raises(DegenerateFit):
        displacement_exponent(small(law=BALLISTIC), n_grid=(10_000,))


def test_dyadic_grid():
    assert dyadic_grid(10**4, 10**6) == (10000, 20000, 40000, 80000, 160000, 320000, 640000)


def test_ballistic_control_has_slope_one():
    with pytest.warns(ArithmeticLawWarning):
        rep = displacement_exponent(small(law=BALLISTIC, environments=2, replicas=10,
                                          horizon=10**5))
    assert abs(rep.estimates["slope"]["value"] - 1.0) <= 0.05
    assert rep.estimates["slope"]["n"] == 20


# --- trap probes ------------------------------------------------------------


def test_return_grid_is_even_and_half_open():
    assert return_grid(2).tolist() == [2]
    assert return_grid(10).tolist() == [6, 8, 10, 12, 14, 16, 18]
    g = return_grid(9807)
    assert g[0] >= 9807 / 2 and g[-1] < 2 * 9807 and np.all(g % 2 == 0)


def test_first_level_return_matches_two_path_enumeration():
    env = sample_environment(QUARTER, 2, (0, 0))
    sched = make_schedule(0.25, 0.5)
    rep = return_probability_probe(env, sched, [1])
    row = rep.tables["return"][0]
    b = row["b_i"]
    w = env.omega_at
    expected = w(b) * (1 - w(b + 1)) + (1 - w(b)) * w(b - 1)
    assert row["N_i"] == 2 and row["argmin_k"] == 2
    assert row["min_prob"] == pytest.approx(expected, abs=1e-15)


def test_return_probe_dp_and_mc_agree():
    env = sample_environment(QUARTER, 4, (0, 0))
    sched = make_schedule(0.25, 0.5)
    dp = return_probability_probe(env, sched, [1, 2], "dp")
    mc = return_probability_probe(env, sched, [1, 2], "mc", replicas=20_000, seed=1)
    for i in (1, 2):
        p = dp.arrays[i]["prob"]
        q = mc.arrays[i]["prob"]
        assert np.all((p >= 0) & (p <= 1))
        assert np.all(np.abs(p - q) <= 4 * np.sqrt(p * (1 - p) / 20_000) + 1e-12)


def test_return_probe_beyond_cap():
    env = sample_environment(QUARTER, 4, (0, 0))
    with pytest.raises(ScheduleOutOfReach):
        return_probability_probe(env, make_schedule(0.25, 0.5), [4])


def test_hitting_from_the_trap_is_certain():
    env = sample_environment(QUARTER, 4, (0, 0))
    sched = make_schedule(0.25, 0.5)
    b, _ = locate_b(env, sched, 2)
    out = hitting_probe(env, sched, 2, b)
    assert out["estimate"] == 1.0 and out["se"] == 0.0


def test_hitting_from_far_right_is_rare():
    env = sample_environment(QUARTER, 4, (0, 0))
    sched = make_schedule(0.25, 0.5)
    b, _ = locate_b(env, sched, 3)
    out = hitting_probe(env, sched, 3, b + 400, replicas=2000)
    assert out["estimate"] <= 0.01
    assert out["dp"] <= 0.01


@pytest.mark.parametrize("env_seed", [4, 7])
def test_hitting_estimate_matches_exact_mass(env_seed):
    env = sample_environment(QUARTER, env_seed, (0, 0))
    sched = make_schedule(0.25, 0.5)
    b, _ = locate_b(env, sched, 3)
    x = max(0, b - 30)
    out = hitting_probe(env, sched, 3, x, replicas=10_000, seed=2)
    p = out["dp"]
    assert abs(out["estimate"] - p) <= 4 * math.sqrt(p * (1 - p) / 10_000) + 1e-12
    assert out["dp_leak"] <= 1e-9


def test_hitting_beyond_cap():
    env = sample_environment(QUARTER, 4, (0, 0))
    with pytest.raises(ScheduleOutOfReach):
        hitting_probe(env, make_schedule(0.25, 0.5), 5, 0)


# --- several simple walkers -------------------------------------------------


def test_three_srw_decay_slope_near_minus_one():
    rep = multi_srw_decay(None, [0, 0, 0], dyadic_grid(2**6, 2**12), s_starts=())
    assert abs(rep.estimates["slope"]["value"] + 1.0) <= 0.1
    n = 2**6
    ref = sum((math.comb(n, j) / 2**n) ** 3 for j in range(n + 1))
    assert rep.arrays["prob"][0] == pytest.approx(ref, rel=1e-12)


def test_srw_decay_requires_three_walkers():
    with pytest.raises(ConfigError, match="p >= 3"):
        multi_srw_decay(None, [0, 0], [64, 128], s_starts=())


def test_srw_decay_needs_two_grid_points():
    with pytest.raises(DegenerateFit):
        multi_srw_decay(None, [0, 0, 0], [64], s_starts=())


# --- LIL envelope -----------------------------------------------------------


def test_envelope_domain_guard():
    with pytest.raises(RangeError):
        lil_envelope_check(replicas=2, n_grid=(2, 8))


def test_envelope_formula():
    assert lil_envelope(1000, 2.0) == pytest.approx(2 * math.sqrt(2000 * math.log(math.log(1000))))


def test_smaller_constant_has_more_violations():
    tight = lil_envelope_check(replicas=100, n_grid=dyadic_grid(1000, 10**5), constant=1.0)
    loose = lil_envelope_check(replicas=100, n_grid=dyadic_grid(1000, 10**5), constant=2.0)
    assert tight.estimates["violation_rate"]["value"] > loose.estimates["violation_rate"]["value"]
    # same walkers in both runs
    assert np.array_equal(tight.arrays["abs_z"], loose.arrays["abs_z"])


@given(st.integers(0, 2**32))
def test_lil_walkers_have_parity(seed):
    rep = lil_envelope_check(replicas=5, n_grid=(1000, 1024), seed=seed, z_start=3)
    assert np.all((rep.arrays["abs_z"] - rep.arrays["grid"][None, :]) % 2 == 0)


# --- report serialisation ---------------------------------------------------


def test_non_finite_values_serialise_as_strings():
    rep = RunReport("x", {}, 0, {"a": float("inf"), "b": np.float64("nan"), "c": np.int64(3)})
    d = json.loads(rep.to_json())
    assert d["estimates"] == {"a": "inf", "b": "nan", "c": 3}


def test_pinned_environment_survives_probes():
    env = Environment.from_values({0: 0.3, 1: 0.6}, law=QUARTER)
    assert env.extend(-10, 10).omega_at([0, 1]).tolist() == [0.3, 0.6]
