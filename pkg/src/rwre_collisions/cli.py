"""Command-line entry point: ``rwre-collisions <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _rng, config
from .environment import make_law, sample_environment, solve_kappa
from .errors import ConfigError, KappaError, ScheduleOutOfReach
from .experiments import (
    _WALK,
    RunReport,
    _jsonable,
    collision_experiment,
    displacement_exponent,
    dyadic_grid,
    environment_for,
    hitting_probe,
    lil_envelope_check,
    multi_srw_decay,
    regime_compare,
    return_probability_probe,
)
from .landscape import check_b_bound, ladder_decomposition, make_schedule, sigma_and_b
from .oracle import collision_prob_series, marginal_series
from .walkers import init_ensemble, run_collisions

CSV_VERSION = "v1"


def fmt(x) -> str:
    """17 significant digits for floats, so values read back exactly."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    return str(x)


def write_csv(path, name: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {name}/{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    if path in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(buf.getvalue())


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _resolved(args, overrides: dict) -> dict:
    tree = config.load(args.config) if getattr(args, "config", None) else {}
    overrides = {"seed": args.seed, "threads": args.threads, **overrides}
    law = getattr(args, "law", None)
    if law is not None:
        overrides["law"] = law
    return config.resolve(tree, overrides)


def _set_threads(n) -> None:
    if n is None:
        return
    import numba
    if n < 1:
        raise ConfigError("--threads must be positive")
    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_kappa(args) -> int:
    cfg = _resolved(args, {})
    res = solve_kappa(make_law(cfg["law"]))
    print(f"kappa={res.kappa!r}")
    print(f"residual={res.residual!r}")
    print(f"mean_log_rho={res.mean_log_rho!r}")
    return 0


def cmd_gen_env(args) -> int:
    cfg = _resolved(args, {})
    env = sample_environment(cfg["law"], cfg["seed"], (min(args.lo, 0), max(args.hi, 0)))
    rows = [{"x": x, "omega": env.omega_at(x), "V": env.V(x)}
            for x in range(args.lo, args.hi + 1)]
    write_csv(args.out, "gen-env", ["x", "omega", "V"], rows)
    return 0


def _schedule_for(cfg: dict):
    sch = cfg["schedule"]
    kappa = sch["kappa"]
    if kappa is None:
        kappa = solve_kappa(make_law(cfg["law"])).kappa
    return make_schedule(float(kappa), sch["epsilon"], float(sch["C0"]), int(sch["i_max"]),
                         int(sch["horizon_cap"]))


def cmd_analyze_potential(args) -> int:
    cfg = _resolved(args, {"schedule.kappa": args.kappa, "schedule.epsilon": args.epsilon,
                           "schedule.C0": args.C0, "schedule.horizon_cap": args.horizon_cap,
                           "schedule.i_max": args.i_max})
    schedule = _schedule_for(cfg)
    env = sample_environment(cfg["law"], cfg["seed"], (0, args.length))
    lad = sigma_and_b(ladder_decomposition(env, args.length), schedule)
    bound = check_b_bound(lad, schedule)
    rows = []
    for i in range(len(lad.e)):
        row = {"i": i, "e_i": int(lad.e[i]), "V_e_i": float(lad.V_e[i]),
               "H_i": float(lad.H[i]) if i < len(lad.H) else None}
        # schedule columns use the schedule's own index, starting at 1
        if 1 <= i <= len(lad.sigma):
            row.update(sigma_i=int(lad.sigma[i - 1]), b_i=int(lad.b[i - 1]),
                       b_bound_ok=bool(bound.ok[i - 1]))
        if 1 <= i <= schedule.i_max:
            row.update(f_i=schedule.f_of(i), log_N_i=float(schedule.log_N[i - 1]))
        rows.append(row)
    write_csv(args.out, "analyze-potential",
              ["i", "e_i", "V_e_i", "H_i", "sigma_i", "b_i", "f_i", "log_N_i", "b_bound_ok"],
              rows)
    return 0


def _split_starts(starts, d, p):
    starts = list(starts) if starts is not None else [0] * (d + p)
    if len(starts) != d + p:
        raise ConfigError(f"--starts needs d + p = {d + p} entries, got {len(starts)}")
    return starts[:d], starts[d:]


def cmd_simulate(args) -> int:
    cfg = _resolved(args, {"walkers.d": args.d, "walkers.p": args.p,
                           "walkers.starts": args.starts, "experiment.horizon": args.horizon,
                           "experiment.replicas": args.replicas})
    ec = config.experiment_config(cfg)
    if ec.d + ec.p < 2:
        raise ConfigError("a collision needs at least two walkers (d + p >= 2)")
    env = environment_for(ec, 0)
    walk_seed = _rng.derive_seed(ec.master_seed, _WALK, 0)
    rows = []
    for r in range(ec.replicas):
        state = init_ensemble(ec.s_starts, ec.z_starts, walk_seed, r)
        rec = run_collisions(state, env, ec.horizon)
        rows.extend({"replica": r, "time": int(t), "location": int(x)}
                    for t, x in zip(rec.times, rec.locations))
    write_csv(args.out, "simulate", ["replica", "time", "location"], rows)
    return 0


def cmd_dp_exact(args) -> int:
    cfg = _resolved(args, {})
    env = None
    if args.walker == "rwre":
        env = sample_environment(cfg["law"], cfg["seed"], (0, 0))
    series = marginal_series(env, args.start, args.n, args.halfwidth, args.walker)
    rows = [{"n": m.n, "k": k, "prob": p, "leak": m.leak}
            for m in series for k, p in m.as_dict().items()]
    write_csv(args.out, "dp-exact", ["n", "k", "prob", "leak"], rows)
    return 0


def cmd_collision_exact(args) -> int:
    cfg = _resolved(args, {})
    s, z = _split_starts(args.starts, args.d, args.p)
    env = sample_environment(cfg["law"], cfg["seed"], (0, 0)) if args.d else None
    probs, _ = collision_prob_series(env, s, z, args.n, args.halfwidth)
    rows = [{"n": n, "prob": p} for n, p in zip(sorted(args.n), probs)]
    write_csv(args.out, "collision-exact", ["n", "prob"], rows)
    return 0


# ---------------------------------------------------------------------------
# experiment probes


def _probe_collisions(cfg, ec):
    return collision_experiment(ec)


def _probe_regime(cfg, ec):
    other = cfg["experiment"]["compare_law"]
    if other is None:
        raise ConfigError("regime probe needs experiment.compare_law")
    ra = collision_experiment(ec)
    rb = collision_experiment(replace(ec, law=other))
    cmp = regime_compare(ra, rb, ec.bootstrap)
    tables = {f"{tag}_{name}": rows for tag, r in (("a", ra), ("b", rb))
              for name, rows in r.tables.items() if name == "environments"}
    est = {"comparison": cmp.to_dict(), "a": ra.estimates, "b": rb.estimates}
    return RunReport("regime", {}, ec.master_seed, est, tables)


def _probe_exponent(cfg, ec):
    return displacement_exponent(ec)


def _per_environment(ec, fn):
    rows = []
    for e in range(ec.environments):
        env = environment_for(ec, e)
        for row in fn(env, e):
            rows.append({"environment": e, "env_seed": env.seed, **row})
    return rows


def _probe_return(cfg, ec):
    schedule = _schedule_for(cfg)

    def one(env, e):
        seed = _rng.derive_seed(ec.master_seed, _WALK, e)
        return return_probability_probe(env, schedule, ec.i_list, ec.mode, ec.replicas, seed,
                                        ec.window_halfwidth).tables["return"]

    return RunReport("return", {}, ec.master_seed, {"kappa": schedule.kappa,
                                                    "epsilon": schedule.epsilon},
                     {"return": _per_environment(ec, one)})


def _probe_hitting(cfg, ec):
    schedule = _schedule_for(cfg)

    def one(env, e):
        seed = _rng.derive_seed(ec.master_seed, _WALK, e)
        return [hitting_probe(env, schedule, i, ec.x_start, ec.replicas, seed,
                              ec.mode == "dp", ec.window_halfwidth) for i in ec.i_list]

    return RunReport("hitting", {}, ec.master_seed, {"kappa": schedule.kappa,
                                                     "epsilon": schedule.epsilon},
                     {"hitting": _per_environment(ec, one)})


def _probe_srw_decay(cfg, ec):
    if ec.p < 3:
        raise ConfigError(f"srw-decay probe needs p >= 3 simple random walkers, got p={ec.p}")
    env = environment_for(ec, 0) if ec.d else None
    grid = ec.n_grid or dyadic_grid(64, 4096)
    return multi_srw_decay(env, ec.z_starts, grid, ec.s_starts, ec.window_halfwidth)


def _probe_lil(cfg, ec):
    z0 = ec.z_starts[0] if ec.z_starts else 0
    return lil_envelope_check(ec.replicas, ec.n_grid, ec.envelope_constant, ec.master_seed, z0)


PROBE_RUNNERS = {
    "collisions": _probe_collisions,
    "regime": _probe_regime,
    "exponent": _probe_exponent,
    "return": _probe_return,
    "hitting": _probe_hitting,
    "srw-decay": _probe_srw_decay,
    "lil": _probe_lil,
}

def _table_columns(rows):
    cols = []
    for row in rows:
        cols.extend(k for k in row if k not in cols)
    return cols


def cmd_experiment(args) -> int:
    cfg = _resolved(args, {"experiment.probe": args.probe,
                           "experiment.horizon": args.horizon,
                           "experiment.replicas": args.replicas,
                           "experiment.environments": args.environments})
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    probe = cfg["experiment"]["probe"]
    if probe is None:
        raise ConfigError("no probe given; pass --probe or set experiment.probe")
    ec = config.experiment_config(cfg)
    _set_threads(cfg["threads"])
    report = PROBE_RUNNERS[probe](cfg, ec)
    report.config = cfg
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    for name, rows in report.tables.items():
        if not rows:
            continue
        write_csv(out / f"{probe}_{name}.csv", f"{probe}.{name}", _table_columns(rows),
                  [_jsonable(r) for r in rows])
    print(json.dumps({"probe": probe, "out": str(out),
                      "tables": sorted(report.tables)}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwre-collisions",
                                     description="Random walks in a random environment: "
                                                 "landscapes, exact laws and collision probes.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--law", help="e.g. two_point:0.75@0.6,0.25@0.4 or uniform_interval:0.2,0.85")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-kappa", parents=[common], help="root of E[rho^s] = 1")
    p.set_defaults(func=cmd_solve_kappa)

    p = sub.add_parser("gen-env", parents=[common], help="dump omega and V on a window")
    p.add_argument("--lo", type=int, default=-10)
    p.add_argument("--hi", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("analyze-potential", parents=[common],
                       help="ladder epochs, heights, sigma and b on [0, length]")
    p.add_argument("--length", type=int, default=10**5)
    p.add_argument("--kappa", type=float)
    p.add_argument("--epsilon")
    p.add_argument("--C0", type=float)
    p.add_argument("--horizon-cap", type=int)
    p.add_argument("--i-max", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_potential)

    p = sub.add_parser("simulate", parents=[common], help="collision times of one ensemble")
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--starts", type=_ints)
    p.add_argument("--horizon", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dp-exact", parents=[common], help="exact marginal P(S_n = k)")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--n", type=_ints, required=True)
    p.add_argument("--walker", choices=("rwre", "srw"), default="rwre")
    p.add_argument("--halfwidth", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dp_exact)

    p = sub.add_parser("collision-exact", parents=[common],
                       help="exact probability that all walkers coincide at time n")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--starts", type=_ints)
    p.add_argument("--n", type=_ints, required=True)
    p.add_argument("--halfwidth", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_collision_exact)

    p = sub.add_parser("experiment", parents=[common], help="run a probe and write a report")
    p.add_argument("--probe", choices=tuple(PROBE_RUNNERS))
    p.add_argument("--horizon", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--environments", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ScheduleOutOfReach as exc:
        return _fail(exc, 3)
    except (ConfigError, KappaError) as exc:
        return _fail(exc, 2)
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
