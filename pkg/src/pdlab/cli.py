"""Command-line front end.

    pdlab sample     ranked PD draws and their moment summary
    pdlab moments    exact moment curves from a start point
    pdlab calibrate  clock calibration over a grid of n
    pdlab simulate   replicated chain trajectories
    pdlab verify     the statistical check suite

Settings come from built-in defaults, then an optional ``--config`` JSON
file, then command-line flags.  The seed falls back to ``PD_LAB_SEED``.
Exit codes: 0 success, 1 a statistical check failed, 2 bad configuration
or I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numba

from . import io
from .chain import ChainClock, Partition, calibrate_clock, partition_from_simplex_point
from .engine import run_ensemble, run_trajectory
from .rng import PURPOSE_CHAIN, RngStream
from .sampling import DEFAULT_TRUNCATION, pd_sample_table
from .simplex import PARAMS_GRID, Params, RankedMassVector, moment_ode_solve, moments_of
from .verify import (DEFAULT_CHECKPOINTS, ENTRANCE_K, ENTRANCE_N, entrance_profile,
                     martingale_test, moment_curve_test, pd_starts, stationarity_test,
                     stationary_moment_test)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
NEGATIVE_CONTROLS = ("mis-scaled-clock", "wrong-alpha")
SUITE = ("martingale", "moments", "stationarity", "entrance")

DEFAULTS = {
    "alpha": 0.0,
    "theta": 1.0,
    "n": None,
    "truncation": DEFAULT_TRUNCATION,
    "m": None,
    "checkpoints": None,
    "replicates": None,
    "seed": None,
    "K": None,
    "out": "pdlab-out",
    "workers": None,
    "emit_paths": False,
    "negative_control": None,
    "params_grid": False,
    "start": None,
    "clock": None,
    "horizon": None,
    "entrance_n": list(ENTRANCE_N),
    "entrance_replicates": 100,
    "tests": list(SUITE),
}


class ConfigError(ValueError):
    pass


def _common(sp: argparse.ArgumentParser, *names: str) -> None:
    S = argparse.SUPPRESS
    flags = {
        "alpha": dict(type=float, help="discount parameter, 0 <= alpha < 1"),
        "theta": dict(type=float, help="concentration parameter, theta > -alpha"),
        "n": dict(type=int, nargs="+", help="chain resolution (several values for calibrate)"),
        "truncation": dict(type=int, help="stick-breaking truncation"),
        "m": dict(type=int, nargs="+", help="power-sum orders"),
        "checkpoints": dict(type=float, nargs="+", help="diffusion times to record"),
        "replicates": dict(type=int, help="independent draws or trajectories"),
        "seed": dict(type=int, help="master seed (default: $PD_LAB_SEED, else 0)"),
        "K": dict(type=int, nargs="+", help="top-K sizes for deficiency statistics"),
        "workers": dict(type=int, help="worker threads for replicate loops"),
        "start": dict(help="corner | dust | pd | a partition like 4+2+1 | a JSON file"),
        "clock": dict(help="clock JSON written by 'calibrate'"),
        "horizon": dict(type=float, help="stationarity horizon"),
    }
    for name in names:
        sp.add_argument("--" + name.replace("_", "-"), dest=name, default=S, **flags[name])
    sp.add_argument("--out", dest="out", default=S, help="output directory")
    sp.add_argument("--config", dest="config", default=S, help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdlab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    sp = sub.add_parser("sample", help="ranked PD(alpha, theta) draws")
    _common(sp, "alpha", "theta", "truncation", "m", "replicates", "seed", "K", "workers")

    sp = sub.add_parser("moments", help="exact moment curves")
    _common(sp, "alpha", "theta", "m", "checkpoints", "start")

    sp = sub.add_parser("calibrate", help="calibrate the chain clock")
    _common(sp, "alpha", "theta", "n")

    sp = sub.add_parser("simulate", help="replicated chain trajectories")
    _common(sp, "alpha", "theta", "n", "m", "checkpoints", "replicates", "seed", "K", "workers",
            "start", "clock", "truncation")
    sp.add_argument("--emit-paths", dest="emit_paths", action="store_true", default=S,
                    help="also write one CSV per replicate")

    sp = sub.add_parser("verify", help="run the statistical check suite")
    _common(sp, "alpha", "theta", "n", "m", "checkpoints", "replicates", "seed", "K", "workers",
            "clock", "horizon", "truncation")
    sp.add_argument("--negative-control", dest="negative_control", choices=NEGATIVE_CONTROLS,
                    default=S, help="run with a deliberate error; the suite should fail")
    sp.add_argument("--params-grid", dest="params_grid", action="store_true", default=S,
                    help="run for every parameter pair of the standard grid")
    sp.add_argument("--entrance-n", dest="entrance_n", type=int, nargs="+", default=S)
    sp.add_argument("--entrance-replicates", dest="entrance_replicates", type=int, default=S)
    sp.add_argument("--tests", dest="tests", nargs="+", choices=SUITE, default=S)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    given = vars(args)
    if "config" in given:
        try:
            loaded = json.loads(Path(given["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in given.items() if k in DEFAULTS})
    if cfg["seed"] is None:
        env = os.environ.get("PD_LAB_SEED")
        try:
            cfg["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ConfigError(f"PD_LAB_SEED is not an integer: {env!r}") from None
    cfg["command"] = given["command"]
    if isinstance(cfg["n"], int):
        cfg["n"] = [cfg["n"]]
    for key in ("m", "K", "checkpoints", "entrance_n"):
        if cfg[key] is not None and not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    if cfg["replicates"] is not None and cfg["replicates"] < 1:
        raise ConfigError(f"replicates must be at least 1, got {cfg['replicates']}")
    if cfg["checkpoints"] is not None:
        cps = [float(t) for t in cfg["checkpoints"]]
        if any(t < 0 for t in cps) or cps != sorted(cps):
            raise ConfigError("checkpoints must be non-negative and sorted")
        cfg["checkpoints"] = cps
    try:
        Params(float(cfg["alpha"]), float(cfg["theta"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _params(cfg) -> Params:
    return Params(float(cfg["alpha"]), float(cfg["theta"]))


def _single_n(cfg, default: int) -> int:
    ns = cfg["n"] or [default]
    if len(ns) != 1:
        raise ConfigError("this command takes a single --n")
    return int(ns[0])


def _start_point(spec: str | None) -> RankedMassVector:
    if spec in (None, "corner"):
        return RankedMassVector.corner()
    if spec == "dust":
        return RankedMassVector.dust()
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            return RankedMassVector.from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid start state {spec!r}: {exc}") from None
    raise ConfigError(f"start must be corner, dust or a JSON file here, got {spec!r}")


def _set_workers(cfg) -> None:
    if cfg["workers"] is not None:
        if cfg["workers"] < 1:
            raise ConfigError("workers must be positive")
        numba.set_num_threads(min(int(cfg["workers"]), numba.config.NUMBA_NUM_THREADS))


# -- subcommands -----------------------------------------------------------------


def cmd_sample(cfg: dict) -> int:
    p = _params(cfg)
    draws = cfg["replicates"] or 10_000
    keep = (cfg["K"] or [10])[0]
    orders = cfg["m"] or [2, 3, 4, 5, 6]
    out = Path(cfg["out"])
    coords, sums, tails = pd_sample_table(p, keep, orders, draws, cfg["seed"], cfg["truncation"])
    header = [f"x_{i + 1}" for i in range(coords.shape[1])] + ["residual", "tail_mass"]
    rows = ([*row, max(0.0, 1.0 - float(row.sum())), float(tail)]
            for row, tail in zip(coords, tails))
    io.write_csv(out / "samples.csv", header, rows, cfg)
    report = stationary_moment_test(p, orders, draws, cfg["seed"], cfg["truncation"], sums, tails)
    io.write_json(out / "summary.json", report.to_dict(), cfg)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_moments(cfg: dict) -> int:
    p = _params(cfg)
    x0 = _start_point(cfg["start"])
    m_list = sorted(set(cfg["m"] or [2]))
    if m_list[0] < 2:
        raise ConfigError("moment orders must be >= 2")
    times = cfg["checkpoints"] or [0.0, *DEFAULT_CHECKPOINTS]
    M = max(m_list)
    curves = moment_ode_solve(p, moments_of(x0, M), M, times)
    rows = [[t] + [c.moment(m) for m in m_list] for t, c in zip(times, curves)]
    io.write_csv(Path(cfg["out"]) / "moments.csv", ["time"] + [f"E_phi_{m}" for m in m_list],
                 rows, cfg)
    return EXIT_OK


def cmd_calibrate(cfg: dict) -> int:
    p = _params(cfg)
    out = Path(cfg["out"])
    ns = sorted(set(cfg["n"] or [500, 2000]))
    clocks = [calibrate_clock(p, n) for n in ns]
    rows = [[c.n, c.calibration_constant, c.spread, c.constant_m3, c.spread_m3, len(c.probes)]
            for c in clocks]
    io.write_csv(out / "calibration.csv",
                 ["n", "constant_m2", "spread_m2", "constant_m3", "spread_m3", "probes"], rows, cfg)
    for c in clocks:
        io.write_json(out / f"clock_n{c.n}.json", {"clock": c.to_dict()}, cfg)
    io.write_json(out / "clock.json", {"clock": clocks[-1].to_dict()}, cfg)
    for c in clocks:
        print(f"n={c.n}: c={c.calibration_constant:.6f} spread={c.spread:.3%} "
              f"c(m=3)={c.constant_m3:.6f}")
    return EXIT_OK


def _load_clock(path: str | None) -> ChainClock:
    if not path:
        raise ConfigError("a calibrated clock is required: run 'pdlab calibrate' and pass --clock")
    try:
        body = json.loads(Path(path).read_text())
        return ChainClock.from_dict(body.get("clock", body))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load clock {path!r}: {exc}") from None


def _chain_starts(p: Params, spec: str | None, n: int, replicates: int, seed: int, truncation):
    if spec == "pd":
        return pd_starts(p, n, replicates, seed, truncation)
    if spec in (None, "corner", "dust") or Path(spec).exists():
        return [partition_from_simplex_point(_start_point(spec), n)]
    try:
        return [Partition.parse(spec)]
    except ValueError as exc:
        raise ConfigError(f"invalid start {spec!r}: {exc}") from None


def cmd_simulate(cfg: dict) -> int:
    p = _params(cfg)
    clock = _load_clock(cfg["clock"])
    n = _single_n(cfg, clock.n)
    if n != clock.n:
        raise ConfigError(f"clock was calibrated at n={clock.n}, not n={n}")
    _set_workers(cfg)
    R = cfg["replicates"] or 100
    m_list = sorted(set(cfg["m"] or [2]))
    K_list = sorted(set(cfg["K"] or [10]))
    cps = cfg["checkpoints"] or [0.0, *DEFAULT_CHECKPOINTS]
    starts = _chain_starts(p, cfg["start"], n, R, cfg["seed"], cfg["truncation"])
    for lam in starts:
        if lam.n != n:
            raise ConfigError(f"start {lam.compact()} is not a partition of n={n}")
    ens = run_ensemble(p, n, clock, starts, cps, R, cfg["seed"], m_list=m_list, K_list=K_list)
    out = Path(cfg["out"])
    header, rows = ens.summary_table()
    io.write_csv(out / "aggregates.csv", header, rows, cfg)
    if cfg["emit_paths"]:
        for r in range(R):
            start = starts[r] if len(starts) > 1 else starts[0]
            rng = RngStream(cfg["seed"], r, PURPOSE_CHAIN)
            traj = run_trajectory(rng, p, start, clock, max(max(cps), clock.delta_per_step),
                                  m_list, cps, K_list)
            header, rows = traj.table()
            io.write_csv(out / "paths" / f"replicate_{r:05d}.csv", header, rows,
                         {**cfg, "replicate": r})
    return EXIT_OK


def _verify_one(p: Params, cfg: dict, out: Path) -> list:
    n = _single_n(cfg, 1000)
    R = cfg["replicates"] or 1000
    m_list = sorted(set(cfg["m"] or [2]))
    cps = cfg["checkpoints"] or [0.0, *DEFAULT_CHECKPOINTS]
    if cps[0] != 0.0:
        cps = [0.0, *cps]
    seed = cfg["seed"]
    if cfg["clock"]:
        clock = _load_clock(cfg["clock"])
        if clock.n != n:
            raise ConfigError(f"clock was calibrated at n={clock.n}, not n={n}")
    else:
        clock = calibrate_clock(p, n)
    control = cfg["negative_control"]
    run_clock = clock.scaled(2.0) if control == "mis-scaled-clock" else clock
    reports = []
    tests = cfg["tests"]
    if "martingale" in tests:
        for m in m_list:
            reports.append(martingale_test(p, Partition((n,)), run_clock, m, cps, R, seed))
    if "moments" in tests:
        for name, x0 in (("corner", RankedMassVector.corner()), ("dust", RankedMassVector.dust())):
            rep = moment_curve_test(p, x0, n, run_clock, m_list, cps, R, seed)
            rep.test_name = f"moment_curve_{name}"
            reports.append(rep)
    if "stationarity" in tests:
        target = None
        if control == "wrong-alpha":
            target = Params(min(p.alpha + 0.2, 0.99), p.theta)
        horizon = cfg["horizon"] or max(cps)
        reports.append(stationarity_test(p, n, run_clock, m_list, horizon, R, seed,
                                         checkpoints=[t for t in cps if t <= horizon],
                                         truncation=cfg["truncation"], target_params=target))
    if "entrance" in tests:
        K_list = sorted(set(cfg["K"] or ENTRANCE_K))
        clocks = None
        if control == "mis-scaled-clock":
            clocks = {k: calibrate_clock(p, k).scaled(2.0) for k in cfg["entrance_n"]}
        reports.append(entrance_profile(p, cfg["entrance_n"], cps, cfg["entrance_replicates"],
                                        seed, clocks=clocks, K_list=K_list))
    tag = f"a{p.alpha:g}_t{p.theta:g}"
    for rep in reports:
        io.write_json(out / tag / f"{rep.test_name}.json", rep.to_dict(), cfg)
        io.write_text(out / tag / f"{rep.test_name}.txt", rep.to_text(), cfg)
        print(f"[{tag}] {rep.test_name}: {'PASS' if rep.verdict else 'FAIL'}")
    return reports


def cmd_verify(cfg: dict) -> int:
    _set_workers(cfg)
    out = Path(cfg["out"])
    grid = PARAMS_GRID if cfg["params_grid"] else (_params(cfg),)
    summary = {}
    for p in grid:
        for rep in _verify_one(p, cfg, out):
            summary[f"a{p.alpha:g}_t{p.theta:g}/{rep.test_name}"] = rep.verdict
    ok = all(summary.values())
    io.write_json(out / "summary.json", {"all_pass": ok, "verdicts": summary}, cfg)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"sample": cmd_sample, "moments": cmd_moments, "calibrate": cmd_calibrate,
            "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg["command"]](cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"pdlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
