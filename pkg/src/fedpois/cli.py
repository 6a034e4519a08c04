"""Command-line harness.

    fedpois run CONFIG|manifest.json [--out DIR]
    fedpois bounds CONFIG
    fedpois sweep CONFIG --vary alpha=0.05,0.5,5 [--vary ...] --seeds 5 [--out DIR]
    fedpois plot RUN_DIR
    fedpois stealth RUN_DIR [--last 50]
    fedpois --print-defaults

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import itertools
import math
import os
import sys

import numpy as np

from . import theory
from .artifacts import config_from_manifest, num, read_csv, to_csv, write_run
from .config import angle_regimes, defaults_text, load_config
from .engine import run_experiment
from .errors import ConfigInvalid, FedPoisError
from .metrics import stealth_battery
from .plot import plot_run
from .rng import stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SHORT_KEYS = {"alpha": "data.alpha", "seed": "root_seed", "attack": "attack.kind",
              "defense": "defense.kind", "compromised": "attack.compromised_fraction"}


class ConfigFileMissing(ConfigInvalid):
    pass


def _load(path):
    if not os.path.exists(path):
        raise ConfigFileMissing([f"{path}: no such file"])
    if path.endswith(".json"):
        return config_from_manifest(path)
    return load_config(path)


def _final_dist(result):
    for r in reversed(result.records):
        if not math.isnan(r.dist_to_X):
            return r.dist_to_X
    return math.nan


def cmd_run(args):
    cfg = _load(args.config)
    out = args.out or cfg.output.directory
    result = run_experiment(cfg)
    write_run(result, out)
    if cfg.output.emit_plots:
        plot_run(out)
    print(f"wrote {out}: final attack_sr={result.final_attack_sr:.4f} "
          f"benign_ac={result.final_benign_ac:.4f} dist_to_X={_final_dist(result):.4f}")
    return EXIT_OK


def cmd_bounds(args):
    cfg = _load(args.config)
    a, b = cfg.attack.psi_low, cfg.attack.psi_high
    n = cfg.data.num_clients
    rows = []
    for k, (mu, sd) in enumerate(angle_regimes(cfg.theory.angle_regimes)):
        closed = theory.lower_bound_compromised(mu, sd, a, b, n)
        try:
            mc = theory.mc_lower_bound(mu, sd, a, b, n, cfg.theory.mc_draws,
                                       stream(cfg.root_seed, "bounds", k))
            err = theory.bound_approx_error(mc, closed) if mc > 0 else math.nan
        except FedPoisError:
            mc, err = math.nan, math.nan
        rows.append((mu, sd, a, b, n, closed, mc, err))
    sys.stdout.write(to_csv(("mu", "sigma", "a", "b", "num_clients", "closed_form", "monte_carlo", "rel_error"), rows))
    return EXIT_OK


def _parse_vary(items):
    grid = []
    for item in items:
        if "=" not in item:
            raise ConfigInvalid([f"--vary expects key=v1,v2,...; got {item!r}"])
        key, values = item.split("=", 1)
        key = SHORT_KEYS.get(key.strip(), key.strip())
        grid.append((key, [v.strip() for v in values.split(",") if v.strip()]))
    return grid


def cmd_sweep(args):
    base = _load(args.config)
    if args.seeds < 1:
        raise ConfigInvalid(["--seeds must be >= 1"])
    grid = _parse_vary(args.vary or [])
    out = args.out or base.output.directory
    os.makedirs(out, exist_ok=True)
    keys = [k for k, _ in grid]
    cells = list(itertools.product(*[vals for _, vals in grid])) if grid else [()]
    for cell in cells:
        base.replace(**dict(zip(keys, cell)))   # fail fast on a bad value
    summary = []
    for cell in cells:
        overrides = dict(zip(keys, cell))
        finals = []
        for s in range(args.seeds):
            cfg = base.replace(**overrides, root_seed=base.root_seed + s)
            name = "_".join(f"{k.split('.')[-1]}={v}" for k, v in overrides.items())
            name = f"{name}_seed={s}" if name else f"seed={s}"
            result = run_experiment(cfg)
            write_run(result, os.path.join(out, name))
            finals.append((result.final_attack_sr, result.final_benign_ac, _final_dist(result)))
            print(f"{name}: attack_sr={result.final_attack_sr:.4f} benign_ac={result.final_benign_ac:.4f}")
        arr = np.array(finals, dtype=float)
        sd = arr.std(axis=0, ddof=1) if len(finals) > 1 else np.zeros(3)
        summary.append((*cell, len(finals), arr[:, 0].mean(), sd[0], arr[:, 1].mean(), sd[1],
                        arr[:, 2].mean(), sd[2]))
    columns = (*keys, "n_seeds", "attack_sr_mean", "attack_sr_std", "benign_ac_mean", "benign_ac_std",
               "dist_to_X_mean", "dist_to_X_std")
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8") as f:
        f.write(to_csv(columns, summary))
    print(f"wrote {len(cells) * args.seeds} runs and summary.csv to {out}")
    return EXIT_OK


def cmd_plot(args):
    for path in plot_run(args.run_dir):
        print(path)
    return EXIT_OK


def stealth_from_updates(rows, last=50):
    """Stealth battery on the background angles and norms of the final ``last`` rounds."""
    rounds = sorted({int(r["round"]) for r in rows})
    keep = set(rounds[-last:]) if last else set(rounds)
    ben_a, mal_a, ben_n, mal_n = [], [], [], []
    for r in rows:
        if int(r["round"]) not in keep:
            continue
        ang, norm = num(r["background_angle"]), num(r["norm"])
        if math.isnan(ang):
            continue
        if r["malicious"] == "1":
            mal_a.append(ang)
            mal_n.append(norm)
        else:
            ben_a.append(ang)
            ben_n.append(norm)
    return stealth_battery(ben_a, mal_a, ben_n, mal_n)


def cmd_stealth(args):
    rows = read_csv(os.path.join(args.run_dir, "updates.csv"))
    report = stealth_from_updates(rows, args.last)
    sys.stdout.write(to_csv(("statistic", "value"), sorted(report.items())))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fedpois", description="Collaborative backdoor poisoning simulator")
    p.add_argument("--print-defaults", action="store_true", help="print every config key with its default")
    sub = p.add_subparsers(dest="command")

    r = sub.add_parser("run", help="run one experiment and write its artifacts")
    r.add_argument("config", help="config file or a previous run's manifest.json")
    r.add_argument("--out", help="output directory (default: output.directory)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bounds", help="closed-form |C| bound against its Monte-Carlo oracle")
    b.add_argument("config")
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("sweep", help="grid of runs, one directory each, plus summary.csv")
    s.add_argument("config")
    s.add_argument("--vary", action="append", help="key=v1,v2,... (alpha, attack, defense, seed, or a full key)")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="SVG charts from a run directory")
    pl.add_argument("run_dir")
    pl.set_defaults(func=cmd_plot)

    st = sub.add_parser("stealth", help="statistical tests on logged update angles and norms")
    st.add_argument("run_dir")
    st.add_argument("--last", type=int, default=50, help="number of final rounds to use (0 = all)")
    st.set_defaults(func=cmd_stealth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(defaults_text())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedPoisError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
