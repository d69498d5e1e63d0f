"""Command-line entry point: ``dwl <subcommand> [options]``.

Subcommands: train, eval, estimate, traj, randomize-check. Exit codes are
0 on success, 1 on usage or configuration errors and 2 on numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, build_config
from .gait import QuinticConstraints, eval_quintic, solve_quintic
from .noise import RngStream, sample_dynamics
from .nn.checkpoint import CheckpointError

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """Write rows with a header; ``path`` of ``-`` means stdout."""
    columns = columns or (list(rows[0]) if rows else [])
    fh = sys.stdout if str(path) == "-" else open(path, "w", newline="")
    try:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(out: Path, command: str, cfg: Config, seed: int, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = {"command": command, "version": __version__, "profile": cfg.profile, "seed": seed,
             "config_hash": cfg.hash(), **extra}
    (out / "manifest.txt").write_text("".join(f"{k}: {v}\n" for k, v in lines.items()))
    (out / "config.json").write_text(cfg.to_json() + "\n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="smoke", help="paper | desk | smoke (default smoke)")
    p.add_argument("--config", help="JSON file merged over the profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. train.learning_rate=3e-4 (repeatable)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dwl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a policy and write metrics.csv + checkpoint")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="rollout processes (1 = reproducible)")
    p.add_argument("--updates", type=int, help="number of updates (default train.max_updates)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="success rate per terrain with replay CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--terrain", action="append", help="terrain kind (repeatable)")
    p.add_argument("--episodes", type=int, default=8)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--push", action="store_true", help="enable random pushes")
    p.add_argument("--command-vx", type=float, help="fix the forward velocity command")
    p.add_argument("--replays", type=int, default=1, help="episodes per terrain to log")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="decoder state estimates against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=8)
    p.add_argument("--seed", type=int, default=2000)
    p.add_argument("--terrain")
    p.add_argument("--command-vx", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True)

    p = sub.add_parser("traj", help="sample the quintic swing-foot trajectory as CSV")
    defaults = QuinticConstraints()
    for name in ("h0", "v0", "acc0", "h_max", "h_swing", "v_swing", "T"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float,
                       default=getattr(defaults, name))
    p.add_argument("--rate", type=float, default=200.0, help="samples per second")
    p.add_argument("--out", default="-", help="CSV path (default stdout)")

    p = sub.add_parser("randomize-check", help="sample per-episode dynamics as CSV")
    _add_config_args(p)
    p.add_argument("-n", "--count", type=int, default=10)
    p.add_argument("--out", default="-")
    return parser


def _load_for_eval(args, push: bool = False):
    """Stored config plus evaluation overrides; architecture overrides must still match."""
    from .config import config_from_dict
    from .learn.evaluate import load_network
    from .nn.checkpoint import read_checkpoint

    meta, _ = read_checkpoint(args.checkpoint)
    cfg = _eval_config(config_from_dict(meta["config"]), args.set, args.command_vx, push)
    return load_network(args.checkpoint, cfg)[:2]


def _eval_config(meta_cfg: Config, overrides: list[str], command_vx, push: bool = False) -> Config:
    from .config import apply_override, parse_overrides

    cfg = meta_cfg
    for key, value in parse_overrides(overrides):
        apply_override(cfg, key, value)
    if command_vx is not None:
        apply_override(cfg, "env.commands.lin_vel_x", json.dumps([command_vx, command_vx]))
        apply_override(cfg, "env.commands.standing_probability", "0")
    if push:
        apply_override(cfg, "env.push.enabled", "true")
    return cfg.validate()


def cmd_train(args) -> int:
    from .learn.trainer import DivergenceError, train

    cfg = build_config(args.profile, args.set, args.config)
    out = Path(args.out)
    write_manifest(out, "train", cfg, args.seed, workers=args.workers)

    def progress(row):
        if not args.quiet and (row["update"] % 10 == 0 or row["update"] == 1):
            print(f"update {row['update']:5d}  return {row['mean_return']:9.2f}  "
                  f"len {row['mean_episode_length']:7.1f}  fall {row['fall_rate']:.3f}  "
                  f"denoise {row['loss_denoise']:.3f}  value {row['loss_value']:.3f}", flush=True)

    try:
        result = train(cfg, args.seed, out, args.workers, args.updates, progress)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .learn.evaluate import evaluate_policy, run_episodes

    net, cfg = _load_for_eval(args, args.push)
    out = Path(args.out)
    write_manifest(out, "eval", cfg, args.seed, checkpoint=args.checkpoint)
    report_rows = []
    for kind in args.terrain or [cfg.env.terrain]:
        rep = evaluate_policy(net, cfg, args.episodes, args.seed, kind)
        report_rows.append({"terrain": kind, "episodes": rep.episodes,
                            "success_rate": rep.success_rate,
                            "mean_tracking_error": rep.mean_tracking_error,
                            "mean_return": rep.mean_return, "mean_length": rep.mean_length})
        if rep.per_episode:
            write_csv(out / f"episodes_{kind}.csv", rep.per_episode)
        if args.replays > 0 and args.episodes > 0:
            _write_replays(out, kind, run_episodes(net, cfg, min(args.replays, args.episodes),
                                                   args.seed, kind), cfg)
        print(f"{kind}: success {rep.success_rate if rep.episodes else float('nan'):.3f} "
              f"over {rep.episodes} episodes")
    write_csv(out / "report.csv", report_rows,
              ["terrain", "episodes", "success_rate", "mean_tracking_error", "mean_return",
               "mean_length"])
    return EXIT_OK


def _write_replays(out: Path, kind: str, logs, cfg: Config) -> None:
    from .obs import StateLayout

    names = StateLayout.from_config(cfg.env).column_names("state")
    for i, log in enumerate(logs):
        rows = []
        for t in range(log.length):
            row = {"time": t * cfg.env.control_dt}
            row.update({n: float(v) for n, v in zip(names, log.states[t])})
            row["reward"] = float(log.rewards[t])
            rows.append(row)
        write_csv(out / f"replay_{kind}_{i}.csv", rows, ["time", *names, "reward"])


def cmd_estimate(args) -> int:
    from .learn.evaluate import estimate_state

    net, cfg = _load_for_eval(args)
    out = Path(args.out)
    write_manifest(out, "estimate", cfg, args.seed, checkpoint=args.checkpoint)
    rep = estimate_state(net, cfg, args.episodes, args.seed, args.terrain)
    write_csv(out / "estimate.csv", rep.rows(), ["channel", "mse", "constant_mse", "ratio"])
    write_csv(out / "velocity_series.csv", rep.series,
              ["episode", "step", "time", "true_vx", "estimated_vx", "command_vx"])
    for row in rep.rows():
        print(f"{row['channel']:>16s}  mse {row['mse']:.5f}  constant {row['constant_mse']:.5f}")
    return EXIT_OK


def cmd_traj(args) -> int:
    c = QuinticConstraints(h0=args.h0, v0=args.v0, acc0=args.acc0, h_max=args.h_max,
                           h_swing=args.h_swing, v_swing=args.v_swing, T=args.T)
    coeffs = solve_quintic(c)
    if args.rate <= 0:
        raise ConfigError("--rate must be positive")
    n = int(round(c.T * args.rate))
    t = np.linspace(0.0, c.T, n + 1)
    h, v, a = eval_quintic(coeffs, t)
    rows = [{"t": float(ti), "height": float(hi), "velocity": float(vi),
             "acceleration": float(ai)} for ti, hi, vi, ai in zip(t, h, v, a)]
    write_csv(args.out, rows, ["t", "height", "velocity", "acceleration"])
    return EXIT_OK


def cmd_randomize_check(args) -> int:
    if args.count < 0:
        raise ConfigError("-n must be non-negative")
    cfg = build_config(args.profile, args.set, args.config)
    j = cfg.env.joint_count
    columns = ["friction", "motor_strength", "payload", "kp_factor", "kd_factor",
               "system_delay", *[f"motor_offset_{i}" for i in range(j)]]
    rng = RngStream(args.seed, 0)
    rows = [sample_dynamics(rng, cfg.env.noise, j).as_row() for _ in range(args.count)]
    write_csv(args.out, rows, columns)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "estimate": cmd_estimate, "traj": cmd_traj,
            "randomize-check": cmd_randomize_check}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, np.linalg.LinAlgError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
