"""Command-line entry points.

    fatiguerl train --config FILE --mode {vanilla|gssm} --seed N
    fatiguerl eval  --ckpt FILE [--config FILE] [--episodes N]
    fatiguerl track --ckpt FILE [--schedule FILE] [--config FILE]
    fatiguerl ab    --config FILE [--seeds N] [--jobs N]
    fatiguerl bench-kink [--seeds N] [--steps N] [--out DIR]

Every command prints a one-line result and writes its artifacts into the run
directory named by the config (or --out).
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from .ab import run_ab_experiment
from .benchmarks import KinkBenchConfig, run_kink_benchmark
from .config import ExperimentConfig, config_from_dict, load_config
from .errors import FatigueRLError
from .rng import substream
from .tracking import default_schedule, load_schedule, run_tracking_trial
from .training import evaluate_rmse, load_policy, run_training


def _load_or_default(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _with_mode(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    if mode is None or mode == cfg.run.mode:
        return cfg
    sections = {name: dataclasses.asdict(getattr(cfg, name))
                for name in ("run", "arm", "gssm", "gssm_train", "sac",
                             "transition", "tracking")}
    sections["run"]["mode"] = mode
    return config_from_dict(sections)


def cmd_train(args) -> int:
    cfg = _with_mode(_load_or_default(args.config), args.mode)
    out_dir = args.out or f"{cfg.run.out_dir}/{cfg.run.mode}-s{args.seed}"
    result = run_training(cfg, args.seed, out_dir=out_dir,
                          resume_from=args.resume)
    rows = result["metrics"]
    final = rows[-1]["rmse_deg"] if rows else float("nan")
    print(f"trained {cfg.run.mode} seed {args.seed}: "
          f"final eval RMSE {final:.3f} deg -> {result['out_dir']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_or_default(args.config)
    policy = load_policy(args.ckpt, cfg)
    rmse = evaluate_rmse(policy, cfg.arm, args.episodes,
                         substream(args.seed, "eval", 0))
    print(f"eval RMSE over {args.episodes} episodes: {rmse:.4f} deg")
    return 0


def cmd_track(args) -> int:
    cfg = _load_or_default(args.config)
    policy = load_policy(args.ckpt, cfg)
    if args.schedule:
        schedule = load_schedule(args.schedule)
    else:
        schedule = default_schedule(cfg.tracking.duration_steps)
    out_csv = args.out or (Path(args.ckpt).parent / "trajectory.csv")
    trial = run_tracking_trial(policy, cfg.arm, schedule, cfg.tracking,
                               out_csv=out_csv)
    segs = ", ".join(f"{s:.3f}" for s in trial["segment_rmse_deg"])
    print(f"tracking RMSE {trial['overall_rmse_deg']:.4f} deg "
          f"(segments: {segs}) -> {out_csv}")
    return 0


def cmd_ab(args) -> int:
    cfg = _load_or_default(args.config)
    seeds = list(range(args.seeds)) if args.seeds else None
    out = run_ab_experiment(cfg, seeds=seeds, out_root=args.out,
                            jobs=args.jobs)
    for row in out["summary"]:
        print(f"{row['mode']}: n={row['n_seeds']} "
              f"final RMSE {row['final_rmse_mean_deg']:.3f} "
              f"+- {row['final_rmse_std_deg']:.3f} deg, "
              f"tracking delta median {row['track_delta_median_deg']:.3f} deg")
    print(f"-> {out['out_root']}")
    return 0


def cmd_bench_kink(args) -> int:
    cfg = KinkBenchConfig()
    if args.steps:
        cfg.train.steps = args.steps
    out = run_kink_benchmark(cfg, n_seeds=args.seeds, out_dir=args.out)
    for variant, stats in sorted(out["summary"].items()):
        print(f"{variant}: median KL {stats['median_kl']:.4f} "
              f"coverage {stats['median_coverage95']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fatiguerl",
        description="Latent-state filtering and RL for fatigue-robust "
                    "muscle stimulation control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent")
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--mode", choices=("vanilla", "gssm"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="run directory override")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("track", help="run the 60 s tracking trial")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--schedule", help="schedule CSV (default: built-in)")
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--out", help="trajectory CSV path")
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("ab", help="matched-seed A/B of both modes")
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", help="output root override")
    p.set_defaults(fn=cmd_ab)

    p = sub.add_parser("bench-kink", help="transition benchmark vs exact GP")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--steps", type=int, help="training steps override")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_bench_kink)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FatigueRLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
