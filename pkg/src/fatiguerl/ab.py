"""A/B protocol: latent-state agent vs zero-latent baseline, matched seeds.

Each seed trains both modes on identical named random streams (environment
resets, evaluation sets, and exploration draws all come from the same
substreams), so differences in the learning curves isolate what the latent
adds. Seeds run in separate processes when jobs > 1; results are aggregated
in sorted order so the output does not depend on completion order.
"""

import dataclasses
import multiprocessing
import traceback
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict, resolved_text
from .errors import ConfigError
from .reporting import code_hash, config_digest, write_csv
from .rng import substream
from .tracking import default_schedule, run_tracking_trial
from .training import load_policy, run_training

CURVE_FIELDS = ("episode", "mode", "seed", "rmse_deg")
REPORT_FIELDS = ("mode", "seed", "failed", "final_rmse_deg",
                 "track_rmse_deg", "track_seg1_deg", "track_seg2_deg",
                 "track_seg3_deg")
SUMMARY_FIELDS = ("mode", "n_seeds", "final_rmse_mean_deg",
                  "final_rmse_std_deg", "track_delta_median_deg")


def _config_for(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    """A deep copy of `cfg` with the run mode replaced."""
    sections = {name: dataclasses.asdict(getattr(cfg, name))
                for name in ("run", "arm", "gssm", "gssm_train", "sac",
                             "transition", "tracking")}
    sections["run"]["mode"] = mode
    return config_from_dict(sections)


def _run_one(task):
    """One (mode, seed) training run plus its tracking trial."""
    cfg, mode, seed, out_dir = task
    run_cfg = _config_for(cfg, mode)
    out_dir = Path(out_dir)
    try:
        result = run_training(run_cfg, seed, out_dir=out_dir)
        rows = result["metrics"]
        policy = load_policy(out_dir / "checkpoint.bin", run_cfg)
        schedule = default_schedule(run_cfg.tracking.duration_steps)
        trial = run_tracking_trial(
            policy, run_cfg.arm, schedule, run_cfg.tracking,
            out_csv=out_dir / "trajectory.csv")
        return {
            "mode": mode, "seed": seed, "failed": False,
            "curve": [{"episode": r["episode"], "mode": mode, "seed": seed,
                       "rmse_deg": r["rmse_deg"]} for r in rows],
            "final_rmse_deg": rows[-1]["rmse_deg"] if rows else float("nan"),
            "track_rmse_deg": trial["overall_rmse_deg"],
            "track_segments": trial["segment_rmse_deg"],
        }
    except Exception as exc:  # noqa: BLE001 - a failed seed must not sink the A/B
        (out_dir / "error.log").parent.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.log").write_text(
            f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
        return {"mode": mode, "seed": seed, "failed": True,
                "error": f"{type(exc).__name__}: {exc}",
                "curve": [], "final_rmse_deg": float("nan"),
                "track_rmse_deg": float("nan"),
                "track_segments": [float("nan")] * 3}


def run_ab_experiment(cfg: ExperimentConfig, seeds=None, out_root=None,
                      jobs: int = None) -> dict:
    """Train both modes for every seed; emit curves, per-run report, summary.

    Writes learning_curve.csv, report.csv, and summary.csv under `out_root`.
    Failed seeds are flagged in report.csv and excluded from aggregates.
    """
    seeds = list(cfg.run.seeds if seeds is None else seeds)
    if len(seeds) < 2:
        raise ConfigError(f"A/B needs at least 2 seeds, got {len(seeds)}")
    jobs = cfg.run.jobs if jobs is None else jobs
    out_root = Path(out_root if out_root is not None else cfg.run.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    resolved = resolved_text(cfg)
    (out_root / "config.resolved").write_text(resolved)
    provenance = (f"code_sha256={code_hash()} "
                  f"config_sha256={config_digest(resolved)}")

    tasks = [(cfg, mode, seed, out_root / f"{mode}-s{seed}")
             for seed in seeds for mode in ("vanilla", "gssm")]
    if jobs > 1:
        with multiprocessing.Pool(processes=jobs) as pool:
            results = pool.map(_run_one, tasks)
    else:
        results = [_run_one(task) for task in tasks]
    results.sort(key=lambda r: (r["mode"], r["seed"]))

    curve_rows = [row for r in results for row in r["curve"]]
    curve_rows.sort(key=lambda r: (r["mode"], r["seed"], r["episode"]))
    write_csv(out_root / "learning_curve.csv", CURVE_FIELDS, curve_rows,
              provenance=provenance)

    report_rows = []
    for r in results:
        segs = list(r["track_segments"]) + [float("nan")] * 3
        report_rows.append({
            "mode": r["mode"], "seed": r["seed"],
            "failed": r["failed"],
            "final_rmse_deg": r["final_rmse_deg"],
            "track_rmse_deg": r["track_rmse_deg"],
            "track_seg1_deg": segs[0], "track_seg2_deg": segs[1],
            "track_seg3_deg": segs[2],
        })
    write_csv(out_root / "report.csv", REPORT_FIELDS, report_rows,
              provenance=provenance)

    summary_rows = []
    for mode in ("gssm", "vanilla"):
        ok = [r for r in results if r["mode"] == mode and not r["failed"]]
        finals = np.array([r["final_rmse_deg"] for r in ok])
        deltas = np.array([r["track_segments"][-1] - r["track_segments"][0]
                           for r in ok])
        summary_rows.append({
            "mode": mode, "n_seeds": len(ok),
            "final_rmse_mean_deg": float(np.mean(finals)) if len(ok) else float("nan"),
            "final_rmse_std_deg": float(np.std(finals)) if len(ok) else float("nan"),
            "track_delta_median_deg": float(np.median(deltas)) if len(ok) else float("nan"),
        })
    write_csv(out_root / "summary.csv", SUMMARY_FIELDS, summary_rows,
              provenance=provenance)
    return {"results": results, "summary": summary_rows,
            "out_root": out_root}
