"""The 60-second tracking trial: fixed target schedule, fatigue accumulating.

The trial starts from a rested arm (full fatigue reserve, zero activation) at
a declared start pose and follows a piecewise schedule of joint targets for
`duration_steps` control steps with no episode resets, so muscle fatigue
builds up across the whole minute. The default schedule requests the
[45 deg, 45 deg] pose three times with excursions in between; comparing
early-segment to late-segment RMSE separates controllers that compensate for
fatigue from ones that do not.
"""

import math
from pathlib import Path

import numpy as np

from .armenv import ArmConfig, BatchArmState
from .armenv import batch_env_step
from .config import TrackingConfig
from .errors import ContractError, InputError
from .reporting import write_csv
from .training import rmse_degrees

TRAJECTORY_FIELDS = (
    "t", "theta_s", "theta_e", "omega_s", "omega_e",
    "e1", "e2", "e3", "e4", "a1", "a2", "a3", "a4",
    "phi1", "phi2", "phi3", "phi4", "target_s", "target_e", "reward",
)


def default_schedule(n_steps: int = 600) -> np.ndarray:
    """Piecewise-constant targets (radians, [n_steps, 2]) with a ramp.

    Six 100-step segments: [45,45] -> [95,110] -> [45,45] -> ramp to
    [10,130] -> [45,45] -> [70,25] (degrees). The [45,45] pose appears three
    times, so late visits happen on tired muscles.
    """
    if n_steps < 1:
        raise InputError(f"schedule needs at least one step, got {n_steps}")
    anchor = np.array([45.0, 45.0])
    segments = [
        (anchor, anchor), (np.array([95.0, 110.0]), np.array([95.0, 110.0])),
        (anchor, anchor), (np.array([95.0, 110.0]), np.array([10.0, 130.0])),
        (anchor, anchor), (np.array([70.0, 25.0]), np.array([70.0, 25.0])),
    ]
    seg_len = max(1, n_steps // len(segments))
    rows = np.zeros((n_steps, 2))
    for t in range(n_steps):
        k = min(t // seg_len, len(segments) - 1)
        start, end = segments[k]
        frac = (t - k * seg_len) / max(1, seg_len - 1)
        rows[t] = start + min(1.0, frac) * (end - start)
    return np.radians(rows)


def save_schedule(path, schedule: np.ndarray) -> None:
    """Write a schedule as CSV (step, shoulder_deg, elbow_deg)."""
    rows = [{"step": t, "shoulder_deg": math.degrees(schedule[t, 0]),
             "elbow_deg": math.degrees(schedule[t, 1])}
            for t in range(len(schedule))]
    write_csv(path, ("step", "shoulder_deg", "elbow_deg"), rows)


def load_schedule(path) -> np.ndarray:
    """Read a schedule CSV back into radians [n, 2]."""
    from .reporting import read_csv
    rows = read_csv(path)
    if not rows:
        raise InputError(f"empty schedule file {path}")
    out = np.zeros((len(rows), 2))
    for i, row in enumerate(rows):
        out[i, 0] = math.radians(float(row["shoulder_deg"]))
        out[i, 1] = math.radians(float(row["elbow_deg"]))
    return out


def run_tracking_trial(policy, arm: ArmConfig, schedule: np.ndarray,
                       track: TrackingConfig = None, out_csv=None,
                       provenance: str = None) -> dict:
    """Run one continuous trial; returns RMSEs and the full trajectory.

    Returns {"overall_rmse_deg", "segment_rmse_deg": [...], "rows": [...]};
    segment RMSEs cover consecutive `track.segment_steps` windows.
    """
    track = track if track is not None else TrackingConfig()
    n = track.duration_steps
    schedule = np.asarray(schedule, dtype=float)
    if schedule.ndim != 2 or schedule.shape[1] != 2:
        raise ContractError(f"schedule must be [steps, 2], got {schedule.shape}")
    if len(schedule) < n:
        raise ContractError(
            f"schedule covers {len(schedule)} steps, trial needs {n}")
    state = BatchArmState(
        theta=np.array([[math.radians(track.start_shoulder_deg),
                         math.radians(track.start_elbow_deg)]]),
        omega=np.zeros((1, 2)),
        act=np.zeros((1, 4)),
        fatigue=np.ones((1, 4)),
    )
    obs = state.observation()
    policy.reset(1)
    rows = []
    seg_sq = np.zeros(n // track.segment_steps)
    seg_n = np.zeros_like(seg_sq)
    for t in range(n):
        targets = schedule[t][None]
        actions = policy.act(obs, targets)
        state, obs, rewards = batch_env_step(state, actions, targets, arm)
        err = obs[0, :2] - schedule[t]
        seg = t // track.segment_steps
        seg_sq[seg] += float(np.sum(err * err))
        seg_n[seg] += err.size
        rows.append({
            "t": round(t * arm.dt, 10),
            "theta_s": obs[0, 0], "theta_e": obs[0, 1],
            "omega_s": obs[0, 2], "omega_e": obs[0, 3],
            "e1": actions[0, 0], "e2": actions[0, 1],
            "e3": actions[0, 2], "e4": actions[0, 3],
            "a1": state.act[0, 0], "a2": state.act[0, 1],
            "a3": state.act[0, 2], "a4": state.act[0, 3],
            "phi1": state.fatigue[0, 0], "phi2": state.fatigue[0, 1],
            "phi3": state.fatigue[0, 2], "phi4": state.fatigue[0, 3],
            "target_s": schedule[t, 0], "target_e": schedule[t, 1],
            "reward": float(rewards[0]),
        })
    overall = rmse_degrees(float(seg_sq.sum()), int(seg_n.sum()))
    segments = [rmse_degrees(float(s), int(c))
                for s, c in zip(seg_sq, seg_n)]
    result = {"overall_rmse_deg": overall, "segment_rmse_deg": segments,
              "rows": rows}
    if out_csv is not None:
        write_csv(Path(out_csv), TRAJECTORY_FIELDS, rows,
                  provenance=provenance)
    return result
