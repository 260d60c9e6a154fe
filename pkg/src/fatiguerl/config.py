"""Experiment configuration: TOML files with one section per module.

Loading is strict (unknown sections or keys raise ConfigError) and the
resolved configuration can be re-emitted as deterministic TOML, so a run
directory always carries the exact settings that produced it.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .armenv import ArmConfig
from .errors import ConfigError
from .gssm import GSSMConfig, GSSMTrainConfig
from .sac import SACConfig


@dataclass
class RunConfig:
    mode: str = "gssm"
    seeds: tuple = (0, 1, 2, 3, 4)
    episodes: int = 100
    eval_cadence: int = 5
    eval_episodes: int = 50
    explore_episodes: int = 1
    sac_start_episode: int = 1
    updates_per_step: int = 1
    jobs: int = 1
    out_dir: str = "runs/exp"

    def __post_init__(self):
        if self.mode not in ("vanilla", "gssm"):
            raise ConfigError(f"mode must be vanilla or gssm, got {self.mode!r}")
        if min(self.episodes, self.eval_cadence, self.eval_episodes,
               self.updates_per_step, self.jobs) < 1:
            raise ConfigError("run counts must be positive")
        if self.explore_episodes < 0 or self.sac_start_episode < 0:
            raise ConfigError("episode thresholds must be nonnegative")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")


@dataclass
class TransitionSpec:
    kind: str = "ensemble"
    n_members: int = 10
    beta: float = 0.3
    hidden: int = 64
    bootstrap_p: float = 0.8
    var_floor: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("gated", "ensemble"):
            raise ConfigError(f"transition kind must be gated or ensemble, "
                              f"got {self.kind!r}")


@dataclass
class TrackingConfig:
    duration_steps: int = 600
    segment_steps: int = 200
    start_shoulder_deg: float = 20.0
    start_elbow_deg: float = 110.0

    def __post_init__(self):
        if self.duration_steps < 1 or self.segment_steps < 1:
            raise ConfigError("tracking step counts must be positive")
        if self.duration_steps % self.segment_steps != 0:
            raise ConfigError("duration must be a whole number of segments")


_SECTIONS = (
    ("run", RunConfig),
    ("arm", ArmConfig),
    ("gssm", GSSMConfig),
    ("gssm_train", GSSMTrainConfig),
    ("sac", SACConfig),
    ("transition", TransitionSpec),
    ("tracking", TrackingConfig),
)


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    gssm: GSSMConfig = field(default_factory=GSSMConfig)
    gssm_train: GSSMTrainConfig = field(default_factory=GSSMTrainConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    transition: TransitionSpec = field(default_factory=TransitionSpec)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)

    def __post_init__(self):
        # the RL state layout ties the module widths together
        if self.sac.obs_dim != self.gssm.obs_dim:
            raise ConfigError("sac.obs_dim and gssm.obs_dim must match")
        if self.sac.action_dim != self.gssm.action_dim:
            raise ConfigError("sac.action_dim and gssm.action_dim must match")
        if self.sac.latent_dim != self.gssm.latent_dim:
            raise ConfigError("sac.latent_dim and gssm.latent_dim must match")
        if self.sac.target_dim != 2:
            raise ConfigError("the two-joint arm needs sac.target_dim == 2")


def _coerce(section: str, cls, overrides: dict):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        default = known[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        if isinstance(default, float) and isinstance(value, int) \
                and not isinstance(value, bool):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file; missing sections keep their defaults."""
    raw = Path(path).read_bytes()
    try:
        data = tomli.loads(raw.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    names = {name for name, _ in _SECTIONS}
    for section in data:
        if section not in names:
            raise ConfigError(f"unknown section [{section}]")
    parts = {}
    for name, cls in _SECTIONS:
        parts[name] = _coerce(name, cls, data.get(name, {}))
    return ExperimentConfig(**parts)


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        if text in ("inf", "-inf", "nan"):
            return text
        # TOML floats need a dot or an exponent
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def resolved_text(cfg: ExperimentConfig) -> str:
    """Deterministic TOML dump of every field of every section."""
    lines = []
    for name, _ in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in sorted(fields(section), key=lambda f: f.name):
            lines.append(f"{f.name} = {_toml_scalar(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)
