"""Experiment configuration.

All knobs live in small dataclasses grouped by subsystem.  Config files use a
flat dotted-key format, one assignment per line::

    env.n_devices = 200
    attacker.kind = stealthy
    ppo.gamma = 0.98
    state.ratio_bins = 0.0,0.05,0.1,0.2,0.3,0.4,0.5

Blank lines and lines starting with '#' are ignored.  Unknown keys are
rejected with a file:line message, as are values that fail validation.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Bad config file, unknown key, or invalid parameter combination."""


@dataclass
class EnvConfig:
    n_devices: int = 100
    mean_degree: float = 4.0
    # Fixed topology per experiment; episode randomness comes from the run seed.
    topo_seed: int = 0
    detector_cost_min: float = 1.0
    detector_cost_max: float = 5.0
    # None means "derive from the topology": e_budget_frac of the total
    # detector cost, and e_max_frac of the resulting budget.
    e_budget: float | None = None
    e_budget_frac: float = 0.4
    e_max: float | None = None
    e_max_frac: float = 1.05
    energy_noise: float = 0.1
    p_compromise: float = 0.4
    k_benign: float = 4.0
    k_naive: float = 4.0
    k_stealthy: float = 2.0
    initial_compromised: int = 5
    episode_cap: int = 1000
    l_min: int = 1
    reimage_loss_max: float = 50.0
    threshold_init: float = 0.95
    ratio_init: float = 0.5

    def validate(self) -> None:
        if self.n_devices < 3:
            raise ConfigError("env.n_devices must be at least 3")
        if self.mean_degree <= 0:
            raise ConfigError("env.mean_degree must be positive")
        if not 0.0 < self.p_compromise <= 1.0:
            raise ConfigError("env.p_compromise must be in (0, 1]")
        for name in ("k_benign", "k_naive", "k_stealthy"):
            if getattr(self, name) <= 1.0:
                raise ConfigError(f"env.{name} must exceed 1 (scores must lean toward their tail)")
        if self.detector_cost_min <= 0 or self.detector_cost_max < self.detector_cost_min:
            raise ConfigError("env detector cost range must satisfy 0 < min <= max")
        if not 0.0 <= self.energy_noise < 1.0:
            raise ConfigError("env.energy_noise must be in [0, 1)")
        if self.initial_compromised < 0 or self.initial_compromised > self.n_devices:
            raise ConfigError("env.initial_compromised must be in [0, n_devices]")
        if self.episode_cap < 1:
            raise ConfigError("env.episode_cap must be positive")
        if self.l_min < 1:
            raise ConfigError("env.l_min must be at least 1")
        if self.e_budget is not None and self.e_budget < 0:
            raise ConfigError("env.e_budget must be nonnegative")
        if not 0.0 < self.e_budget_frac < 1.0:
            raise ConfigError("env.e_budget_frac must be in (0, 1) so enabling everything stays unaffordable")
        if self.e_max_frac < 1.0:
            raise ConfigError("env.e_max_frac must be >= 1")
        if self.reimage_loss_max < 0:
            raise ConfigError("env.reimage_loss_max must be nonnegative")
        if not 0.0 <= self.threshold_init <= 1.0:
            raise ConfigError("env.threshold_init must be in [0, 1]")
        if not 0.0 <= self.ratio_init <= 1.0:
            raise ConfigError("env.ratio_init must be in [0, 1]")


ATTACKER_KINDS = ("naive", "stealthy", "aggressive")


@dataclass
class AttackerConfig:
    kind: str = "naive"
    n_explore: int = 5

    def validate(self) -> None:
        if self.kind not in ATTACKER_KINDS:
            raise ConfigError(f"attacker.kind must be one of {ATTACKER_KINDS}, got {self.kind!r}")
        if self.n_explore < 1:
            raise ConfigError("attacker.n_explore must be at least 1")


@dataclass
class RewardParams:
    benign_reimage_cost: float = 10.0
    reimage_cost: float = 1.0
    attack_goal_cost: float = 100.0
    attack_end_incentive: float = 100.0
    pre_penalty: float = 10.0
    post_penalty: float = 20.0

    def validate(self) -> None:
        for name in ("benign_reimage_cost", "reimage_cost", "attack_goal_cost",
                     "attack_end_incentive", "pre_penalty", "post_penalty"):
            if getattr(self, name) < 0:
                raise ConfigError(f"reward.{name} must be nonnegative (sign is applied internally)")
        if self.attack_end_incentive <= 0:
            raise ConfigError("reward.attack_end_incentive must be positive")


@dataclass
class PpoConfig:
    gamma: float = 0.98
    clip_eps: float = 0.2
    learning_rate: float = 0.005
    epochs_per_update: int = 4
    minibatch_size: int = 64
    entropy_coef: float = 0.05
    value_coef: float = 0.5
    horizon: int = 2048
    retry_cap: int = 13
    normalize_adv: bool = True
    hidden_units: int = 64

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("ppo.gamma must be in [0, 1)")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("ppo.clip_eps must be in (0, 1)")
        if self.learning_rate < 0:
            raise ConfigError("ppo.learning_rate must be nonnegative")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise ConfigError("ppo.epochs_per_update and ppo.minibatch_size must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("ppo entropy/value coefficients must be nonnegative")
        if self.horizon < self.minibatch_size:
            raise ConfigError("ppo.horizon must be at least ppo.minibatch_size")
        if self.retry_cap < 1:
            raise ConfigError("ppo.retry_cap must be at least 1")
        if self.hidden_units < 1:
            raise ConfigError("ppo.hidden_units must be positive")


@dataclass
class LearnerConfig:
    m_events: int = 5
    violation_ratio: float = 1.0

    def validate(self) -> None:
        if self.m_events < 1:
            raise ConfigError("learner.m_events must be at least 1")
        if not 0.0 < self.violation_ratio <= 1.0:
            raise ConfigError("learner.violation_ratio must be in (0, 1]")


@dataclass
class StateConfig:
    # Bin edges, inclusive on the left.  The last ratio bin is [0.4, 0.5) and
    # estimates at or above the final edge land in the top level.
    ratio_bins: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    detector_bins: tuple[float, ...] = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)

    def validate(self) -> None:
        if len(self.ratio_bins) != 7:
            raise ConfigError("state.ratio_bins needs 7 edges (6 levels)")
        if len(self.detector_bins) != 4:
            raise ConfigError("state.detector_bins needs 4 edges (3 levels)")
        for name, edges in (("ratio_bins", self.ratio_bins), ("detector_bins", self.detector_bins)):
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ConfigError(f"state.{name} edges must be strictly increasing")
        if self.ratio_bins[0] != 0.0:
            raise ConfigError("state.ratio_bins must start at 0")
        if self.detector_bins[0] != 0.0 or self.detector_bins[-1] != 1.0:
            raise ConfigError("state.detector_bins must span [0, 1]")


@dataclass
class RunConfig:
    episodes: int = 200
    eval_episodes: int = 500
    seed: int = 0
    out_dir: str = "out"
    jobs: int = 1
    disable_pre_sat: bool = False
    topo_sizes: tuple[int, ...] = (100, 200)
    smooth_window: int = 20
    step_log: bool = False

    def validate(self) -> None:
        if self.episodes < 0 or self.eval_episodes < 0:
            raise ConfigError("run.episodes and run.eval_episodes must be nonnegative")
        if self.jobs < 1:
            raise ConfigError("run.jobs must be at least 1")
        if self.smooth_window < 1:
            raise ConfigError("run.smooth_window must be at least 1")
        if not self.topo_sizes:
            raise ConfigError("run.topo_sizes must list at least one device count")


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    attacker: AttackerConfig = field(default_factory=AttackerConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    state: StateConfig = field(default_factory=StateConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        for f in fields(self):
            getattr(self, f.name).validate()

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig(**{f.name: replace(getattr(self, f.name)) for f in fields(self)})


_SECTIONS = {f.name: f.type for f in fields(ExperimentConfig)}


def _field_types(section_cls) -> dict:
    return typing.get_type_hints(section_cls)


def _convert(raw: str, typ, where: str):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.strip().lower() in ("none", "null"):
            return None
        return _convert(raw, args[0], where)
    if origin is tuple:
        elem = typing.get_args(typ)[0]
        parts = [p for p in (x.strip() for x in raw.split(",")) if p]
        if not parts:
            raise ConfigError(f"{where}: empty list")
        return tuple(_convert(p, elem, where) for p in parts)
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            return int(raw.strip())
        if typ is float:
            return float(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected {typ.__name__}, got {raw!r}") from None
    if typ is str:
        return raw.strip()
    raise ConfigError(f"{where}: unsupported field type {typ!r}")


def set_key(cfg: ExperimentConfig, key: str, raw: str, where: str = "<override>") -> None:
    """Assign one dotted key from its textual value, with type checking."""
    if "." not in key:
        raise ConfigError(f"{where}: key {key!r} is not of the form section.field")
    section, name = key.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"{where}: unknown section {section!r} in key {key!r}")
    target = getattr(cfg, section)
    hints = _field_types(type(target))
    if name not in hints:
        raise ConfigError(f"{where}: unknown key {key!r}")
    setattr(target, name, _convert(raw, hints[name], where))


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        set_key(cfg, key.strip(), raw, where=f"{source}:{lineno}")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Resolved config as config-file text, for audit copies in output dirs."""
    lines = []
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        for sf in fields(section):
            value = getattr(section, sf.name)
            if isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            else:
                text = repr(value) if value is not None else "none"
            lines.append(f"{f.name}.{sf.name} = {text}")
    return "\n".join(lines) + "\n"
