"""Flat key=value run configuration with section prefixes (e.g. schedule.T=100).

Unknown keys are rejected; every value is validated against the preconditions
of the module that consumes it before any stage runs. The SEEDS_SEED
environment variable overrides the configured seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .diffusion import DENOISER_MODES, build_schedule
from .pipeline import LossWeights, TrainSettings
from .sampling import SamplingConfig

SEED_ENV_VAR = "SEEDS_SEED"


@dataclass
class RunConfig:
    d: int = 16
    s: int = 16
    e: int = 16
    schedule_t: int = 100
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 40
    batch_size: int = 128
    critic_steps: int = 5
    denoiser_batch: int = 32
    gen_hidden: int = 64
    denoiser_mode: str = "per-timestep"
    clusters: int = 10
    per_cluster: int = 25
    per_class_count: int = 500
    ingredients: int = 4
    cuisines: int = 4
    modes_per_class: int = 3
    train_per_class: int = 200
    test_per_class: int = 100
    noise_sigma: float = 0.3
    learnable_masks: bool = False
    single_branch: bool = False
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "out"

    def __post_init__(self):
        validate_config(self)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs, batch_size=self.batch_size, critic_steps=self.critic_steps,
            denoiser_batch=self.denoiser_batch, lr=self.lr, weight_decay=self.weight_decay,
            gen_hidden=self.gen_hidden, denoiser_mode=self.denoiser_mode,
            schedule_steps=self.schedule_t, beta_start=self.beta_start, beta_end=self.beta_end,
            content_dim=self.e, single_branch=self.single_branch,
            learnable_masks=self.learnable_masks, seed=self.seed,
        )

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(self.clusters, self.per_cluster, seed=self.seed)


# key in file -> (attribute, parser)
CONFIG_KEYS: dict[str, tuple[str, type]] = {
    "dims.d": ("d", int),
    "dims.s": ("s", int),
    "dims.e": ("e", int),
    "schedule.T": ("schedule_t", int),
    "schedule.beta_start": ("beta_start", float),
    "schedule.beta_end": ("beta_end", float),
    "loss.lambda1": ("lambda1", float),
    "loss.lambda2": ("lambda2", float),
    "loss.lambda3": ("lambda3", float),
    "optim.lr": ("lr", float),
    "optim.weight_decay": ("weight_decay", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.critic_steps": ("critic_steps", int),
    "train.denoiser_batch": ("denoiser_batch", int),
    "train.gen_hidden": ("gen_hidden", int),
    "denoiser.mode": ("denoiser_mode", str),
    "sampling.clusters": ("clusters", int),
    "sampling.per_cluster": ("per_cluster", int),
    "sampling.per_class_count": ("per_class_count", int),
    "benchmark.ingredients": ("ingredients", int),
    "benchmark.cuisines": ("cuisines", int),
    "benchmark.modes_per_class": ("modes_per_class", int),
    "benchmark.train_per_class": ("train_per_class", int),
    "benchmark.test_per_class": ("test_per_class", int),
    "benchmark.noise_sigma": ("noise_sigma", float),
    "masks.learnable": ("learnable_masks", bool),
    "ablation.single_branch": ("single_branch", bool),
    "seed": ("seed", int),
    "paths.data_dir": ("data_dir", str),
    "paths.out_dir": ("out_dir", str),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in CONFIG_KEYS.items()}


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


def validate_config(cfg: RunConfig) -> None:
    """Check every field against the preconditions of the module that owns it."""
    for name in ("d", "s", "e"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"dims.{name} must be >= 1, got {getattr(cfg, name)}")
    build_schedule(cfg.schedule_t, cfg.beta_start, cfg.beta_end)
    LossWeights(cfg.lambda1, cfg.lambda2, cfg.lambda3)
    if cfg.lr <= 0:
        raise ValueError(f"optim.lr must be positive, got {cfg.lr}")
    if cfg.weight_decay < 0:
        raise ValueError(f"optim.weight_decay must be non-negative, got {cfg.weight_decay}")
    if cfg.epochs < 0:
        raise ValueError(f"train.epochs must be >= 0, got {cfg.epochs}")
    for name in ("batch_size", "critic_steps", "denoiser_batch", "gen_hidden",
                 "train_per_class", "test_per_class", "ingredients", "cuisines",
                 "modes_per_class", "per_class_count"):
        if getattr(cfg, name) < 1:
            raise ValueError(f"{_ATTR_TO_KEY[name]} must be >= 1, got {getattr(cfg, name)}")
    if cfg.denoiser_mode not in DENOISER_MODES:
        raise ValueError(f"denoiser.mode must be one of {DENOISER_MODES}, got {cfg.denoiser_mode!r}")
    SamplingConfig(cfg.clusters, cfg.per_cluster)
    if cfg.per_class_count < cfg.clusters * cfg.per_cluster:
        raise ValueError(f"sampling.per_class_count={cfg.per_class_count} smaller than "
                         f"clusters*per_cluster={cfg.clusters * cfg.per_cluster}")
    if cfg.noise_sigma <= 0:
        raise ValueError(f"benchmark.noise_sigma must be positive, got {cfg.noise_sigma}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        attr, kind = CONFIG_KEYS[key]
        if attr in values:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if kind is bool:
                values[attr] = _parse_bool(raw)
            else:
                values[attr] = kind(raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form (fixed key order), used verbatim in checkpoints."""
    lines = []
    for key, (attr, kind) in CONFIG_KEYS.items():
        value = getattr(cfg, attr)
        if kind is bool:
            rendered = "true" if value else "false"
        elif kind is float:
            rendered = f"{value:.17g}"
        else:
            rendered = str(value)
        lines.append(f"{key}={rendered}")
    return "\n".join(lines) + "\n"


def load_config(path: str | None) -> RunConfig:
    """Read a config file (or defaults when path is None); apply SEEDS_SEED override."""
    if path is None:
        cfg = RunConfig()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), source=str(path))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
    return cfg


def structural_fields() -> tuple[str, ...]:
    """Fields that must match between a checkpoint and the active config."""
    return ("d", "s", "e", "schedule_t", "beta_start", "beta_end", "denoiser_mode",
            "gen_hidden", "single_branch", "learnable_masks", "ingredients", "cuisines")


def check_checkpoint_config(active: RunConfig, snapshot_text: str) -> list[str]:
    """Compare a checkpoint's config snapshot against the active config.

    Structural mismatches raise (naming both values); other drift is returned
    as warning strings.
    """
    snap = parse_config(snapshot_text, source="<checkpoint>")
    warnings = []
    for f in fields(RunConfig):
        a, b = getattr(active, f.name), getattr(snap, f.name)
        if a == b:
            continue
        key = _ATTR_TO_KEY[f.name]
        if f.name in structural_fields():
            raise ValueError(f"checkpoint was built with {key}={b}, active config has {key}={a}")
        warnings.append(f"config drift: {key} checkpoint={b} active={a}")
    return warnings
