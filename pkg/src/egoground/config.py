"""Run configuration: validated groups, canonical hashing, CLI overrides.

Config files are JSON with one object per group (model, data, optim, loss,
shots, objects, infer, ablation) plus a top-level phase. Unknown keys are
rejected. CLI `--set group.key=value` overrides file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import GeneratorConfig, GeneratorConfigError
from .losses import (DEFAULT_CENTER_RADIUS, DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA,
                     DEFAULT_NORMALIZER_MOMENTUM, default_level_ranges)
from .shots import DEFAULT_SHOT_LEN_SECONDS, SHOT_MODES, VERB_GROUPS

PHASES = ("pretrain", "finetune")


class ConfigError(ValueError):
    """Raised for malformed or out-of-range run configuration."""


def _from_dict(cls, group: str, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {group} config keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ModelConfig:
    D: int = 128
    L_f: int = 4
    L_s: int = 6
    heads: int = 4
    N_o: int = 4
    K: int = 4
    ssm_state: int = 8
    tie_directions: bool = False

    def validate(self):
        for name in ("D", "L_f", "heads", "N_o", "K", "ssm_state"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.L_s < 0:
            raise ConfigError("model.L_s must be >= 0")
        if self.D % self.heads:
            raise ConfigError(f"model.D {self.D} must be divisible by model.heads {self.heads}")


@dataclass
class OptimConfig:
    batch_size: int = 16
    lr: float = 8e-4
    warmup_epochs: int = 4
    total_epochs: int = 10
    weight_decay: float = 0.05
    grad_clip: float = 1.0

    def validate(self):
        if self.batch_size < 1 or self.total_epochs < 1:
            raise ConfigError("optim.batch_size and optim.total_epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.warmup_epochs < 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ConfigError("optim.warmup_epochs/weight_decay/grad_clip out of range")


@dataclass
class LossConfig:
    alpha: float = DEFAULT_FOCAL_ALPHA
    gamma: float = DEFAULT_FOCAL_GAMMA
    lambda_: float = 0.5
    tau: float = 0.07
    momentum_c: float = DEFAULT_NORMALIZER_MOMENTUM
    center_radius: float = DEFAULT_CENTER_RADIUS
    level_ranges: list | None = None  # None -> derived from model.L_s

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("loss.alpha must be in (0, 1)")
        if self.gamma < 0 or self.lambda_ < 0 or self.center_radius <= 0:
            raise ConfigError("loss.gamma/lambda/center_radius out of range")
        if self.tau <= 0:
            raise ConfigError("loss.tau must be positive")
        if not 0.0 <= self.momentum_c < 1.0:
            raise ConfigError("loss.momentum_c must be in [0, 1)")

    def resolved_ranges(self, num_levels: int) -> list[tuple[float, float]]:
        if self.level_ranges is None:
            return default_level_ranges(num_levels)
        out = [(float(lo), float("inf") if hi is None else float(hi))
               for lo, hi in self.level_ranges]
        if len(out) != num_levels + 1:
            raise ConfigError(
                f"loss.level_ranges has {len(out)} entries, pyramid has {num_levels + 1} levels")
        return out


@dataclass
class ShotConfig:
    mode: str = "R"
    verb_groups: dict = field(default_factory=lambda: {k: list(v) for k, v in VERB_GROUPS.items()})
    shot_len_seconds: float = DEFAULT_SHOT_LEN_SECONDS

    def validate(self):
        if self.mode not in SHOT_MODES:
            raise ConfigError(f"shots.mode must be one of {SHOT_MODES}, got {self.mode!r}")
        if set(self.verb_groups) != set(VERB_GROUPS):
            raise ConfigError(f"shots.verb_groups must define exactly {sorted(VERB_GROUPS)}")
        if self.shot_len_seconds <= 0:
            raise ConfigError("shots.shot_len_seconds must be positive")


@dataclass
class ObjectConfig:
    theta: float = 0.6
    sim_threshold: float = 0.5

    def validate(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("objects.theta must be in [0, 1]")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ConfigError("objects.sim_threshold must be in [-1, 1]")


@dataclass
class InferConfig:
    sigma: float = 0.5
    pre_nms_floor: float = 1e-3
    nms_floor: float = 1e-4
    pre_nms_topk: int = 200
    max_keep: int = 5

    def validate(self):
        if self.sigma <= 0:
            raise ConfigError("infer.sigma must be positive")
        if self.pre_nms_topk < 1 or self.max_keep < 1:
            raise ConfigError("infer.pre_nms_topk and infer.max_keep must be >= 1")


@dataclass
class AblationConfig:
    use_objects: bool = True
    use_shot_branch: bool = True
    init_object_from_query: bool = True

    def validate(self):
        pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    shots: ShotConfig = field(default_factory=ShotConfig)
    objects: ObjectConfig = field(default_factory=ObjectConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    phase: str = "finetune"

    GROUPS = ("model", "data", "optim", "loss", "shots", "objects", "infer", "ablation")

    def validate(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        for g in self.GROUPS:
            try:
                getattr(self, g).validate()
            except GeneratorConfigError as e:
                raise ConfigError(str(e)) from e
        if self.model.N_o != self.data.N_o:
            raise ConfigError(
                f"model.N_o {self.model.N_o} must equal data.N_o {self.data.N_o}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d = _canonicalize_keys(d)
        unknown = set(d) - set(cls.GROUPS) - {"phase"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {}
        group_cls = {"model": ModelConfig, "optim": OptimConfig, "loss": LossConfig,
                     "shots": ShotConfig, "objects": ObjectConfig, "infer": InferConfig,
                     "ablation": AblationConfig}
        for g, c in group_cls.items():
            if g in d:
                kwargs[g] = _from_dict(c, g, d[g])
        if "data" in d:
            try:
                kwargs["data"] = GeneratorConfig.from_dict(d["data"])
            except GeneratorConfigError as e:
                raise ConfigError(str(e)) from e
        if "phase" in d:
            kwargs["phase"] = d["phase"]
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {g: asdict(getattr(self, g)) for g in self.GROUPS}
        d["phase"] = self.phase
        # canonical spelling for the keyword-clashing field
        d["loss"]["lambda"] = d["loss"].pop("lambda_")
        return d

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def model_hash(self) -> str:
        payload = json.dumps(asdict(self.model), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


def _canonicalize_keys(d: dict) -> dict:
    if "loss" in d and isinstance(d["loss"], dict):
        loss = dict(d["loss"])
        if "lambda" in loss:
            loss["lambda_"] = loss.pop("lambda")
        d["loss"] = loss
    return d


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {p} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {p} must contain a JSON object")
    return RunConfig.from_dict(raw)


def parse_override(text: str) -> tuple[str, str, object]:
    """Parse 'group.key=value'; values are JSON literals, else raw strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like group.key=value")
    path, raw = text.split("=", 1)
    if path.count(".") != 1 and path != "phase":
        raise ConfigError(f"override key {path!r} must be 'phase' or 'group.key'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if path == "phase":
        return "", "phase", value
    group, key = path.split(".")
    return group, key, value


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    d = cfg.to_dict()
    for text in overrides:
        group, key, value = parse_override(text)
        if group == "":
            d["phase"] = value
        else:
            if group not in d:
                raise ConfigError(f"unknown config group {group!r}")
            d[group][key] = value
    return RunConfig.from_dict(d)
