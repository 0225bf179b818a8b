"""Synthetic episode generation and the on-disk dataset container.

Episodes stand in for backbone features: clip features, query token
features, object detections, a ground-truth interval, and timestamped
narrations. Generation is counter-based (Philox keyed by seed and episode
index), so episodes are reproducible bit-for-bit in any order and on any
platform.

Container layout: `manifest.json` (UTF-8, sorted keys) plus one raw
little-endian row-major `.bin` file per array.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import Interval
from .objects import Detection
from .shots import VERB_GROUPS as MOVEMENT_VERBS

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SUPPORTED_VERSIONS = {1}

SIGNAL_MODES = ("video", "object_only", "mixed")

# Generator shape constants that are not worth a config knob.
SIGNAL_GAIN = 3.0            # clip-feature bump amplitude per unit SNR
SHARED_DIRECTION_WEIGHT = 0.8  # weight of the dataset-level signal direction
TOKEN_SIGNAL_GAIN = 2.0
TOKEN_NOISE = 0.5
NOUN_NOISE = 0.15
CATEGORY_NOISE = 0.2
VAL_SEED_OFFSET = 1_000_000

ACTION_TEXTS = (
    "picks up the drill",
    "cuts a piece of wood",
    "opens the drawer",
    "washes the plate",
    "tightens a screw",
)


class DatasetError(Exception):
    """Raised for missing, malformed, or unsupported dataset containers."""


class GeneratorConfigError(ValueError):
    """Raised when a generator config field is out of range."""


@dataclass
class GeneratorConfig:
    """The `data` section of a run config; doubles as the generator spec."""

    T: int = 64
    D_v: int = 64
    D_T: int = 32
    D_o: int = 32
    N_o: int = 4
    L_min: int = 4
    L_max: int = 12
    signal_mode: str = "video"
    snr: float = 1.0
    train_episodes: int = 200
    val_episodes: int = 50
    seed: int = 0
    fps: float = 30.0
    window_frames: int = 16
    boundary_movement_rate: float = 1.0
    distractor_movement_rate: float = 0.5

    def validate(self):
        for name in ("T", "D_v", "D_T", "D_o", "N_o", "L_min", "L_max",
                     "train_episodes", "val_episodes", "window_frames"):
            if getattr(self, name) < 1:
                raise GeneratorConfigError(f"data.{name} must be >= 1, got {getattr(self, name)}")
        if self.L_min > self.L_max:
            raise GeneratorConfigError(f"data.L_min {self.L_min} > data.L_max {self.L_max}")
        if self.signal_mode not in SIGNAL_MODES:
            raise GeneratorConfigError(
                f"data.signal_mode must be one of {SIGNAL_MODES}, got {self.signal_mode!r}")
        if self.snr < 0:
            raise GeneratorConfigError(f"data.snr must be >= 0, got {self.snr}")
        if self.fps <= 0:
            raise GeneratorConfigError(f"data.fps must be > 0, got {self.fps}")
        for name in ("boundary_movement_rate", "distractor_movement_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GeneratorConfigError(f"data.{name} must be in [0, 1], got {v}")

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GeneratorConfigError(f"unknown data config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class EpisodeRecord:
    episode_id: str
    clip_features: np.ndarray   # [T, D_v] float32
    query_tokens: np.ndarray    # [L, D_T] float32
    noun_embeddings: np.ndarray  # [P, D_o] float32
    detections: list[Detection]
    gt: Interval
    narrations: list[tuple[float, str]]
    meta: dict = field(default_factory=dict)

    @property
    def num_clips(self) -> int:
        return self.clip_features.shape[0]

    def validate(self):
        T = self.num_clips
        if T < 1 or self.query_tokens.shape[0] < 1:
            raise ValueError("episode needs at least one clip and one token")
        if not (0.0 <= self.gt.start and self.gt.end <= T):
            raise ValueError(f"gt {self.gt} outside [0, {T}]")
        times = [t for t, _ in self.narrations]
        if any(not 0.0 <= t <= T for t in times):
            raise ValueError("narration time outside [0, T]")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("narration times must be strictly increasing")


def episode_rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _dataset_rng(seed: int) -> np.random.Generator:
    return episode_rng(seed, 0xFFFFFFFFFFFFFFFF)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@lru_cache(maxsize=8)
def _dataset_directions_cached(seed: int, d_v: int, d_t: int, d_o: int):
    rng = _dataset_rng(seed)
    mu0 = _unit(rng.standard_normal(d_v))
    w_query = rng.standard_normal((d_v, d_t)) / np.sqrt(d_v)
    w_noun = rng.standard_normal((d_v, d_o)) / np.sqrt(d_v)
    return mu0, w_query, w_noun


def _dataset_directions(cfg: GeneratorConfig):
    """Dataset-level signal geometry, shared by every episode of one config."""
    return _dataset_directions_cached(cfg.seed, cfg.D_v, cfg.D_T, cfg.D_o)


def _movement_text(rng: np.random.Generator) -> str:
    group = rng.choice(("R", "R", "R", "HM", "HM", "RM"))
    verb = rng.choice(MOVEMENT_VERBS[str(group)])
    return f"the wearer {verb} in the room"


def _action_text(rng: np.random.Generator) -> str:
    return f"the wearer {rng.choice(ACTION_TEXTS)}"


def generate_episode(config: GeneratorConfig, seed: int) -> EpisodeRecord:
    """Deterministically generate one episode for (config, seed).

    Signal placement by mode:
      video        concept direction blended into clip features inside gt
      object_only  clip features are pure noise; detections inside gt carry
                   noun-correlated category embeddings
      mixed        both
    """
    config.validate()
    rng = episode_rng(config.seed, seed)
    mu0, w_query, w_noun = _dataset_directions(config)
    T = config.T

    gt_len = rng.uniform(0.1 * T, 0.4 * T)
    gt_start = rng.uniform(0.0, T - gt_len)
    gt = Interval(gt_start, gt_start + gt_len)
    inside = np.arange(T)[(np.arange(T) + 0.5 >= gt.start) & (np.arange(T) + 0.5 < gt.end)]

    u_ep = _unit(rng.standard_normal(config.D_v))
    w = SHARED_DIRECTION_WEIGHT
    concept = _unit(w * mu0 + np.sqrt(1.0 - w * w) * u_ep)

    clip_features = rng.standard_normal((T, config.D_v))
    if config.signal_mode in ("video", "mixed"):
        clip_features[inside] += config.snr * SIGNAL_GAIN * concept

    L = int(rng.integers(config.L_min, config.L_max + 1))
    q_core = TOKEN_SIGNAL_GAIN * (concept @ w_query)
    query_tokens = q_core + TOKEN_NOISE * rng.standard_normal((L, config.D_T))

    target_noun = _unit(concept @ w_noun)
    P = int(rng.integers(1, 4))
    nouns = [_unit(target_noun + NOUN_NOISE * rng.standard_normal(config.D_o))]
    for _ in range(P - 1):
        nouns.append(_unit(rng.standard_normal(config.D_o)))
    noun_embeddings = np.stack(nouns)

    detections: list[Detection] = []
    target_cat_id = int(rng.integers(0, 100))
    for t in range(T):
        for _ in range(min(int(rng.poisson(1.0)), 3)):
            detections.append(Detection(
                clip_index=t,
                category_id=int(rng.integers(100, 10_000)),
                confidence=float(rng.uniform(0.2, 0.95)),
                category_embedding=_unit(rng.standard_normal(config.D_o)),
            ))
        if config.signal_mode in ("object_only", "mixed"):
            if t in inside:
                for _ in range(1 + int(rng.integers(0, 2))):
                    detections.append(Detection(
                        clip_index=t,
                        category_id=target_cat_id,
                        confidence=float(rng.uniform(0.65, 0.99)),
                        category_embedding=_unit(
                            target_noun + CATEGORY_NOISE * rng.standard_normal(config.D_o)),
                    ))
            elif rng.uniform() < 0.15:
                # sub-threshold matching detections outside gt exercise the
                # confidence filter without leaking signal
                detections.append(Detection(
                    clip_index=t,
                    category_id=target_cat_id,
                    confidence=float(rng.uniform(0.1, 0.55)),
                    category_embedding=_unit(
                        target_noun + CATEGORY_NOISE * rng.standard_normal(config.D_o)),
                ))

    narr: list[tuple[float, str]] = []
    for t_b in (gt.start, gt.end):
        if rng.uniform() < config.boundary_movement_rate:
            text = _movement_text(rng)
        else:
            text = _action_text(rng)
        narr.append((float(np.clip(t_b, 0.0, T)), text))
    for _ in range(int(rng.integers(2, 5))):
        time = float(rng.uniform(0.0, T))
        if rng.uniform() < config.distractor_movement_rate:
            text = _movement_text(rng)
        else:
            text = _action_text(rng)
        narr.append((time, text))
    narr.sort(key=lambda x: x[0])
    narrations = [narr[0]]
    for time, text in narr[1:]:
        if time > narrations[-1][0]:
            narrations.append((time, text))

    record = EpisodeRecord(
        episode_id=f"ep{config.seed:08x}-{seed:06d}",
        clip_features=clip_features.astype(np.float32),
        query_tokens=query_tokens.astype(np.float32),
        noun_embeddings=noun_embeddings.astype(np.float32),
        detections=detections,
        gt=gt,
        narrations=narrations,
        meta={"fps": config.fps, "window_frames": config.window_frames,
              "signal_mode": config.signal_mode},
    )
    record.validate()
    return record


def generate_split(config: GeneratorConfig, split: str) -> list[EpisodeRecord]:
    if split == "train":
        seeds = range(config.train_episodes)
    elif split == "val":
        seeds = range(VAL_SEED_OFFSET, VAL_SEED_OFFSET + config.val_episodes)
    else:
        raise ValueError(f"unknown split {split!r}")
    return [generate_episode(config, s) for s in seeds]


# -- container ---------------------------------------------------------------

_DTYPE_CODES = {"float32": "<f4", "int32": "<i4"}


def _detection_arrays(dets: list[Detection], d_obj: int):
    n = len(dets)
    clip = np.array([d.clip_index for d in dets], dtype=np.int32)
    cat = np.array([d.category_id for d in dets], dtype=np.int32)
    conf = np.array([d.confidence for d in dets], dtype=np.float32)
    emb = (np.stack([d.category_embedding for d in dets]).astype(np.float32)
           if n else np.zeros((0, d_obj), dtype=np.float32))
    return {"det_clip": clip, "det_cat": cat, "det_conf": conf, "det_emb": emb}


def _record_arrays(rec: EpisodeRecord) -> dict[str, np.ndarray]:
    d_obj = rec.noun_embeddings.shape[1]
    arrays = {
        "clip_features": rec.clip_features.astype(np.float32),
        "query_tokens": rec.query_tokens.astype(np.float32),
        "noun_embeddings": rec.noun_embeddings.astype(np.float32),
    }
    arrays.update(_detection_arrays(rec.detections, d_obj))
    return arrays


def write_dataset(records: list[EpisodeRecord], root_path: str | Path,
                  generator_config_hash: str = "") -> dict:
    """Write records under root_path; returns the manifest dict."""
    root = Path(root_path)
    (root / "arrays").mkdir(parents=True, exist_ok=True)
    episodes = []
    for rec in records:
        rec.validate()
        entry = {
            "episode_id": rec.episode_id,
            "gt": [rec.gt.start, rec.gt.end],
            "narrations": [[t, s] for t, s in rec.narrations],
            "meta": rec.meta,
            "arrays": {},
        }
        for name, arr in _record_arrays(rec).items():
            dtype = str(arr.dtype)
            rel = f"arrays/{rec.episode_id}.{name}.bin"
            (root / rel).write_bytes(np.ascontiguousarray(arr.astype(_DTYPE_CODES[dtype])).tobytes())
            entry["arrays"][name] = {"path": rel, "shape": list(arr.shape), "dtype": dtype}
        episodes.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "generator_config_hash": generator_config_hash,
        "episodes": episodes,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return manifest


def _load_array(root: Path, episode_id: str, name: str, spec: dict) -> np.ndarray:
    path = root / spec["path"]
    if not path.exists():
        raise DatasetError(f"episode {episode_id}: missing array file {spec['path']}")
    shape = tuple(spec["shape"])
    code = _DTYPE_CODES.get(spec["dtype"])
    if code is None:
        raise DatasetError(f"episode {episode_id}: unsupported dtype {spec['dtype']!r}")
    expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(code).itemsize
    raw = path.read_bytes()
    if len(raw) != expected:
        raise DatasetError(
            f"episode {episode_id}: array {spec['path']} has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=code).reshape(shape)


def read_dataset(root_path: str | Path) -> list[EpisodeRecord]:
    root = Path(root_path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("version")
    if version not in SUPPORTED_VERSIONS:
        raise DatasetError(f"unsupported manifest version {version} (supported: {sorted(SUPPORTED_VERSIONS)})")
    records = []
    for entry in manifest["episodes"]:
        eid = entry["episode_id"]
        arrays = {name: _load_array(root, eid, name, spec)
                  for name, spec in entry["arrays"].items()}
        dets = [
            Detection(clip_index=int(c), category_id=int(k), confidence=float(p),
                      category_embedding=np.array(e))
            for c, k, p, e in zip(arrays["det_clip"], arrays["det_cat"],
                                  arrays["det_conf"], arrays["det_emb"])
        ]
        rec = EpisodeRecord(
            episode_id=eid,
            clip_features=arrays["clip_features"],
            query_tokens=arrays["query_tokens"],
            noun_embeddings=arrays["noun_embeddings"],
            detections=dets,
            gt=Interval(*entry["gt"]),
            narrations=[(float(t), str(s)) for t, s in entry["narrations"]],
            meta=entry["meta"],
        )
        rec.validate()
        records.append(rec)
    return records
