"""Training and evaluation loops for the two-phase protocol.

Pretraining runs the main branch with query attention only (object
cross-attention and the shot branch stay untouched); fine-tuning runs the
full model per the ablation flags. The optimizer is AdamW with decoupled
decay on matrix-shaped parameters, linear warmup, and cosine decay.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .core import Interval, seconds_per_clip
from .data import (EpisodeRecord, GeneratorConfig, generate_split, read_dataset,
                   write_dataset)
from .inference import ScoredMoment, decode_predictions, rank_at_m, soft_nms
from .losses import (LossNormalizer, assign_positives, diou_loss_batch, focal_loss,
                     infonce, total_loss)
from .model import Batch, GroundingModel, build_object_bank, collate
from .params import ParamStore
from .report import validate_report
from .shots import ContrastiveBatch, positive_pairs, segment_shots

log = logging.getLogger(__name__)

METRIC_KEYS = ("R@1,0.3", "R@1,0.5", "R@5,0.3", "R@5,0.5")


class AdamW:
    """Decoupled-weight-decay Adam; decay applies to >=2-D tensors only."""

    def __init__(self, lr: float, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state: dict[str, dict] = {}

    def step(self, store: ParamStore, lr_factor: float = 1.0):
        b1, b2 = self.betas
        lr = self.lr * lr_factor
        for name, p in store.items():
            if p.grad is None:
                continue
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                self.state[name] = st
            st["t"] += 1
            st["m"] = b1 * st["m"] + (1.0 - b1) * p.grad
            st["v"] = b2 * st["v"] + (1.0 - b2) * p.grad * p.grad
            m_hat = st["m"] / (1.0 - b1 ** st["t"])
            v_hat = st["v"] / (1.0 - b2 ** st["t"])
            if p.data.ndim >= 2 and self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, dict]:
        return self.state

    def load_state_dict(self, state: dict[str, dict]):
        self.state = {
            name: {"m": np.array(st["m"], dtype=np.float64),
                   "v": np.array(st["v"], dtype=np.float64),
                   "t": int(st["t"])}
            for name, st in state.items()
        }


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for _, p in store.items():
            if p.grad is not None:
                p.grad = p.grad * scale
    return float(norm)


def lr_factor(step: int, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to 1, then cosine decay to 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return 0.5 * (1.0 + np.cos(np.pi * progress))


def phase_flags(cfg: RunConfig, phase: str) -> tuple[bool, bool]:
    """(use_objects, use_shot_branch) for a phase: pretraining runs the main
    branch without object cross-attention and without the shot branch."""
    if phase == "pretrain":
        return False, False
    return cfg.ablation.use_objects, cfg.ablation.use_shot_branch


def shot_len_clips(cfg: RunConfig) -> float:
    return cfg.shots.shot_len_seconds / seconds_per_clip(cfg.data.window_frames, cfg.data.fps)


def compute_step_loss(model: GroundingModel, batch: Batch, cfg: RunConfig,
                      normalizer: LossNormalizer, phase: str):
    """Full loss for one batch; returns (loss Tensor, stats dict)."""
    use_objects, use_shot = phase_flags(cfg, phase)
    qf = model.encode_query(batch)
    outputs = model.forward_main(batch, use_objects, query=qf)

    conf = ag.concat(outputs.confidences, axis=1)
    offs = ag.concat(outputs.offsets, axis=1)
    valid = np.concatenate(outputs.valid, axis=1)
    ranges = cfg.loss.resolved_ranges(cfg.model.L_s)

    pos_rows, cls_rows = [], []
    meta = None
    for b, gt in enumerate(batch.gts):
        a = assign_positives(outputs.anchors, [lv[b] for lv in outputs.valid], gt,
                             cfg.loss.center_radius, ranges)
        pos_rows.append(a.positive_mask)
        cls_rows.append(a.class_targets)
        meta = a
    pos = np.stack(pos_rows)
    cls_targets = np.stack(cls_rows)

    l_cls = focal_loss(conf, cls_targets, cfg.loss.alpha, cfg.loss.gamma, valid)
    l_reg = diou_loss_batch(
        offs, meta.timestamp, meta.stride,
        np.array([g.start for g in batch.gts]),
        np.array([g.end for g in batch.gts]),
        pos,
    )
    l_ml = l_cls + l_reg

    l_con = Tensor(0.0)
    if use_shot:
        shot_sets = [
            segment_shots(narr, batch.num_clips, cfg.shots.mode,
                          {k: tuple(v) for k, v in cfg.shots.verb_groups.items()},
                          shot_len=shot_len_clips(cfg))
            for narr in batch.narrations
        ]
        q_emb, v_emb, _ = model.forward_shot(batch, shot_sets, query=qf)
        pairs = positive_pairs(batch.gts, shot_sets, list(range(batch.size)))
        l_con = infonce(ContrastiveBatch(q_emb, v_emb, pairs, cfg.loss.tau))

    num_pos = int(pos.sum())
    loss = total_loss(l_ml, l_con, normalizer, cfg.loss.lambda_, num_pos)
    stats = {
        "l_cls": l_cls.item(), "l_reg": l_reg.item(), "l_con": l_con.item(),
        "num_positives": num_pos, "c_ema": normalizer.c_ema,
    }
    return loss, stats


def evaluate(model: GroundingModel, records: list[EpisodeRecord], cfg: RunConfig,
             use_objects: bool | None = None):
    """Decode + SoftNMS + Rank@m metrics; returns (metrics, predictions by id)."""
    if not records:
        raise ValueError("evaluation needs at least one episode")
    if use_objects is None:
        use_objects = cfg.ablation.use_objects
    preds: list[list[ScoredMoment]] = []
    gts: list[Interval] = []
    by_id: dict[str, list[ScoredMoment]] = {}
    bs = cfg.optim.batch_size
    for i in range(0, len(records), bs):
        chunk = records[i:i + bs]
        batch = collate(chunk, cfg)
        outputs = model.forward_main(batch, use_objects)
        for b, rec in enumerate(chunk):
            moments = decode_predictions(outputs, b, batch.num_clips,
                                         cfg.infer.pre_nms_floor, cfg.infer.pre_nms_topk)
            kept = soft_nms(moments, cfg.infer.sigma, cfg.infer.nms_floor,
                            cfg.infer.max_keep)
            preds.append(kept)
            gts.append(rec.gt)
            by_id[rec.episode_id] = kept
    metrics = {
        f"R@{m},{n}": rank_at_m(preds, gts, m, float(n))
        for m in (1, 5) for n in ("0.3", "0.5")
    }
    metrics["num_queries"] = len(gts)
    return metrics, by_id


def _iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def load_or_generate(cfg: RunConfig, data_dir: str | None, split: str) -> list[EpisodeRecord]:
    if data_dir is not None:
        return read_dataset(Path(data_dir) / split)
    return generate_split(cfg.data, split)


def train(cfg: RunConfig, seed: int, out_dir: str | Path, phase: str,
          init: str | Path | None = None, data_dir: str | None = None,
          quiet: bool = False):
    """Run one training phase end to end; returns (checkpoint_path, report)."""
    if phase != cfg.phase:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "phase": phase})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_records = load_or_generate(cfg, data_dir, "train")
    val_records = load_or_generate(cfg, data_dir, "val")
    if not train_records:
        raise ConfigError("training set is empty")

    model = GroundingModel(cfg, init_seed=seed)
    optimizer = AdamW(lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    normalizer = LossNormalizer(momentum=cfg.loss.momentum_c)
    start_epoch = 0
    resumed = False

    if init is not None:
        ckpt = load_checkpoint(init)
        if ckpt.config_hash == cfg.hash():
            model.store.load_arrays(ckpt.params)
            optimizer.load_state_dict(ckpt.opt_state)
            normalizer = LossNormalizer.from_state(ckpt.normalizer_state)
            start_epoch = ckpt.epoch
            resumed = True
            log.info("resuming %s from epoch %d", phase, start_epoch)
        else:
            init_cfg = RunConfig.from_dict(ckpt.config_dict)
            if init_cfg.model_hash() != cfg.model_hash():
                raise ConfigError(
                    "checkpoint model architecture does not match the config; refusing to load")
            model.store.load_arrays(ckpt.params)
            log.info("warm start from %s checkpoint %s", ckpt.phase, init)
    if (phase == "finetune" and not resumed and cfg.ablation.use_objects
            and cfg.ablation.init_object_from_query):
        model.copy_query_attention_to_objects()

    use_objects_eval, _ = phase_flags(cfg, phase)
    banks = {rec.episode_id: build_object_bank(rec, cfg) for rec in train_records}
    steps_per_epoch = (len(train_records) + cfg.optim.batch_size - 1) // cfg.optim.batch_size
    total_steps = cfg.optim.total_epochs * steps_per_epoch
    warmup_steps = cfg.optim.warmup_epochs * steps_per_epoch

    epochs_log = []
    metrics_path = out / "metrics.jsonl"
    mode = "a" if (resumed and metrics_path.exists()) else "w"
    t0 = time.time()
    with open(metrics_path, mode, encoding="utf-8") as mf:
        for epoch in range(start_epoch, cfg.optim.total_epochs):
            rng = np.random.default_rng(seed * 100_003 + epoch)
            losses, all_stats = [], []
            for step_in_epoch, idx in enumerate(_iterate_batches(
                    len(train_records), cfg.optim.batch_size, rng)):
                batch = collate([train_records[i] for i in idx], cfg, banks)
                loss, stats = compute_step_loss(model, batch, cfg, normalizer, phase)
                model.store.zero_grads()
                loss.backward()
                clip_gradients(model.store, cfg.optim.grad_clip)
                step = epoch * steps_per_epoch + step_in_epoch
                optimizer.step(model.store, lr_factor(step, warmup_steps, total_steps))
                losses.append(loss.item())
                all_stats.append(stats)
            val_metrics, _ = evaluate(model, val_records, cfg, use_objects=use_objects_eval) \
                if val_records else ({}, {})
            entry = {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "l_cls": float(np.mean([s["l_cls"] for s in all_stats])),
                "l_reg": float(np.mean([s["l_reg"] for s in all_stats])),
                "l_con": float(np.mean([s["l_con"] for s in all_stats])),
                "c_ema": normalizer.c_ema,
                "lr_factor": lr_factor(min((epoch + 1) * steps_per_epoch, total_steps) - 1,
                                       warmup_steps, total_steps),
                "val": val_metrics,
                "elapsed_seconds": time.time() - t0,
            }
            epochs_log.append(entry)
            mf.write(json.dumps(entry, sort_keys=True) + "\n")
            mf.flush()
            if not quiet:
                log.info("epoch %d loss=%.4f val=%s", epoch, entry["loss"],
                         {k: round(v, 2) for k, v in val_metrics.items()})

    ckpt_path = out / "checkpoint.npz"
    save_checkpoint(ckpt_path, model.store.state_arrays(), optimizer.state_dict(),
                    normalizer.state(), cfg.optim.total_epochs, cfg.to_dict(),
                    cfg.hash(), phase)
    report = {
        "kind": "train",
        "phase": phase,
        "seed": seed,
        "config_hash": cfg.hash(),
        "epochs": epochs_log,
        "final_val": epochs_log[-1]["val"] if epochs_log else {},
        "notes": [
            "synthetic feature streams stand in for pretrained backbones",
            "components absent from the init checkpoint start from fresh or "
            "query-attention-copied weights",
        ],
    }
    validate_report(report)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True),
                                     encoding="utf-8")
    return ckpt_path, report


def run_pretrain(cfg: RunConfig, seed: int, out_dir: str | Path,
                 data_dir: str | None = None):
    return train(cfg, seed, out_dir, "pretrain", init=None, data_dir=data_dir)


def run_finetune(cfg: RunConfig, seed: int, out_dir: str | Path,
                 init: str | Path | None = None, data_dir: str | None = None):
    return train(cfg, seed, out_dir, "finetune", init=init, data_dir=data_dir)


def run_eval(cfg: RunConfig, ckpt_path: str | Path, data_dir: str | Path,
             out_path: str | Path):
    """Evaluate a checkpoint on a dataset directory; writes metrics + dump."""
    ckpt = load_checkpoint(ckpt_path)
    ckpt_cfg = RunConfig.from_dict(ckpt.config_dict)
    if ckpt_cfg.model_hash() != cfg.model_hash():
        raise ConfigError("checkpoint model architecture does not match the config")
    model = GroundingModel(cfg, init_seed=0)
    model.store.load_arrays(ckpt.params)
    records = read_dataset(data_dir)
    use_objects = phase_flags(cfg, ckpt.phase)[0]
    metrics, by_id = evaluate(model, records, cfg, use_objects=use_objects)
    report = {"kind": "eval", "config_hash": cfg.hash(), "metrics": metrics}
    validate_report(report)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=1, sort_keys=True), encoding="utf-8")
    spc = seconds_per_clip(cfg.data.window_frames, cfg.data.fps)
    dump = out_path.with_suffix(".preds.jsonl")
    with open(dump, "w", encoding="utf-8") as f:
        for rec in records:
            for m in by_id[rec.episode_id]:
                f.write(json.dumps({
                    "episode_id": rec.episode_id,
                    "start_seconds": m.interval.start * spc,
                    "end_seconds": m.interval.end * spc,
                    "score": m.score,
                }, sort_keys=True) + "\n")
    return metrics


def run_ablate(cfg: RunConfig, seed: int, out_dir: str | Path, replicates: int = 1,
               data_dir: str | None = None):
    """2x2 {objects, contrastive} matrix plus the shot-mode sweep."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_structure = []
    for use_shot in (False, True):
        for use_obj in (False, True):
            for rep in range(replicates):
                run_cfg = RunConfig.from_dict({**cfg.to_dict(), "phase": "finetune"})
                run_cfg.ablation.use_objects = use_obj
                run_cfg.ablation.use_shot_branch = use_shot
                run_seed = seed + rep
                name = f"obj={'on' if use_obj else 'off'}_con={'on' if use_shot else 'off'}"
                _, report = train(run_cfg, run_seed, out / f"structure_{name}_s{run_seed}",
                                  "finetune", data_dir=data_dir, quiet=True)
                rows_structure.append({
                    "name": name, "use_objects": use_obj, "use_contrastive": use_shot,
                    "seed": run_seed, "config_hash": run_cfg.hash(),
                    "metrics": report["final_val"],
                })
    rows_modes = []
    for mode in ("R", "R+HM", "R+HM+RM", "fixed_length"):
        for rep in range(replicates):
            run_cfg = RunConfig.from_dict({**cfg.to_dict(), "phase": "finetune"})
            run_cfg.ablation.use_shot_branch = True
            run_cfg.shots.mode = mode
            run_seed = seed + rep
            _, report = train(run_cfg, run_seed, out / f"mode_{mode.replace('+', '_')}_s{run_seed}",
                              "finetune", data_dir=data_dir, quiet=True)
            rows_modes.append({
                "name": f"mode={mode}", "shot_mode": mode, "seed": run_seed,
                "config_hash": run_cfg.hash(), "metrics": report["final_val"],
            })
    report = {"kind": "ablate", "config_hash": cfg.hash(), "seed": seed,
              "model_structure": rows_structure, "shot_modes": rows_modes}
    validate_report(report)
    (out / "ablation.json").write_text(json.dumps(report, indent=1, sort_keys=True),
                                       encoding="utf-8")
    return report
