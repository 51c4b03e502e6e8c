"""Optimization loop: Adam, warmup + poly decay, multilevel supervision.

The schedule composes multiplicatively: a linear ramp over the warmup
span times the poly factor (1 - (step/total)^power), so the rate is 0 at
step 0 and at the final step. The backbone parameter group runs at a
fraction of the base rate. Checkpoints bundle parameters, optimizer
state, RNG states and the config hash; resuming with a different config
is refused.
"""

import json
import math
import os
import random
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import ExperimentConfig
from .data import SaliencyDataset, batches, load_manifest
from .exceptions import ConfigError, TrainingDiverged
from .losses import total_loss
from .metrics import MetricReport
from .synth import SynthSpec, generate_samples


def lr_at(step, total_steps, base_lr, warmup, power=0.9):
    """Closed-form rate: linear warmup ramp times poly decay."""
    ramp = min(step / warmup, 1.0) if warmup > 0 else 1.0
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base_lr * ramp * (1.0 - frac ** power)


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


@dataclass
class TrainResult:
    run_dir: str
    best_path: str
    last_path: str
    steps: int
    best_weighted_f: float
    history: list = field(default_factory=list)
    first_loss: float = 0.0
    last_loss: float = 0.0


def save_checkpoint(path, model, optimizer, step, epoch, cfg, shuffle_rng,
                    best_wf):
    torch.save({
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "step": step,
        "epoch": epoch,
        "config_hash": cfg.hash(),
        "arch_hash": cfg.arch_hash(),
        "config_text": cfg.to_text(),
        "best_weighted_f": best_wf,
        "rng": {
            "torch": torch.get_rng_state(),
            "python": random.getstate(),
            "shuffle": shuffle_rng.bit_generator.state,
        },
    }, path)


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)


def build_datasets(cfg: ExperimentConfig):
    resolution = cfg.get("resolution")
    if cfg.get("data.synth.enable"):
        spec = SynthSpec(
            canvas=resolution,
            min_shapes=cfg.get("data.synth.min_shapes"),
            max_shapes=cfg.get("data.synth.max_shapes"),
            noise=cfg.get("data.synth.noise"),
            seed=cfg.get("seed"),
        )
        samples = generate_samples(spec, cfg.get("data.synth.count"))
        train = SaliencyDataset(samples, resolution, cfg.augment_config(),
                                seed=cfg.get("seed"))
        holdout = SaliencyDataset(samples, resolution, seed=cfg.get("seed"))
        return train, holdout
    manifest = cfg.get("data.train_manifest")
    if not manifest:
        raise ConfigError("either data.train_manifest or data.synth.enable is required")
    train = SaliencyDataset(load_manifest(manifest, "train"), resolution,
                            cfg.augment_config(), seed=cfg.get("seed"))
    val_manifest = cfg.get("data.val_manifest")
    if val_manifest:
        holdout = SaliencyDataset(load_manifest(val_manifest, "val"), resolution,
                                  seed=cfg.get("seed"))
    else:
        holdout = SaliencyDataset(train.samples, resolution, seed=cfg.get("seed"))
    return train, holdout


@torch.no_grad()
def evaluate_heads(model, dataset, partition_cfg, head_ids=("r3",), batch_size=4):
    """Per-head metric reports over a dataset (train-mode forward)."""
    was_training = model.training
    model.eval()
    collected = {h: [] for h in head_ids}
    index = 0
    for images, masks in batches(dataset, batch_size):
        out = model(images, mode="train", partition_cfg=partition_cfg)
        heads = out.heads_at(tuple(masks.shape[2:]))
        for b in range(images.shape[0]):
            gt = masks[b, 0].numpy() > 0.5
            for h in head_ids:
                pred = heads[h][b, 0].clamp(0, 1).numpy().astype(np.float64)
                collected[h].append((f"img{index:04d}", pred, gt))
            index += 1
    if was_training:
        model.train()
    return {h: MetricReport.from_pairs(rows) for h, rows in collected.items()}


def train(cfg: ExperimentConfig, train_set=None, holdout=None, resume=None,
          log_fn=None):
    seed_everything(cfg.get("seed"))
    if train_set is None:
        train_set, holdout = build_datasets(cfg)
    model = cfg.build_model()
    base_lr = cfg.get("train.lr")
    optimizer = torch.optim.Adam([
        {"params": list(model.backbone_parameters()), "name": "backbone"},
        {"params": list(model.decoder_parameters()), "name": "decoder"},
    ], lr=base_lr)

    batch_size = cfg.get("train.batch_size")
    steps_per_epoch = max(math.ceil(len(train_set) / batch_size), 1)
    total_steps = cfg.get("train.steps") or cfg.get("train.epochs") * steps_per_epoch
    warmup = cfg.get("train.warmup")
    if warmup < 0:
        warmup = max(int(round(0.05 * total_steps)), 1)
    if warmup > total_steps:
        raise ConfigError(f"warmup {warmup} exceeds total steps {total_steps}")

    run_dir = cfg.get("train.run_dir")
    os.makedirs(run_dir, exist_ok=True)
    partition_cfg = cfg.partition_config()
    variant = cfg.get("loss.variant")
    reduction = cfg.get("loss.reduction")
    grad_clip = cfg.get("train.grad_clip")
    mult = cfg.get("train.backbone_lr_mult")

    shuffle_rng = np.random.default_rng(cfg.get("seed"))
    step, epoch, best_wf = 0, 0, -1.0
    if resume is not None:
        state = load_checkpoint(resume)
        if state["config_hash"] != cfg.hash():
            raise ConfigError(
                f"checkpoint config hash {state['config_hash']} does not match "
                f"current config {cfg.hash()}"
            )
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        step, epoch = state["step"], state["epoch"]
        best_wf = state["best_weighted_f"]
        torch.set_rng_state(state["rng"]["torch"])
        random.setstate(state["rng"]["python"])
        shuffle_rng.bit_generator.state = state["rng"]["shuffle"]

    best_path = os.path.join(run_dir, "best.pt")
    last_path = os.path.join(run_dir, "last.pt")
    log_path = os.path.join(run_dir, "train_log.jsonl")
    log_file = open(log_path, "a", encoding="utf-8")
    history = []
    first_loss = last_loss = None

    def run_eval():
        nonlocal best_wf
        report = evaluate_heads(model, holdout, partition_cfg, ("r3",))["r3"]
        wf = report.aggregate.get("weighted_f", 0.0)
        history.append({"step": step, **report.aggregate})
        if wf > best_wf:
            best_wf = wf
            save_checkpoint(best_path, model, optimizer, step, epoch, cfg,
                            shuffle_rng, best_wf)
        save_checkpoint(last_path, model, optimizer, step, epoch, cfg,
                        shuffle_rng, best_wf)
        if log_fn:
            log_fn(f"eval step {step}: " + " ".join(
                f"{k}={v:.4f}" for k, v in report.aggregate.items()))

    model.train()
    try:
        while step < total_steps:
            train_set.set_epoch(epoch)
            for images, masks in batches(train_set, batch_size, shuffle_rng):
                if step >= total_steps:
                    break
                rate = lr_at(step, total_steps, base_lr, warmup,
                             cfg.get("train.poly_power"))
                for group in optimizer.param_groups:
                    group["lr"] = rate * (mult if group["name"] == "backbone" else 1.0)
                out = model(images, mode="train", partition_cfg=partition_cfg)
                heads = out.heads_at(tuple(masks.shape[2:]))
                report = total_loss(heads, masks, variant, reduction)
                loss = report.total
                if not torch.isfinite(loss):
                    dump = os.path.join(run_dir, f"nonfinite_step{step}.pt")
                    torch.save({"images": images, "masks": masks, "step": step}, dump)
                    raise TrainingDiverged(step, dump)
                optimizer.zero_grad()
                loss.backward()
                if grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
                optimizer.step()
                record = {"step": step, "lr": rate, **report.to_record()}
                log_file.write(json.dumps(record) + "\n")
                if first_loss is None:
                    first_loss = float(loss.detach())
                last_loss = float(loss.detach())
                step += 1
                if step % cfg.get("train.eval_every") == 0:
                    run_eval()
            epoch += 1
        run_eval()
    finally:
        log_file.close()
    return TrainResult(run_dir, best_path, last_path, step, best_wf, history,
                       first_loss or 0.0, last_loss or 0.0)
