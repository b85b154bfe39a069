"""Training loop: AdamW with linear warmup, step logging, checkpoints."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR

from .config import RunConfig, parse_config
from .core import QueryInstance, build_instances
from .dataset import Dataset
from .evaluation import evaluate_model
from .heads import DecodeThresholds
from .model import JointModel, batch_losses, build_model, load_image_tensor
from .objective import BalanceState
from .querybank import QueryBank

CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when a training run must abort (non-finite loss etc.)."""


def thresholds_from_config(config: RunConfig) -> DecodeThresholds:
    return DecodeThresholds(
        boundary=config.boundary_threshold,
        match=config.match_threshold,
        max_span_length=config.max_span_length,
    )


def build_model_from_config(config: RunConfig) -> JointModel:
    if config.encoder != "reference":
        raise ValueError(
            "only the reference backend is constructible from a config; the "
            "pretrained backend needs adapter objects passed in code"
        )
    return build_model(
        dim=config.dim,
        num_heads=config.num_heads,
        dropout=config.dropout,
        text_hidden=config.text_hidden,
        text_layers=config.text_layers,
        text_heads=config.text_heads,
        vocab_size=config.vocab_size,
        max_positions=config.max_positions,
        update_source=config.update_source,
        share_scales=config.share_scales,
        finetune_text=config.finetune_text,
    )


def save_checkpoint(
    path: str | Path,
    model: JointModel,
    optimizer: Optional[AdamW],
    config: RunConfig,
    step: int,
    balance: BalanceState,
    python_rng: Optional[random.Random] = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_fingerprint": config.model_fingerprint(),
        "config_hash": config.config_hash(),
        "config_text": config.to_text(),
        "step": step,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "balance_state": (balance.last_valid, balance.warnings),
        "torch_rng": torch.get_rng_state(),
        "python_rng": python_rng.getstate() if python_rng is not None else None,
    }
    torch.save(payload, str(path))


@dataclass
class LoadedCheckpoint:
    model: JointModel
    config: RunConfig
    step: int
    payload: dict


def load_checkpoint(path: str | Path, expected_encoder: Optional[str] = None) -> LoadedCheckpoint:
    payload = torch.load(str(path), weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {version}, "
            f"this build reads version {CHECKPOINT_FORMAT_VERSION}"
        )
    config = parse_config(payload["config_text"], source=f"{path}:config")
    if payload["model_fingerprint"] != config.model_fingerprint():
        raise ValueError(f"checkpoint {path}: stored config does not match its fingerprint")
    if expected_encoder is not None and config.encoder != expected_encoder:
        raise ValueError(
            f"checkpoint {path} was trained with the {config.encoder!r} encoder "
            f"backend, but {expected_encoder!r} was requested"
        )
    model = build_model_from_config(config)
    model.load_state_dict(payload["model_state"])
    return LoadedCheckpoint(model=model, config=config, step=payload["step"], payload=payload)


@dataclass
class TrainResult:
    steps: int
    epochs_run: int
    log_path: Path
    last_checkpoint: Path
    best_checkpoint: Optional[Path]
    best_dev_f1: float
    balance_warnings: int


def _chunks(items: List[int], size: int) -> List[List[int]]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def train(
    config: RunConfig,
    dataset: Dataset,
    out_dir: str | Path,
    progress: bool = False,
) -> TrainResult:
    """Train on the train split, tracking dev F1 when a dev split exists."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    model = build_model_from_config(config)
    bank = QueryBank(config.query_strategy)
    thresholds = thresholds_from_config(config)

    train_examples = dataset.split("train")
    if not train_examples:
        raise ValueError("train split is empty or missing")
    instances: List[QueryInstance] = []
    for example in train_examples:
        instances.extend(build_instances(example, bank))
    images: Dict[str, torch.Tensor] = {}
    for instance in instances:
        if instance.image_ref not in images:
            images[instance.image_ref] = load_image_tensor(
                str(dataset.image_path(instance.image_ref))
            )

    steps_per_epoch = math.ceil(len(instances) / config.batch_size)
    planned_steps = config.epochs * steps_per_epoch
    if config.max_steps:
        planned_steps = min(planned_steps, config.max_steps)
    warmup_steps = max(1, round(planned_steps * config.warmup_fraction))

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = AdamW(trainable, lr=config.learning_rate, weight_decay=config.weight_decay)
    scheduler = LambdaLR(optimizer, lambda s: min(1.0, (s + 1) / warmup_steps))
    balance = BalanceState()
    order_rng = random.Random(config.seed)
    pair_rng = random.Random(config.seed + 1)

    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    log_path = out / "train_log.jsonl"
    last_path = out / "last.ckpt"
    best_path = out / "best.ckpt"
    best_f1 = -1.0
    have_best = False
    patience_left = config.early_stop_patience
    dev_available = bool(dataset.split("dev"))

    step = 0
    epochs_run = 0
    model.train()
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(config.epochs):
            stop = False
            order = list(range(len(instances)))
            order_rng.shuffle(order)
            for batch in _chunks(order, config.batch_size):
                per_instance = []
                for index in batch:
                    instance = instances[index]
                    state = model.run_instance(instance, images[instance.image_ref])
                    per_instance.append(model.instance_losses(state, instance, rng=pair_rng))
                try:
                    bl = batch_losses(
                        per_instance,
                        balance,
                        config.lambda1,
                        config.lambda2,
                        config.omega_override,
                    )
                except ValueError as err:
                    raise TrainingError(f"aborted at step {step}: {err}") from err
                lr_now = optimizer.param_groups[0]["lr"]
                optimizer.zero_grad()
                bl.total.backward()
                optimizer.step()
                scheduler.step()
                entry = {
                    "step": step,
                    "epoch": epoch,
                    "l_qg": float(bl.l_qg.detach()),
                    "l_ed": float(bl.l_ed.detach()),
                    "l_esp": float(bl.l_esp.detach()),
                    "l_start": float(bl.l_start.detach()),
                    "omega_f": bl.omega_f,
                    "lambda1": config.lambda1,
                    "lambda2": config.lambda2,
                    "total": float(bl.total.detach()),
                    "lr": lr_now,
                }
                log.write(json.dumps(entry) + "\n")
                if progress and step % 25 == 0:
                    print(f"step {step}: total={entry['total']:.4f} omega={entry['omega_f']}")
                step += 1
                if config.max_steps and step >= config.max_steps:
                    stop = True
                    break
            epochs_run = epoch + 1
            if (epoch + 1) % config.checkpoint_every_epochs == 0 or stop:
                save_checkpoint(last_path, model, optimizer, config, step, balance, order_rng)
            if dev_available:
                report, _ = evaluate_model(
                    model, bank, dataset, "dev", thresholds, config.grounding_subset
                )
                model.train()
                if report.span.f1 > best_f1:
                    best_f1 = report.span.f1
                    have_best = True
                    patience_left = config.early_stop_patience
                    save_checkpoint(best_path, model, optimizer, config, step, balance, order_rng)
                else:
                    patience_left -= 1
                    if patience_left <= 0:
                        stop = True
            if stop:
                break
    save_checkpoint(last_path, model, optimizer, config, step, balance, order_rng)
    return TrainResult(
        steps=step,
        epochs_run=epochs_run,
        log_path=log_path,
        last_checkpoint=last_path,
        best_checkpoint=best_path if have_best else None,
        best_dev_f1=best_f1,
        balance_warnings=balance.warnings,
    )


def read_log(path: str | Path) -> List[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries
