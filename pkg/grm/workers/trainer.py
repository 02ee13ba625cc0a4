"""
Training Worker

Trains one GRM network on synthetic scenarios.

Pipeline Flow (per pair):
    1. Sample → scenario k, template frame t, search frame t + Δ (Δ ~ U[1, max_gap])
    2. Crop → template around the frame-t box; search around the jittered
       frame-(t+Δ) box (center shift and log-scale jitter)
    3. Forward → embedding, encoder with train-mode Gumbel divisions, head
    4. Loss → focal + GIoU + L1 against the ground truth mapped into the crop
    5. Update → backward on a fresh tape, AdamW step

Learning rate: TrainConfig.learning_rate, multiplied by decay_factor from
decay_epoch on (default: 80% of the epochs).

Reproducibility:
    - network initialization is seeded with the run seed
    - every pair draws from its own generator seeded by (seed, epoch, index),
      Gumbel noise from one seeded by (gumbel.rng_seed, seed, epoch, index)
    so (config, seed) determine the checkpoint bytes.

Error Handling:
    - a NaN/Inf anywhere in the forward or backward pass aborts training with
      TrainingDivergedError naming the step and the scope (e.g. encoder.layer3)

Usage:
    result = train(cfg, out_dir=Path("runs/smoke"))
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from grm.autograd.tensor import Tape, Tensor, using_tape
from grm.core.errors import NonFiniteError, TrainingDivergedError
from grm.models.losses import LossTerms, compute_losses
from grm.models.network import GRMNetwork
from grm.models.optim import AdamW, step_decay_lr
from grm.schemas.config import RunConfig
from grm.schemas.geometry import BBox
from grm.schemas.reports import EpochRecord
from grm.services.checkpoint import save_checkpoint
from grm.services.cropping import crop_search, crop_template
from grm.services.scenario_generator import Frame, build_suite, generate_scenario

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.grmc"
LOSS_CSV_NAME = "loss.csv"
CONFIG_NAME = "config.json"


@dataclass
class TrainingPair:
    template: np.ndarray
    search: np.ndarray
    target: BBox


@dataclass
class TrainingResult:
    network: GRMNetwork
    epochs: List[EpochRecord] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    checkpoint_sha256: Optional[str] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.epochs[-1].mean_loss if self.epochs else None


class PairSampler:
    """Draws jittered (template, search, target) pairs from rendered scenarios"""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.sequences: List[List[Frame]] = [generate_scenario(s) for s in build_suite(cfg.train.scenarios)]
        logger.info(f"Rendered {len(self.sequences)} training scenarios ({cfg.train.scenarios.preset.value})")

    def sample(self, rng: np.random.Generator) -> TrainingPair:
        train = self.cfg.train
        patch = self.cfg.model.patch
        frames = self.sequences[int(rng.integers(len(self.sequences)))]
        gap = int(rng.integers(1, min(train.max_gap, len(frames) - 1) + 1))
        start = int(rng.integers(0, len(frames) - gap))
        first, second = frames[start], frames[start + gap]

        template = crop_template(first.image, first.gt_box, self.cfg.crop, patch.template_size)
        width, height = second.size
        extent = np.sqrt(second.gt_box.w * width * second.gt_box.h * height)
        shift = rng.uniform(-train.center_jitter, train.center_jitter, size=2) * extent
        scale = float(np.exp(rng.uniform(-train.scale_jitter, train.scale_jitter)))
        search, record = crop_search(
            second.image, second.gt_box, self.cfg.crop, patch.search_size,
            shift=(float(shift[0]), float(shift[1])), scale=scale,
        )
        return TrainingPair(template=template.data, search=search.data, target=record.to_crop(second.gt_box))


def _pair_rngs(cfg: RunConfig, seed: int, epoch: int, index: int) -> Tuple[np.random.Generator, np.random.Generator]:
    data_rng = np.random.default_rng([seed, epoch, index])
    noise_rng = np.random.default_rng([cfg.train.gumbel.rng_seed, seed, epoch, index])
    return data_rng, noise_rng


def train_step(
    net: GRMNetwork,
    optimizer: AdamW,
    pair: TrainingPair,
    cfg: RunConfig,
    noise_rng: np.random.Generator,
) -> LossTerms:
    """Forward, backward and one optimizer update on a single pair"""
    optimizer.zero_grad()
    with using_tape(Tape()):
        result = net.forward(Tensor(pair.template), Tensor(pair.search), cfg.train.gumbel, rng=noise_rng)
        terms = compute_losses(result.head, pair.target, cfg.train.loss)
        terms.total.backward()
    optimizer.step()
    return terms


def train(cfg: RunConfig, seed: Optional[int] = None, out_dir: Optional[Path] = None) -> TrainingResult:
    """
    Train a network and optionally write its artifacts

    Args:
        cfg: Run configuration
        seed: Run seed (defaults to cfg.seed)
        out_dir: When given, receives model.grmc, loss.csv and config.json

    Returns:
        TrainingResult with the trained network and per-epoch records

    Raises:
        TrainingDivergedError: a non-finite value appeared (exit code 3)
    """
    seed = cfg.seed if seed is None else seed
    train_cfg = cfg.train
    net = GRMNetwork.initialize(cfg.model, seed)
    optimizer = AdamW(dict(net.store.items()), train_cfg.learning_rate, train_cfg.optimizer)
    sampler = PairSampler(cfg) if train_cfg.epochs > 0 else None
    decay_epoch = train_cfg.resolved_decay_epoch()

    result = TrainingResult(network=net)
    step = 0
    for epoch in range(train_cfg.epochs):
        optimizer.lr = step_decay_lr(train_cfg.learning_rate, epoch, decay_epoch, train_cfg.decay_factor)
        losses = []
        for index in range(train_cfg.pairs_per_epoch):
            step += 1
            data_rng, noise_rng = _pair_rngs(cfg, seed, epoch, index)
            pair = sampler.sample(data_rng)
            try:
                terms = train_step(net, optimizer, pair, cfg, noise_rng)
            except NonFiniteError as e:
                raise TrainingDivergedError(str(e), step=step, scope=e.scope) from e
            loss = terms.total.item()
            if not np.isfinite(loss):
                raise TrainingDivergedError("loss is not finite", step=step)
            losses.append(loss)

        record = EpochRecord(epoch=epoch + 1, mean_loss=float(np.mean(losses)), lr=optimizer.lr)
        result.epochs.append(record)
        logger.info(
            f"Epoch {record.epoch}/{train_cfg.epochs}: mean loss {record.mean_loss:.4f}, lr {record.lr:.1e}",
            extra=record.model_dump(),
        )

    if out_dir is not None:
        write_training_outputs(result, cfg, seed, Path(out_dir))
    return result


def write_training_outputs(result: TrainingResult, cfg: RunConfig, seed: int, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.checkpoint_path = out_dir / CHECKPOINT_NAME
    result.checkpoint_sha256 = save_checkpoint(result.checkpoint_path, cfg.model, result.network.store.state_dict())
    write_loss_csv(result.epochs, out_dir / LOSS_CSV_NAME)
    resolved: Dict = cfg.model_dump(mode="json")
    resolved["seed"] = seed
    (out_dir / CONFIG_NAME).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def write_loss_csv(epochs: List[EpochRecord], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "mean_loss", "lr"], lineterminator="\n")
        writer.writeheader()
        for record in epochs:
            writer.writerow(record.model_dump())
