"""Optimization loop, learning-rate warmup, and split evaluation.

Every source of randomness is a generator derived from the run seed and the
epoch index, so a run replays exactly: identical shuffles, augmentation
draws, and dropout masks. Run logs keep wall-clock times on '#' comment
lines only; every other byte of the log is reproducible.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .augment import (LabeledBatch, filter_augment, frame_shift, mixup,
                      time_mask)
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (EvalConfig, PostprocConfig, TrainConfig,
                     resolved_config_text)
from .dataset import ClipData, DatasetManifest, read_dataset
from .errors import ConfigurationError, TrainingDiverged
from .evaluation import (PsdsReport, decode_events, intersection_f1,
                         median_filter_posteriors, psds1, threshold_grid)
from .events import Event, read_durations_tsv, write_events_tsv
from .model import ModelConfig, SEDModel, build_model, count_model_params


class Adam:
    """Adaptive-moment optimizer with bias correction over named tensors."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def step(self, scale: float = 1.0) -> None:
        self.t += 1
        rate = self.lr * scale * math.sqrt(1.0 - self.beta2 ** self.t) \
            / (1.0 - self.beta1 ** self.t)
        for (_, p), m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= rate * m / (np.sqrt(v) + self.eps)


def warmup_scale(step: int, warmup_steps: int) -> float:
    """Exponential ramp: exp(-5 (1 - step/warmup)^2) until warmup ends."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return 1.0
    frac = step / warmup_steps
    return math.exp(-5.0 * (1.0 - frac) ** 2)


def bce_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities, clipped for stability."""
    eps = 1e-7
    p = ad.clip(pred, eps, 1.0 - eps)
    target = np.asarray(target, dtype=pred.dtype)
    return -(target * ad.log(p)
             + (1.0 - target) * ad.log(1.0 - p)).mean()


def pool_strong_labels(strong: np.ndarray, factor: int) -> np.ndarray:
    """Max-pool frame labels down to the model's output rate: a pooled
    frame is active when any of its source frames is."""
    b, c, t = strong.shape
    if t % factor:
        raise ConfigurationError(
            f"{t} label frames are not divisible by time factor {factor}")
    return strong.reshape(b, c, t // factor, factor).max(axis=3)


def make_batch(clips: list[ClipData]) -> LabeledBatch:
    return LabeledBatch.create(
        np.stack([c.features for c in clips]),
        np.stack([c.strong for c in clips]),
        np.stack([c.weak for c in clips]))


def augment_batch(batch: LabeledBatch, cfg: TrainConfig,
                  rng: np.random.Generator) -> LabeledBatch:
    if cfg.frame_shift > 0:
        batch = frame_shift(batch, cfg.frame_shift, rng)
    if cfg.mixup_alpha > 0:
        batch = mixup(batch, cfg.mixup_alpha, rng)
    if cfg.time_mask > 0:
        batch = time_mask(batch, cfg.time_mask, rng)
    if cfg.filter_augment:
        batch = filter_augment(batch, rng,
                               (cfg.filter_bands_min, cfg.filter_bands_max),
                               cfg.filter_gain_db)
    return batch


# -- evaluation over a split ----------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    psds: PsdsReport
    f1: dict
    detections: list[Event]
    posterior_hop: float

    def format_text(self) -> str:
        lines = [self.psds.format_text(),
                 f"posterior hop seconds = {self.posterior_hop:g}",
                 f"macro_f1@0.5 = {self.f1['macro_f1']:.6f}"]
        for name, row in self.f1["per_class"].items():
            lines.append(f"  {name}: tp={row['tp']} fp={row['fp']} "
                         f"fn={row['fn']} f1={row['f1']:.6f}")
        return "\n".join(lines)


def predict_posteriors(model: SEDModel, clips: list[ClipData],
                       batch_size: int = 16) -> list[np.ndarray]:
    """Strong-head activations per clip, [C, T'], in clip order."""
    posteriors = []
    for lo in range(0, len(clips), batch_size):
        chunk = clips[lo:lo + batch_size]
        feats = np.stack([c.features for c in chunk])
        strong, _ = model.forward(feats, training=False)
        posteriors.extend(np.asarray(strong.data[i])
                          for i in range(len(chunk)))
    return posteriors


def filter_widths(postproc: PostprocConfig, n_classes: int):
    if postproc.median_per_class:
        if len(postproc.median_per_class) != n_classes:
            raise ConfigurationError(
                f"{len(postproc.median_per_class)} per-class filter widths "
                f"for {n_classes} classes")
        return postproc.median_per_class
    return postproc.median_filter


def evaluate_model(model: SEDModel, manifest: DatasetManifest, split: str,
                   eval_cfg: EvalConfig, postproc: PostprocConfig,
                   batch_size: int = 16,
                   out_dir: str | os.PathLike | None = None) -> EvalResult:
    """Posteriors -> median filter -> threshold sweep -> area score.

    Also decodes once at threshold 0.5 for the F1 table and the detection
    file written to out_dir (when given).
    """
    clips = read_dataset(manifest, split)
    if not clips:
        raise ConfigurationError(f"split {split!r} has no clips")
    class_names = manifest.config.classes
    hop = manifest.config.hop_seconds * model.config.time_factor
    widths = filter_widths(postproc, len(class_names))

    posteriors = predict_posteriors(model, clips, batch_size)
    filtered = [median_filter_posteriors(p, widths) for p in posteriors]

    per_threshold = []
    for thr in threshold_grid(eval_cfg.thresholds):
        dets = []
        for clip, post in zip(clips, filtered):
            dets.extend(decode_events(post, class_names, float(thr), hop,
                                      clip.clip_id))
        per_threshold.append(dets)

    gt = [Event(c.clip_id, on, off, label)
          for c in clips for label, on, off in c.events]
    durations = read_durations_tsv(
        os.path.join(manifest.root, f"{split}_durations.tsv"))
    report = psds1(per_threshold, gt, durations, eval_cfg,
                   class_names=class_names)

    at_half = []
    for clip, post in zip(clips, filtered):
        at_half.extend(decode_events(post, class_names, 0.5, hop,
                                     clip.clip_id))
    f1 = intersection_f1(at_half, gt, eval_cfg.dtc, eval_cfg.gtc)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_events_tsv(os.path.join(out_dir, f"detections_{split}.tsv"),
                         at_half)
    return EvalResult(report, f1, at_half, hop)


# -- the training loop -----------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    val_psds: float | None


@dataclass(frozen=True)
class TrainResult:
    history: tuple[EpochStats, ...]
    best_epoch: int
    best_val_psds: float
    best_checkpoint: str
    last_checkpoint: str
    log_path: str


def _divergence_diagnostics(model: SEDModel, loss_value: float) -> dict:
    magnitudes = {name: float(np.max(np.abs(p.data)))
                  for name, p in model.parameters()}
    worst = sorted(magnitudes, key=magnitudes.get, reverse=True)[:3]
    return {"loss": loss_value,
            "largest_params": {name: magnitudes[name] for name in worst}}


def train(model: SEDModel, manifest: DatasetManifest,
          train_cfg: TrainConfig, eval_cfg: EvalConfig,
          postproc: PostprocConfig, out_dir: str | os.PathLike,
          log_name: str = "train_log.txt") -> TrainResult:
    """Fit the model on the train split, validating on the valid split.

    Keeps the checkpoint with the best validation score (best.ckpt) along
    with the final state (last.ckpt) and writes a replayable run log.
    """
    os.makedirs(out_dir, exist_ok=True)
    clips = read_dataset(manifest, "train")
    if not clips:
        raise ConfigurationError("train split has no clips")
    n_batches = math.ceil(len(clips) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * n_batches
    warmup_steps = int(round(train_cfg.warmup_frac * total_steps))
    optimizer = Adam(model.parameters(), lr=train_cfg.lr)
    config_text = resolved_config_text(model.config, manifest.config,
                                       train_cfg, eval_cfg, postproc)

    log_lines = ["# training run log",
                 f"# started at unix {time.time():.0f}",
                 config_text.rstrip("\n"), "[log]",
                 f"steps_per_epoch {n_batches}",
                 f"warmup_steps {warmup_steps}"]
    best_epoch = 0
    best_val = -1.0
    history = []
    step = 0
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    started = time.monotonic()

    for epoch in range(1, train_cfg.epochs + 1):
        epoch_started = time.monotonic()
        order = np.random.default_rng(
            [train_cfg.seed, epoch]).permutation(len(clips))
        rng_aug = np.random.default_rng([train_cfg.seed, epoch, 1])
        rng_drop = np.random.default_rng([train_cfg.seed, epoch, 2])
        losses = []
        for b in range(n_batches):
            chosen = order[b * train_cfg.batch_size:
                           (b + 1) * train_cfg.batch_size]
            batch = augment_batch(make_batch([clips[i] for i in chosen]),
                                  train_cfg, rng_aug)
            strong, weak = model.forward(batch.features, training=True,
                                         rng=rng_drop)
            targets = pool_strong_labels(batch.strong,
                                         model.config.time_factor)
            loss = bce_loss(strong, targets) \
                + train_cfg.weak_weight * bce_loss(weak, batch.weak)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at epoch {epoch} "
                    f"batch {b}", epoch, b,
                    _divergence_diagnostics(model, loss_value))
            ad.backward(loss)
            optimizer.step(warmup_scale(step, warmup_steps))
            step += 1
            losses.append(loss_value)

        val_psds = None
        if train_cfg.val_every > 0 and epoch % train_cfg.val_every == 0:
            val_psds = evaluate_model(model, manifest, "valid", eval_cfg,
                                      postproc).psds.value
            if val_psds > best_val:
                best_val = val_psds
                best_epoch = epoch
                save_checkpoint(model, best_path)
        mean_loss = float(np.mean(losses))
        history.append(EpochStats(epoch, mean_loss, val_psds))
        val_text = "-" if val_psds is None else f"{val_psds:.6f}"
        log_lines.append(f"epoch {epoch} mean_loss {mean_loss:.6f} "
                         f"val_psds {val_text}")
        log_lines.append(f"# epoch {epoch} took "
                         f"{time.monotonic() - epoch_started:.1f}s")

    save_checkpoint(model, last_path)
    if best_epoch == 0:
        best_epoch = train_cfg.epochs
        best_val = 0.0
        save_checkpoint(model, best_path)
    log_lines += [f"best_epoch {best_epoch}",
                  f"best_val_psds {best_val:.6f}",
                  f"# total wall time {time.monotonic() - started:.1f}s"]
    log_path = os.path.join(out_dir, log_name)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    return TrainResult(tuple(history), best_epoch, best_val, best_path,
                       last_path, log_path)


def strip_comment_lines(text: str) -> str:
    """Drop '#' lines, the only place wall-clock output is allowed."""
    return "\n".join(line for line in text.splitlines()
                     if not line.startswith("#")) + "\n"


# -- config x seed sweeps --------------------------------------------------------

@dataclass(frozen=True)
class MatrixEntry:
    name: str
    seed: int
    params: int
    val_psds: float
    test_psds: float
    test_f1: float
    failed: str = ""


def _matrix_run(args) -> MatrixEntry:
    (name, model_cfg, seed, manifest, train_cfg, eval_cfg, postproc,
     out_dir) = args
    run_dir = os.path.join(out_dir, f"{name}_seed{seed}")
    cfg = dataclasses.replace(train_cfg, seed=seed)
    try:
        model = build_model(model_cfg, seed=seed)
        result = train(model, manifest, cfg, eval_cfg, postproc, run_dir)
        best = load_checkpoint(result.best_checkpoint)
        test = evaluate_model(best, manifest, "test", eval_cfg, postproc,
                              out_dir=run_dir)
        return MatrixEntry(name, seed, count_model_params(model_cfg),
                           result.best_val_psds, test.psds.value,
                           test.f1["macro_f1"])
    except TrainingDiverged as exc:
        return MatrixEntry(name, seed, count_model_params(model_cfg),
                           float("nan"), float("nan"), float("nan"),
                           failed=str(exc))


def run_matrix(named_configs: list[tuple[str, ModelConfig]],
               manifest: DatasetManifest, train_cfg: TrainConfig,
               eval_cfg: EvalConfig, postproc: PostprocConfig,
               out_dir: str | os.PathLike, seeds: list[int],
               jobs: int = 1) -> list[MatrixEntry]:
    """Train and test every (config, seed) pair; diverged runs are recorded
    rather than aborting the sweep."""
    if jobs < 1:
        raise ConfigurationError(f"jobs must be >= 1, got {jobs}")
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(name, cfg, seed, manifest, train_cfg, eval_cfg, postproc,
              str(out_dir))
             for name, cfg in named_configs for seed in seeds]
    if jobs == 1:
        entries = [_matrix_run(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_matrix_run, tasks))
    _write_matrix_tsv(os.path.join(out_dir, "matrix.tsv"), entries, seeds)
    return entries


def _write_matrix_tsv(path: str, entries: list[MatrixEntry],
                      seeds: list[int]) -> None:
    lines = ["name\tseed\tparams\tval_psds\ttest_psds\ttest_f1\tfailed"]
    for e in entries:
        lines.append(f"{e.name}\t{e.seed}\t{e.params}\t{e.val_psds:.6f}\t"
                     f"{e.test_psds:.6f}\t{e.test_f1:.6f}\t{e.failed}")
    by_name: dict[str, list[MatrixEntry]] = {}
    for e in entries:
        by_name.setdefault(e.name, []).append(e)
    lines.append("")
    lines.append("name\tparams\tmedian_test_psds\tbest_test_psds\truns")
    for name, group in by_name.items():
        scores = [e.test_psds for e in group if not e.failed]
        if scores:
            med, best = float(np.median(scores)), max(scores)
        else:
            med = best = float("nan")
        lines.append(f"{name}\t{group[0].params}\t{med:.6f}\t{best:.6f}\t"
                     f"{len(scores)}/{len(group)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
