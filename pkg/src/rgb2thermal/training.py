"""Training and evaluation harness: spatially-grouped fold assignment,
paired augmentation, the cosine-scheduled main + fine-tune passes, and
held-out metric reporting.

Determinism contract: a fixed seed fixes model init, batch order, and every
augmentation draw, so two runs of the same config produce byte-identical
history CSVs. Augmentation RNG streams derive from (seed, epoch, sample
index), which keeps them stable under any loader parallelism.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import losses
from .data import load_dataset, save_image
from .gan import PatchDiscriminator, gan_train_step
from .losses import LossBreakdown, LossWeights, NonFiniteLossError, combined_loss
from .metadata import (
    MetadataVector,
    Standardizer,
    apply_standardizer,
    build_feature_vector,
    fit_standardizer,
    LAYOUT_VERSION,
)
from .metrics import lpips as lpips_metric
from .metrics import psnr as psnr_metric
from .metrics import report_to_csv, report_to_json, ssim as ssim_metric
from .perceptual import LpipsDistance
from .postprocess import RenderConfig, gaussian_blur
from .preprocess import PreprocessConfig, read_preprocess_manifest
from .types import (
    SIGNED_PM1,
    UNIT_0_1,
    ImageTensor,
    MetricReport,
    PairedSample,
    validate_sample,
)
from .unet import CondUNet, UNetConfig

CHECKPOINT_FORMAT = "rgb2thermal-ckpt-1"


class FoldAssignmentError(ValueError):
    pass


class TrainingConfigError(ValueError):
    pass


class PreprocessMismatchError(RuntimeError):
    """Evaluation data was preprocessed differently than the checkpoint's
    training data; refusing prevents silent train/eval skew."""


@dataclass(frozen=True)
class AugmentConfig:
    hflip_p: float = 0.5
    vflip_p: float = 0.3
    rot90_p: float = 0.25
    brightness_p: float = 0.4
    brightness_lo: float = 0.85
    brightness_hi: float = 1.15
    noise_p: float = 0.15
    noise_sigma: float = 0.02

    def __post_init__(self):
        probs = (self.hflip_p, self.vflip_p, self.rot90_p, self.brightness_p, self.noise_p)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise TrainingConfigError("augmentation probabilities must be in [0,1]")
        if not 0.0 < self.brightness_lo <= self.brightness_hi:
            raise TrainingConfigError("brightness factor range must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    lr: float = 2e-4
    finetune_epochs: int = 15
    finetune_lr: float = 5e-5
    weight_decay: float = 1e-2
    seed: int = 0
    model_kind: str = "unet"
    lambda_l1: float = 100.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lpips_backbone: str = "random"
    lpips_seed: int = 0
    lpips_weights_path: str | None = None
    charbonnier_eps: float = 1e-3
    utc_offset_hours: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingConfigError("epochs must be >= 1")
        if self.lr <= 0 or self.finetune_lr <= 0:
            raise TrainingConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise TrainingConfigError("batch_size must be >= 1")
        if self.model_kind not in ("unet", "pix2pix"):
            raise TrainingConfigError(f"unknown model_kind {self.model_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise TrainingConfigError(f"unknown training config keys: {sorted(unknown)}")
        if "loss_weights" in doc and isinstance(doc["loss_weights"], dict):
            doc["loss_weights"] = LossWeights(**doc["loss_weights"])
        if "augment" in doc and isinstance(doc["augment"], dict):
            doc["augment"] = AugmentConfig(**doc["augment"])
        return cls(**doc)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_group: dict[str, int]
    k: int

    def fold_of(self, sample: PairedSample) -> int:
        return self.fold_of_group[sample.group_id]

    def split(self, samples: list[PairedSample], fold: int) -> tuple[list[PairedSample], list[PairedSample]]:
        train = [s for s in samples if self.fold_of(s) != fold]
        val = [s for s in samples if self.fold_of(s) == fold]
        return train, val


def assign_folds(samples: list[PairedSample], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Shuffle groups with the seed, deal them round-robin into k folds.

    Every sample of a flight group lands in the same fold, which is what
    keeps spatially-overlapping imagery out of both sides of a split.
    """
    groups = sorted({s.group_id for s in samples})
    if len(groups) < k:
        raise FoldAssignmentError(f"need >= {k} groups for {k} folds, got {len(groups)}")
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(len(groups))]
    return FoldAssignment({g: i % k for i, g in enumerate(order)}, k)


@dataclass(frozen=True)
class TransformPlan:
    """One sampled augmentation draw; geometry fields apply to both images."""

    hflip: bool
    vflip: bool
    rot_k: int
    brightness: float | None
    noise_seed: int | None


def sample_transforms(rng: np.random.Generator, cfg: AugmentConfig | None = None) -> TransformPlan:
    cfg = cfg or AugmentConfig()
    hflip = rng.random() < cfg.hflip_p
    vflip = rng.random() < cfg.vflip_p
    rot_k = int(rng.integers(1, 4)) if rng.random() < cfg.rot90_p else 0
    brightness = (
        float(rng.uniform(cfg.brightness_lo, cfg.brightness_hi))
        if rng.random() < cfg.brightness_p
        else None
    )
    noise_seed = int(rng.integers(0, 2 ** 31)) if rng.random() < cfg.noise_p else None
    return TransformPlan(hflip, vflip, rot_k, brightness, noise_seed)


def apply_transforms(
    plan: TransformPlan,
    rgb: np.ndarray,
    thermal: np.ndarray,
    noise_sigma: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    if rgb.shape[-2:] != thermal.shape[-2:]:
        raise ValueError("rgb/thermal spatial sizes differ")
    if plan.hflip:
        rgb = rgb[:, :, ::-1]
        thermal = thermal[:, :, ::-1]
    if plan.vflip:
        rgb = rgb[:, ::-1, :]
        thermal = thermal[:, ::-1, :]
    if plan.rot_k:
        rgb = np.rot90(rgb, plan.rot_k, axes=(1, 2))
        thermal = np.rot90(thermal, plan.rot_k, axes=(1, 2))
    if plan.brightness is not None:
        rgb = np.clip(((rgb + 1.0) * 0.5 * plan.brightness) * 2.0 - 1.0, -1.0, 1.0)
    if plan.noise_seed is not None:
        noise = np.random.default_rng(plan.noise_seed).normal(0.0, noise_sigma, rgb.shape)
        rgb = np.clip(rgb + noise, -1.0, 1.0)
    return np.ascontiguousarray(rgb, dtype=np.float32), np.ascontiguousarray(thermal, dtype=np.float32)


def augment_pair(
    rgb: np.ndarray,
    thermal: np.ndarray,
    rng: np.random.Generator,
    cfg: AugmentConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample each transform once; geometry applies identically to both
    images, photometric jitter and noise touch the RGB only.

    The metadata vector is deliberately never transformed here: flips and
    rotations do not change the weather. ``rgb`` is [-1, 1], [3,H,W];
    ``thermal`` is [0, 1], [1,H,W].
    """
    cfg = cfg or AugmentConfig()
    plan = sample_transforms(rng, cfg)
    return apply_transforms(plan, rgb, thermal, cfg.noise_sigma)


def cosine_lr(epoch: int, base_lr: float, total_epochs: int) -> float:
    """Closed-form cosine annealing from base_lr toward 0 over the main pass."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def epoch_lr(epoch: int, cfg: TrainConfig) -> float:
    if epoch < cfg.epochs:
        return cosine_lr(epoch, cfg.lr, cfg.epochs)
    return cfg.finetune_lr


HISTORY_COLUMNS = [
    "epoch", "lr", "total_loss", "charbonnier", "msssim_term",
    "lpips_term", "grad_term", "stats_term",
]
GAN_HISTORY_COLUMNS = HISTORY_COLUMNS + ["d_loss", "g_adversarial", "g_l1"]


def _rgb_to_pm1(sample: PairedSample) -> np.ndarray:
    return (sample.rgb.data / 127.5 - 1.0).astype(np.float32)


def sample_vectors(samples: list[PairedSample], utc_offset_hours: float = 0.0) -> list[MetadataVector]:
    return [build_feature_vector(s.metadata, utc_offset_hours) for s in samples]


def _standardized_conditioning(
    samples: list[PairedSample], standardizer: Standardizer, utc_offset_hours: float
) -> np.ndarray:
    vecs = sample_vectors(samples, utc_offset_hours)
    return np.stack(
        [apply_standardizer(v, standardizer).values for v in vecs]
    ).astype(np.float32)


def _make_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def save_checkpoint(
    path: Path,
    model: CondUNet,
    standardizer: Standardizer,
    preprocess_config: dict,
    preprocess_hash: str,
    train_config: TrainConfig,
    fold_id: int,
    discriminator: PatchDiscriminator | None = None,
) -> Path:
    """Single-file, self-describing archive: loading needs no outside config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": CHECKPOINT_FORMAT,
        "model_kind": train_config.model_kind,
        "unet_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "standardizer": {
            "mean": standardizer.mean.tolist(),
            "std": standardizer.std.tolist(),
            "fitted_on_fold": standardizer.fitted_on_fold,
        },
        "layout_version": LAYOUT_VERSION,
        "preprocess_config": preprocess_config,
        "preprocess_hash": preprocess_hash,
        "train_config": train_config.to_dict(),
        "fold_id": fold_id,
    }
    if discriminator is not None:
        doc["discriminator_state"] = discriminator.state_dict()
    tmp = path.with_suffix(".tmp")
    torch.save(doc, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: Path) -> dict:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise RuntimeError(
            f"unsupported checkpoint format {doc.get('format_version')!r} "
            f"(expected {CHECKPOINT_FORMAT})"
        )
    return doc


def model_from_checkpoint(doc: dict) -> tuple[CondUNet, Standardizer]:
    model = CondUNet(UNetConfig(**{
        **doc["unet_config"],
        "encoder_widths": tuple(doc["unet_config"]["encoder_widths"]),
    }))
    model.load_state_dict(doc["state_dict"])
    model.eval()
    std = doc["standardizer"]
    standardizer = Standardizer(
        mean=np.array(std["mean"]), std=np.array(std["std"]),
        fitted_on_fold=std["fitted_on_fold"],
    )
    return model, standardizer


def _lpips_from_config(cfg: TrainConfig) -> LpipsDistance:
    return LpipsDistance(
        backbone=cfg.lpips_backbone,
        weights_path=cfg.lpips_weights_path,
        seed=cfg.lpips_seed,
    )


@dataclass
class TrainResult:
    checkpoint_path: Path
    history_path: Path
    history: list[dict]
    fold_id: int


def train_fold(
    samples: list[PairedSample],
    assignment: FoldAssignment,
    fold: int,
    cfg: TrainConfig,
    out_dir: Path,
    preprocess_config: dict,
    preprocess_hash: str,
    max_steps: int | None = None,
) -> TrainResult:
    """Main + fine-tune training on one fold's training split.

    The standardizer is fitted on this split only and rides along in the
    checkpoint; validation samples never touch its statistics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples, _ = assignment.split(samples, fold)
    if not train_samples:
        raise TrainingConfigError(f"fold {fold} has an empty training split")
    bad = [(s.sample_id, v) for s in train_samples for v in validate_sample(s)]
    if bad:
        raise TrainingConfigError(f"invalid training samples: {bad[:5]}")

    size = train_samples[0].rgb.height
    torch.manual_seed(cfg.seed)
    model = CondUNet(UNetConfig(input_size=size))
    standardizer = fit_standardizer(
        sample_vectors(train_samples, cfg.utc_offset_hours), fold
    )
    cond = _standardized_conditioning(train_samples, standardizer, cfg.utc_offset_hours)
    rgb_all = [_rgb_to_pm1(s) for s in train_samples]
    thermal_all = [s.thermal.data for s in train_samples]

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    discriminator = None
    opt_d = None
    lpips_fn = _lpips_from_config(cfg)
    if cfg.model_kind == "pix2pix":
        discriminator = PatchDiscriminator()
        opt_d = torch.optim.AdamW(discriminator.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    history: list[dict] = []
    history_path = out_dir / "history.csv"
    last_path = out_dir / "checkpoint_last.pt"
    columns = GAN_HISTORY_COLUMNS if cfg.model_kind == "pix2pix" else HISTORY_COLUMNS
    total_epochs = cfg.epochs + cfg.finetune_epochs
    steps_done = 0

    model.train()
    for epoch in range(total_epochs):
        lr = epoch_lr(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        if opt_d is not None:
            for group in opt_d.param_groups:
                group["lr"] = lr
        batch_rng = np.random.default_rng([cfg.seed, epoch])
        sums: dict[str, float] = {}
        n_batches = 0
        for batch_idx in _make_batches(len(train_samples), cfg.batch_size, batch_rng):
            pairs = [
                augment_pair(
                    rgb_all[i], thermal_all[i],
                    np.random.default_rng([cfg.seed, epoch, int(i)]),
                    cfg.augment,
                )
                for i in batch_idx
            ]
            rgb = torch.from_numpy(np.stack([p[0] for p in pairs]))
            thermal = torch.from_numpy(np.stack([p[1] for p in pairs]))
            v = torch.from_numpy(cond[batch_idx])

            if cfg.model_kind == "pix2pix":
                parts = gan_train_step(
                    (rgb, thermal, v), model, discriminator, optimizer, opt_d, cfg.lambda_l1
                )
                with torch.no_grad():
                    _, diag = combined_loss(
                        model(rgb, v), thermal, cfg.loss_weights, lpips_fn, cfg.charbonnier_eps
                    )
                row = {
                    "total_loss": parts["g_total"],
                    "charbonnier": diag.charbonnier,
                    "msssim_term": diag.msssim_term,
                    "lpips_term": diag.lpips_term,
                    "grad_term": diag.grad_term,
                    "stats_term": diag.stats_term,
                    "d_loss": parts["d_loss"],
                    "g_adversarial": parts["g_adversarial"],
                    "g_l1": parts["g_l1"],
                }
            else:
                optimizer.zero_grad(set_to_none=True)
                pred = model(rgb, v)
                total, breakdown = combined_loss(
                    pred, thermal, cfg.loss_weights, lpips_fn, cfg.charbonnier_eps
                )
                if not torch.isfinite(total):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch}; last good checkpoint: {last_path}"
                    )
                total.backward()
                optimizer.step()
                row = {
                    "total_loss": breakdown.total,
                    "charbonnier": breakdown.charbonnier,
                    "msssim_term": breakdown.msssim_term,
                    "lpips_term": breakdown.lpips_term,
                    "grad_term": breakdown.grad_term,
                    "stats_term": breakdown.stats_term,
                }
            for key, value in row.items():
                sums[key] = sums.get(key, 0.0) + value
            n_batches += 1
            steps_done += 1
            if max_steps is not None and steps_done >= max_steps:
                break

        record = {"epoch": epoch, "lr": lr}
        for key in columns[2:]:
            record[key] = sums.get(key, 0.0) / max(n_batches, 1)
        history.append(record)
        _write_history(history_path, history, columns)
        save_checkpoint(
            last_path, model, standardizer, preprocess_config, preprocess_hash,
            cfg, fold, discriminator,
        )
        if max_steps is not None and steps_done >= max_steps:
            break

    final_path = save_checkpoint(
        out_dir / "checkpoint.pt", model, standardizer, preprocess_config,
        preprocess_hash, cfg, fold, discriminator,
    )
    return TrainResult(final_path, history_path, history, fold)


def _write_history(path: Path, history: list[dict], columns: list[str]) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in history:
            writer.writerow([
                row["epoch"],
                *[repr(float(row[c])) for c in columns[1:]],
            ])
    tmp.replace(path)


def predict_sample(model: CondUNet, standardizer: Standardizer,
                   sample: PairedSample, utc_offset_hours: float = 0.0) -> np.ndarray:
    """Frozen-weights forward pass for one sample; returns [1,H,W] in (0,1)."""
    v = apply_standardizer(
        build_feature_vector(sample.metadata, utc_offset_hours), standardizer
    )
    model.eval()
    with torch.no_grad():
        pred = model(
            torch.from_numpy(_rgb_to_pm1(sample)),
            torch.from_numpy(v.values.astype(np.float32)),
        )
    return pred.numpy()


def evaluate_predictions(
    predictions: list[np.ndarray],
    samples: list[PairedSample],
    lpips_fn: LpipsDistance,
    fold_id: int = -1,
    blur_sigma: float = 0.5,
) -> MetricReport:
    """Blur each prediction, then score PSNR/SSIM/LPIPS against ground truth."""
    rows = []
    for pred, sample in zip(predictions, samples):
        smoothed = np.clip(gaussian_blur(pred, blur_sigma), 0.0, 1.0)
        target = sample.thermal.data
        rows.append((
            sample.sample_id,
            psnr_metric(smoothed, target, data_range=1.0),
            ssim_metric(smoothed, target, data_range=1.0),
            lpips_metric(smoothed, target, lpips_fn),
        ))
    return MetricReport(fold_id=fold_id, per_sample=rows)


def evaluate_checkpoint(
    checkpoint_path: Path,
    data_dir: Path,
    out_dir: Path | None = None,
    samples: list[PairedSample] | None = None,
    render: RenderConfig | None = None,
) -> MetricReport:
    """Evaluate a checkpoint on a preprocessed dataset directory.

    Refuses to run when the directory's preprocess manifest hash differs
    from the hash recorded at training time.
    """
    doc = load_checkpoint(checkpoint_path)
    manifest = read_preprocess_manifest(data_dir)
    if manifest["config_hash"] != doc["preprocess_hash"]:
        raise PreprocessMismatchError(
            f"data in {data_dir} was preprocessed with config hash "
            f"{manifest['config_hash']} but the checkpoint was trained on "
            f"{doc['preprocess_hash']}; re-run preprocessing with the "
            "checkpoint's recorded config or pick a matching dataset"
        )
    model, standardizer = model_from_checkpoint(doc)
    cfg = TrainConfig.from_dict(doc["train_config"])
    lpips_fn = _lpips_from_config(cfg)
    render = render or RenderConfig()
    if samples is None:
        samples = load_dataset(data_dir)
    preds = [predict_sample(model, standardizer, s, cfg.utc_offset_hours) for s in samples]
    report = evaluate_predictions(preds, samples, lpips_fn, doc["fold_id"], render.blur_sigma)
    if out_dir is not None:
        out_dir = Path(out_dir)
        for pred, sample in zip(preds, samples):
            save_image(
                ImageTensor(np.clip(pred, 0.0, 1.0), UNIT_0_1),
                out_dir / "pred" / f"{sample.sample_id}.png",
            )
        report_to_csv(report, out_dir / "metrics.csv")
        report_to_json(report, out_dir / "metrics.json")
        with open(out_dir / "eval_manifest.json", "w") as fh:
            json.dump(
                {"checkpoint": str(checkpoint_path), "data_dir": str(Path(data_dir).resolve()),
                 "blur_sigma": render.blur_sigma, "fold_id": doc["fold_id"]},
                fh, indent=2, sort_keys=True,
            )
    return report


def run_cross_validation(
    samples: list[PairedSample],
    cfg: TrainConfig,
    out_dir: Path,
    preprocess_config: dict,
    preprocess_hash: str,
    k: int = 5,
    max_steps_per_fold: int | None = None,
) -> tuple[list[MetricReport], dict]:
    """Train k fold models, evaluate each on its held-out fold, aggregate."""
    from .metrics import aggregate_reports

    out_dir = Path(out_dir)
    assignment = assign_folds(samples, k, cfg.seed)
    reports = []
    for fold in range(k):
        fold_dir = out_dir / f"fold{fold}"
        result = train_fold(
            samples, assignment, fold, cfg, fold_dir,
            preprocess_config, preprocess_hash, max_steps=max_steps_per_fold,
        )
        doc = load_checkpoint(result.checkpoint_path)
        model, standardizer = model_from_checkpoint(doc)
        _, val = assignment.split(samples, fold)
        preds = [predict_sample(model, standardizer, s, cfg.utc_offset_hours) for s in val]
        report = evaluate_predictions(preds, val, _lpips_from_config(cfg), fold)
        report_to_csv(report, fold_dir / "metrics.csv")
        report_to_json(report, fold_dir / "metrics.json")
        reports.append(report)
    aggregate = aggregate_reports(reports)
    with open(out_dir / "aggregate.json", "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
    return reports, aggregate
