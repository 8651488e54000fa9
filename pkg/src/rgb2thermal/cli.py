"""Single entry point with subcommands for the full pipeline:

    ingest -> preprocess -> train / cv -> evaluate -> infer / render

Every mutating run writes a manifest (config snapshot, seed, hashes,
timestamps) into its output directory so results are reproducible from the
recorded configuration alone. Config precedence: CLI flag > config file >
built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    load_dataset,
    load_rgb,
    load_thermal,
    metadata_path,
    metadata_to_row,
    read_metadata_csv,
    row_to_metadata,
    save_image,
    write_metadata_csv,
)
from .metadata import LAYOUT_VERSION, apply_standardizer, build_feature_vector
from .postprocess import RenderConfig, gaussian_blur, render_thermal, save_triptych
from .preprocess import (
    PreprocessConfig,
    preprocess_rgb_stages,
    preprocess_thermal,
    read_preprocess_manifest,
    write_preprocess_manifest,
)
from .training import (
    TrainConfig,
    assign_folds,
    evaluate_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    run_cross_validation,
    train_fold,
)
from .types import ImageTensor, MetricReport, UNIT_0_1, validate_sample
from .weather import FixtureStore, WeatherError, fetch_weather

TRAIN_FLAG_FIELDS = {
    "seed": int,
    "epochs": int,
    "finetune_epochs": int,
    "batch_size": int,
    "lr": float,
    "finetune_lr": float,
    "lambda_l1": float,
    "lpips_backbone": str,
    "utc_offset_hours": float,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(out_dir: Path, doc: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
    tmp.replace(path)
    return path


def _finalize_manifest(out_dir: Path, status: str, outputs: list[str]) -> None:
    path = Path(out_dir) / "manifest.json"
    with open(path) as fh:
        doc = json.load(fh)
    doc["finished_at"] = _now()
    doc["status"] = status
    doc["outputs"] = outputs
    _write_manifest(Path(out_dir), doc)


def _build_train_config(args) -> TrainConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc.update(json.load(fh))
    for name in TRAIN_FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    if getattr(args, "model", None) is not None:
        doc["model_kind"] = args.model
    cfg = TrainConfig.from_dict(doc)
    print(f"training config: {json.dumps(cfg.to_dict(), sort_keys=True)}")
    return cfg


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON training config file")
    p.add_argument("--model", choices=["unet", "pix2pix"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--finetune-lr", dest="finetune_lr", type=float)
    p.add_argument("--lambda-l1", dest="lambda_l1", type=float)
    p.add_argument("--lpips-backbone", dest="lpips_backbone", choices=["random", "pretrained"])
    p.add_argument("--utc-offset", dest="utc_offset_hours", type=float)
    p.add_argument("--max-steps", type=int, help="stop after N optimizer steps (smoke runs)")


def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    existing: dict[str, list[str]] = {}
    if metadata_path(out).exists():
        for row in read_metadata_csv(out):
            existing[row["sample_id"]] = [row[c] for c in row]
    with open(args.records, newline="") as fh:
        import csv as _csv

        records = list(_csv.DictReader(fh))
    failures: list[tuple[str, str]] = []
    rows = dict(existing)
    for rec in records:
        sid = rec.get("sample_id", "").strip()
        if not sid:
            failures.append(("<missing id>", "record lacks sample_id"))
            continue
        if sid in rows and (out / "rgb" / f"{sid}.png").exists():
            continue
        rgb_src = Path(args.rgb_dir) / f"{sid}.png"
        thermal_src = Path(args.thermal_dir) / f"{sid}.png"
        try:
            if not rgb_src.exists():
                raise FileNotFoundError(f"missing rgb file {rgb_src}")
            if not thermal_src.exists():
                raise FileNotFoundError(f"missing thermal file {thermal_src}")
            ts = datetime.fromisoformat(rec["timestamp_iso8601"])
            if ts.tzinfo is None:
                ts = ts.replace(tzinfo=timezone.utc)
            metadata = fetch_weather(
                float(rec["latitude"]), float(rec["longitude"]), ts,
                mode=args.weather_mode, fixture_dir=args.fixture_dir,
            )
            rgb = load_rgb(rgb_src)
            thermal = load_thermal(thermal_src)
            save_image(rgb, out / "rgb" / f"{sid}.png")
            save_image(thermal, out / "thermal" / f"{sid}.png")
            rows[sid] = metadata_to_row(sid, rec["group_id"], metadata)
        except (WeatherError, FileNotFoundError, KeyError, ValueError) as exc:
            failures.append((sid, str(exc)))
    write_metadata_csv(out, list(rows.values()))
    print(f"ingested {len(rows)} samples into {out}")
    if failures:
        for sid, why in failures:
            print(f"FAILED {sid}: {why}", file=sys.stderr)
        return 1
    return 0


def cmd_preprocess(args) -> int:
    lo, hi = (float(x) for x in args.stretch.split(","))
    cfg = PreprocessConfig(
        target_size=args.size, saturation_factor=args.saturation,
        stretch_lo=lo, stretch_hi=hi,
    )
    src, out = Path(args.inp), Path(args.out)
    rows = read_metadata_csv(src)
    ids = []
    for row in rows:
        sid = row["sample_id"]
        rgb = preprocess_rgb_stages(load_rgb(src / "rgb" / f"{sid}.png"), cfg)
        thermal = preprocess_thermal(load_thermal(src / "thermal" / f"{sid}.png"), cfg)
        save_image(rgb, out / "rgb" / f"{sid}.png")
        save_image(thermal, out / "thermal" / f"{sid}.png")
        ids.append(sid)
    write_metadata_csv(out, [[r[c] for c in r] for r in rows])
    write_preprocess_manifest(out, cfg, str(src.resolve()), ids)
    print(f"preprocessed {len(ids)} samples into {out} (config hash {cfg.config_hash()})")
    return 0


def _load_processed(data_dir: Path):
    manifest = read_preprocess_manifest(data_dir)
    samples = load_dataset(data_dir)
    problems = [
        (s.sample_id, v)
        for s in samples
        for v in validate_sample(s, expected_size=manifest["config"]["target_size"])
    ]
    if problems:
        raise SystemExit(f"invalid processed samples: {problems[:5]}")
    return samples, manifest


def cmd_train(args) -> int:
    cfg = _build_train_config(args)
    samples, manifest = _load_processed(Path(args.data))
    out = Path(args.out)
    _write_manifest(out, {
        "command": "train", "started_at": _now(), "status": "running",
        "config": cfg.to_dict(), "seed": cfg.seed,
        "layout_version": LAYOUT_VERSION,
        "preprocess_hash": manifest["config_hash"],
        "code_version": __version__,
        "data_dir": str(Path(args.data).resolve()),
        "fold": args.fold, "folds": args.folds,
    })
    assignment = assign_folds(samples, args.folds, cfg.seed)
    result = train_fold(
        samples, assignment, args.fold, cfg, out / f"fold{args.fold}",
        manifest["config"], manifest["config_hash"], max_steps=args.max_steps,
    )
    _finalize_manifest(out, "complete", [str(result.checkpoint_path), str(result.history_path)])
    print(f"trained fold {args.fold}: checkpoint {result.checkpoint_path}")
    return 0


def cmd_cv(args) -> int:
    cfg = _build_train_config(args)
    samples, manifest = _load_processed(Path(args.data))
    out = Path(args.out)
    _write_manifest(out, {
        "command": "cv", "started_at": _now(), "status": "running",
        "config": cfg.to_dict(), "seed": cfg.seed,
        "layout_version": LAYOUT_VERSION,
        "preprocess_hash": manifest["config_hash"],
        "code_version": __version__,
        "data_dir": str(Path(args.data).resolve()),
        "folds": args.folds,
    })
    reports, aggregate = run_cross_validation(
        samples, cfg, out, manifest["config"], manifest["config_hash"],
        k=args.folds, max_steps_per_fold=args.max_steps,
    )
    _finalize_manifest(out, "complete", [str(out / "aggregate.json")])
    for name in ("psnr_db", "ssim", "lpips"):
        stats = aggregate[name]
        print(f"{name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    render = RenderConfig(blur_sigma=args.sigma)
    report = evaluate_checkpoint(Path(args.checkpoint), Path(args.data), out, render=render)
    p, s, l = report.fold_mean
    print(f"evaluated {len(report.per_sample)} samples: "
          f"psnr {p:.4f} dB, ssim {s:.4f}, lpips {l:.4f}")
    return 0


def cmd_infer(args) -> int:
    doc = load_checkpoint(Path(args.checkpoint))
    model, standardizer = model_from_checkpoint(doc)
    pre_cfg = PreprocessConfig(**doc["preprocess_config"])
    train_cfg = doc["train_config"]
    with open(args.meta) as fh:
        meta_doc = json.load(fh)
    meta_doc.setdefault("sample_id", Path(args.rgb).stem)
    meta_doc.setdefault("group_id", "adhoc")
    sid, _, record = row_to_metadata({k: str(v) for k, v in meta_doc.items()})
    rgb_raw = load_rgb(Path(args.rgb))
    processed = preprocess_rgb_stages(rgb_raw, pre_cfg)
    vec = apply_standardizer(
        build_feature_vector(record, train_cfg.get("utc_offset_hours", 0.0)), standardizer
    )
    import torch

    with torch.no_grad():
        pred = model(
            torch.from_numpy((processed.data / 127.5 - 1.0).astype(np.float32)),
            torch.from_numpy(vec.values.astype(np.float32)),
        ).numpy()
    out = Path(args.out)
    render_cfg = RenderConfig(blur_sigma=args.sigma)
    blurred = np.clip(gaussian_blur(pred, render_cfg.blur_sigma), 0.0, 1.0)
    save_image(ImageTensor(blurred, UNIT_0_1), out / f"{sid}_thermal.png")
    rendered = render_thermal(ImageTensor(pred, UNIT_0_1), render_cfg)
    save_image(rendered, out / f"{sid}_render.png")
    print(f"inferred {sid}: {out / f'{sid}_thermal.png'}")
    return 0


def cmd_render(args) -> int:
    pred_dir = Path(args.inp)
    with open(pred_dir / "eval_manifest.json") as fh:
        eval_manifest = json.load(fh)
    data_dir = Path(args.data) if args.data else Path(eval_manifest["data_dir"])
    lo, hi = (float(x) for x in args.norm.split(","))
    cfg = RenderConfig(blur_sigma=args.sigma, norm_lo=lo, norm_hi=hi, colormap=args.cmap)
    out = Path(args.out)
    count = 0
    for pred_path in sorted((pred_dir / "pred").glob("*.png")):
        sid = pred_path.stem
        pred = load_thermal(pred_path)
        rgb = load_rgb(data_dir / "rgb" / f"{sid}.png")
        gt = load_thermal(data_dir / "thermal" / f"{sid}.png")
        save_triptych(
            rgb, render_thermal(pred, cfg), render_thermal(gt, cfg),
            out / f"{sid}_triptych.png",
        )
        count += 1
    print(f"rendered {count} triptychs into {out}")
    return 0 if count else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgb2thermal",
        description="Aerial RGB-to-thermal translation pipeline",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"rgb2thermal {__version__} (metadata layout {LAYOUT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset directory, filling weather fields")
    p.add_argument("--rgb-dir", required=True)
    p.add_argument("--thermal-dir", required=True)
    p.add_argument("--records", required=True, help="CSV: sample_id,group_id,latitude,longitude,timestamp_iso8601")
    p.add_argument("--out", required=True)
    p.add_argument("--weather-mode", choices=["live", "fixture"], default="fixture")
    p.add_argument("--fixture-dir")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="deterministic RGB/thermal conditioning")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=384)
    p.add_argument("--saturation", type=float, default=1.3)
    p.add_argument("--stretch", default="1,99")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one fold")
    p.add_argument("--data", required=True, help="preprocessed dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="full k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="RGB + metadata JSON -> thermal prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("render", help="triptychs from an evaluation directory")
    p.add_argument("--in", dest="inp", required=True, help="evaluate output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="override the dataset directory recorded at evaluation")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--norm", default="1,99")
    p.add_argument("--cmap", default="inferno")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
