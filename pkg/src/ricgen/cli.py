"""Command-line entry point.

Commands: synth | analyze | train | eval | generate | sweep | gradcheck.
Every run writes a manifest with the fully resolved configuration; rerunning
`train` from its manifest reproduces the numeric outputs byte for byte.

Exit codes: 0 ok, 1 usage, 2 validation, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, data, models, training
from .gradcheck import run_gradcheck
from .tensor import ShapeError


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise data.DataError(f"config {path}: invalid JSON: {exc}") from None
    # a train manifest can be replayed directly as a config
    if "config" in cfg and "command" in cfg:
        cfg = cfg["config"]
    return cfg


def _write_manifest(out_dir: Path, command: str, config: dict, outputs: list[str]):
    manifest = {"command": command, "config": config, "outputs": outputs,
                "schema_version": 1}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_seed(cfg: dict, args, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(cfg.get("seed", default))


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    try:
        synth_cfg = data.SynthConfig.from_dict(cfg.get("synth", {}))
    except TypeError as exc:
        raise data.DataError(f"invalid synth config: {exc}") from None
    dataset = data.synth_generate(synth_cfg, seed=seed)
    out = _out_dir(args)
    data.save_csv(dataset, out / "dataset.csv")
    _write_manifest(out, "synth", {"seed": seed, "synth": synth_cfg.to_dict()},
                    ["dataset.csv"])
    print(f"wrote {len(dataset)} samples to {out / 'dataset.csv'}")
    return 0


def cmd_analyze(args) -> int:
    dataset = data.load_csv(args.data)
    if not dataset.has_targets():
        raise data.DataError("targets required: dataset lacks qc_post values")
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    out = _out_dir(args)

    ranked = analysis.rank_features(dataset, jitter_seed=seed)
    _write_csv(out / "mi_scores.csv", ["feature", "mi_nats"],
               [[e.feature, _fmt(e.mi_nats)] for e in ranked])

    ec_rows = []
    ec_by_feature = {"blows": {}, "fill_thickness": {}, "fine_content": {}}
    for s in dataset.samples:
        ec = analysis.efficiency_of_compaction(s.qc_ini, s.qc_post)
        for depth, value in zip(data.DEPTHS, ec):
            ec_rows.append([s.sample_id, _fmt(depth), _fmt(value)])
        f = s.features
        for key, level in (("blows", f.blows), ("fill_thickness", f.fill_thickness),
                           ("fine_content", f.fine_content)):
            ec_by_feature[key].setdefault(level, []).append(ec)
    _write_csv(out / "ec_profiles.csv", ["sample_id", "depth_m", "ec_pct"], ec_rows)

    outputs = ["mi_scores.csv", "ec_profiles.csv"]
    for key, groups in ec_by_feature.items():
        rows = []
        for level in sorted(groups):
            values = np.concatenate(groups[level])
            curve = analysis.kde(values)
            rows.extend([[_fmt(level), _fmt(g), _fmt(d)]
                         for g, d in zip(curve.grid, curve.density)])
        name = f"kde_{key}.csv"
        _write_csv(out / name, ["level", "grid", "density"], rows)
        outputs.append(name)

    _write_manifest(out, "analyze", {"seed": seed, "data": str(args.data)}, outputs)
    print(f"feature ranking: {', '.join(e.feature for e in ranked)}")
    return 0


def _prepare_training(cfg: dict, args):
    data_path = cfg.get("data") or getattr(args, "data", None)
    if data_path is None:
        raise UsageError("a dataset CSV is required (--data or config 'data')")
    dataset = data.load_csv(data_path)
    seed = _resolve_seed(cfg, args)
    kind = cfg.get("model", {}).get("kind") or getattr(args, "model", None)
    if kind is None:
        raise UsageError("a model kind is required (--model or config 'model.kind')")
    spec = models.ModelSpec(kind, dict(cfg.get("model", {}).get("hyper", {})))
    train_cfg_dict = dict(cfg.get("train", {}))
    train_cfg_dict.setdefault("seed", seed)
    if getattr(args, "epochs", None) is not None:
        train_cfg_dict["epochs"] = args.epochs
    if getattr(args, "batch", None) is not None:
        train_cfg_dict["batch_size"] = args.batch
    try:
        train_cfg = training.TrainConfig.from_dict(train_cfg_dict)
    except (TypeError, ValueError) as exc:
        raise data.DataError(f"invalid train config: {exc}") from None
    resolved = {"data": str(data_path), "seed": seed, "model": spec.to_dict(),
                "train": train_cfg.to_dict(), "split_seed": int(cfg.get("split_seed", seed)),
                "model_seed": int(cfg.get("model_seed", seed))}
    return dataset, spec, train_cfg, resolved


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dataset, spec, train_cfg, resolved = _prepare_training(cfg, args)
    dataset = data.split_dataset(dataset, seed=resolved["split_seed"])
    scaler = data.Scaler().fit(dataset, split="train")
    model = models.build_model(spec, seed=resolved["model_seed"])
    try:
        model, history = training.train(model, dataset, train_cfg, scaler)
    except training.TrainingDiverged as exc:
        raise NumericError(str(exc)) from None
    out = _out_dir(args)

    models.save_checkpoint(model, out / "checkpoint.npz",
                           extra={"scaler": scaler.to_dict(),
                                  "split_seed": resolved["split_seed"]})
    rows = []
    for i, tl in enumerate(history.train_loss):
        vl = history.val_loss[i] if i < len(history.val_loss) else ""
        rows.append([i, _fmt(tl), _fmt(vl) if vl != "" else "",
                     _fmt(history.epoch_seconds[i])])
    _write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss", "seconds"], rows)

    report = {
        "model": models.param_count_report(model),
        "published_test_rmse": models.PUBLISHED_TEST_RMSE[model.kind],
        "batch_size_used": history.clamped_batch,
        "best_epoch": history.best_epoch,
        "metrics": {},
    }
    for split in ("train", "val", "test"):
        try:
            report["metrics"][split] = training.evaluate(model, dataset, scaler,
                                                         split=split).to_dict()
        except data.DataError:
            report["metrics"][split] = None
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _write_manifest(out, "train", resolved,
                    ["checkpoint.npz", "history.csv", "report.json"])
    test = report["metrics"]["test"]
    if test:
        print(f"{model.kind}: params={report['model']['param_count']} "
              f"test RMSE={test['rmse_mpa']:.4f} MPa")
    return 0


def _load_checkpoint(path):
    try:
        model, manifest = models.load_checkpoint(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {path}") from None
    extra = manifest.get("extra", {})
    if "scaler" not in extra:
        raise data.DataError("checkpoint lacks scaler statistics")
    return model, data.Scaler.from_dict(extra["scaler"]), manifest


def cmd_eval(args) -> int:
    model, scaler, manifest = _load_checkpoint(args.checkpoint)
    dataset = data.load_csv(args.data)
    split_seed = manifest.get("extra", {}).get("split_seed")
    if args.split == "all" or split_seed is None:
        dataset = data.Dataset(dataset.samples, splits=["test"] * len(dataset),
                               provenance=dataset.provenance)
        split = "test"
    else:
        dataset = data.split_dataset(dataset, seed=split_seed)
        split = args.split
    metrics = training.evaluate(model, dataset, scaler, split=split)
    out = _out_dir(args)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"kind": model.kind, "split": split,
                   "metrics": metrics.to_dict()}, fh, indent=2, sort_keys=True)
    _write_manifest(out, "eval", {"checkpoint": str(args.checkpoint),
                                  "data": str(args.data), "split": split},
                    ["metrics.json"])
    print(f"{model.kind} {split}: MAE={metrics.mae:.4f} RMSE={metrics.rmse:.4f} MPa")
    return 0


def cmd_generate(args) -> int:
    model, scaler, _ = _load_checkpoint(args.checkpoint)
    if not model.is_seq2seq:
        raise data.DataError("generative inference requires a sequence-to-sequence model")
    dataset = data.load_csv(args.data)
    out = _out_dir(args)
    rows = []
    for s in dataset.samples:
        profile = training.generate(model, s.qc_ini, s.features, scaler)
        rows.extend([[s.sample_id, _fmt(d), _fmt(v)]
                     for d, v in zip(data.DEPTHS, profile)])
    _write_csv(out / "generated.csv", ["sample_id", "depth_m", "qc_pred_mpa"], rows)
    _write_manifest(out, "generate", {"checkpoint": str(args.checkpoint),
                                      "data": str(args.data)}, ["generated.csv"])
    print(f"generated {len(dataset)} profiles")
    return 0


def cmd_sweep(args) -> int:
    model, scaler, _ = _load_checkpoint(args.checkpoint)
    if not model.is_seq2seq:
        raise data.DataError("generative inference requires a sequence-to-sequence model")
    dataset = data.load_csv(args.data)
    if len(dataset) == 0:
        raise data.DataError("profile CSV has no samples")
    base = dataset.samples[0]
    blows_grid = [float(b) for b in args.blows.split(",") if b.strip()]
    if not blows_grid:
        raise data.DataError("empty blows grid")
    grid = [data.CompactionFeatures(b, base.features.fill_thickness,
                                    base.features.fine_content) for b in blows_grid]
    rows = training.parametric_sweep(model, base.qc_ini, grid, scaler)
    out = _out_dir(args)
    _write_csv(out / "sweep.csv",
               ["blows", "fill_thickness_m", "fine_content_pct", "depth_m", "qc_pred_mpa"],
               [[_fmt(r["blows"]), _fmt(r["fill_thickness_m"]),
                 _fmt(r["fine_content_pct"]), _fmt(r["depth_m"]),
                 _fmt(r["qc_pred_mpa"])] for r in rows])
    _write_manifest(out, "sweep", {"checkpoint": str(args.checkpoint),
                                   "data": str(args.data), "blows": blows_grid},
                    ["sweep.csv"])
    print(f"swept {len(grid)} grid points")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(n_seeds=args.seeds)
    width = max(len(r["layer"]) for r in rows)
    for r in rows:
        status = "pass" if r["passed"] else "FAIL"
        print(f"{r['layer']:<{width}}  max_rel_error={r['max_rel_error']:.3e}  {status}")
    if args.out:
        out = _out_dir(args)
        _write_csv(out / "gradcheck.csv", ["layer", "max_rel_error", "passed"],
                   [[r["layer"], _fmt(r["max_rel_error"]), str(r["passed"]).lower()]
                    for r in rows])
    if not all(r["passed"] for r in rows):
        raise NumericError("gradient check failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricgen",
        description="Train and run cone-resistance profile prediction models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_arg=True, checkpoint=False):
        p.add_argument("--config", default=None, help="JSON config (or a train manifest)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if data_arg:
            p.add_argument("--data", default=None, help="dataset CSV path")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint .npz path")

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    common(p, data_arg=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="mutual information, EC and KDE reports")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.add_argument("--model", default=None, choices=list(models.KINDS))
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, checkpoint=True)
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="autoregressive profile generation")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="generate profiles across a blows grid")
    common(p, checkpoint=True)
    p.add_argument("--blows", default="20,50,100,120,150,200",
                   help="comma-separated blow counts")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if getattr(args, "data", None) is not None and not Path(args.data).exists():
            raise UsageError(f"dataset file not found: {args.data}")
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except (data.DataError, ShapeError, ValueError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return 2
    except (NumericError, training.TrainingDiverged, FloatingPointError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
