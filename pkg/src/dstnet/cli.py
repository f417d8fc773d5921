"""dstnet command line: train, enhance, eval, ablate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    DATA_ROOT_ENV,
    DatasetError,
    IMAGE_SUFFIXES,
    PairedDataset,
    SplitView,
    default_root,
    load_image,
    save_image,
)
from .losses import TERMS, LossWeights, total_loss
from .metrics import COLUMNS, MetricReport, evaluate
from .model import ABLATION_KEYS, DSTNet
from .train import Trainer, TrainingError, to_batch

log = logging.getLogger("dstnet")

EXIT_OK, EXIT_FATAL, EXIT_USAGE = 0, 1, 2


class CommandError(Exception):
    def __init__(self, message, code=EXIT_FATAL):
        super().__init__(message)
        self.code = code


def _settings(args) -> cfgmod.RunSettings:
    try:
        return cfgmod.load_settings(args.config, args.override, args.seed)
    except cfgmod.ConfigError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, settings, **extra) -> None:
    text = cfgmod.dump(settings)
    text += "".join(f"run.{k} = {cfgmod._fmt(v)}\n" for k, v in sorted(extra.items()))
    (out / "resolved_config.txt").write_text(text)


def _data_root(args, settings) -> Path:
    root = getattr(args, "data", None) or settings.data_root or default_root()
    if not root:
        raise CommandError(f"no dataset root given (use --data, data.root or ${DATA_ROOT_ENV})", EXIT_USAGE)
    root = Path(root)
    if not root.is_dir():
        raise CommandError(f"dataset root not found: {root}", EXIT_USAGE)
    return root


def _load_model(path) -> DSTNet:
    try:
        model, _ = load_checkpoint(path)
    except CheckpointError as exc:
        raise CommandError(str(exc)) from exc
    model.eval()
    return model


def _dataset(args, settings) -> PairedDataset:
    root = _data_root(args, settings)
    try:
        return PairedDataset.from_root(root, settings.train.seed, settings.train.crop, settings.manifest)
    except DatasetError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from exc


def _eval_view(ds: PairedDataset, split: str) -> SplitView:
    if split == "all":
        return SplitView(ds.pairs, "eval", None)
    _, test = ds.split()
    return test


def cmd_train(args) -> int:
    settings = _settings(args)
    ds = _dataset(args, settings)
    out = _out_dir(args)
    _snapshot(out, settings, command="train")
    train_view, test_view = ds.split()
    if len(train_view) == 0:
        raise CommandError("training split is empty", EXIT_USAGE)
    trainer = Trainer(settings.train, out, resume=args.resume)
    last = None
    try:
        for state in trainer.run(train_view, test_view):
            last = state
            if state.step % 10 == 0:
                log.info("step %d epoch %d lr %.6g loss %.5f", state.step, state.epoch, state.lr, state.loss)
    except TrainingError as exc:
        raise CommandError(str(exc)) from exc
    summary = {"steps": trainer.step, "final_loss": None if last is None else last.loss,
               "best_psnr": None if trainer.best_psnr == float("-inf") else trainer.best_psnr}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def _grid(panels) -> np.ndarray:
    h = max(p.shape[0] for p in panels)
    sep = np.ones((h, 2, 3), dtype=np.float32)
    parts = []
    for p in panels:
        parts += [np.pad(p, ((0, h - p.shape[0]), (0, 0), (0, 0))), sep]
    return np.concatenate(parts[:-1], axis=1)


def enhance_array(model: DSTNet, img: np.ndarray, ablation=None):
    with torch.no_grad():
        out = model(to_batch([img]), ablation=ablation)
    return (out.image[0].numpy().transpose(1, 2, 0), out.curve_stage[0].clamp(0, 1).numpy().transpose(1, 2, 0))


def cmd_enhance(args) -> int:
    model = _load_model(args.checkpoint)
    src = Path(args.input)
    if not src.is_dir():
        raise CommandError(f"input directory not found: {src}", EXIT_USAGE)
    out = _out_dir(args)
    settings = _settings(args)
    _snapshot(out, settings, command="enhance", checkpoint=str(args.checkpoint), input=str(src))
    gt_dir = Path(args.gt) if args.gt else None
    done, failed = 0, 0
    for path in sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        try:
            img = load_image(path)
        except DatasetError as exc:
            log.error("%s", exc)
            failed += 1
            continue
        final, curve = enhance_array(model, img)
        name = path.with_suffix(".png").name
        save_image(out / name, final)
        if args.grid:
            panels = [img, curve, final]
            if gt_dir and (gt_dir / path.name).exists():
                panels.append(load_image(gt_dir / path.name))
            (out / "grids").mkdir(exist_ok=True)
            save_image(out / "grids" / name, _grid(panels))
        done += 1
    summary = {"enhanced": done, "failed": failed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def _predictions(model, view: SplitView, pred_dir, ablation=None):
    """Yield (name, est, gt, low) for every pair in the view."""
    for i in range(len(view)):
        low, gt = view[i]
        name = view.name(i)
        if pred_dir is not None:
            path = Path(pred_dir) / name
            if not path.exists():
                raise CommandError(f"missing prediction {path}")
            est = load_image(path)
        else:
            est, _ = enhance_array(model, low, ablation)
        yield name, est, gt, low


def _report(model, view, pred_dir, loe_ref, ablation=None) -> MetricReport:
    items = ((n, est, gt, gt if loe_ref == "gt" else low)
             for n, est, gt, low in _predictions(model, view, pred_dir, ablation))
    return evaluate(items)


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.pred_dir is None):
        raise CommandError("give exactly one of --checkpoint or --pred-dir", EXIT_USAGE)
    settings = _settings(args)
    ds = _dataset(args, settings)
    model = _load_model(args.checkpoint) if args.checkpoint else None
    out = _out_dir(args)
    _snapshot(out, settings, command="eval", checkpoint=args.checkpoint, pred_dir=args.pred_dir,
              split=args.split, loe_ref=args.loe_ref)
    view = _eval_view(ds, args.split)
    if len(view) == 0:
        raise CommandError("evaluation set is empty", EXIT_USAGE)
    report = _report(model, view, args.pred_dir, args.loe_ref)
    report.write_csv(out / "metrics.csv")
    report.write_json(out / "metrics.json")
    print(json.dumps(report.aggregate()))
    return EXIT_OK


DEFAULT_PLAN = (
    "baseline:",
    "no_color: color=off",
    "no_structure: structure=off",
    "no_texture: texture=off",
)


def parse_plan(lines) -> list[tuple[str, dict, dict]]:
    """``name: color=off loss.hsv=off ...`` -> (name, feature flags, loss toggles)."""
    rows = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, spec = line.partition(":")
        feats = {k: True for k in ABLATION_KEYS}
        losses = {t: True for t in TERMS}
        for tok in spec.split():
            key, _, val = tok.partition("=")
            on = val.lower() in ("on", "true", "1", "yes")
            if key in feats:
                feats[key] = on
            elif key.startswith("loss.") and key[5:] in losses:
                losses[key[5:]] = on
            else:
                raise CommandError(f"bad ablation token {tok!r} in row {name!r}", EXIT_USAGE)
        rows.append((name.strip(), feats, losses))
    return rows


def _objective(model, view, weights: LossWeights, ablation) -> float:
    vals = []
    with torch.no_grad():
        for i in range(len(view)):
            low, gt = view[i]
            est = model(to_batch([low]), ablation=ablation).image
            vals.append(float(total_loss(est, to_batch([gt]), weights)[0]))
    return float(np.mean(vals))


def cmd_ablate(args) -> int:
    model = _load_model(args.checkpoint)
    settings = _settings(args)
    ds = _dataset(args, settings)
    out = _out_dir(args)
    _snapshot(out, settings, command="ablate", checkpoint=args.checkpoint, split=args.split)
    plan_lines = Path(args.plan).read_text().splitlines() if args.plan else DEFAULT_PLAN
    rows = parse_plan(plan_lines)
    if not rows or not (all(rows[0][1].values()) and all(rows[0][2].values())):
        rows.insert(0, parse_plan(["baseline:"])[0])
    view = _eval_view(ds, args.split)
    if len(view) == 0:
        raise CommandError("evaluation set is empty", EXIT_USAGE)

    base_out = [enhance_array(model, view[i][0])[0] for i in range(len(view))]
    fieldnames = ["row", *ABLATION_KEYS, "loss_terms", *COLUMNS[1:], "objective", "engaged"]
    records = []
    for name, feats, losses in rows:
        weights = LossWeights(**{**vars(settings.loss), "enabled": losses})
        report = _report(model, view, None, args.loe_ref, feats)
        outs = [enhance_array(model, view[i][0], feats)[0] for i in range(len(view))]
        engaged = any(not np.array_equal(a, b) for a, b in zip(outs, base_out))
        agg = report.aggregate()
        rec = {"row": name, **{k: "on" if feats[k] else "off" for k in ABLATION_KEYS},
               "loss_terms": "+".join(t for t in TERMS if losses[t]),
               **{c: agg[c] for c in COLUMNS[1:]},
               "objective": _objective(model, view, weights, feats), "engaged": engaged}
        records.append(rec)
        ablated = not all(feats.values())
        if ablated and not engaged:
            log.warning("row %s: ablation did not change any output", name)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: "" if v is None else v for k, v in rec.items()})
    (out / "ablation.json").write_text(json.dumps(records, indent=2))
    print(json.dumps({"rows": len(records)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--override", action="append", default=[], metavar="K=V",
                        help="config override, repeatable")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="sets train.seed and model.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dstnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train on a paired dataset")
    p.add_argument("--data", help=f"dataset root (default: data.root or ${DATA_ROOT_ENV})")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common], help="enhance a folder of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="folder of low-light images")
    p.add_argument("--gt", help="optional ground-truth folder for grid images")
    p.add_argument("--grid", action="store_true", help="also write input|curve|final[|gt] strips")
    p.set_defaults(func=cmd_enhance)

    for name, func, helptext in (("eval", cmd_eval, "score a model or predictions"),
                                 ("ablate", cmd_ablate, "prior/loss ablation report")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=(name == "ablate"))
        p.add_argument("--data", help=f"dataset root (default: data.root or ${DATA_ROOT_ENV})")
        p.add_argument("--split", choices=("test", "all"), default="test")
        p.add_argument("--loe-ref", choices=("input", "gt"), default="input",
                       help="image LOE compares against")
        if name == "eval":
            p.add_argument("--pred-dir", help="score existing images named like the inputs")
        else:
            p.add_argument("--plan", help="ablation plan file, one 'name: k=on|off ...' row per line")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"dstnet {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
