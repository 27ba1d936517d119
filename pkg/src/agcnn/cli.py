"""Command-line entry point: ``agcnn <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from agcnn.attention.groundtruth import (cleared_fraction, observer_consistency, proportion_curve,
                                         render_attention)
from agcnn.errors import AgcnnError, ConfigError, InputError
from agcnn.harness.manifest import (DEFAULT_RATIOS, load_dataset, load_manifest, load_records,
                                    parse_ratios, split)
from agcnn.harness.run import (RunConfig, evaluate_run, load_trained, run_ablation_grid,
                               train_run, write_report)
from agcnn.harness.synth import SyntheticConfig, synth_generate
from agcnn.io import read_fixation_logs, write_grid, write_pgm
from agcnn.metrics import report_from_scores, roc_auc
from agcnn.model.config import ABLATIONS

log = logging.getLogger("agcnn")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run-config JSON (model, schedule, manifest, ablation flags)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", help="train:val:test ratios, e.g. 4792:200:832")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), help="ablation configuration")
    p.add_argument("--size", type=int, help="image size S")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agcnn", description="Attention-guided glaucoma detection on fundus-like images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth-data", help="generate the synthetic benchmark")
    _common(p)
    p.add_argument("--count", type=int, default=800)
    p.add_argument("--positive-fraction", type=float)
    p.add_argument("--distractor", action="store_true", help="add an off-disc decoy to every image")

    p = sub.add_parser("render-attn", help="fixation logs -> attention maps and database analyses")
    _common(p)
    p.add_argument("--fixations", required=True, help="CSV of image_id,observer_id,order,x,y")
    p.add_argument("--source-size", type=int, default=500, help="capture resolution of the logs")

    p = sub.add_parser("train", help="run the two-phase schedule")
    _common(p)
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--schedule", choices=("desk", "full"), default="desk",
                   help="desk: short single-core preset; full: lr 1e-5, caps 20/80")

    p = sub.add_parser("eval", help="evaluate a trained model, or a scores file")
    _common(p)
    p.add_argument("--model", help="training output directory")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--which", choices=("train", "val", "test"), default="test")
    p.add_argument("--scores", help="CSV with columns score,label (skips the model)")

    p = sub.add_parser("visualize", help="write predicted attention and visualization maps")
    _common(p)
    p.add_argument("--model", required=True, help="training output directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", choices=("train", "val", "test"), default="test")
    p.add_argument("--count", type=int, default=8)

    p = sub.add_parser("ablate", help="train and test every ablation configuration")
    _common(p)
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--only", nargs="+", choices=sorted(ABLATIONS), help="subset of rows")
    p.add_argument("--schedule", choices=("desk", "full"), default="desk")
    return parser


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if not args.config and getattr(args, "schedule", "desk") == "full":
        cfg = replace(cfg, schedule=type(cfg.schedule)())
    if args.size:
        cfg = replace(cfg, model=replace(cfg.model, image_size=args.size))
    if args.ablation:
        cfg = cfg.with_ablation(args.ablation)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, schedule=replace(cfg.schedule, seed=args.seed))
    if getattr(args, "manifest", None):
        cfg = replace(cfg, manifest=args.manifest)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _manifest_for(args, cfg: RunConfig):
    if not cfg.manifest:
        raise ConfigError("no dataset given; pass --manifest or set it in --config")
    m = load_manifest(cfg.manifest)
    if args.split:
        m = split(m, parse_ratios(args.split), cfg.seed)
    return m


def cmd_synth(args) -> int:
    kw = {}
    if args.size:
        kw["image_size"] = args.size
    if args.positive_fraction is not None:
        kw["positive_fraction"] = args.positive_fraction
    cfg = SyntheticConfig(count=args.count, distractor=args.distractor,
                          seed=args.seed or 0, **kw)
    ratios = parse_ratios(args.split) if args.split else DEFAULT_RATIOS
    out = _out(args, "synthetic")
    m = synth_generate(cfg, out, ratios)
    sizes = {s: len(m.in_split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(m)} records to {out / 'manifest.csv'} (splits {sizes})")
    return 0


def cmd_render(args) -> int:
    src = args.source_size
    groups = read_fixation_logs(args.fixations, (src, src))
    out = _out(args, "attention")
    size = (args.size or 224) // 2
    rows = []
    for image_id, logs in sorted(groups.items()):
        amap = render_attention(logs, (size, size))
        write_pgm(out / f"{image_id}.pgm", amap.grid)
        write_grid(out / f"{image_id}.agm", amap.grid)
        cleared = [cleared_fraction(log) for log in logs]
        rows.append({"image_id": image_id, "observers": len(logs),
                     "fixations": sum(len(log) for log in logs),
                     "cleared_fraction_mean": float(np.mean(cleared)),
                     "proportion_above_0.5": float(proportion_curve(amap.grid, [0.5])[0])})
    with open(out / "maps.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    multi = {k: v for k, v in groups.items() if len(v) >= 2}
    if multi:
        table = observer_consistency(multi, (size, size), seed=args.seed or 0)
        with open(out / "consistency.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["observer", "mean_cc", "mean_random_cc", "images"])
            for r in table:
                w.writerow([r.observer, repr(r.mean_cc), repr(r.mean_random_cc), r.n_images])
    thresholds = np.linspace(0, 1, 21)
    from agcnn.plotting import plot_proportion_curves
    curves = {}
    with open(out / "proportion_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id"] + [f"{t:.2f}" for t in thresholds])
        for image_id, logs in sorted(groups.items()):
            vals = proportion_curve(render_attention(logs, (size, size)).grid, thresholds)
            curves[image_id] = vals
            w.writerow([image_id] + [repr(float(v)) for v in vals])
    shown = dict(list(curves.items())[:10])
    plot_proportion_curves(thresholds, shown, out / "proportion_curves.png")
    print(f"rendered {len(rows)} attention maps into {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if not cfg.manifest:
        raise ConfigError("no dataset given; pass --manifest or set it in --config")
    m = _manifest_for(args, cfg)
    dataset = load_dataset(m, cfg.model.image_size)
    if len(dataset.train) == 0 or len(dataset.val) == 0:
        raise InputError("manifest needs records in both the train and val splits")
    _, tlog = train_run(cfg, dataset)
    last = tlog.rows[-1]
    print(f"trained {len(tlog)} epochs; val accuracy {last.val_accuracy:.3f}, "
          f"AUC {last.val_auc:.3f}; outputs in {cfg.out_dir}")
    return 0


def _read_scores(path):
    scores, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip().lower() == "score"):
                continue
            if len(row) != 2:
                raise InputError(f"{path}:{lineno}: expected score,label")
            try:
                scores.append(float(row[0]))
                labels.append(int(row[1]))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return np.array(scores), np.array(labels)


def cmd_eval(args) -> int:
    out = _out(args, "eval")
    if args.scores:
        scores, labels = _read_scores(args.scores)
        report = report_from_scores(scores, labels)
        curve, auc = roc_auc(scores, labels)
        write_report(report, out, curve)
        from agcnn.plotting import plot_roc
        plot_roc({"scores": (curve, auc)}, Path(out) / "roc.png")
    else:
        if not args.model:
            raise ConfigError("pass --model (a training output directory) or --scores")
        model, cfg = load_trained(args.model)
        manifest = load_manifest(args.manifest or cfg.manifest)
        if args.split:
            manifest = split(manifest, parse_ratios(args.split), cfg.seed)
        part = load_records(manifest, manifest.in_split(args.which), cfg.model.image_size)
        if len(part) == 0:
            raise InputError(f"the {args.which} split is empty")
        report = evaluate_run(model, part, out, label=cfg.ablation)
    print(report.to_json())
    return 0


def cmd_visualize(args) -> int:
    model, cfg = load_trained(args.model)
    manifest = load_manifest(args.manifest)
    records = manifest.in_split(args.which)[: args.count]
    if not records:
        raise InputError(f"the {args.which} split is empty")
    part = load_records(manifest, records, cfg.model.image_size)
    out = _out(args, "maps")
    outs = model.forward(part.images)
    half = cfg.model.attention_size
    att = outs.attention_maps if outs.attention is not None else np.ones((len(part), half, half))
    from agcnn.core.functional import resize_bilinear
    from agcnn.core.tensor import Tensor
    gray = resize_bilinear(Tensor(part.images.mean(axis=1, keepdims=True)), (half, half)).data[:, 0]
    for i, rec in enumerate(records):
        stem = Path(rec.path).stem
        panels = []
        for m in (gray[i], att[i], outs.visualization[i]):
            peak = m.max()
            panels.append(m / peak if peak > 0 else m)
        write_pgm(out / f"{stem}_panel.pgm", np.concatenate(panels, axis=1))
        write_pgm(out / f"{stem}_attention.pgm", panels[1])
        write_pgm(out / f"{stem}_visualization.pgm", panels[2])
    from agcnn.plotting import plot_panels
    rows = {"A_hat": att, "V_hat": outs.visualization}
    if part.attention is not None:
        rows = {"truth": part.attention, **rows}
    plot_panels(part.images, rows, out / "panels.png", [f"label {int(l)}" for l in part.labels])
    print(f"wrote {len(records)} map panels to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    cfg = replace(cfg, out_dir=str(_out(args, "ablation")))
    m = _manifest_for(args, cfg)
    dataset = load_dataset(m, cfg.model.image_size)
    rows = run_ablation_grid(cfg, dataset, args.only)
    for r in rows:
        print(f"{r['ablation']:<13} acc {r['accuracy']:.3f}  auc {r['auc']:.3f}")
    return 0


COMMANDS = {"synth-data": cmd_synth, "render-attn": cmd_render, "train": cmd_train,
            "eval": cmd_eval, "visualize": cmd_visualize, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("agcnn: error: a command is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except AgcnnError as exc:
        print(f"agcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"agcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
