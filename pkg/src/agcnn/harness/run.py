"""Run configuration, train/evaluate drivers, and the ablation grid."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

from agcnn.errors import ConfigError, InputError
from agcnn.harness.manifest import load_dataset, load_manifest
from agcnn.metrics import EvalReport, evaluate, predict, roc_auc
from agcnn.model.agcnn import AgcnnModel
from agcnn.model.config import ABLATION_LABELS, ABLATIONS, ModelConfig
from agcnn.training.schedule import TrainSchedule, run_schedule

log = logging.getLogger(__name__)

MODEL_FILE = "model.agt"
CONFIG_FILE = "run_config.json"

# ablation name -> flags (no_attention, no_localization, plain_blocks)
ABLATION_FLAGS = {name: (not att, not loc, not ms) for name, (att, loc, ms) in ABLATIONS.items()}


def ablation_from_flags(no_attention: bool, no_localization: bool, plain_blocks: bool) -> str:
    key = (bool(no_attention), bool(no_localization), bool(plain_blocks))
    for name, flags in ABLATION_FLAGS.items():
        if flags == key:
            return name
    raise ConfigError(f"flag combination {key} is not one of the ablation rows {sorted(ABLATIONS)}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    schedule: TrainSchedule = field(default_factory=TrainSchedule.desk)
    manifest: str = ""
    out_dir: str = "run"
    seed: int = 0

    @property
    def ablation(self) -> str:
        return self.model.ablation

    @property
    def flags(self) -> dict:
        na, nl, pb = ABLATION_FLAGS.get(self.ablation, (None, None, None))
        return {"no_attention_subnet": na, "no_localization_subnet": nl, "plain_residual_blocks": pb}

    def with_ablation(self, name: str) -> "RunConfig":
        return replace(self, model=self.model.with_ablation(name))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "schedule": self.schedule.to_dict(),
                "manifest": self.manifest, "out_dir": self.out_dir, "seed": self.seed,
                "ablation_flags": self.flags}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        flags = d.pop("ablation_flags", None)
        unknown = set(d) - {"model", "schedule", "manifest", "out_dir", "seed"}
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        model = ModelConfig.from_dict(d["model"]) if "model" in d else ModelConfig.desk()
        if flags:
            name = ablation_from_flags(flags.get("no_attention_subnet", False),
                                       flags.get("no_localization_subnet", False),
                                       flags.get("plain_residual_blocks", False))
            model = model.with_ablation(name)
        schedule = TrainSchedule.from_dict(d["schedule"]) if "schedule" in d else TrainSchedule.desk()
        return cls(model, schedule, str(d.get("manifest", "")), str(d.get("out_dir", "run")),
                   int(d.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc


def train_run(cfg: RunConfig, dataset=None, on_epoch=None):
    """Train per ``cfg``; writes checkpoint, config, CSV log and a curves figure."""
    from agcnn.plotting import plot_training

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        if not cfg.manifest:
            raise ConfigError("run config has no manifest")
        dataset = load_dataset(load_manifest(cfg.manifest), cfg.model.image_size)
    model = AgcnnModel(cfg.model, seed=cfg.seed)
    t0 = time.perf_counter()
    model, tlog = run_schedule(model, dataset, cfg.schedule, on_epoch=on_epoch)
    log.info("trained %s in %.1f s", cfg.ablation, time.perf_counter() - t0)
    model.save(out / MODEL_FILE)
    (out / CONFIG_FILE).write_text(cfg.to_json())
    (out / "train_log.csv").write_text(tlog.to_csv())
    if len(tlog):
        plot_training(tlog, out / "training.png")
    return model, tlog


def load_trained(run_dir) -> tuple:
    run_dir = Path(run_dir)
    if not (run_dir / MODEL_FILE).exists():
        raise InputError(f"no {MODEL_FILE} in {run_dir}; train a model first")
    cfg = RunConfig.load(run_dir / CONFIG_FILE)
    model = AgcnnModel(cfg.model, seed=cfg.seed)
    model.load(run_dir / MODEL_FILE)
    model.eval()
    return model, cfg


def write_report(report: EvalReport, out_dir, curve=None, stem: str = "report") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}.csv").write_text(report.to_csv())
    if curve is not None:
        (out / "roc.csv").write_text(curve.to_csv())


def evaluate_run(model, split, out_dir, label: str = "model") -> EvalReport:
    from agcnn.plotting import plot_roc

    logits, _ = predict(model, split.images)
    report = evaluate(model, split)
    curve, auc = roc_auc(logits, split.labels)
    write_report(report, out_dir, curve)
    plot_roc({label: (curve, auc)}, Path(out_dir) / "roc.png")
    return report


ABLATION_COLUMNS = ("ablation", "label", "accuracy", "sensitivity", "specificity", "auc", "f2",
                    "attention_cc_mean", "seconds")


def run_ablation_grid(base: RunConfig, dataset, names: Optional[Sequence[str]] = None) -> List[dict]:
    """Train and test every ablation row on the same data; writes ablation.csv/json/png."""
    from agcnn.plotting import plot_ablation

    names = list(ABLATIONS) if names is None else list(names)
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        cfg = replace(base.with_ablation(name), out_dir=str(out / name))
        t0 = time.perf_counter()
        model, _ = train_run(cfg, dataset)
        rep = evaluate_run(model, dataset.test, cfg.out_dir, label=name)
        rows.append({"ablation": name, "label": ABLATION_LABELS[name], "accuracy": rep.accuracy,
                     "sensitivity": rep.sensitivity, "specificity": rep.specificity,
                     "auc": rep.auc, "f2": rep.f2, "attention_cc_mean": rep.attention_cc_mean,
                     "seconds": round(time.perf_counter() - t0, 2)})
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    plot_ablation(rows, out / "ablation.png")
    return rows
