"""Leave-one-subject-out harness and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .. import datasets as D
from .. import decoders
from ..errors import ContractError, ExosenseError
from ..signals import SessionRecording

REPORT_VERSION = 1
# risk metrics beyond event recall and delay, flagged as extras in report notes
EXTRA_METRICS = ("false_alarm_rate", "window_recall", "window_precision")


@dataclass
class FoldReport:
    fold: int
    subject: str
    seed: int
    metrics: dict[str, float]
    model_path: str | None = None
    delays_ms: list[float] | None = None
    confusion: list[list[int]] | None = None


@dataclass
class Report:
    task: str
    seed: int
    mode: str
    variant: str
    folds: list[FoldReport]
    version: int = REPORT_VERSION
    aggregate: dict[str, dict[str, float]] = field(default_factory=dict)
    notes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.folds)

    def mean(self, metric: str) -> float:
        return self.aggregate[metric]["mean"]

    def values(self, metric: str) -> list[float]:
        return [f.metrics[metric] for f in self.folds]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "task": self.task,
            "seed": self.seed,
            "mode": self.mode,
            "variant": self.variant,
            "folds": [asdict(f) for f in self.folds],
            "aggregate": self.aggregate,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Report":
        if d.get("version") != REPORT_VERSION:
            raise ContractError(f"unsupported report version {d.get('version')}")
        return cls(
            task=d["task"], seed=d["seed"], mode=d["mode"], variant=d["variant"],
            folds=[FoldReport(**f) for f in d["folds"]], version=d["version"],
            aggregate=d["aggregate"], notes=d.get("notes", {}),
        )


def aggregate(folds: Sequence[FoldReport]) -> dict[str, dict[str, float]]:
    """Mean and population std of every scalar metric over folds."""
    out = {}
    if not folds:
        return out
    for key in folds[0].metrics:
        vals = np.array([f.metrics[key] for f in folds], dtype=np.float64)
        out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def _scalars(metrics: Mapping[str, Any]) -> dict[str, float]:
    return {k: float(v) for k, v in metrics.items() if np.isscalar(v) and not isinstance(v, str)}


def per_subject_datasets(task: str, sessions: Sequence[SessionRecording], sides: Sequence[str] = ("right",)) -> dict[str, D.Dataset]:
    out: dict[str, list[D.Dataset]] = {}
    for s in sessions:
        out.setdefault(s.subject_id, []).append(D.build_task_dataset(task, s, sides))
    return {k: v[0] if len(v) == 1 else D.concat(v) for k, v in sorted(out.items())}


def run_loso(
    task: str,
    data: Sequence[SessionRecording] | Mapping[str, D.Dataset],
    config: Mapping | None = None,
    report_dir=None,
    mode: str = "loso",
    plots: bool = True,
    save_models: bool = False,
) -> Report:
    """Train and evaluate one model per fold; optionally write report files.

    ``data`` is either sessions (datasets are built per subject) or a
    mapping from subject id to dataset.
    """
    config = dict(config or decoders.default_config(task))
    if isinstance(data, Mapping):
        per_subject = dict(data)
    else:
        per_subject = per_subject_datasets(task, list(data), config.get("sides", ["right"]))
    if len(per_subject) < 2 and mode == "loso":
        raise ContractError("leave-one-subject-out needs at least two subjects")
    try:
        results = decoders.train_task(task, per_subject, config, mode)
    except ExosenseError as e:
        raise type(e)(f"{task} {mode} training failed: {e}") from e
    root = Path(report_dir) if report_dir is not None else None
    folds = []
    for r in results:
        path = None
        if root is not None and save_models:
            path = str(r.model.save(root / "models" / f"fold{r.fold:02d}_{r.subject}"))
            path = str(Path(path).relative_to(root))
        folds.append(
            FoldReport(
                fold=r.fold, subject=r.subject, seed=r.seed, metrics=_scalars(r.metrics), model_path=path,
                delays_ms=r.metrics.get("delays_ms"), confusion=r.metrics.get("confusion"),
            )
        )
    notes = {"extra_metrics": list(EXTRA_METRICS)} if task == "risk" else {}
    report = Report(task, int(config.get("seed", 0)), mode, config.get("variant", "imu_emg"), folds, notes=notes)
    if root is not None:
        write_report(report, root, plots)
    return report


def write_report(report: Report, directory, plots: bool = True) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True, allow_nan=True) + "\n")
    keys = list(report.folds[0].metrics) if report.folds else []
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "subject", "seed"] + keys)
        for f in report.folds:
            w.writerow([f.fold, f.subject, f.seed] + [repr(f.metrics[k]) for k in keys])
        w.writerow(["mean", "", ""] + [repr(report.aggregate[k]["mean"]) for k in keys])
        w.writerow(["std", "", ""] + [repr(report.aggregate[k]["std"]) for k in keys])
    if plots and report.folds:
        from . import plotting

        subjects = [f.subject for f in report.folds]
        main = {"moment": "rmse", "metabolic": "accuracy", "risk": "recall"}[report.task]
        plotting.fold_bars(subjects, report.values(main), main, root / f"{main}_per_fold.svg")
        if report.task == "metabolic":
            total = np.sum([f.confusion for f in report.folds], axis=0)
            plotting.confusion_heatmap(total, [c.wire for c in D.MetClass], root / "confusion.svg")
        if report.task == "risk":
            delays = [d for f in report.folds for d in (f.delays_ms or [])]
            plotting.delay_histogram(delays, root / "delay_histogram.svg")
    return root


def load_report(directory) -> Report:
    return Report.from_dict(json.loads((Path(directory) / "report.json").read_text()))


def finite(report: Report) -> bool:
    return all(math.isfinite(v) for f in report.folds for v in f.metrics.values())
