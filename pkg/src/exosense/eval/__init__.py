"""Metrics, the LOSO harness, and report/plot emission."""

from .metrics import (
    DelayResult, accuracy, confusion, detection_delay, f1_per_class, pearson, precision_recall_f1, recall, rmse,
)
from .harness import FoldReport, Report, aggregate, load_report, per_subject_datasets, run_loso, write_report

__all__ = [
    "DelayResult", "accuracy", "confusion", "detection_delay", "f1_per_class", "pearson",
    "precision_recall_f1", "recall", "rmse",
    "FoldReport", "Report", "aggregate", "load_report", "per_subject_datasets", "run_loso", "write_report",
]
