"""Task models: moment regressor, metabolic-trend classifier, strain risk detector.

Each model is a :class:`DecoderModel` (a fused encoder graph plus the input
normalization fitted on its training split). ``default_config`` holds the
full hyperparameter ledger; every entry can be overridden with a nested dict.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import datasets as D
from .datasets import Dataset, MetClass
from .errors import ContractError, ShapeError
from .eval import metrics as M
from .nn import build_model, load_weights, save_weights, softmax, train
from .nn.graph import receptive_field
from .nn.layers import Fusion
from .nn.train import TrainConfig

log = logging.getLogger(__name__)

TASKS = ("moment", "metabolic", "risk")
VARIANTS = ("imu_emg", "imu_only", "emg_only")
INPUT_CHANNELS = {
    "moment": {"imu": 18, "emg": 3},
    "metabolic": {"imu": 36, "emg": 6},
    "risk": {"strain": 2},
}
# context [t0 - 3, t0) and sliding [t - 6, t) pooled separately
MET_SEGMENTS = [[0.0, 1.0 / 3.0], [1.0 / 3.0, 1.0]]
RISK_THRESHOLD = 0.5
# simulated per-inference cost (ms), shared with the runtime cost model
SIM_COST_MS = {"moment": 2.0, "metabolic": 25.0, "risk": 4.0}


def default_spec(task: str, variant: str = "imu_emg") -> dict:
    """Graph spec for ``task``; see the module docstring of :mod:`exosense.nn.graph`."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
    ch = INPUT_CHANNELS[task]
    if task == "risk":
        if variant != "imu_emg":
            raise ContractError("the risk detector has a single strain input")
        enc = {
            "type": "se_resnet", "se": False, "c_in": ch["strain"], "channels": 16,
            "stem_kernel": 7, "stem_stride": 1, "blocks": 2, "kernel": 3, "readout": "gap_last",
            # first difference: the fast transient stands out from the slow, subject-specific gait deformation
            "diff": True,
        }
        return {"inputs": ["strain"], "encoders": {"strain": enc}, "head": {"hidden": 0, "out": 2}}
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}")
    if task == "moment":
        imu = {"type": "tcn", "c_in": ch["imu"], "channels": 32, "kernel": 3, "dilations": [1, 2, 4]}
        emg = {
            "type": "se_resnet", "c_in": ch["emg"], "channels": 32, "stem_kernel": 7, "stem_stride": 2,
            "blocks": 2, "kernel": 3, "reduction": 4,
        }
        head = {"hidden": 32, "out": 1}
    else:
        imu = {
            "type": "tcn", "c_in": ch["imu"], "channels": 32, "kernel": 5, "dilations": [1, 2, 4, 8, 16],
            "readout": "segments", "segments": MET_SEGMENTS,
        }
        emg = {
            "type": "se_resnet", "c_in": ch["emg"], "channels": 32, "stem_kernel": 9, "stem_stride": 2,
            "blocks": 2, "kernel": 3, "reduction": 4, "readout": "segments", "segments": MET_SEGMENTS,
        }
        head = {"hidden": 32, "out": 3}
    inputs = {"imu_emg": ["imu", "emg"], "imu_only": ["imu"], "emg_only": ["emg"]}[variant]
    encs = {"imu": imu, "emg": emg}
    return {"inputs": inputs, "encoders": {k: encs[k] for k in inputs}, "head": head}


def default_config(task: str, variant: str = "imu_emg") -> dict:
    """Full ledger: graph spec, training schedule, data options."""
    spec = default_spec(task, variant)
    loss = {"moment": "mse", "metabolic": "cross_entropy", "risk": "focal"}[task]
    tc = TrainConfig(lr=1e-3, batch_size=64, epochs=60 if task == "metabolic" else 30, loss=loss)
    return {
        "task": task,
        "variant": variant,
        "seed": 0,
        "model": spec,
        "train": tc.to_dict(),
        "train_stride": 1,
        "sides": ["right"],
        "threshold": RISK_THRESHOLD,
        "within_train_frac": 0.8,
    }


# Desk-scale overrides that keep the synthetic benchmarks inside their CPU
# budgets on one core: fewer epochs, thinner metabolic encoders that see the
# 9 s window averaged down to 12.5 Hz, and subsampled training windows.
# Evaluation always uses every test window.
BENCHMARK_OVERRIDES = {
    "moment": {"train_stride": 10, "within_train_stride": 2, "train": {"epochs": 8, "lr": 2e-3}},
    "metabolic": {
        "model": {
            "encoders": {"imu": {"channels": 16, "pool": 8}, "emg": {"channels": 16, "pool": 8}},
            "head": {"hidden": 16},
        },
        "train": {"epochs": 30, "lr": 3e-3, "batch_size": 32},
    },
    "risk": {"sides": ["left", "right"], "train_stride": 1, "train": {"epochs": 8, "lr": 3e-3}},
}


def merge(base: Mapping, override: Mapping) -> dict:
    """Recursive dict merge; values in ``override`` win, dicts are merged."""
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def make_config(task: str, variant: str = "imu_emg", overrides: Mapping | None = None, benchmark: bool = False) -> dict:
    cfg = default_config(task, variant)
    if benchmark:
        bo = copy.deepcopy(BENCHMARK_OVERRIDES[task])
        enc = bo.get("model", {}).get("encoders")
        if enc:  # only touch encoders the variant uses
            bo["model"]["encoders"] = {k: v for k, v in enc.items() if k in cfg["model"]["inputs"]}
        cfg = merge(cfg, bo)
    if overrides:
        cfg = merge(cfg, overrides)
    if cfg["task"] != task:
        raise ContractError("config task does not match")
    return cfg


def model_receptive_field(spec: dict, name: str) -> int:
    return receptive_field(spec["encoders"][name])


# --------------------------------------------------------------------------
# model container


@dataclass
class DecoderModel:
    task: str
    variant: str
    spec: dict
    net: Fusion
    normalization: D.NormStats | None = None
    seed: int = 0
    threshold: float = RISK_THRESHOLD
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, task: str, spec: dict | None = None, variant: str = "imu_emg", seed: int = 0, **kw) -> "DecoderModel":
        spec = spec or default_spec(task, variant)
        net = build_model(spec).init(np.random.default_rng(seed)).astype(np.float32)
        return cls(task, variant, spec, net, seed=seed, **kw)

    @property
    def inputs(self) -> list[str]:
        return list(self.spec["inputs"])

    def zero(self) -> "DecoderModel":
        self.net.zero_()
        return self

    def transform(self, name: str, x: np.ndarray) -> np.ndarray:
        """Fixed input preprocessing ahead of normalization (causal first difference if ``diff``)."""
        if not self.spec["encoders"][name].get("diff", False):
            return x
        return np.diff(x, axis=-1, prepend=x[..., :1])

    def _prepare(self, inputs: Mapping[str, np.ndarray], batched: bool) -> list[np.ndarray]:
        xs = []
        for name in self.inputs:
            if name not in inputs or inputs[name] is None:
                raise ShapeError(f"{self.task}/{self.variant} model needs input {name!r}")
            x = np.asarray(inputs[name], dtype=np.float64)
            if not batched:
                x = x[None]
            want = self.spec["encoders"][name].get("c_in")
            if x.ndim != 3 or (want is not None and x.shape[1] != want):
                raise ShapeError(f"input {name!r} has shape {x.shape[1:]}, expected ({want}, T)")
            x = self.transform(name, x)
            if self.normalization is not None:
                mean, std = self.normalization[name]
                x = (x - mean[None, :, None]) / std[None, :, None]
            xs.append(x.astype(self.net.dtype))
        return xs

    def logits(self, inputs: Mapping[str, np.ndarray], batch_size: int = 512) -> np.ndarray:
        """Raw network outputs for a batch ``{name: (N, C, T)}``."""
        xs = self._prepare(inputs, batched=True)
        n = len(xs[0])
        outs = [self.net.forward(*(x[s : s + batch_size] for x in xs)) for s in range(0, n, batch_size)]
        return np.concatenate(outs).astype(np.float64) if outs else np.zeros((0, self.spec["head"]["out"]))

    def predict(self, inputs: Mapping[str, np.ndarray], batch_size: int = 512) -> np.ndarray:
        """Moment (N,), class probabilities (N, 3), or risk probability (N,)."""
        z = self.logits(inputs, batch_size)
        if self.task == "moment":
            return z[:, 0]
        p = softmax(z, axis=1)
        return p if self.task == "metabolic" else p[:, 1]

    # artifact -------------------------------------------------------------
    def sidecar(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "spec": self.spec,
            "normalization": None if self.normalization is None else D.stats_to_json(self.normalization),
            "seed": self.seed,
            "threshold": self.threshold,
            "meta": self.meta,
        }

    def save(self, directory) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        save_weights(self.net, root / "weights.bin", self.spec)
        (root / "model.json").write_text(json.dumps(self.sidecar(), indent=1, sort_keys=True) + "\n")
        return root

    @classmethod
    def load(cls, directory) -> "DecoderModel":
        root = Path(directory)
        side = json.loads((root / "model.json").read_text())
        net = build_model(side["spec"]).astype(np.float32)
        load_weights(net, root / "weights.bin", side["spec"])
        norm = side.get("normalization")
        return cls(
            side["task"], side["variant"], side["spec"], net,
            None if norm is None else D.stats_from_json(norm),
            side.get("seed", 0), side.get("threshold", RISK_THRESHOLD), side.get("meta", {}),
        )


def _single(model: DecoderModel, task: str, sample) -> np.ndarray:
    if model.task != task:
        raise ContractError(f"expected a {task} model, got {model.task}")
    inputs = sample.inputs if isinstance(sample, D.Sample) else sample
    return model.predict({k: np.asarray(inputs[k])[None] for k in model.inputs if inputs.get(k) is not None})


def moment_predict(model: DecoderModel, sample) -> float:
    """Ankle moment (Nm/kg) for one sample ``{"imu": (18, 20), "emg": (3, 200)}``.

    Inputs a variant does not use may be absent.
    """
    return float(_single(model, "moment", sample)[0])


def metabolic_predict(model: DecoderModel, sample) -> np.ndarray:
    """Probabilities ordered as :class:`MetClass` (increasing, steady, decreasing)."""
    return _single(model, "metabolic", sample)[0]


def risk_predict(model: DecoderModel, strain_window) -> float:
    """Risk probability for one ``(2, 100)`` strain window."""
    w = strain_window.inputs["strain"] if isinstance(strain_window, D.Sample) else strain_window
    if isinstance(w, Mapping):
        w = w["strain"]
    return float(_single(model, "risk", {"strain": w})[0])


# --------------------------------------------------------------------------
# training and evaluation


def fold_seed(master: int, fold: int) -> int:
    return int(np.random.SeedSequence([master, fold]).generate_state(1)[0] % (2**31))


def fit_model(train_ds: Dataset, config: Mapping, seed: int) -> DecoderModel:
    """Fit normalization on ``train_ds`` and train a fresh model."""
    if len(train_ds) == 0:
        raise ContractError("empty training split")
    task = config["task"]
    stride = int(config.get("train_stride", 1))
    if stride > 1:
        train_ds = train_ds.take(np.arange(0, len(train_ds), stride))
    model = DecoderModel.build(task, config["model"], config["variant"], seed, threshold=config.get("threshold", RISK_THRESHOLD))
    used = {k: model.transform(k, v) for k, v in train_ds.inputs.items() if k in model.inputs}
    train_ds = replace(train_ds, inputs={**train_ds.inputs, **used})
    stats = D.normalize_fit(train_ds)
    model.normalization = stats
    norm = D.normalize_apply(stats, train_ds)
    xs = [norm.inputs[k] for k in model.inputs]
    targets = norm.targets.astype(np.int64) if task != "moment" else norm.targets.astype(np.float32)
    tc = TrainConfig.from_dict({**config["train"], "seed": seed})
    t0 = time.perf_counter()
    _, hist = train(model.net, xs, targets, tc)
    model.meta = {"train_loss": hist.loss, "train_s": round(time.perf_counter() - t0, 3), "n_train": len(norm)}
    return model


def evaluate_model(model: DecoderModel, ds: Dataset) -> tuple[dict[str, Any], np.ndarray]:
    """Task metrics on ``ds`` plus the raw predictions."""
    out = model.predict(ds.inputs)
    if model.task == "moment":
        metrics = {"rmse": M.rmse(out, ds.targets)}
        if np.std(out) > 0 and np.std(ds.targets) > 0:
            metrics["pearson"] = M.pearson(out, ds.targets)
        return metrics, out
    if model.task == "metabolic":
        pred = out.argmax(axis=1)
        cm = M.confusion(pred, ds.targets, 3)
        _, _, f1 = M.precision_recall_f1(cm)
        metrics = {"accuracy": M.accuracy(pred, ds.targets), "confusion": cm.tolist()}
        for c in MetClass:
            metrics[f"f1_{c.wire}"] = float(f1[c])
        return metrics, out
    return risk_metrics(ds, out >= model.threshold), out


def risk_metrics(ds: Dataset, positive: np.ndarray, cost_ms: float = SIM_COST_MS["risk"]) -> dict[str, Any]:
    """Event recall and delay (simulated clock: output time = window end +
    inference cost), plus window-level recall/precision/false-alarm rate.

    A false alarm is a positive negative-window with no onset in the
    preceding 1 s; the rate divides by the number of negative windows.
    """
    y = ds.targets.astype(bool)
    positive = np.asarray(positive, dtype=bool)
    sides = ds.extra.get("side", np.zeros(len(ds), dtype=np.int64))
    delays, detected, missed, fa = [], 0, 0, 0
    for s in np.unique(sides):
        m = sides == s
        onsets = np.unique(ds.extra["last_onset_s"][m][~np.isnan(ds.extra["last_onset_s"][m])])
        res = M.detection_delay(onsets, ds.t_s[m] + cost_ms / 1000.0, positive[m])
        delays += res.delays_ms
        detected += len(res.detected)
        missed += len(res.missed)
        fa += len(res.false_alarms)
    n_neg = int((~y).sum())
    cm = M.confusion(positive.astype(int), y.astype(int), 2)
    prec, rec, _ = M.precision_recall_f1(cm)
    n_events = detected + missed
    return {
        "recall": detected / n_events if n_events else 0.0,
        "false_alarm_rate": fa / n_neg if n_neg else 0.0,
        "delay_median_ms": float(np.median(delays)) if delays else float("nan"),
        "delay_max_ms": float(np.max(delays)) if delays else float("nan"),
        "delays_ms": [float(d) for d in delays],
        "n_events": n_events,
        "window_recall": float(rec[1]),
        "window_precision": float(prec[1]),
    }


@dataclass
class FoldResult:
    fold: int
    subject: str
    seed: int
    metrics: dict[str, Any]
    model: DecoderModel
    predictions: np.ndarray
    targets: np.ndarray
    t_s: np.ndarray


def train_task(task: str, per_subject: Mapping[str, Dataset], config: Mapping | None = None, mode: str = "loso") -> list[FoldResult]:
    """Train one model per fold and evaluate it on the held-out data.

    ``mode="loso"`` holds out each subject in turn; ``mode="within"`` trains
    on the first 80 % (by time) of each subject and tests on the rest.
    """
    config = dict(config or default_config(task))
    if config.get("task", task) != task:
        raise ContractError("config is for a different task")
    config["task"] = task
    if mode == "loso":
        folds = D.loso_folds(per_subject)
    elif mode == "within":
        folds = []
        for sid in sorted(per_subject):
            tr, te = D.chronological_split(per_subject[sid], config.get("within_train_frac", 0.8))
            folds.append((sid, tr, te))
    else:
        raise ContractError(f"unknown mode {mode!r}")
    results = []
    for i, (sid, tr, te) in enumerate(folds):
        if len(tr) == 0 or len(te) == 0:
            raise ContractError(f"fold {i} ({sid}) has an empty split")
        seed = fold_seed(int(config.get("seed", 0)), i)
        fold_cfg = config
        if mode == "within" and "within_train_stride" in config:
            fold_cfg = {**config, "train_stride": config["within_train_stride"]}
        model = fit_model(tr, fold_cfg, seed)
        metrics, pred = evaluate_model(model, te)
        log.info("%s %s fold %d (%s): %s", task, mode, i, sid, {k: v for k, v in metrics.items() if np.isscalar(v)})
        results.append(FoldResult(i, sid, seed, metrics, model, pred, te.targets, te.t_s))
    return results
