"""Windowed, labelled datasets for the three decoding tasks, plus LOSO folds.

Signals are conditioned with the same causal filters the runtime uses, then
cut into end-aligned windows:

* moment: 200 ms windows every 10 ms, target = moment at the window's last sample
* metabolic: 3 s pre-switch context + 6 s sliding window every 3 s after a switch
* risk: 1 s strain windows every 50 ms
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dsp import design_bandpass_butter, design_lowpass_butter, emg_envelope, filter_causal
from .errors import ContractError
from .signals import RATES, SIDES, SessionRecording, TimeSeries, Transition, resample_linear

MOMENT_WINDOW_S = 0.2
MOMENT_STRIDE_S = 0.01
MET_CONTEXT_S = 3.0
MET_SLIDING_S = 6.0
MET_STRIDE_S = 3.0
MET_FIRST_OFFSET_S = 6.0
MET_HORIZON_S = 30.0
MET_LABEL_WINDOW_S = 6.0
MET_THRESHOLD = 0.10
RISK_WINDOW_S = 1.0
RISK_STRIDE_S = 0.05
RISK_LABEL_EXTENT_S = 0.3
STD_FLOOR = 1e-6


class MetClass(enum.IntEnum):
    INCREASING = 0
    STEADY = 1
    DECREASING = 2

    @property
    def wire(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "MetClass":
        return cls[name.upper()]


# --------------------------------------------------------------------------
# conditioning


def condition_emg(emg: TimeSeries) -> tuple[TimeSeries, TimeSeries]:
    """Band-pass (20-450 Hz) then envelope; returns (band-passed, envelope)."""
    bp = filter_causal(design_bandpass_butter(4, 20.0, 450.0, emg.sample_rate_hz), emg)
    return bp, emg_envelope(bp)


def condition_lowpass(series: TimeSeries) -> TimeSeries:
    """4th-order 20 Hz low-pass used for IMU and strain."""
    return filter_causal(design_lowpass_butter(4, 20.0, series.sample_rate_hz), series)


class ConditionedSession:
    """Lazily filtered views of a session's streams (computed once each)."""

    def __init__(self, session: SessionRecording):
        self.session = session
        self._cache: dict = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def emg(self, side: str) -> TimeSeries:
        return self._get(("emg", side), lambda: condition_emg(self.session.stream("emg", side)))[0]

    def envelope(self, side: str) -> TimeSeries:
        return self._get(("emg", side), lambda: condition_emg(self.session.stream("emg", side)))[1]

    def envelope_100(self, side: str) -> TimeSeries:
        return self._get(("env100", side), lambda: resample_linear(self.envelope(side), RATES["imu"]))

    def imu(self, side: str) -> TimeSeries:
        return self._get(("imu", side), lambda: condition_lowpass(self.session.stream("imu", side)))

    def strain(self, side: str) -> TimeSeries:
        return self._get(("strain", side), lambda: condition_lowpass(self.session.stream("strain", side)))


def _conditioned(session) -> ConditionedSession:
    return session if isinstance(session, ConditionedSession) else ConditionedSession(session)


# --------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    """Windowed samples stored as stacked arrays.

    ``inputs`` maps an input name to an ``(N, channels, time)`` array;
    ``targets`` is ``(N,)`` (float moment, int class, or bool risk label).
    """

    task: str
    inputs: dict[str, np.ndarray]
    targets: np.ndarray
    t_s: np.ndarray
    subject_ids: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    normalization: dict[str, tuple[np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def subjects(self) -> set[str]:
        return set(self.subject_ids.tolist())

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            inputs={k: v[idx] for k, v in self.inputs.items()},
            targets=self.targets[idx],
            t_s=self.t_s[idx],
            subject_ids=self.subject_ids[idx],
            extra={k: v[idx] for k, v in self.extra.items()},
        )

    def __getitem__(self, i: int):
        return Sample(
            {k: v[i] for k, v in self.inputs.items()},
            self.targets[i].item(),
            float(self.t_s[i]),
            str(self.subject_ids[i]),
            {k: v[i].item() for k, v in self.extra.items()},
        )


@dataclass(frozen=True)
class Sample:
    inputs: dict[str, np.ndarray]
    target: object
    t_s: float
    subject_id: str
    extra: dict


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise ContractError("cannot concatenate zero datasets")
    first = datasets[0]
    return Dataset(
        task=first.task,
        inputs={k: np.concatenate([d.inputs[k] for d in datasets]) for k in first.inputs},
        targets=np.concatenate([d.targets for d in datasets]),
        t_s=np.concatenate([d.t_s for d in datasets]),
        subject_ids=np.concatenate([d.subject_ids for d in datasets]),
        extra={k: np.concatenate([d.extra[k] for d in datasets]) for k in first.extra},
    )


def _windows(x: np.ndarray, length: int, last_idx: np.ndarray) -> np.ndarray:
    """``(N, C, length)`` windows whose final sample is ``x[:, last_idx]``."""
    view = np.lib.stride_tricks.sliding_window_view(x, length, axis=1)
    return np.ascontiguousarray(view[:, last_idx - length + 1].transpose(1, 0, 2))


def window_count(duration_s: float, window_s: float, stride_s: float) -> int:
    return int(math.floor((duration_s - window_s) / stride_s + 1e-9)) + 1


# --------------------------------------------------------------------------
# Task I: joint moment


def build_moment_dataset(session, side: str, stride_s: float = MOMENT_STRIDE_S) -> Dataset:
    """200 ms unilateral IMU (18x20) + EMG (3x200) windows with end-of-window targets."""
    cs = _conditioned(session)
    s = cs.session
    if side not in s.ground_truth_moment:
        raise ContractError(f"session {s.subject_id} has no ground-truth moment for {side!r}")
    imu = cs.imu(side)
    emg = cs.emg(side)
    tau = s.ground_truth_moment[side]
    n_imu = int(round(MOMENT_WINDOW_S * imu.sample_rate_hz))
    n_emg = int(round(MOMENT_WINDOW_S * emg.sample_rate_hz))
    step = int(round(stride_s * imu.sample_rate_hz))
    ratio = int(round(emg.sample_rate_hz / imu.sample_rate_hz))
    n_avail = min(imu.n_samples, tau.n_samples, emg.n_samples // ratio)
    last = np.arange(n_imu - 1, n_avail, step)
    last_emg = (last + 1) * ratio - 1
    return Dataset(
        task="moment",
        inputs={
            "imu": _windows(imu.data, n_imu, last).astype(np.float32),
            "emg": _windows(emg.data, n_emg, last_emg).astype(np.float32),
        },
        targets=tau.data[0, last].astype(np.float64),
        t_s=imu.timestamp(last),
        subject_ids=np.full(len(last), s.subject_id),
    )


# --------------------------------------------------------------------------
# Task II: metabolic trend


def valid_metabolic_times(transition: Transition) -> list[float]:
    """Times ``t`` with both ``t - 6`` and ``t + 30`` inside the transition segment."""
    out = []
    k = 0
    while True:
        t = transition.t_switch_s + MET_FIRST_OFFSET_S + k * MET_STRIDE_S
        if t + MET_HORIZON_S > transition.steady_time_s + 1e-9:
            return out
        out.append(t)
        k += 1


def _mean_over(met: TimeSeries, a: float, b: float) -> float:
    """Mean of samples with timestamps in ``[a, b)``."""
    i0 = int(math.ceil((a - met.start_time_s) * met.sample_rate_hz - 1e-9))
    i1 = int(math.ceil((b - met.start_time_s) * met.sample_rate_hz - 1e-9))
    if i0 < 0 or i1 > met.n_samples or i1 <= i0:
        raise ContractError(f"metabolic trace does not cover [{a}, {b})")
    return float(np.mean(met.data[0, i0:i1], dtype=np.float64))


def metabolic_change(met: TimeSeries, t_s: float) -> float:
    """Mean over [t+24, t+30) minus mean over [t-6, t)."""
    after = _mean_over(met, t_s + MET_HORIZON_S - MET_LABEL_WINDOW_S, t_s + MET_HORIZON_S)
    before = _mean_over(met, t_s - MET_LABEL_WINDOW_S, t_s)
    return after - before


def classify_change(delta: float, baseline_w_per_kg: float) -> MetClass:
    if not baseline_w_per_kg > 0:
        raise ContractError("baseline must be positive")
    r = delta / baseline_w_per_kg
    if r > MET_THRESHOLD:
        return MetClass.INCREASING
    if r < -MET_THRESHOLD:
        return MetClass.DECREASING
    return MetClass.STEADY


def metabolic_label(met: TimeSeries, t_s: float, baseline_w_per_kg: float) -> MetClass:
    return classify_change(metabolic_change(met, t_s), baseline_w_per_kg)


def _segment(x: TimeSeries, t_end: float, duration: float) -> np.ndarray:
    n = int(round(duration * x.sample_rate_hz))
    i1 = int(round((t_end - x.start_time_s) * x.sample_rate_hz))
    if i1 - n < 0 or i1 > x.n_samples:
        raise ContractError(f"window ending at {t_end} s is outside the stream")
    return x.data[:, i1 - n : i1]


def build_metabolic_dataset(session) -> Dataset:
    """Bilateral IMU (36x900) and EMG envelope (6x900) inputs with trend labels."""
    cs = _conditioned(session)
    s = cs.session
    imu = [cs.imu(side) for side in SIDES]
    env = [cs.envelope_100(side) for side in SIDES]
    imu_x, emg_x, labels, times, tr_idx = [], [], [], [], []
    for i, tr in enumerate(s.transitions):
        times_i = valid_metabolic_times(tr)
        if not times_i:
            continue
        ctx_imu = np.vstack([_segment(x, tr.t_switch_s, MET_CONTEXT_S) for x in imu])
        ctx_emg = np.vstack([_segment(x, tr.t_switch_s, MET_CONTEXT_S) for x in env])
        for t in times_i:
            imu_x.append(np.hstack([ctx_imu, np.vstack([_segment(x, t, MET_SLIDING_S) for x in imu])]))
            emg_x.append(np.hstack([ctx_emg, np.vstack([_segment(x, t, MET_SLIDING_S) for x in env])]))
            labels.append(int(metabolic_label(s.metabolic, t, s.zero_torque_baseline_w_per_kg)))
            times.append(t)
            tr_idx.append(i)
    n_t = int(round((MET_CONTEXT_S + MET_SLIDING_S) * RATES["imu"]))
    return Dataset(
        task="metabolic",
        inputs={
            "imu": np.asarray(imu_x, dtype=np.float32).reshape(-1, 36, n_t),
            "emg": np.asarray(emg_x, dtype=np.float32).reshape(-1, 6, n_t),
        },
        targets=np.asarray(labels, dtype=np.int64),
        t_s=np.asarray(times, dtype=np.float64),
        subject_ids=np.full(len(labels), s.subject_id),
        extra={"transition_index": np.asarray(tr_idx, dtype=np.int64)},
    )


# --------------------------------------------------------------------------
# Task III: risk


def risk_positive_mask(t_end: np.ndarray, onsets: Iterable[float], stride_s: float = RISK_STRIDE_S) -> np.ndarray:
    """Positive windows: the first window ending at or after each onset and the
    following ``extent / stride`` windows (7 per event at the default stride)."""
    n_pos = int(round(RISK_LABEL_EXTENT_S / stride_s)) + 1
    mask = np.zeros(len(t_end), dtype=bool)
    for onset in onsets:
        first = int(np.searchsorted(t_end, onset - 1e-9))
        mask[first : first + n_pos] = True
    return mask


def build_risk_dataset(session, side: str, stride_s: float = RISK_STRIDE_S) -> Dataset:
    """1 s unilateral strain windows (2x100) every 50 ms with event labels."""
    cs = _conditioned(session)
    s = cs.session
    strain = cs.strain(side)
    n = int(round(RISK_WINDOW_S * strain.sample_rate_hz))
    step = int(round(stride_s * strain.sample_rate_hz))
    last = np.arange(n - 1, strain.n_samples, step)
    t_end = strain.timestamp(last)
    onsets = np.sort([e.onset_s for e in s.perturbations])
    return Dataset(
        task="risk",
        inputs={"strain": _windows(strain.data, n, last).astype(np.float32)},
        targets=risk_positive_mask(t_end, onsets, stride_s),
        t_s=t_end,
        subject_ids=np.full(len(last), s.subject_id),
        extra={"last_onset_s": last_onset(t_end, onsets), "side": np.full(len(last), SIDES.index(side))},
    )


def last_onset(t_s: np.ndarray, onsets: np.ndarray) -> np.ndarray:
    """Most recent onset at or before each time (NaN before the first)."""
    onsets = np.asarray(onsets, dtype=np.float64)
    i = np.searchsorted(onsets, np.asarray(t_s) + 1e-9, side="right") - 1
    return np.where(i >= 0, onsets[np.maximum(i, 0)] if len(onsets) else np.nan, np.nan)


# --------------------------------------------------------------------------
# folds and normalization


def loso_folds(per_subject: Mapping[str, Dataset]) -> list[tuple[str, Dataset, Dataset]]:
    """One ``(test_subject, train, test)`` fold per subject, ordered by subject id."""
    ids = sorted(per_subject)
    if len(ids) < 2:
        raise ContractError("leave-one-subject-out needs at least two subjects")
    folds = []
    for sid in ids:
        train = concat([per_subject[o] for o in ids if o != sid])
        folds.append((sid, train, per_subject[sid]))
    return folds


def chronological_split(ds: Dataset, train_frac: float = 0.8) -> tuple[Dataset, Dataset]:
    """Split one subject's samples by time: first ``train_frac`` trains, rest tests."""
    order = np.argsort(ds.t_s, kind="stable")
    cut = int(round(train_frac * len(order)))
    return ds.take(order[:cut]), ds.take(order[cut:])


NormStats = dict[str, tuple[np.ndarray, np.ndarray]]


def normalize_fit(train: Dataset) -> NormStats:
    """Per-channel mean and std (floored at 1e-6) over training samples and time."""
    if len(train) == 0:
        raise ContractError("cannot fit normalization on an empty dataset")
    stats = {}
    for name, x in train.inputs.items():
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=(0, 2))
        std = np.maximum(x64.std(axis=(0, 2)), STD_FLOOR)
        stats[name] = (mean, std)
    return stats


def normalize_apply(stats: NormStats, ds: Dataset) -> Dataset:
    inputs = {}
    for name, x in ds.inputs.items():
        mean, std = stats[name]
        inputs[name] = ((x - mean[None, :, None]) / std[None, :, None]).astype(x.dtype)
    return replace(ds, inputs=inputs, normalization=stats)


def stats_to_json(stats: NormStats) -> dict:
    return {k: {"mean": m.tolist(), "std": s.tolist()} for k, (m, s) in stats.items()}


def stats_from_json(d: Mapping) -> NormStats:
    return {k: (np.asarray(v["mean"]), np.asarray(v["std"])) for k, v in d.items()}


# --------------------------------------------------------------------------
# cache format: <task>.bin (little-endian blobs) + <task>.json index


def save_dataset(ds: Dataset, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    blobs, arrays, offset = [], {}, 0
    for name, x in sorted(ds.inputs.items()):
        b = np.ascontiguousarray(x, dtype="<f4").tobytes()
        arrays[name] = {"offset": offset, "shape": list(x.shape), "dtype": "<f4"}
        blobs.append(b)
        offset += len(b)
    payload = b"".join(blobs)
    (root / f"{ds.task}.bin").write_bytes(payload)
    tgt = ds.targets
    index = {
        "version": 1,
        "task": ds.task,
        "n_samples": len(ds),
        "inputs": arrays,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "targets": tgt.astype(float).tolist() if tgt.dtype.kind == "f" else tgt.astype(int).tolist(),
        "target_kind": tgt.dtype.kind,
        "t_s": ds.t_s.tolist(),
        "subject_ids": ds.subject_ids.tolist(),
        "extra": {k: v.tolist() for k, v in sorted(ds.extra.items())},
        "normalization": None if ds.normalization is None else stats_to_json(ds.normalization),
    }
    (root / f"{ds.task}.json").write_text(json.dumps(index, indent=1) + "\n")
    return root


def load_dataset(directory, task: str) -> Dataset:
    root = Path(directory)
    index = json.loads((root / f"{task}.json").read_text())
    payload = (root / f"{task}.bin").read_bytes()
    if hashlib.sha256(payload).hexdigest() != index["sha256"]:
        raise ContractError(f"{task}.bin checksum mismatch")
    inputs = {}
    for name, meta in index["inputs"].items():
        n = int(np.prod(meta["shape"])) * 4
        inputs[name] = np.frombuffer(payload, dtype=meta["dtype"], count=n // 4, offset=meta["offset"]).reshape(
            meta["shape"]).astype(np.float32)
    kind = index["target_kind"]
    dtype = {"f": np.float64, "b": bool}.get(kind, np.int64)
    norm = index["normalization"]
    return Dataset(
        task=index["task"],
        inputs=inputs,
        targets=np.asarray(index["targets"]).astype(dtype),
        t_s=np.asarray(index["t_s"], dtype=np.float64),
        subject_ids=np.asarray(index["subject_ids"]),
        extra={k: np.asarray(v) for k, v in index["extra"].items()},
        normalization=None if norm is None else stats_from_json(norm),
    )


def build_task_dataset(task: str, session, sides: Sequence[str] = ("right",), stride_s: float | None = None) -> Dataset:
    """Convenience dispatcher used by the harness and the CLI."""
    cs = _conditioned(session)
    if task == "moment":
        parts = [build_moment_dataset(cs, side, stride_s or MOMENT_STRIDE_S) for side in sides]
    elif task == "risk":
        parts = [build_risk_dataset(cs, side, stride_s or RISK_STRIDE_S) for side in sides]
    elif task == "metabolic":
        parts = [build_metabolic_dataset(cs)]
    else:
        raise ContractError(f"unknown task {task!r}")
    return parts[0] if len(parts) == 1 else concat(parts)
