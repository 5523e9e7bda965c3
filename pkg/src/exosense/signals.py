"""Multichannel time series, session recordings, and session-bundle persistence.

A session bundle is a directory holding ``manifest.json`` plus one CSV per
stream named ``<modality>_<side>.csv`` with header ``t,<channel...>``.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    ChecksumError,
    ContractError,
    ManifestError,
    MissingStreamError,
    NonFiniteError,
    RangeError,
)

BUNDLE_VERSION = 1
SIDES = ("left", "right")
BILATERAL = "bilateral"

# Default acquisition rates (Hz).
RATES = {
    "emg": 1000.0,
    "imu": 100.0,
    "strain": 100.0,
    "fsr": 100.0,
    "moment": 100.0,
    "metabolic": 1.0,
}

EMG_MUSCLES = ("tibialis_anterior", "fibularis_brevis", "gastrocnemius")
IMU_SEGMENTS = ("shank", "foot")
IMU_SENSORS = ("acc", "gyr", "mag")
IMU_UNITS = {"acc": "m/s^2", "gyr": "rad/s", "mag": "uT"}


def _imu_channel_names() -> tuple[str, ...]:
    return tuple(
        f"{seg}_{sensor}_{axis}"
        for seg in IMU_SEGMENTS
        for sensor in IMU_SENSORS
        for axis in "xyz"
    )


@dataclass(frozen=True)
class ChannelLayout:
    """Per-side sensor layout; bilateral totals are twice the per-side counts."""

    emg_channels: tuple[str, ...] = EMG_MUSCLES
    strain_channels: tuple[str, ...] = ("strain_0", "strain_1")
    imu_channels: tuple[str, ...] = field(default_factory=_imu_channel_names)
    fsr_channels: tuple[str, ...] = tuple(f"fsr_{i}" for i in range(8))

    @property
    def imu_units(self) -> int:
        return len(self.imu_channels) // 9

    def bilateral_totals(self) -> dict[str, int]:
        return {
            "emg": 2 * len(self.emg_channels),
            "strain": 2 * len(self.strain_channels),
            "imu_units": 2 * self.imu_units,
            "fsr": 2 * len(self.fsr_channels),
        }

    def channels(self, modality: str) -> tuple[str, ...]:
        try:
            return {
                "emg": self.emg_channels,
                "strain": self.strain_channels,
                "imu": self.imu_channels,
                "fsr": self.fsr_channels,
            }[modality]
        except KeyError:
            raise ContractError(f"unknown modality {modality!r}") from None

    def to_dict(self) -> dict:
        return {
            "emg_channels": list(self.emg_channels),
            "strain_channels": list(self.strain_channels),
            "imu_channels": list(self.imu_channels),
            "fsr_channels": list(self.fsr_channels),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChannelLayout":
        return cls(
            emg_channels=tuple(d["emg_channels"]),
            strain_channels=tuple(d["strain_channels"]),
            imu_channels=tuple(d["imu_channels"]),
            fsr_channels=tuple(d["fsr_channels"]),
        )


class TimeSeries:
    """Uniformly sampled multichannel signal, stored channels x samples.

    Timestamps are derived: sample ``k`` sits at ``start_time_s + k / sample_rate_hz``.
    The data array is made read-only on construction.
    """

    __slots__ = ("sample_rate_hz", "start_time_s", "channel_names", "units", "data")

    def __init__(
        self,
        data,
        sample_rate_hz: float,
        start_time_s: float = 0.0,
        channel_names: Iterable[str] | None = None,
        units: Iterable[str] | str | None = None,
    ):
        arr = np.asarray(data)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ContractError(f"data must be channels x samples, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not (sample_rate_hz > 0 and math.isfinite(sample_rate_hz)):
            raise ContractError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("time series contains a non-finite sample")
        names = tuple(channel_names) if channel_names is not None else tuple(
            f"ch{i}" for i in range(arr.shape[0])
        )
        if len(names) != arr.shape[0]:
            raise ContractError(
                f"{arr.shape[0]} data rows but {len(names)} channel names"
            )
        if units is None:
            units = ("",) * len(names)
        elif isinstance(units, str):
            units = (units,) * len(names)
        else:
            units = tuple(units)
        if len(units) != len(names):
            raise ContractError("one unit string per channel required")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self.data = arr
        self.sample_rate_hz = float(sample_rate_hz)
        self.start_time_s = float(start_time_s)
        self.channel_names = names
        self.units = units

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def end_time_s(self) -> float:
        """Exclusive end of the series extent."""
        return self.start_time_s + self.duration_s

    def timestamp(self, k):
        return self.start_time_s + np.asarray(k) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.timestamp(np.arange(self.n_samples))

    def index_at(self, t_s: float) -> int:
        """Index of the sample at or immediately before ``t_s``."""
        return int(math.floor((t_s - self.start_time_s) * self.sample_rate_hz + 1e-9))

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channel_names.index(name)]

    def select(self, names: Iterable[str]) -> "TimeSeries":
        names = list(names)
        idx = [self.channel_names.index(n) for n in names]
        return self.replace(
            data=self.data[idx], channel_names=names, units=[self.units[i] for i in idx]
        )

    def replace(self, **changes) -> "TimeSeries":
        kw = dict(
            data=self.data,
            sample_rate_hz=self.sample_rate_hz,
            start_time_s=self.start_time_s,
            channel_names=self.channel_names,
            units=self.units,
        )
        kw.update(changes)
        return TimeSeries(**kw)

    def slice(self, t_start_s: float, duration_s: float) -> "TimeSeries":
        return slice_series(self, t_start_s, duration_s)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.start_time_s == other.start_time_s
            and self.channel_names == other.channel_names
            and self.units == other.units
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"TimeSeries({self.n_channels}ch x {self.n_samples} @ {self.sample_rate_hz:g} Hz, "
            f"t0={self.start_time_s:g}s)"
        )


def slice_series(series: TimeSeries, t_start_s: float, duration_s: float) -> TimeSeries:
    """Return the ``duration_s`` window starting at ``t_start_s``.

    The start index is ``floor((t_start_s - start_time_s) * rate)`` and the
    length is ``round(duration_s * rate)``; out-of-range windows raise
    :class:`RangeError` naming the offending bound.
    """
    if not duration_s > 0:
        raise ContractError(f"duration_s must be positive, got {duration_s}")
    i0 = series.index_at(t_start_s)
    n = int(round(duration_s * series.sample_rate_hz))
    if i0 < 0:
        raise RangeError(
            f"t_start_s={t_start_s} precedes series start {series.start_time_s}"
        )
    if i0 + n > series.n_samples:
        raise RangeError(
            f"t_end_s={t_start_s + duration_s} exceeds series end {series.end_time_s}"
        )
    return series.replace(
        data=series.data[:, i0 : i0 + n], start_time_s=series.timestamp(i0)
    )


def resample_linear(series: TimeSeries, target_hz: float) -> TimeSeries:
    """Linearly interpolate onto a ``target_hz`` grid sharing the original start time."""
    if not target_hz > 0:
        raise ContractError(f"target_hz must be positive, got {target_hz}")
    if target_hz == series.sample_rate_hz:
        return series
    span = (series.n_samples - 1) / series.sample_rate_hz
    n_new = int(math.floor(span * target_hz + 1e-9)) + 1
    x_old = np.arange(series.n_samples) / series.sample_rate_hz
    x_new = np.arange(n_new) / target_hz
    out = np.empty((series.n_channels, n_new), dtype=series.data.dtype)
    for c in range(series.n_channels):
        out[c] = np.interp(x_new, x_old, series.data[c])
    return series.replace(data=out, sample_rate_hz=target_hz)


@dataclass(frozen=True)
class ControlLaw:
    alpha: float = 0.0
    delay_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "delay_ms": self.delay_ms}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ControlLaw":
        return cls(alpha=float(d["alpha"]), delay_ms=float(d["delay_ms"]))


ZERO_TORQUE = ControlLaw(0.0, 0.0)


@dataclass(frozen=True)
class Transition:
    t_switch_s: float
    law_before: ControlLaw
    law_after: ControlLaw
    steady_time_s: float

    @property
    def length_s(self) -> float:
        return self.steady_time_s - self.t_switch_s

    def to_dict(self) -> dict:
        return {
            "t_switch_s": self.t_switch_s,
            "law_before": self.law_before.to_dict(),
            "law_after": self.law_after.to_dict(),
            "steady_time_s": self.steady_time_s,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Transition":
        return cls(
            t_switch_s=float(d["t_switch_s"]),
            law_before=ControlLaw.from_dict(d["law_before"]),
            law_after=ControlLaw.from_dict(d["law_after"]),
            steady_time_s=float(d["steady_time_s"]),
        )


@dataclass(frozen=True)
class PerturbationEvent:
    onset_s: float
    gait_phase_pct: float
    magnitude_nm_per_kg: float
    button_press_s: float | None = None

    def to_dict(self) -> dict:
        return {
            "onset_s": self.onset_s,
            "gait_phase_pct": self.gait_phase_pct,
            "magnitude_nm_per_kg": self.magnitude_nm_per_kg,
            "button_press_s": self.button_press_s,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationEvent":
        bp = d.get("button_press_s")
        return cls(
            onset_s=float(d["onset_s"]),
            gait_phase_pct=float(d["gait_phase_pct"]),
            magnitude_nm_per_kg=float(d["magnitude_nm_per_kg"]),
            button_press_s=None if bp is None else float(bp),
        )


@dataclass(frozen=True, eq=True)
class SessionRecording:
    subject_id: str
    body_mass_kg: float
    layout: ChannelLayout
    streams: Mapping[tuple[str, str], TimeSeries]
    metabolic: TimeSeries
    ground_truth_moment: Mapping[str, TimeSeries]
    transitions: tuple[Transition, ...] = ()
    perturbations: tuple[PerturbationEvent, ...] = ()
    zero_torque_baseline_w_per_kg: float = 1.0

    __hash__ = None

    def stream(self, modality: str, side: str) -> TimeSeries:
        try:
            return self.streams[(modality, side)]
        except KeyError:
            raise ContractError(f"session has no {modality} stream for side {side!r}") from None

    def extent(self) -> tuple[float, float]:
        """Common time interval covered by every stream."""
        series = list(self.streams.values()) + [self.metabolic]
        series += list(self.ground_truth_moment.values())
        return (
            max(s.start_time_s for s in series),
            min(s.end_time_s for s in series),
        )


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str


MAGNITUDE_CAP = 0.3


def validate_session(session: SessionRecording) -> list[Violation]:
    out: list[Violation] = []

    def add(code, loc, msg):
        out.append(Violation(code, loc, msg))

    if not session.body_mass_kg > 0:
        add("body_mass", "body_mass_kg", "body mass must be positive")
    if not session.zero_torque_baseline_w_per_kg > 0:
        add("baseline", "zero_torque_baseline_w_per_kg", "baseline must be positive")

    layout = session.layout
    totals = layout.bilateral_totals()
    expected = {"emg": 6, "strain": 4, "imu_units": 4, "fsr": 16}
    for key, n in expected.items():
        if totals[key] != n:
            add("layout_totals", f"layout.{key}", f"bilateral {key} = {totals[key]}, expected {n}")
    if len(layout.imu_channels) % 9:
        add("layout_totals", "layout.imu_channels", "IMU channels must be 9 per unit")

    for (modality, side), ts in sorted(session.streams.items()):
        loc = f"streams.{modality}_{side}"
        if modality in ("emg", "strain", "imu", "fsr"):
            if ts.channel_names != layout.channels(modality):
                add("channel_count", loc, "channel names do not match layout")
        if not np.all(np.isfinite(ts.data)):
            add("non_finite", loc, "non-finite sample")

    lo, hi = session.extent()
    if not hi > lo:
        add("stream_overlap", "streams", "streams share no common time interval")

    prev_end = -math.inf
    for i, tr in enumerate(session.transitions):
        loc = f"transitions[{i}]"
        for which, law in (("law_before", tr.law_before), ("law_after", tr.law_after)):
            if not 0.0 <= law.alpha <= 1.0:
                add("law_alpha", f"{loc}.{which}", "alpha outside [0, 1]")
            if not 0.0 <= law.delay_ms <= 500.0:
                add("law_delay", f"{loc}.{which}", "delay_ms outside [0, 500]")
        if not tr.steady_time_s > tr.t_switch_s:
            add("steady_before_switch", loc, "steady_time_s must follow t_switch_s")
        if tr.t_switch_s < prev_end:
            add("transition_overlap", loc, "transition overlaps or precedes the previous one")
        prev_end = tr.steady_time_s

    for i, ev in enumerate(session.perturbations):
        loc = f"perturbations[{i}]"
        if not ev.magnitude_nm_per_kg < MAGNITUDE_CAP:
            add("magnitude_cap", loc, "magnitude ≥ 0.3 cap")
        elif not ev.magnitude_nm_per_kg > 0:
            add("magnitude_nonpositive", loc, "magnitude must be positive")
        ph = ev.gait_phase_pct
        if not (0.0 <= ph <= 20.0 or 80.0 <= ph <= 100.0):
            add("phase_window", loc, "onset phase outside [0,20] ∪ [80,100]")
        if ev.button_press_s is not None and not ev.button_press_s > ev.onset_s:
            add("button_precedes_onset", loc, "button precedes onset")
        if not lo <= ev.onset_s < hi:
            add("onset_outside", loc, "onset outside session extent")
    return out


# --------------------------------------------------------------------------
# bundle persistence


def _fmt_digits(data: np.ndarray) -> str:
    return "%.9g" if data.dtype == np.float32 else "%.17g"


def _sig9(x: float) -> float:
    return float("%.9g" % x)


def _stream_csv(ts: TimeSeries) -> bytes:
    fmt = _fmt_digits(ts.data)
    buf = io.StringIO()
    buf.write(",".join(("t",) + ts.channel_names) + "\n")
    t = ts.times()
    block = np.column_stack([t, ts.data.T.astype(np.float64)])
    np.savetxt(buf, block, fmt=["%.9g"] + [fmt] * ts.n_channels, delimiter=",")
    return buf.getvalue().encode("ascii")


def _stream_meta(ts: TimeSeries, filename: str, digest: str) -> dict:
    return {
        "file": filename,
        "sha256": digest,
        "sample_rate_hz": ts.sample_rate_hz,
        "start_time_s": ts.start_time_s,
        "channels": list(ts.channel_names),
        "units": list(ts.units),
        "dtype": str(ts.data.dtype),
        "n_samples": ts.n_samples,
    }


def _all_streams(session: SessionRecording) -> list[tuple[str, TimeSeries]]:
    items = [(f"{m}_{s}", ts) for (m, s), ts in session.streams.items()]
    items += [(f"moment_{side}", ts) for side, ts in session.ground_truth_moment.items()]
    items.append((f"metabolic_{BILATERAL}", session.metabolic))
    return sorted(items, key=lambda kv: kv[0])


def save_session(session: SessionRecording, path) -> Path:
    """Write ``session`` as a bundle directory; returns the directory path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    streams = {}
    for name, ts in _all_streams(session):
        payload = _stream_csv(ts)
        fname = f"{name}.csv"
        (root / fname).write_bytes(payload)
        streams[name] = _stream_meta(ts, fname, hashlib.sha256(payload).hexdigest())
    manifest = {
        "version": BUNDLE_VERSION,
        "subject_id": session.subject_id,
        "body_mass_kg": _sig9(session.body_mass_kg),
        "baseline_w_per_kg": _sig9(session.zero_torque_baseline_w_per_kg),
        "layout": session.layout.to_dict(),
        "transitions": [
            {k: (_sig9(v) if isinstance(v, float) else v) for k, v in tr.to_dict().items()}
            for tr in session.transitions
        ],
        "perturbations": [
            {k: (_sig9(v) if isinstance(v, float) else v) for k, v in ev.to_dict().items()}
            for ev in session.perturbations
        ],
        "streams": streams,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def _read_stream(root: Path, name: str, meta: Mapping) -> TimeSeries:
    fpath = root / meta["file"]
    if not fpath.exists():
        raise MissingStreamError(f"stream file missing: {meta['file']}")
    payload = fpath.read_bytes()
    if hashlib.sha256(payload).hexdigest() != meta["sha256"]:
        raise ChecksumError(f"checksum mismatch for {meta['file']}")
    text = payload.decode("ascii")
    header, _, body = text.partition("\n")
    cols = header.split(",")
    if cols[0] != "t" or cols[1:] != list(meta["channels"]):
        raise ManifestError(f"{meta['file']}: header does not match manifest channels")
    arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
    if arr.shape[0] != meta["n_samples"] or arr.shape[1] != len(cols):
        raise ManifestError(f"{meta['file']}: expected {meta['n_samples']} rows")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{meta['file']}: non-finite sample")
    data = arr[:, 1:].T.astype(np.dtype(meta["dtype"]))
    return TimeSeries(
        np.ascontiguousarray(data),
        meta["sample_rate_hz"],
        meta["start_time_s"],
        meta["channels"],
        meta["units"],
    )


def load_session(path) -> SessionRecording:
    root = Path(path)
    mpath = root / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise ManifestError(f"no manifest.json in {root}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from None
    required = ("subject_id", "body_mass_kg", "baseline_w_per_kg", "layout",
                "transitions", "perturbations", "streams")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise ManifestError(f"manifest missing keys: {', '.join(missing)}")
    if manifest.get("version") != BUNDLE_VERSION:
        raise ManifestError(f"unsupported bundle version {manifest.get('version')!r}")
    try:
        layout = ChannelLayout.from_dict(manifest["layout"])
        transitions = tuple(Transition.from_dict(d) for d in manifest["transitions"])
        perturbations = tuple(PerturbationEvent.from_dict(d) for d in manifest["perturbations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest entry: {exc}") from None

    streams: dict[tuple[str, str], TimeSeries] = {}
    moment: dict[str, TimeSeries] = {}
    metabolic = None
    for name, meta in manifest["streams"].items():
        modality, _, side = name.rpartition("_")
        ts = _read_stream(root, name, meta)
        if modality == "metabolic":
            metabolic = ts
        elif modality == "moment":
            moment[side] = ts
        else:
            streams[(modality, side)] = ts
    if metabolic is None:
        raise MissingStreamError("bundle has no metabolic stream")
    return SessionRecording(
        subject_id=manifest["subject_id"],
        body_mass_kg=float(manifest["body_mass_kg"]),
        layout=layout,
        streams=dict(sorted(streams.items())),
        metabolic=metabolic,
        ground_truth_moment=dict(sorted(moment.items())),
        transitions=transitions,
        perturbations=perturbations,
        zero_torque_baseline_w_per_kg=float(manifest["baseline_w_per_kg"]),
    )
