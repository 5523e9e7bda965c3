"""Causal signal conditioning and windowed features.

Butterworth filters are designed here as cascades of second-order sections
(bilinear transform with frequency prewarping) and run in direct form II
transposed with per-channel state carried between calls, so a stream can be
filtered in arbitrary chunks with the same result as one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _sig

from .errors import ContractError, DesignError
from .signals import TimeSeries

ENVELOPE_CUTOFF_HZ = 6.0
ENVELOPE_ORDER = 2


@dataclass
class BiquadCascade:
    """Second-order sections ``[b0, b1, b2, 1, a1, a2]`` plus streaming state.

    ``state`` has shape ``(channels, sections, 2)`` once the cascade has seen
    data. One instance must not be shared between threads; use :meth:`copy`.
    """

    sos: np.ndarray
    order: int
    kind: str
    cutoffs_hz: tuple[float, ...]
    fs_hz: float
    state: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    @property
    def sections(self) -> list[dict[str, float]]:
        return [
            {"b0": s[0], "b1": s[1], "b2": s[2], "a1": s[4], "a2": s[5]}
            for s in self.sos
        ]

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def reset(self) -> None:
        self.state = None

    def copy(self) -> "BiquadCascade":
        return BiquadCascade(
            self.sos.copy(), self.order, self.kind, self.cutoffs_hz, self.fs_hz,
            None if self.state is None else self.state.copy(),
        )

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Complex response of the whole cascade at ``freqs_hz``."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs_hz)
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h = h * (b0 + b1 / z + b2 / z**2) / (1 + a1 / z + a2 / z**2)
        return h

    def process(self, x: np.ndarray) -> np.ndarray:
        """Filter a ``channels x samples`` block, advancing the stored state."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if self.state is None:
            self.state = np.zeros((x.shape[0], self.n_sections, 2))
        elif self.state.shape[0] != x.shape[0]:
            raise ContractError(
                f"cascade state has {self.state.shape[0]} channels, block has {x.shape[0]}"
            )
        if x.shape[1] == 0:
            return x.copy()
        zi = np.ascontiguousarray(self.state.transpose(1, 0, 2))
        y, zf = _sig.sosfilt(self.sos, x, axis=-1, zi=zi)
        self.state = zf.transpose(1, 0, 2).copy()
        return y


def _check_stable(sos: np.ndarray) -> None:
    for i, s in enumerate(sos):
        if np.any(np.abs(np.roots(s[3:])) >= 1.0):
            raise DesignError(f"section {i} is unstable")


def _bilinear_pole(s: complex, fs: float) -> complex:
    c = 2.0 * fs
    return (c + s) / (c - s)


def _prewarp(f_hz: float, fs_hz: float) -> float:
    return 2.0 * fs_hz * math.tan(math.pi * f_hz / fs_hz)


def _butter_prototype_poles(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))


def _pair_sections(zpoles: np.ndarray) -> list[tuple[float, float]]:
    """Group digital poles into real ``(a1, a2)`` denominator pairs."""
    upper = sorted((p for p in zpoles if p.imag > 1e-12), key=lambda p: abs(p))
    reals = sorted((p.real for p in zpoles if abs(p.imag) <= 1e-12))
    dens = [(-2.0 * p.real, abs(p) ** 2) for p in upper]
    for i in range(0, len(reals) - 1, 2):
        r1, r2 = reals[i], reals[i + 1]
        dens.append((-(r1 + r2), r1 * r2))
    if len(reals) % 2:
        raise DesignError("odd number of real poles; use an even order")
    return dens


def design_lowpass_butter(order: int = 4, fc_hz: float = 20.0, fs_hz: float = 100.0) -> BiquadCascade:
    """Butterworth low-pass; unity DC gain and -3.01 dB at ``fc_hz``."""
    if order < 2 or order % 2:
        raise DesignError(f"order must be a positive even integer, got {order}")
    if not 0 < fc_hz < fs_hz / 2:
        raise DesignError(f"cutoff {fc_hz} Hz must lie in (0, {fs_hz / 2}) Hz")
    wc = _prewarp(fc_hz, fs_hz)
    spoles = wc * _butter_prototype_poles(order)
    zpoles = np.array([_bilinear_pole(p, fs_hz) for p in spoles])
    sos = []
    for a1, a2 in _pair_sections(zpoles):
        # zeros at z = -1; scale each section to unity gain at DC
        g = (1 + a1 + a2) / 4.0
        sos.append([g, 2 * g, g, 1.0, a1, a2])
    sos = np.array(sos)
    _check_stable(sos)
    return BiquadCascade(sos, order, "lowpass", (fc_hz,), fs_hz)


def design_bandpass_butter(
    order: int = 4,
    f_lo_hz: float = 20.0,
    f_hi_hz: float = 450.0,
    fs_hz: float = 1000.0,
    order_is_prototype: bool = False,
) -> BiquadCascade:
    """Butterworth band-pass with -3.01 dB at both edges.

    By default ``order`` is the overall filter order (a band-pass built from
    an ``order/2`` low-pass prototype). ``order_is_prototype=True`` treats it
    as the prototype order instead, doubling the overall order.
    """
    if order < 1 or (not order_is_prototype and order % 2):
        raise DesignError(f"invalid band-pass order {order}")
    if not 0 < f_lo_hz < f_hi_hz < fs_hz / 2:
        raise DesignError(
            f"band ({f_lo_hz}, {f_hi_hz}) Hz must satisfy 0 < lo < hi < {fs_hz / 2}"
        )
    n_proto = order if order_is_prototype else order // 2
    w1, w2 = _prewarp(f_lo_hz, fs_hz), _prewarp(f_hi_hz, fs_hz)
    w0sq, bw = w1 * w2, w2 - w1
    spoles = []
    for p in _butter_prototype_poles(n_proto):
        # roots of s^2 - p*bw*s + w0^2 = 0
        disc = np.sqrt((p * bw) ** 2 - 4 * w0sq + 0j)
        spoles += [(p * bw + disc) / 2, (p * bw - disc) / 2]
    zpoles = np.array([_bilinear_pole(p, fs_hz) for p in spoles])
    sos = np.array([[1.0, 0.0, -1.0, 1.0, a1, a2] for a1, a2 in _pair_sections(zpoles)])
    # unity gain at the digital image of the analog centre frequency
    f0 = fs_hz / math.pi * math.atan(math.sqrt(w0sq) / (2 * fs_hz))
    cas = BiquadCascade(sos, 2 * n_proto, "bandpass", (f_lo_hz, f_hi_hz), fs_hz)
    gain = abs(cas.frequency_response([f0])[0])
    sos[0, :3] /= gain
    _check_stable(sos)
    return cas


def filter_causal(cascade: BiquadCascade, series: TimeSeries) -> TimeSeries:
    """Run ``series`` through ``cascade``, carrying state across calls."""
    if abs(series.sample_rate_hz - cascade.fs_hz) > 1e-9 * cascade.fs_hz:
        raise ContractError(
            f"series rate {series.sample_rate_hz} Hz != design rate {cascade.fs_hz} Hz"
        )
    y = cascade.process(series.data)
    return series.replace(data=y.astype(series.data.dtype))


def envelope_cascade(fs_hz: float) -> BiquadCascade:
    return design_lowpass_butter(ENVELOPE_ORDER, ENVELOPE_CUTOFF_HZ, fs_hz)


def emg_envelope(emg: TimeSeries, cascade: BiquadCascade | None = None) -> TimeSeries:
    """Full-wave rectification followed by a 2nd-order 6 Hz causal low-pass.

    Pass a persistent ``cascade`` to envelope a stream chunk by chunk.
    """
    if cascade is None:
        cascade = envelope_cascade(emg.sample_rate_hz)
    rect = emg.replace(data=np.abs(emg.data))
    return filter_causal(cascade, rect)


# --------------------------------------------------------------------------
# features


def _window_array(window: TimeSeries) -> np.ndarray:
    if window.n_samples == 0:
        raise ContractError("feature window is empty")
    return np.asarray(window.data, dtype=np.float64)


def emg_features(window: TimeSeries) -> dict[str, float]:
    """Per-channel RMS, mean absolute value, and waveform length."""
    x = _window_array(window)
    rms = np.sqrt(np.mean(x**2, axis=1))
    mav = np.mean(np.abs(x), axis=1)
    wl = np.sum(np.abs(np.diff(x, axis=1)), axis=1)
    out = {}
    for i, name in enumerate(window.channel_names):
        out[f"{name}_rms"] = float(rms[i])
        out[f"{name}_mav"] = float(mav[i])
        out[f"{name}_wl"] = float(wl[i])
    return out


def _triad_groups(names) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, name in enumerate(names):
        prefix, sep, axis = name.rpartition("_")
        key = prefix if sep and axis in ("x", "y", "z") else name
        groups.setdefault(key, []).append(i)
    return groups


def imu_features(window: TimeSeries) -> dict[str, float]:
    """Per-channel mean and population std, plus signal magnitude area per sensor triad.

    Channels named ``<prefix>_x|y|z`` are grouped by prefix; any other channel
    forms its own group.
    """
    x = _window_array(window)
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    out = {}
    for i, name in enumerate(window.channel_names):
        out[f"{name}_mean"] = float(mean[i])
        out[f"{name}_std"] = float(std[i])
    for key, idx in _triad_groups(window.channel_names).items():
        out[f"{key}_sma"] = float(np.abs(x[idx]).sum(axis=0).mean())
    return out


def effort_level(envelope_window: TimeSeries, subject_max: float) -> float:
    """RMS of the envelope as a percentage of ``subject_max``, clamped to [0, 100]."""
    if not subject_max > 0:
        raise ContractError(f"subject_max must be positive, got {subject_max}")
    x = _window_array(envelope_window)
    rms = math.sqrt(float(np.mean(x**2)))
    return min(100.0, max(0.0, 100.0 * rms / subject_max))
