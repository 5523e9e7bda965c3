"""Deterministic synthetic gait / physiology generator.

Produces zero-torque walking, assisted walking with control-law switches and
first-order metabolic kinetics, and perturbation trials with strain
transients. Every physiological constant lives in :class:`GeneratorParams`.
Randomness comes from counter-based Philox streams derived from the session
seed, so a session is a pure function of ``(profile, scenario, seed)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dsp import design_bandpass_butter
from .errors import ContractError, PhaseUnavailable
from .signals import (
    EMG_MUSCLES,
    RATES,
    SIDES,
    ChannelLayout,
    ControlLaw,
    PerturbationEvent,
    SessionRecording,
    TimeSeries,
    Transition,
    ZERO_TORQUE,
    IMU_UNITS,
)

GRAVITY = 9.81
IMU_AXES = tuple(f"{s}_{a}" for s in ("acc", "gyr", "mag") for a in "xyz")


@dataclass(frozen=True)
class GeneratorParams:
    # joint moment template (Nm/kg, phase in %)
    moment_peak: float = 1.5
    moment_peak_center: float = 45.0
    moment_peak_half_width: float = 20.0
    moment_dip_depth: float = 0.2
    moment_dip_center: float = 10.0
    moment_dip_half_width: float = 10.0
    stride_amp_sd: float = 0.08
    stride_amp_clip: float = 0.25

    # subject ranges
    mass_range: tuple[float, float] = (55.0, 90.0)
    baseline_met_range: tuple[float, float] = (3.0, 3.8)
    cadence_range: tuple[float, float] = (0.9, 1.1)
    speed_range: tuple[float, float] = (1.1, 1.5)
    peak_scale_range: tuple[float, float] = (0.92, 1.08)
    peak_shift_range: tuple[float, float] = (-2.0, 2.0)
    emg_gain_spread: float = 0.02
    imu_amp_spread: float = 0.10
    imu_phase_spread: float = 0.15

    # EMG bursts: centre (%), width sigma (%), amplitude (mV)
    emg_burst_center: tuple[float, ...] = (0.0, 35.0, 45.0)
    emg_burst_width: tuple[float, ...] = (6.0, 8.0, 8.0)
    emg_amplitude: tuple[float, ...] = (0.3, 0.25, 0.5)
    emg_noise_floor: float = 0.005
    emg_carrier_band: tuple[float, float] = (30.0, 300.0)
    # EMG amplitude scales as 1 + gain * (M / M0 - 1)
    emg_effort_gain: float = 2.5

    # IMU
    imu_noise: tuple[float, float, float] = (0.05, 0.02, 0.2)  # acc, gyr, mag
    foot_lag_cycles: float = 0.06
    foot_gain: float = 1.3
    assist_amp_gain: float = 0.2
    assist_third_harmonic: float = 0.6

    # strain
    strain_noise: float = 0.02
    strain_noise_clip: float = 3.5
    strain_baseline_amp: tuple[float, float] = (1.0, 0.6)
    transient_rise_s: float = 0.015
    transient_decay_s: float = 0.08
    transient_extent_s: float = 0.3
    # transient scale in noise units; at 50 sigma the transient is comparable
    # to the periodic deformation, so it is a visible deviation, not a ripple
    transient_sigma_base: float = 50.0
    transient_sigma_per_nm: float = 150.0
    transient_channel_gain: tuple[float, float] = (1.0, -0.9)

    # FSR
    fsr_noise_frac: float = 0.005
    fsr_heel_rise_pct: float = 1.5

    # metabolic map and kinetics
    met_assist_gain: float = 0.2
    met_delay_cap_ms: float = 350.0
    met_tau_s: float = 30.0

    # perturbations
    perturb_min_spacing_s: float = 5.0
    perturb_margin_s: float = 2.0
    perturb_mag_range: tuple[float, float] = (0.1, 0.3)
    reaction_mean_s: float = 0.25
    reaction_sd_s: float = 0.05
    reaction_min_s: float = 0.05


DEFAULT_PARAMS = GeneratorParams()

# Shank template per axis: (offset, a1, p1, a2, p2); foot uses the same shapes
# delayed by foot_lag_cycles and scaled by foot_gain.
_SHANK_TEMPLATE = {
    "acc_x": (0.0, 3.0, 0.3, 2.0, 1.2),
    "acc_y": (0.0, 0.6, 1.0, 0.4, 2.1),
    "acc_z": (GRAVITY, 2.0, -0.5, 1.5, 0.7),
    "gyr_x": (0.0, 0.4, 0.8, 0.2, 0.1),
    "gyr_y": (0.0, 0.5, -1.1, 0.3, 0.9),
    "gyr_z": (0.0, 2.5, 0.0, 1.0, 1.6),
    "mag_x": (22.0, 1.5, 0.2, 0.5, 0.4),
    "mag_y": (-5.0, 0.8, 1.3, 0.3, -0.6),
    "mag_z": (-40.0, 1.2, -0.9, 0.4, 0.3),
}


def _sig9(x: float) -> float:
    return float("%.9g" % x)


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    mass_kg: float
    baseline_met_w_per_kg: float
    cadence_hz: float
    speed_m_s: float
    phase0: float
    peak_scale: float
    peak_shift_pct: float
    emg_gain: tuple[float, ...]
    imu_amp: tuple[float, ...]      # 2 segments x 9 axes
    imu_phase: tuple[float, ...]    # 2 segments x 9 axes
    strain_phase: tuple[float, float]
    seed: int
    params: GeneratorParams = field(default=DEFAULT_PARAMS, repr=False)

    @property
    def moment_peak(self) -> float:
        return self.params.moment_peak * self.peak_scale


def make_profile(index: int, master_seed: int = 0, params: GeneratorParams = DEFAULT_PARAMS) -> SubjectProfile:
    """Draw subject ``index`` from the population defined by ``params``."""
    ss = np.random.SeedSequence([master_seed, index, 0x5EB1EC7])
    rng = np.random.Generator(np.random.Philox(ss))
    u = lambda lo_hi: float(rng.uniform(*lo_hi))
    return SubjectProfile(
        subject_id=f"S{index + 1:02d}",
        mass_kg=round(u(params.mass_range), 3),
        baseline_met_w_per_kg=round(u(params.baseline_met_range), 4),
        cadence_hz=round(u(params.cadence_range), 4),
        speed_m_s=round(u(params.speed_range), 3),
        phase0=round(float(rng.uniform(0, 1)), 4),
        peak_scale=round(u(params.peak_scale_range), 4),
        peak_shift_pct=round(u(params.peak_shift_range), 3),
        emg_gain=tuple(round(1 + float(g), 4) for g in rng.uniform(-1, 1, 3) * params.emg_gain_spread),
        imu_amp=tuple(round(1 + float(g), 4) for g in rng.uniform(-1, 1, 18) * params.imu_amp_spread),
        imu_phase=tuple(round(float(g), 4) for g in rng.uniform(-1, 1, 18) * params.imu_phase_spread),
        strain_phase=tuple(round(float(g), 4) for g in rng.uniform(-np.pi, np.pi, 2)),
        seed=int(ss.generate_state(1)[0]),
        params=params,
    )


@dataclass(frozen=True)
class Scenario:
    """Trial description.

    kind: ``zero_torque``, ``assist`` or ``perturbation``. ``assist`` starts
    with ``stabilization_s`` of zero torque followed by ``laws[i]`` held for
    ``durations_s[i]``.
    """

    kind: str
    duration_s: float = 60.0
    laws: tuple[ControlLaw, ...] = ()
    durations_s: tuple[float, ...] = ()
    pulse_count: int = 0
    stabilization_s: float = 180.0
    seed: int = 0
    onsets_s: tuple[float, ...] | None = None

    @property
    def total_duration_s(self) -> float:
        if self.kind == "assist":
            return self.stabilization_s + float(sum(self.durations_s))
        return self.duration_s

    def validate(self) -> None:
        if self.kind not in ("zero_torque", "assist", "perturbation"):
            raise ContractError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "assist":
            if not self.laws or len(self.laws) != len(self.durations_s):
                raise ContractError("assist scenario needs one duration per law")
            if any(d < 36.0 for d in self.durations_s):
                raise ContractError("assist segments must last at least 36 s")
            if self.stabilization_s < 0:
                raise ContractError("stabilization_s must be non-negative")
            for law in self.laws:
                if not (0 <= law.alpha <= 1 and 0 <= law.delay_ms <= 500):
                    raise ContractError(f"invalid control law {law}")
        elif not self.duration_s > 0:
            raise ContractError("duration_s must be positive")
        if self.pulse_count < 0:
            raise ContractError("pulse_count must be non-negative")

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "laws": [law.to_dict() for law in self.laws],
            "durations_s": list(self.durations_s),
            "pulse_count": self.pulse_count,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "stabilization_s": self.stabilization_s,
        }
        if self.onsets_s is not None:
            d["onsets_s"] = list(self.onsets_s)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        kind = {"ZeroTorque": "zero_torque", "Assist": "assist", "Perturbation": "perturbation"}.get(
            d["kind"], d["kind"]
        )
        onsets = d.get("onsets_s")
        sc = cls(
            kind=kind,
            duration_s=float(d.get("duration_s", 60.0)),
            laws=tuple(ControlLaw.from_dict(x) for x in d.get("laws", [])),
            durations_s=tuple(float(x) for x in d.get("durations_s", [])),
            pulse_count=int(d.get("pulse_count", 0)),
            stabilization_s=float(d.get("stabilization_s", 180.0)),
            seed=int(d.get("seed", 0)),
            onsets_s=None if onsets is None else tuple(float(x) for x in onsets),
        )
        sc.validate()
        return sc


def load_scenario(path_or_name) -> Scenario:
    """Read a scenario JSON file, or return a named preset."""
    if str(path_or_name) in SCENARIO_PRESETS:
        return SCENARIO_PRESETS[str(path_or_name)]
    return Scenario.from_dict(json.loads(Path(path_or_name).read_text()))


# --------------------------------------------------------------------------
# templates


def gait_phase(t_s, cadence_hz: float, phase0: float = 0.0):
    """Gait phase in percent, ``((t * cadence + phase0) mod 1) * 100``."""
    if not cadence_hz > 0:
        raise ContractError("cadence must be positive")
    return np.mod(np.asarray(t_s) * cadence_hz + phase0, 1.0) * 100.0


def _raised_cosine(x, center, half_width):
    d = (np.asarray(x, dtype=float) - center) / half_width
    return np.where(np.abs(d) < 1.0, 0.5 * (1.0 + np.cos(np.pi * d)), 0.0)


def moment_profile(
    phase_pct,
    peak_nm_per_kg: float = DEFAULT_PARAMS.moment_peak,
    peak_center: float = DEFAULT_PARAMS.moment_peak_center,
    params: GeneratorParams = DEFAULT_PARAMS,
):
    """Ankle moment template (Nm/kg, plantarflexion positive).

    A raised-cosine dorsiflexor dip early in stance and a raised-cosine
    plantarflexor peak; zero through swing. C1 everywhere, periodic in phase.
    """
    ph = np.mod(phase_pct, 100.0)
    dip = params.moment_dip_depth * _raised_cosine(
        ph, params.moment_dip_center, params.moment_dip_half_width
    )
    peak = peak_nm_per_kg * _raised_cosine(ph, peak_center, params.moment_peak_half_width)
    out = peak - dip
    return float(out) if np.ndim(out) == 0 else out


def _circ_dist(a, b):
    d = np.abs(np.mod(np.asarray(a) - b, 100.0))
    return np.minimum(d, 100.0 - d)


def emg_activation(phase_pct, muscle: str, params: GeneratorParams = DEFAULT_PARAMS):
    """Gaussian activation bump (0..1) for ``muscle`` at ``phase_pct``."""
    try:
        i = EMG_MUSCLES.index(muscle)
    except ValueError:
        raise ContractError(f"unknown muscle {muscle!r}") from None
    d = _circ_dist(phase_pct, params.emg_burst_center[i])
    return np.exp(-0.5 * (d / params.emg_burst_width[i]) ** 2)


def _carrier(n: int, rng: np.random.Generator, params: GeneratorParams) -> np.ndarray:
    white = rng.standard_normal(n)
    if n < 8:
        return white
    lo, hi = params.emg_carrier_band
    bp = design_bandpass_butter(4, lo, hi, RATES["emg"])
    c = bp.process(white)[0]
    return c / np.sqrt(np.mean(c**2))


def emg_synth(
    phase_pct,
    muscle: str,
    profile: SubjectProfile,
    rng: np.random.Generator,
    amplitude=1.0,
):
    """Band-limited noise carrier modulated by the muscle's activation bump.

    ``amplitude`` (scalar or per-sample array) multiplies the activation, so
    the expected rectified value scales linearly with it.
    """
    p = profile.params
    ph = np.atleast_1d(np.asarray(phase_pct, dtype=float))
    i = EMG_MUSCLES.index(muscle) if muscle in EMG_MUSCLES else None
    act = emg_activation(ph, muscle, p)
    env = p.emg_amplitude[i] * profile.emg_gain[i] * act * amplitude
    x = env * _carrier(ph.size, rng, p) + p.emg_noise_floor * rng.standard_normal(ph.size)
    return float(x[0]) if np.ndim(phase_pct) == 0 else x


def imu_synth(
    phase_pct,
    segment: str,
    profile: SubjectProfile,
    rng: np.random.Generator,
    alpha=0.0,
    delay_ms=0.0,
    noise_scale: float = 1.0,
):
    """9-axis IMU sample(s) for ``segment`` at ``phase_pct``.

    Returns an array of shape ``(9, n)`` (or ``(9,)`` for scalar phase).
    Assistance raises the kinematic amplitude and adds a third-harmonic
    push-off component whose phase encodes the actuation delay.
    """
    if segment not in ("shank", "foot"):
        raise ContractError(f"unknown IMU segment {segment!r}")
    p = profile.params
    ph = np.atleast_1d(np.asarray(phase_pct, dtype=float)) / 100.0
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), ph.shape)
    delay = np.broadcast_to(np.asarray(delay_ms, dtype=float), ph.shape)
    seg = 0 if segment == "shank" else 1
    if seg == 1:
        ph = ph - p.foot_lag_cycles
    theta_law = np.pi * np.minimum(delay, p.met_delay_cap_ms) / p.met_delay_cap_ms
    gain = p.foot_gain if seg == 1 else 1.0
    out = np.empty((9, ph.size))
    noise = {"acc": p.imu_noise[0], "gyr": p.imu_noise[1], "mag": p.imu_noise[2]}
    for j, axis in enumerate(IMU_AXES):
        off, a1, p1, a2, p2 = _SHANK_TEMPLATE[axis]
        k = seg * 9 + j
        amp = profile.imu_amp[k]
        dp = profile.imu_phase[k]
        w = 2 * np.pi * ph
        sig = a1 * np.sin(w + p1 + dp) + a2 * np.sin(2 * w + p2 + dp)
        if axis[:3] != "mag":
            sig = sig * (1.0 + p.assist_amp_gain * alpha)
            sig = sig + p.assist_third_harmonic * a1 / 2.5 * alpha * np.sin(3 * w + p1 + theta_law)
            sig = sig * gain
        out[j] = off + amp * sig
        if noise_scale:
            out[j] += noise_scale * noise[axis[:3]] * rng.standard_normal(ph.size)
    return out[:, 0] if np.ndim(phase_pct) == 0 else out


def _clipped_normal(rng, n, clip):
    return np.clip(rng.standard_normal(n), -clip, clip)


def transient_amplitude(magnitude_nm_per_kg: float, params: GeneratorParams = DEFAULT_PARAMS) -> float:
    """Transient peak scale in units of the strain noise scale."""
    return params.transient_sigma_base + params.transient_sigma_per_nm * (magnitude_nm_per_kg - 0.1)


def strain_transient(u_s, magnitude_nm_per_kg: float, params: GeneratorParams = DEFAULT_PARAMS):
    """Transient shape (in noise-scale units) ``u_s`` seconds after onset; zero outside [0, extent]."""
    u = np.asarray(u_s, dtype=float)
    a = transient_amplitude(magnitude_nm_per_kg, params)
    inside = (u >= 0) & (u <= params.transient_extent_s)
    uu = np.where(inside, u, 0.0)
    shape = (1 - np.exp(-uu / params.transient_rise_s)) * np.exp(-uu / params.transient_decay_s)
    return np.where(inside, a * shape, 0.0)


def strain_baseline(phase_pct, profile: SubjectProfile):
    p = profile.params
    w = 2 * np.pi * np.atleast_1d(np.asarray(phase_pct, dtype=float)) / 100.0
    out = np.empty((2, w.size))
    for c in range(2):
        ph = profile.strain_phase[c]
        out[c] = p.strain_baseline_amp[c] * (np.sin(w + ph) + 0.3 * np.sin(2 * w + 2 * ph))
    return out


def strain_synth(
    phase_pct,
    t_s,
    events: Sequence[PerturbationEvent],
    profile: SubjectProfile,
    rng: np.random.Generator,
):
    """2-channel strain: periodic skin deformation, clipped noise, event transients."""
    p = profile.params
    t = np.atleast_1d(np.asarray(t_s, dtype=float))
    out = strain_baseline(phase_pct, profile)
    sigma = p.strain_noise
    for c in range(2):
        out[c] += sigma * _clipped_normal(rng, t.size, p.strain_noise_clip)
    for ev in events:
        lo = np.searchsorted(t, ev.onset_s - 1e-9)
        hi = np.searchsorted(t, ev.onset_s + p.transient_extent_s + 1e-9)
        if hi <= lo:
            continue
        tr = sigma * strain_transient(t[lo:hi] - ev.onset_s, ev.magnitude_nm_per_kg, p)
        for c in range(2):
            out[c, lo:hi] += p.transient_channel_gain[c] * tr
    return out[:, 0] if np.ndim(t_s) == 0 else out


def fsr_synth(phase_pct, profile: SubjectProfile, rng: np.random.Generator):
    """8-channel plantar pressure (N); channel 0 is the heel."""
    p = profile.params
    ph = np.mod(np.atleast_1d(np.asarray(phase_pct, dtype=float)), 100.0)
    w = profile.mass_kg * GRAVITY / 3.0
    out = np.zeros((8, ph.size))
    rise = np.clip(ph / p.fsr_heel_rise_pct, 0.0, 1.0)
    fall = np.where(ph <= 20.0, 1.0, _raised_cosine(ph, 20.0, 15.0))
    out[0] = w * np.where(ph < 35.0, rise * fall, 0.0)
    for c, (center, half) in enumerate(
        [(20, 14), (24, 14), (28, 14), (38, 14), (42, 14), (46, 14), (54, 9)], start=1
    ):
        out[c] = 0.8 * w * _raised_cosine(ph, center, half)
    out += p.fsr_noise_frac * w * _clipped_normal(rng, out.size, 3.0).reshape(out.shape)
    return np.maximum(out, 0.0)


# --------------------------------------------------------------------------
# metabolic map


def steady_state_met(law: ControlLaw, profile_or_baseline, b: float | None = None) -> float:
    """Steady-state metabolic rate under ``law``.

    ``M0 * (1 - b * alpha * cos(pi * min(delay, 350) / 350))``.
    """
    if isinstance(profile_or_baseline, SubjectProfile):
        m0 = profile_or_baseline.baseline_met_w_per_kg
        p = profile_or_baseline.params
    else:
        m0 = float(profile_or_baseline)
        p = DEFAULT_PARAMS
    b = p.met_assist_gain if b is None else b
    cap = p.met_delay_cap_ms
    return m0 * (1.0 - b * law.alpha * math.cos(math.pi * min(law.delay_ms, cap) / cap))


def met_step(m_prev: float, m_ss: float, dt_s: float, tau_s: float = 30.0) -> float:
    """First-order approach of the metabolic rate towards ``m_ss`` over ``dt_s``."""
    if dt_s < 0 or not tau_s > 0:
        raise ContractError("met_step needs dt_s >= 0 and tau_s > 0")
    return m_ss + (m_prev - m_ss) * math.exp(-dt_s / tau_s)


# --------------------------------------------------------------------------
# perturbation schedule


def schedule_perturbations(
    duration_s: float,
    cadence_hz: float,
    count: int,
    seed: int,
    phase0: float = 0.0,
    params: GeneratorParams = DEFAULT_PARAMS,
) -> list[PerturbationEvent]:
    """Random plantarflexion pulses in early (0-20 %) or late (80-100 %) gait phase.

    Onsets sit on the 10 ms sample grid, are at least ``perturb_min_spacing_s``
    apart, and keep ``perturb_margin_s`` from both ends of the trial.
    """
    if count < 0:
        raise ContractError("count must be non-negative")
    if count == 0:
        return []
    stride = 1.0 / cadence_hz
    lo = params.perturb_margin_s
    hi = duration_s - params.perturb_margin_s - stride
    slot = (hi - lo) / count
    slack = slot - params.perturb_min_spacing_s - stride
    if slack < 0:
        raise ContractError(
            f"{count} perturbations do not fit in {duration_s} s with "
            f"{params.perturb_min_spacing_s} s spacing"
        )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xBEEF])))
    events = []
    for i in range(count):
        t = lo + i * slot + rng.uniform(0.0, slack)
        # target phase kept off the window edges so grid rounding stays inside
        if rng.uniform() < 0.5:
            target = rng.uniform(0.6, 19.4)
        else:
            target = rng.uniform(80.6, 99.4)
        cur = float(gait_phase(t, cadence_hz, phase0))
        t += ((target - cur) % 100.0) / 100.0 * stride
        onset = round(t * 100.0) / 100.0
        mag = min(round(float(rng.uniform(*params.perturb_mag_range)), 4), 0.2999)
        react = max(params.reaction_min_s, rng.normal(params.reaction_mean_s, params.reaction_sd_s))
        events.append(
            PerturbationEvent(
                onset_s=onset,
                gait_phase_pct=_sig9(float(gait_phase(onset, cadence_hz, phase0))),
                magnitude_nm_per_kg=mag,
                button_press_s=round(onset + react, 3),
            )
        )
    return events


# --------------------------------------------------------------------------
# session generation


def _law_timeline(scenario: Scenario) -> list[tuple[float, float, ControlLaw]]:
    """(start, end, law) segments covering the whole trial."""
    if scenario.kind != "assist":
        return [(0.0, scenario.total_duration_s, ZERO_TORQUE)]
    segs = []
    t = 0.0
    if scenario.stabilization_s > 0:
        segs.append((0.0, scenario.stabilization_s, ZERO_TORQUE))
        t = scenario.stabilization_s
    for law, dur in zip(scenario.laws, scenario.durations_s):
        segs.append((t, t + dur, law))
        t += dur
    return segs


def _metabolic_curve(t: np.ndarray, segs, profile: SubjectProfile) -> np.ndarray:
    """Continuous first-order metabolic response evaluated at times ``t``."""
    tau = profile.params.met_tau_s
    m = profile.baseline_met_w_per_kg
    out = np.empty_like(t, dtype=float)
    for start, end, law in segs:
        m_ss = steady_state_met(law, profile)
        mask = (t >= start) & (t < end) if end != segs[-1][1] else (t >= start)
        out[mask] = m_ss + (m - m_ss) * np.exp(-(t[mask] - start) / tau)
        m = met_step(m, m_ss, end - start, tau)
    return out


def _law_arrays(t: np.ndarray, segs):
    alpha = np.zeros_like(t)
    delay = np.zeros_like(t)
    for start, _end, law in segs:
        mask = t >= start
        alpha[mask] = law.alpha
        delay[mask] = law.delay_ms
    return alpha, delay


def _stride_table(n: int, rng, params: GeneratorParams) -> np.ndarray:
    return 1.0 + np.clip(
        params.stride_amp_sd * rng.standard_normal(n), -params.stride_amp_clip, params.stride_amp_clip
    )


def _transitions(segs, tau) -> tuple[Transition, ...]:
    out = []
    for i in range(1, len(segs)):
        start, end, law = segs[i]
        before = segs[i - 1][2]
        out.append(
            Transition(
                t_switch_s=start,
                law_before=before,
                law_after=law,
                steady_time_s=min(start + 5 * tau, end),
            )
        )
    return tuple(out)


def side_phase0(profile: SubjectProfile, side: str) -> float:
    return (profile.phase0 + (0.5 if side == "left" else 0.0)) % 1.0


def generate_session(profile: SubjectProfile, scenario: Scenario, seed: int | None = None) -> SessionRecording:
    """Generate one synthetic trial; deterministic in ``(profile, scenario, seed)``."""
    scenario.validate()
    seed = scenario.seed if seed is None else seed
    p = profile.params
    T = scenario.total_duration_s
    layout = ChannelLayout()
    segs = _law_timeline(scenario)
    root = np.random.SeedSequence([seed, profile.seed])
    children = iter(root.spawn(16))
    rng = lambda: np.random.Generator(np.random.Philox(next(children)))

    if scenario.kind == "perturbation":
        if scenario.onsets_s is not None:
            events = [
                PerturbationEvent(
                    onset_s=o,
                    gait_phase_pct=_sig9(float(gait_phase(o, profile.cadence_hz, profile.phase0))),
                    magnitude_nm_per_kg=0.2,
                    button_press_s=round(o + p.reaction_mean_s, 3),
                )
                for o in scenario.onsets_s
            ]
        else:
            events = schedule_perturbations(
                T, profile.cadence_hz, scenario.pulse_count, seed, profile.phase0, p
            )
    else:
        events = []

    n_lo = int(round(T * RATES["imu"]))
    t_lo = np.arange(n_lo) / RATES["imu"]
    n_hi = int(round(T * RATES["emg"]))
    t_hi = np.arange(n_hi) / RATES["emg"]
    m0 = profile.baseline_met_w_per_kg
    effort_hi = 1.0 + p.emg_effort_gain * (_metabolic_curve(t_hi, segs, profile) / m0 - 1.0)
    alpha_lo, delay_lo = _law_arrays(t_lo, segs)

    streams: dict[tuple[str, str], TimeSeries] = {}
    moment: dict[str, TimeSeries] = {}
    for side in SIDES:
        ph0 = side_phase0(profile, side)
        ph_lo = gait_phase(t_lo, profile.cadence_hz, ph0)
        ph_hi = gait_phase(t_hi, profile.cadence_hz, ph0)
        k_lo = np.floor(t_lo * profile.cadence_hz + ph0).astype(np.int64)
        k_hi = np.floor(t_hi * profile.cadence_hz + ph0).astype(np.int64)
        # one draw per stride shared by every sampling rate
        table = _stride_table(int(max(k_lo.max(), k_hi.max())) + 1, rng(), p)
        amp_lo, amp_hi = table[k_lo], table[k_hi]

        tau = moment_profile(
            ph_lo, profile.moment_peak, p.moment_peak_center + profile.peak_shift_pct, p
        ) * amp_lo
        moment[side] = TimeSeries(tau.astype(np.float32)[None], RATES["moment"], 0.0, ["ankle_moment"], "Nm/kg")

        emg = np.empty((3, n_hi))
        emg_rng = rng()
        for i, muscle in enumerate(EMG_MUSCLES):
            amp = effort_hi * (amp_hi if muscle != "tibialis_anterior" else 1.0)
            emg[i] = emg_synth(ph_hi, muscle, profile, emg_rng, amplitude=amp)
        streams[("emg", side)] = TimeSeries(
            emg.astype(np.float32), RATES["emg"], 0.0, layout.emg_channels, "mV"
        )

        imu_rng = rng()
        imu = np.vstack(
            [imu_synth(ph_lo, seg, profile, imu_rng, alpha_lo, delay_lo) for seg in ("shank", "foot")]
        )
        units = [IMU_UNITS[name.split("_")[1]] for name in layout.imu_channels]
        streams[("imu", side)] = TimeSeries(imu.astype(np.float32), RATES["imu"], 0.0, layout.imu_channels, units)

        strain = strain_synth(ph_lo, t_lo, events, profile, rng())
        streams[("strain", side)] = TimeSeries(
            strain.astype(np.float32), RATES["strain"], 0.0, layout.strain_channels, "a.u."
        )
        fsr = fsr_synth(ph_lo, profile, rng())
        streams[("fsr", side)] = TimeSeries(fsr.astype(np.float32), RATES["fsr"], 0.0, layout.fsr_channels, "N")

    n_met = int(round(T * RATES["metabolic"]))
    met = _metabolic_curve(np.arange(n_met) / RATES["metabolic"], segs, profile)
    metabolic = TimeSeries(met.astype(np.float32)[None], RATES["metabolic"], 0.0, ["metabolic_rate"], "W/kg")

    return SessionRecording(
        subject_id=profile.subject_id,
        body_mass_kg=profile.mass_kg,
        layout=layout,
        streams=dict(sorted(streams.items())),
        metabolic=metabolic,
        ground_truth_moment=dict(sorted(moment.items())),
        transitions=_transitions(segs, p.met_tau_s) if scenario.kind == "assist" else (),
        perturbations=tuple(events),
        zero_torque_baseline_w_per_kg=profile.baseline_met_w_per_kg,
    )


# --------------------------------------------------------------------------
# FSR gait-phase estimation


HEEL_THRESHOLD_FRAC = 0.30
HEEL_DEBOUNCE_S = 0.3


def detect_heel_strikes(fsr: TimeSeries, t_max_s: float | None = None, heel_channel: int = 0) -> np.ndarray:
    """Upward crossings of 30 % of the heel channel's running maximum.

    Crossing times are linearly interpolated between samples; crossings
    within 0.3 s of the previous strike are ignored.
    """
    x = np.asarray(fsr.data[heel_channel], dtype=float)
    if t_max_s is not None:
        n = fsr.index_at(t_max_s) + 1
        x = x[: max(n, 0)]
    if x.size < 2:
        return np.empty(0)
    thr = HEEL_THRESHOLD_FRAC * np.maximum.accumulate(x)
    up = np.nonzero((x[:-1] < thr[1:]) & (x[1:] >= thr[1:]) & (thr[1:] > 0))[0]
    strikes = []
    for i in up:
        frac = (thr[i + 1] - x[i]) / (x[i + 1] - x[i])
        t = fsr.start_time_s + (i + frac) / fsr.sample_rate_hz
        if not strikes or t - strikes[-1] >= HEEL_DEBOUNCE_S:
            strikes.append(t)
    return np.array(strikes)


def gait_phase_from_fsr(fsr: TimeSeries, t_s: float, heel_channel: int = 0) -> float:
    """Gait phase (%) at ``t_s`` from the last two detected heel strikes."""
    strikes = detect_heel_strikes(fsr, t_s, heel_channel)
    strikes = strikes[strikes <= t_s + 1e-12]
    if strikes.size < 2:
        raise PhaseUnavailable("phase unavailable: fewer than two heel strikes")
    last, prev = strikes[-1], strikes[-2]
    return 100.0 * (t_s - last) / (last - prev)


# --------------------------------------------------------------------------
# presets

BENCHMARK_SUBJECTS = 8
BENCHMARK_SEED = 2024

SCENARIO_PRESETS = {
    "phase1": Scenario(kind="zero_torque", duration_s=60.0),
    "phase2": Scenario(
        kind="assist",
        laws=(
            ControlLaw(1.0, 350.0),
            ControlLaw(1.0, 0.0),
            ControlLaw(0.6, 350.0),
            ControlLaw(1.0, 0.0),
            ControlLaw(1.0, 350.0),
            ControlLaw(0.6, 0.0),
            ControlLaw(1.0, 350.0),
            ControlLaw(0.0, 0.0),
            ControlLaw(1.0, 0.0),
            ControlLaw(0.6, 350.0),
        ),
        durations_s=(75.0,) * 10,
    ),
    "phase3": Scenario(kind="perturbation", duration_s=90.0, pulse_count=12),
}


def generate_cohort(
    scenario: Scenario,
    n_subjects: int = BENCHMARK_SUBJECTS,
    seed: int = BENCHMARK_SEED,
    params: GeneratorParams = DEFAULT_PARAMS,
) -> list[SessionRecording]:
    """One session per subject; subject ``i`` uses session seed ``seed + i``."""
    return [
        generate_session(make_profile(i, seed, params), scenario, seed + i)
        for i in range(n_subjects)
    ]
