import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exosense import synth
from exosense.errors import ContractError, PhaseUnavailable
from exosense.signals import ControlLaw, TimeSeries, save_session, validate_session


PROFILE = synth.make_profile(0, 11)


def test_gait_phase_examples():
    c = 0.95
    assert synth.gait_phase(0.0, c, 0.0) == 0.0
    assert synth.gait_phase(0.5 / c, c, 0.0) == pytest.approx(50.0)
    assert synth.gait_phase(1 / c, c, 0.0) == pytest.approx(0.0, abs=1e-9) or synth.gait_phase(1 / c, c) == pytest.approx(100.0)
    with pytest.raises(ContractError):
        synth.gait_phase(1.0, 0.0)


def test_moment_profile_examples():
    assert abs(synth.moment_profile(0.0)) <= 0.05
    assert synth.moment_profile(45.0) == 1.5
    assert abs(synth.moment_profile(80.0)) <= 0.05
    assert synth.moment_profile(10.0) == pytest.approx(-0.2)


def test_moment_profile_is_c1_and_periodic():
    ph = np.linspace(0, 100, 100001)
    y = synth.moment_profile(ph)
    dy = np.diff(y) / np.diff(ph)
    assert np.max(np.abs(np.diff(dy))) < 1e-3
    assert synth.moment_profile(100.0) == synth.moment_profile(0.0)


def test_emg_burst_contrast_and_linearity():
    rng = np.random.default_rng(0)
    n = 20000
    burst = synth.emg_synth(np.full(n, 45.0), "gastrocnemius", PROFILE, rng)
    off = synth.emg_synth(np.full(n, 90.0), "gastrocnemius", PROFILE, rng)
    assert np.sqrt(np.mean(burst**2)) / np.sqrt(np.mean(off**2)) >= 5
    assert abs(off.mean()) < 0.01
    assert np.sqrt(np.mean(off**2)) <= 2 * PROFILE.params.emg_noise_floor
    one = np.abs(synth.emg_synth(np.full(n, 45.0), "gastrocnemius", PROFILE, np.random.default_rng(1))).mean()
    two = np.abs(synth.emg_synth(np.full(n, 45.0), "gastrocnemius", PROFILE, np.random.default_rng(1), 2.0)).mean()
    assert two / one == pytest.approx(2.0, rel=0.05)
    with pytest.raises(ContractError):
        synth.emg_synth(10.0, "soleus", PROFILE, rng)


def test_imu_examples():
    c = PROFILE.cadence_hz
    t = np.arange(0, 4 / c, 0.001)
    ph = synth.gait_phase(t, c)
    x = synth.imu_synth(ph, "shank", PROFILE, np.random.default_rng(0), noise_scale=0)
    x2 = synth.imu_synth(ph + 100.0, "shank", PROFILE, np.random.default_rng(0), noise_scale=0)
    np.testing.assert_allclose(x, x2, atol=1e-9)
    one_cycle = synth.imu_synth(np.linspace(0, 100, 1000, endpoint=False), "shank", PROFILE, None, noise_scale=0)
    assert one_cycle[2].mean() == pytest.approx(9.81, abs=0.1)
    # foot gyro lags the shank gyro by the configured fraction of a cycle
    grid = np.linspace(0, 100, 1000, endpoint=False)
    sh = synth.imu_synth(grid, "shank", PROFILE, None, noise_scale=0)[5]
    ft = synth.imu_synth(grid, "foot", PROFILE, None, noise_scale=0)[5]
    xc = [np.dot(sh, np.roll(ft, -k)) for k in range(1000)]
    lag = int(np.argmax(xc)) / 1000
    assert lag == pytest.approx(PROFILE.params.foot_lag_cycles, abs=0.02)


def test_strain_baseline_and_transient():
    p = PROFILE.params
    t = np.arange(0, 200, 0.01)
    ph = synth.gait_phase(t, PROFILE.cadence_hz)
    x = synth.strain_synth(ph, t, [], PROFILE, np.random.default_rng(0))
    dev = x - synth.strain_baseline(ph, PROFILE)
    assert np.all(np.abs(dev) <= 4 * p.strain_noise)
    assert synth.strain_transient(0.05, 0.1) >= 6
    # two far-apart events superpose without overlap
    evs = [synth.PerturbationEvent(10.0, 5.0, 0.2, 10.3), synth.PerturbationEvent(20.0, 5.0, 0.15, 20.3)]
    both = synth.strain_synth(ph, t, evs, PROFILE, np.random.default_rng(1))
    a = synth.strain_synth(ph, t, evs[:1], PROFILE, np.random.default_rng(1))
    b = synth.strain_synth(ph, t, evs[1:], PROFILE, np.random.default_rng(1))
    base = synth.strain_synth(ph, t, [], PROFILE, np.random.default_rng(1))
    np.testing.assert_allclose(both - base, (a - base) + (b - base), atol=1e-12)
    assert not np.any(((a - base) != 0) & ((b - base) != 0))


def test_false_excursion_rate():
    p = PROFILE.params
    t = np.arange(0, 1000, 0.01)
    ph = synth.gait_phase(t, PROFILE.cadence_hz)
    dev = synth.strain_synth(ph, t, [], PROFILE, np.random.default_rng(5)) - synth.strain_baseline(ph, PROFILE)
    assert np.mean(np.abs(dev) > 5 * p.strain_noise) < 1e-4


def test_met_examples():
    m0 = 3.4
    assert synth.steady_state_met(ControlLaw(0.0, 200), m0) == m0
    assert synth.steady_state_met(ControlLaw(0.6, 0), m0) == pytest.approx(0.88 * m0)
    assert synth.steady_state_met(ControlLaw(0.6, 350), m0) == pytest.approx(1.12 * m0)
    assert synth.met_step(5.0, 4.0, 0.0) == 5.0
    assert synth.met_step(5.0, 4.0, 30.0) == pytest.approx(4.36788, abs=1e-5)
    assert abs(synth.met_step(5.0, 4.0, 300.0) - 4.0) < 1e-4
    with pytest.raises(ContractError):
        synth.met_step(5.0, 4.0, -1.0)


@settings(max_examples=40, deadline=None)
@given(a1=st.floats(0, 1), a2=st.floats(0, 1))
def test_met_monotone_in_alpha(a1, a2):
    lo, hi = sorted((a1, a2))
    assert synth.steady_state_met(ControlLaw(hi, 0), 3.0) <= synth.steady_state_met(ControlLaw(lo, 0), 3.0)


def test_schedule_examples():
    assert synth.schedule_perturbations(60, 1.0, 0, 1) == []
    evs = synth.schedule_perturbations(800, 0.97, 100, 3, phase0=0.3)
    assert len(evs) == 100
    for e in evs:
        ph = float(synth.gait_phase(e.onset_s, 0.97, 0.3))
        assert 0 <= ph <= 20 or 80 <= ph <= 100
        assert 0.1 <= e.magnitude_nm_per_kg < 0.3
        assert e.button_press_s - e.onset_s >= 0.05 - 1e-9
    assert np.all(np.diff([e.onset_s for e in evs]) >= 5.0)
    assert evs == synth.schedule_perturbations(800, 0.97, 100, 3, phase0=0.3)
    with pytest.raises(ContractError):
        synth.schedule_perturbations(30, 1.0, 10, 0)


def test_zero_torque_session(short_session):
    m = short_session.metabolic.data[0]
    m0 = short_session.zero_torque_baseline_w_per_kg
    assert np.all(np.abs(m[10:] - m0) <= 0.02 * m0)
    assert short_session.stream("emg", "left").sample_rate_hz == 1000.0
    assert short_session.stream("imu", "right").n_channels == 18
    assert validate_session(short_session) == []


def test_assist_settles_to_steady_state():
    sc = synth.Scenario(kind="assist", laws=(ControlLaw(0.6, 0.0),), durations_s=(180.0,), stabilization_s=10.0)
    s = synth.generate_session(PROFILE, sc, 3)
    m0 = PROFILE.baseline_met_w_per_kg
    assert s.metabolic.data[0, -1] == pytest.approx(0.88 * m0, rel=0.01)
    tr = s.transitions[0]
    assert tr.t_switch_s == 10.0 and tr.steady_time_s == 10.0 + 5 * 30.0
    m = s.metabolic.data[0]
    assert np.all((m >= 0.5 * m0) & (m <= 1.5 * m0))
    assert validate_session(s) == []


def test_session_determinism(tmp_path):
    sc = synth.Scenario(kind="perturbation", duration_s=20.0, pulse_count=2)
    a = save_session(synth.generate_session(PROFILE, sc, 5), tmp_path / "a")
    b = save_session(synth.generate_session(PROFILE, sc, 5), tmp_path / "b")
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_scenario_validation():
    with pytest.raises(ContractError):
        synth.Scenario(kind="assist", laws=(ControlLaw(0.5, 0),), durations_s=(30.0,)).validate()
    sc = synth.SCENARIO_PRESETS["phase2"]
    assert synth.Scenario.from_dict(sc.to_dict()) == sc
    assert synth.load_scenario("phase3").pulse_count == 12


def test_fsr_phase_estimate(short_session):
    fsr = short_session.stream("fsr", "right")
    prof = synth.make_profile(0, 7)
    ph0 = synth.side_phase0(prof, "right")
    errs = []
    for t in np.arange(3.0, 11.5, 0.37):
        est = synth.gait_phase_from_fsr(fsr, t)
        true = float(synth.gait_phase(t, prof.cadence_hz, ph0))
        d = abs(est - true)
        errs.append(min(d, 100 - d))
    assert max(errs) < 2.0
    with pytest.raises(PhaseUnavailable):
        synth.gait_phase_from_fsr(fsr, 0.5)


def test_fsr_midway_between_strikes():
    # synthetic heel channel with strikes exactly 1 s apart
    t = np.arange(0, 5, 0.01)
    heel = (np.mod(t + 1e-9, 1.0) < 0.3).astype(float)
    # first stance sample sits exactly on the 30 % threshold
    heel[np.isclose(np.mod(t + 1e-9, 1.0), 0.0, atol=1e-6)] = 0.3
    fsr = TimeSeries(heel, 100.0)
    s = synth.detect_heel_strikes(fsr)
    assert synth.gait_phase_from_fsr(fsr, s[2]) == pytest.approx(0.0, abs=1e-9)
    mid = (s[1] + s[2]) / 2
    assert synth.gait_phase_from_fsr(fsr, mid) == pytest.approx(50.0)


def test_profile_ranges():
    for i in range(8):
        p = synth.make_profile(i, 2024)
        assert 1.1 <= p.speed_m_s <= 1.5 and 0.9 <= p.cadence_hz <= 1.1
        assert all(g > 0 for g in p.emg_gain + p.imu_amp)
    assert synth.make_profile(3, 1) == synth.make_profile(3, 1)
    assert dataclasses.replace(synth.make_profile(3, 1)) == synth.make_profile(3, 1)
    assert not math.isclose(synth.make_profile(3, 1).mass_kg, synth.make_profile(4, 1).mass_kg)
