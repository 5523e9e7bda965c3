import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exosense import dsp
from exosense.errors import ContractError, DesignError
from exosense.signals import TimeSeries


def direct_form_oracle(sos, x):
    """Naive per-section difference equation y[n] = b.x - a.y, no library calls."""
    y = list(map(float, x))
    for b0, b1, b2, _, a1, a2 in sos:
        out = []
        for n in range(len(y)):
            xn1 = y[n - 1] if n >= 1 else 0.0
            xn2 = y[n - 2] if n >= 2 else 0.0
            yn1 = out[n - 1] if n >= 1 else 0.0
            yn2 = out[n - 2] if n >= 2 else 0.0
            out.append(b0 * y[n] + b1 * xn1 + b2 * xn2 - a1 * yn1 - a2 * yn2)
        y = out
    return np.array(y)


def gain_db(cascade, f):
    return 20 * math.log10(abs(cascade.frequency_response([f])[0]))


def test_lowpass_cutoff_and_stopband():
    c = dsp.design_lowpass_butter(4, 20, 100)
    assert abs(gain_db(c, 20) + 3.0103) < 0.1
    assert abs(c.frequency_response([20])[0]) == pytest.approx(0.7071, abs=0.008)
    assert abs(c.frequency_response([0])[0]) == pytest.approx(1.0, abs=1e-12)
    assert abs(c.frequency_response([40])[0]) <= 0.07
    assert np.all(np.abs(c.poles()) < 1)
    assert c.n_sections == 2


def test_lowpass_response_against_scipy():
    # scipy's butter is an independent design route
    from scipy import signal

    c = dsp.design_lowpass_butter(4, 20, 100)
    sos = signal.butter(4, 20, fs=100, output="sos")
    f = np.linspace(0, 49, 50)
    _, h = signal.sosfreqz(sos, worN=f, fs=100)
    np.testing.assert_allclose(np.abs(c.frequency_response(f)), np.abs(h), atol=1e-10)


def test_bandpass_edges_and_centre():
    c = dsp.design_bandpass_butter(4, 20, 450, 1000)
    assert c.order == 4 and c.n_sections == 2
    assert abs(c.frequency_response([0])[0]) < 1e-12
    for f in (20, 450):
        assert abs(gain_db(c, f) + 3.0103) < 0.2
        assert 0.67 <= abs(c.frequency_response([f])[0]) <= 0.74
    assert abs(c.frequency_response([95])[0]) >= 0.99


def test_bandpass_prototype_order_option():
    c = dsp.design_bandpass_butter(4, 20, 450, 1000, order_is_prototype=True)
    assert c.order == 8 and c.n_sections == 4
    assert abs(gain_db(c, 20) + 3.0103) < 0.2


@pytest.mark.parametrize("args", [(4, 50, 100), (4, 60, 100), (3, 20, 100), (4, 0, 100)])
def test_lowpass_design_errors(args):
    with pytest.raises(DesignError):
        dsp.design_lowpass_butter(*args)


@pytest.mark.parametrize("band", [(450, 20), (20, 500), (0, 100)])
def test_bandpass_design_errors(band):
    with pytest.raises(DesignError):
        dsp.design_bandpass_butter(4, band[0], band[1], 1000)


@pytest.mark.parametrize("design", [
    lambda: dsp.design_lowpass_butter(4, 20, 100),
    lambda: dsp.design_lowpass_butter(2, 6, 1000),
    lambda: dsp.design_bandpass_butter(4, 20, 450, 1000),
])
def test_impulse_matches_difference_equation(design):
    c = design()
    x = np.zeros(400)
    x[0] = 1.0
    y = dsp.filter_causal(c, TimeSeries(x, c.fs_hz)).data[0]
    np.testing.assert_allclose(y, direct_form_oracle(c.sos, x), rtol=0, atol=1e-12)


def test_chunked_equals_whole():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 500))
    whole = dsp.design_bandpass_butter(4, 20, 450, 1000).process(x)
    c = dsp.design_bandpass_butter(4, 20, 450, 1000)
    parts = [c.process(x[:, i:i + 7]) for i in range(0, 500, 7)]
    np.testing.assert_array_equal(np.concatenate(parts, axis=1), whole)


def test_zero_in_zero_out_and_rate_mismatch():
    c = dsp.design_lowpass_butter(4, 20, 100)
    assert not dsp.filter_causal(c, TimeSeries(np.zeros((2, 50)), 100)).data.any()
    with pytest.raises(ContractError):
        dsp.filter_causal(dsp.design_lowpass_butter(4, 20, 100), TimeSeries(np.zeros(10), 200))


@settings(max_examples=25, deadline=None)
@given(k=st.integers(0, 60), shift=st.integers(1, 30), seed=st.integers(0, 2**16))
def test_causal_and_time_invariant(k, shift, seed):
    x = np.random.default_rng(seed).standard_normal(100)
    y = dsp.design_lowpass_butter(4, 20, 100).process(x)[0]
    x2 = x.copy()
    x2[k + 1:] = 0
    y2 = dsp.design_lowpass_butter(4, 20, 100).process(x2)[0]
    np.testing.assert_array_equal(y[:k + 1], y2[:k + 1])
    ys = dsp.design_lowpass_butter(4, 20, 100).process(np.concatenate([np.zeros(shift), x]))[0]
    np.testing.assert_allclose(ys[shift:], y, atol=1e-12)


def test_envelope_examples():
    fs = 1000.0
    assert not dsp.emg_envelope(TimeSeries(np.zeros(100), fs)).data.any()
    const = dsp.emg_envelope(TimeSeries(np.full(3000, -0.5), fs)).data[0]
    assert const[-1] == pytest.approx(0.5, rel=0.01)
    t = np.arange(5000) / fs
    a = 0.8
    env = dsp.emg_envelope(TimeSeries(a * np.sin(2 * np.pi * 100 * t), fs)).data[0]
    assert env[-1000:].mean() == pytest.approx(2 * a / math.pi, rel=0.05)


def test_emg_features_examples():
    f = dsp.emg_features(TimeSeries([0, 1, 0, 1], 1000, channel_names=["m"]))
    assert f["m_rms"] == pytest.approx(0.70711, abs=1e-5)
    assert f["m_mav"] == 0.5 and f["m_wl"] == 3.0
    f = dsp.emg_features(TimeSeries(np.full(20, 2.5), 1000, channel_names=["m"]))
    assert (f["m_rms"], f["m_mav"], f["m_wl"]) == pytest.approx((2.5, 2.5, 0.0))
    assert all(v == 0 for v in dsp.emg_features(TimeSeries(np.zeros((3, 5)), 1000)).values())
    with pytest.raises(ContractError):
        dsp.emg_features(TimeSeries(np.zeros((1, 0)), 1000))


def test_imu_features_examples():
    names = ["acc_x", "acc_y", "acc_z"]
    f = dsp.imu_features(TimeSeries(np.ones((3, 10)), 100, channel_names=names))
    assert f["acc_sma"] == 3.0
    assert all(f[f"{n}_mean"] == 1.0 and f[f"{n}_std"] == 0.0 for n in names)
    f = dsp.imu_features(TimeSeries([-1.0, 1.0], 100, channel_names=["g"]))
    assert f["g_mean"] == 0.0 and f["g_std"] == 1.0
    assert all(v == 0 for v in dsp.imu_features(TimeSeries(np.zeros((3, 4)), 100, channel_names=names)).values())


@settings(max_examples=30, deadline=None)
@given(s=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), seed=st.integers(0, 2**16))
def test_features_scale_covariant(s, seed):
    x = np.random.default_rng(seed).standard_normal((3, 20))
    names = ["gyr_x", "gyr_y", "gyr_z"]
    for fn in (dsp.emg_features, dsp.imu_features):
        a = fn(TimeSeries(x, 100, channel_names=names))
        b = fn(TimeSeries(s * x, 100, channel_names=names))
        for key, v in a.items():
            if key.endswith("_mean"):
                assert b[key] == pytest.approx(s * v, rel=1e-9, abs=1e-12)
            else:
                assert b[key] >= 0
                assert b[key] == pytest.approx(abs(s) * v, rel=1e-9, abs=1e-12)


def test_effort_level():
    ts = TimeSeries(np.full(10, 0.4), 100)
    assert dsp.effort_level(ts, 0.8) == pytest.approx(50.0)
    assert dsp.effort_level(TimeSeries(np.zeros(10), 100), 0.8) == 0.0
    assert dsp.effort_level(TimeSeries(np.ones(10), 100), 0.8) == 100.0
    with pytest.raises(ContractError):
        dsp.effort_level(ts, 0.0)
