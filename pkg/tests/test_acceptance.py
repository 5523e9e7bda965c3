"""Acceptance criteria 1-12, one test each.

Each test records a one-line summary; conftest prints a PASS/FAIL line per
criterion at the end of the run. Criteria 6-8 are the synthetic benchmarks
(marker ``benchmark``); deselect them with ``-m "not benchmark"``.
"""

import functools
import math
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from exosense import datasets as D
from exosense import decoders, dsp, nn, runtime, synth
from exosense.eval import per_subject_datasets, run_loso
from exosense.errors import PacketError
from exosense.nn import losses as L

from conftest import SESSION_START
from test_dsp import direct_form_oracle
from test_nn import CASES, LOSS_CASES, _numeric_grad, _rel, _strip_readout, seeded


def note(request, text):
    request.node.user_properties.append(("detail", text))
    print(text)


def gain_db(cascade, f):
    return 20 * math.log10(abs(cascade.frequency_response([f])[0]))


@pytest.mark.criterion(1)
def test_criterion_01_dsp_oracles(request):
    t0 = time.perf_counter()
    lp = dsp.design_lowpass_butter(4, 20.0, 100.0)
    bp = dsp.design_bandpass_butter(4, 20.0, 450.0, 1000.0)
    g_lp = gain_db(lp, 20.0)
    g_bp = [gain_db(bp, f) for f in (20.0, 450.0)]
    impulse = np.zeros(400)
    impulse[0] = 1.0
    err = 0.0
    for c in (lp, bp):
        y = c.copy().process(impulse[None])[0]
        err = max(err, float(np.max(np.abs(y - direct_form_oracle(c.sos, impulse)))))
    x = np.random.default_rng(0).standard_normal((3, 2001))
    whole = bp.copy().process(x)
    c = bp.copy()
    chunked = np.hstack([c.process(x[:, i : i + 37]) for i in range(0, x.shape[1], 37)])
    elapsed = time.perf_counter() - t0
    note(request, f"LP {g_lp:.3f} dB, BP {g_bp[0]:.3f}/{g_bp[1]:.3f} dB, impulse err {err:.1e}, {elapsed:.2f} s")
    assert abs(g_lp + 3.0103) <= 0.1
    assert all(abs(g + 3.0103) <= 0.2 for g in g_bp)
    assert err <= 1e-12
    assert np.array_equal(whole, chunked)
    assert elapsed < 10


@pytest.mark.criterion(2)
def test_criterion_02_gradient_checks(request):
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for name, module, shapes in CASES:
        rng = np.random.default_rng(len(name))
        worst = max(worst, nn.grad_check(seeded(module, len(name)), [rng.standard_normal(s) for s in shapes]))
        n += 1
    for name, fn, shape, kind in LOSS_CASES:
        rng = np.random.default_rng(len(name) + 7)
        z = rng.standard_normal(shape)
        y = rng.standard_normal(shape) if kind == "float" else rng.integers(0, kind, shape[0])
        worst = max(worst, _rel(fn(z, y)[1], _numeric_grad(lambda v: fn(v, y)[0], z)))
        n += 1
    elapsed = time.perf_counter() - t0
    note(request, f"{n} shapes, max rel err {worst:.2e}, {elapsed:.1f} s")
    assert n >= 20 and worst < 1e-4 and elapsed < 60


def _future_invariant(module, x, t_out, t_in):
    y = module.forward(x)
    x2 = x.copy()
    x2[..., t_in + 1 :] = np.random.default_rng(t_in).standard_normal(x2[..., t_in + 1 :].shape) * 10
    return np.array_equal(y[..., : t_out + 1], module.forward(x2)[..., : t_out + 1])


@pytest.mark.criterion(3)
def test_criterion_03_causality(request):
    rng = np.random.default_rng(3)
    checked = 0
    conv = nn.Conv1d(3, 4, 3, 2).init(rng).astype(np.float64)
    x = rng.standard_normal((2, 3, 40))
    for t in range(0, 39, 3):
        assert _future_invariant(conv, x, t, t)
        checked += 1
    for task in decoders.TASKS:
        for name, enc in decoders.default_spec(task)["encoders"].items():
            body = _strip_readout(enc).init(rng).astype(np.float64)
            T = 128
            x = rng.standard_normal((1, enc["c_in"], T))
            n_out = body.forward(x).shape[2]
            stride = T // n_out if n_out != T else 1
            for t_out in range(0, n_out - 1, max(1, n_out // 8)):
                t_in = T - 1 - (n_out - 1 - t_out) * stride
                assert _future_invariant(body, x, t_out, t_in), (task, name, t_out)
                checked += 1
    note(request, f"{checked} cut points over conv1d, TCN and SE-ResNet encoders, all exact")


@pytest.mark.criterion(4)
def test_criterion_04_labeling_oracles(request, perturb_session):
    from test_datasets import brute_force_label, transition

    counts = [len(D.valid_metabolic_times(transition(s))) for s in (35.0, 36.0, 120.0)]
    rng = np.random.default_rng(42)
    agree = 0
    for _ in range(1000):
        rate = float(rng.choice([1.0, 2.0, 4.0]))
        n = int(rate * 50)
        base = float(rng.uniform(2, 5))
        values = base + rng.uniform(-0.3, 0.3) * base * np.linspace(0, 1, n) + rng.normal(0, 0.05 * base, n)
        t0 = float(rng.uniform(0, 2))
        t = float(t0 + rng.uniform(6.5, 15.0))
        from exosense.signals import TimeSeries

        agree += D.metabolic_label(TimeSeries(values, rate, t0), t, base) is brute_force_label(values, rate, t0, t, base)
    per_event = []
    for side in ("left", "right"):
        ds = D.build_risk_dataset(perturb_session, side)
        for ev in perturb_session.perturbations:
            per_event.append(int(np.sum(ds.targets & (np.abs(ds.t_s - ev.onset_s - 0.15) < 0.5))))
        assert int(ds.targets.sum()) == 7 * len(perturb_session.perturbations)
    note(request, f"valid times {counts}, brute-force agreement {agree}/1000, positives per event {sorted(set(per_event))}")
    assert counts == [0, 1, 29] and agree == 1000 and set(per_event) == {7}


@pytest.mark.criterion(5)
def test_criterion_05_focal(request):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        p = rng.uniform(1e-6, 1 - 1e-6, 16)
        y = rng.integers(0, 2, 16)
        bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        worst = max(worst, abs(L.focal_loss(p, y, 0.0, 0.5) - 0.5 * bce))
    hand = L.focal_loss([0.9], [1])
    note(request, f"identity max err {worst:.1e}, hand value {hand:.6e}")
    assert worst < 1e-12 and abs(hand - 2.634e-4) <= 1e-7


# -- synthetic benchmarks ---------------------------------------------------------

SCENARIO = {"moment": "phase1", "metabolic": "phase2", "risk": "phase3"}


@functools.lru_cache(maxsize=None)
def cohort(task):
    sessions = synth.generate_cohort(synth.SCENARIO_PRESETS[SCENARIO[task]])
    sides = decoders.make_config(task, benchmark=True)["sides"]
    return per_subject_datasets(task, sessions, sides)


def benchmark(task, variant="imu_emg", mode="loso"):
    cfg = decoders.make_config(task, variant, benchmark=True)
    return run_loso(task, cohort(task), cfg, mode=mode, plots=False)


@pytest.mark.benchmark
@pytest.mark.criterion(6)
def test_criterion_06_moment_benchmark(request):
    t0 = time.perf_counter()
    loso = benchmark("moment")
    imu_only = benchmark("moment", "imu_only")
    within = benchmark("moment", mode="within")
    elapsed = time.perf_counter() - t0
    med_full, med_imu = np.median(loso.values("rmse")), np.median(imu_only.values("rmse"))
    note(
        request,
        f"LOSO rmse {loso.mean('rmse'):.3f}, within {within.mean('rmse'):.3f}, "
        f"fold-median imu_emg {med_full:.3f} vs imu_only {med_imu:.3f}, {elapsed:.0f} s",
    )
    assert loso.mean("rmse") <= 0.20
    assert within.mean("rmse") <= loso.mean("rmse")
    assert med_full <= med_imu
    assert elapsed <= 600


@pytest.mark.benchmark
@pytest.mark.criterion(7)
def test_criterion_07_metabolic_benchmark(request):
    t0 = time.perf_counter()
    rep = benchmark("metabolic")
    elapsed = time.perf_counter() - t0
    f1 = {c.wire: rep.mean(f"f1_{c.wire}") for c in D.MetClass}
    note(request, f"accuracy {rep.mean('accuracy'):.3f}, F1 " + ", ".join(f"{k} {v:.3f}" for k, v in f1.items()) + f", {elapsed:.0f} s")
    assert rep.mean("accuracy") >= 0.90
    assert min(f1.values()) >= 0.85
    assert elapsed <= 300


@pytest.mark.benchmark
@pytest.mark.criterion(8)
def test_criterion_08_risk_benchmark(request):
    t0 = time.perf_counter()
    rep = benchmark("risk")
    elapsed = time.perf_counter() - t0
    delays = [d for f in rep.folds for d in (f.delays_ms or [])]
    n_events = sum(int(f.metrics["n_events"]) for f in rep.folds)
    recall = len(delays) / n_events
    fa = rep.mean("false_alarm_rate")
    med, mx = float(np.median(delays)), float(np.max(delays))
    note(request, f"recall {recall:.3f} ({len(delays)}/{n_events}), false alarms {fa:.4f}, delay median {med:.0f} ms max {mx:.0f} ms, {elapsed:.0f} s")
    assert recall >= 0.95 and fa <= 0.01
    assert med <= 100 and mx <= 150
    assert elapsed <= 300


# -- runtime --------------------------------------------------------------------------


def _models():
    return {t: decoders.DecoderModel.build(t, seed=i) for i, t in enumerate(decoders.TASKS)}


@pytest.mark.criterion(9)
def test_criterion_09_stream_determinism(request, perturb_session):
    runs = []
    for _ in range(2):
        pipe = runtime.Pipeline(_models())
        runs.append(b"\n".join(map(runtime.encode_packet, runtime.stream_session(pipe, perturb_session, 60.0))))
    lines = runs[0].split(b"\n")
    round_trip = all(runtime.encode_packet(runtime.decode_packet(x)) == x for x in lines)
    rejected = 0
    for bad in (lines[0][:-1] + b',"extra":1}', lines[0].replace(b'"trend":"', b'"trend":"x')):
        try:
            runtime.decode_packet(bad)
        except PacketError:
            rejected += 1
    note(request, f"{len(lines)} packets, identical={runs[0] == runs[1]}, round trip={round_trip}, rejected {rejected}/2")
    assert len(lines) == 300 and runs[0] == runs[1] and round_trip and rejected == 2


@pytest.mark.criterion(10)
def test_criterion_10_risk_latency(request):
    model = decoders.DecoderModel.build("risk")
    stats = runtime.bench_latency(model, runtime.representative_window("risk"), n_iters=500)
    note(request, f"p50 {stats['p50_ms']:.2f} ms, p95 {stats['p95_ms']:.2f} ms")
    assert stats["p95_ms"] <= 20


@pytest.mark.criterion(11)
def test_criterion_11_udp_loopback(request):
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(0.5)
    port = rx.getsockname()[1]
    got, bad = [], []
    done = threading.Event()

    def listen():
        while True:
            try:
                data = rx.recv(4096)
            except socket.timeout:
                if done.is_set():
                    return
                continue
            try:
                got.append(runtime.decode_packet(data))
            except PacketError:
                bad.append(data)

    th = threading.Thread(target=listen, daemon=True)
    th.start()
    duration = 30.0
    proc = subprocess.run(
        [sys.executable, "-m", "exosense", "stream", "--live-synth", "--udp", f"127.0.0.1:{port}",
         "--duration", str(duration), "--seed", "11"],
        capture_output=True, text=True, timeout=600,
    )
    done.set()
    th.join()
    rx.close()
    expected = int(round(duration / runtime.PACKET_PERIOD_S))
    note(request, f"received {len(got)}/{expected} datagrams, {len(bad)} invalid (exit {proc.returncode})")
    assert proc.returncode == 0, proc.stderr
    assert len(got) >= 0.99 * expected and not bad


@pytest.mark.suite_runtime
@pytest.mark.criterion(12)
def test_criterion_12_suite_runtime(request):
    elapsed = time.perf_counter() - SESSION_START
    budget = 25 * 60 if request.config._benchmarks_selected else 5 * 60
    note(request, f"suite ran {elapsed:.0f} s before this check (budget {budget} s)")
    assert elapsed < budget
