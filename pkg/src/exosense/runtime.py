"""Streaming pipeline: ring-buffered ingestion, stride-scheduled inference,
5 Hz status packets, and the UDP emitter.

Windows are scheduled on sample indices so that a stream replayed through
the pipeline yields exactly the windows the offline dataset builders cut:
moment every 10 ms on one side, risk every 50 ms on each side, metabolic
every 3 s starting 6 s after a control-law switch.

In the simulated clock an inference finishing at ``t_end + cost`` is charged
the configured cost; in the wall clock the measured time is used.
"""

from __future__ import annotations

import collections
import json
import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import datasets as D
from .datasets import MetClass
from .decoders import SIM_COST_MS, DecoderModel
from .dsp import design_bandpass_butter, design_lowpass_butter, envelope_cascade
from .errors import ConfigurationError, ContractError, PacketError
from .signals import RATES, SIDES, ChannelLayout, SessionRecording, TimeSeries
from .synth import detect_heel_strikes

log = logging.getLogger(__name__)

PACKET_PERIOD_S = 0.2
RISK_HOLD_S = 1.0
MAX_DATAGRAM = 512
EFFORT_CALIBRATION_S = 10.0


# --------------------------------------------------------------------------
# ring buffer


class RingBuffer:
    """Fixed-capacity multichannel sample store; the oldest samples are overwritten."""

    def __init__(self, capacity: int, channels: int, dtype=np.float32):
        if capacity < 1 or channels < 1:
            raise ContractError("ring buffer needs positive capacity and channel count")
        self.capacity = capacity
        self.data = np.zeros((channels, capacity), dtype=dtype)
        self.total = 0  # samples ever written

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def available(self) -> int:
        return min(self.total, self.capacity)

    def write(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=self.data.dtype)
        if block.ndim == 1:
            block = block[None]
        if block.shape[0] != self.channels:
            raise ContractError(f"block has {block.shape[0]} channels, buffer has {self.channels}")
        n = block.shape[1]
        if n >= self.capacity:
            block, skipped = block[:, -self.capacity :], n - self.capacity
            self.total += skipped
            n = self.capacity
        start = self.total % self.capacity
        first = min(n, self.capacity - start)
        self.data[:, start : start + first] = block[:, :first]
        self.data[:, : n - first] = block[:, first:]
        self.total += n

    def read_range(self, i0: int, i1: int) -> np.ndarray:
        """Samples with absolute indices ``[i0, i1)``."""
        if i1 > self.total or i0 < self.total - self.available or i0 > i1:
            raise ContractError(
                f"samples [{i0}, {i1}) not readable; buffer holds [{self.total - self.available}, {self.total})"
            )
        idx = np.arange(i0, i1) % self.capacity
        return self.data[:, idx]

    def read_last(self, n: int) -> np.ndarray:
        return self.read_range(self.total - n, self.total)


# --------------------------------------------------------------------------
# status packet


@dataclass(frozen=True)
class StatusPacket:
    t_s: float
    effort_pct: float
    trend: MetClass
    risk: bool
    latency_ms: float

    def __post_init__(self):
        if not (math.isfinite(self.t_s) and self.t_s >= 0):
            raise PacketError("t must be a finite non-negative number", "t")
        if not (0.0 <= self.effort_pct <= 100.0):
            raise PacketError("effort_pct must lie in [0, 100]", "effort_pct")
        if not (math.isfinite(self.latency_ms) and self.latency_ms >= 0):
            raise PacketError("latency_ms must be finite and non-negative", "latency_ms")


PACKET_KEYS = ("t", "effort_pct", "trend", "risk", "latency_ms")


def encode_packet(p: StatusPacket) -> bytes:
    """Canonical JSON with the fixed key order ``t, effort_pct, trend, risk, latency_ms``."""
    obj = {
        "t": p.t_s,
        "effort_pct": p.effort_pct,
        "trend": p.trend.wire,
        "risk": bool(p.risk),
        "latency_ms": p.latency_ms,
    }
    out = json.dumps(obj, separators=(",", ":"), allow_nan=False).encode()
    if len(out) > MAX_DATAGRAM:
        raise PacketError(f"encoded packet exceeds {MAX_DATAGRAM} bytes", "packet")
    return out


def _number(obj, key) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise PacketError(f"{key} must be a number", key)
    return float(v)


def decode_packet(data: bytes | str, strict: bool = True) -> StatusPacket:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise PacketError(f"malformed JSON: {e}", "packet") from None
    if not isinstance(obj, dict):
        raise PacketError("packet must be a JSON object", "packet")
    for key in PACKET_KEYS:
        if key not in obj:
            raise PacketError(f"missing key {key}", key)
    if strict:
        extra = sorted(set(obj) - set(PACKET_KEYS))
        if extra:
            raise PacketError(f"unknown key {extra[0]}", extra[0])
    trend = obj["trend"]
    if not isinstance(trend, str) or trend.upper() not in MetClass.__members__ or trend != trend.lower():
        raise PacketError("invalid trend", "trend")
    if not isinstance(obj["risk"], bool):
        raise PacketError("risk must be a boolean", "risk")
    return StatusPacket(
        _number(obj, "t"), _number(obj, "effort_pct"), MetClass.from_wire(trend), obj["risk"], _number(obj, "latency_ms")
    )


# --------------------------------------------------------------------------
# UDP emitter


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ConfigurationError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class UdpEmitter:
    """Fire-and-forget datagram sender.

    The endpoint is resolved once at construction (``ConfigurationError`` if
    that fails). Send failures are logged and counted in ``dropped``. With
    ``queue_size > 0`` packets go through a bounded drop-oldest queue drained
    by a background thread, so callers never block on the network.
    """

    def __init__(self, endpoint: str, queue_size: int = 0):
        host, port = parse_endpoint(endpoint)
        try:
            info = socket.getaddrinfo(host, port, type=socket.SOCK_DGRAM)
        except socket.gaierror as e:
            raise ConfigurationError(f"cannot resolve {endpoint!r}: {e}") from None
        family, _, _, _, self.address = info[0]
        self.sock = socket.socket(family, socket.SOCK_DGRAM)
        self.sent = 0
        self.dropped = 0
        self._queue: collections.deque | None = None
        self._thread = None
        if queue_size > 0:
            self._queue = collections.deque(maxlen=queue_size)
            self._cv = threading.Condition()
            self._closed = False
            self._thread = threading.Thread(target=self._drain, name="udp-emitter", daemon=True)
            self._thread.start()

    def _send(self, payload: bytes) -> None:
        try:
            self.sock.sendto(payload, self.address)
            self.sent += 1
        except OSError as e:
            self.dropped += 1
            log.warning("datagram to %s dropped: %s", self.address, e)

    def emit(self, packet: StatusPacket) -> None:
        payload = encode_packet(packet)
        if self._queue is None:
            self._send(payload)
            return
        with self._cv:
            if len(self._queue) == self._queue.maxlen:
                self.dropped += 1  # the oldest packet is evicted
            self._queue.append(payload)
            self._cv.notify()

    __call__ = emit

    def _drain(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._closed:
                    self._cv.wait()
                if not self._queue and self._closed:
                    return
                payload = self._queue.popleft()
            self._send(payload)

    def close(self) -> None:
        if self._thread is not None:
            with self._cv:
                self._closed = True
                self._cv.notify()
            self._thread.join()
        self.sock.close()


def udp_emit(endpoint: str, packet: StatusPacket) -> bool:
    """Send one packet; returns False (and logs) if the send failed."""
    em = UdpEmitter(endpoint)
    try:
        em.emit(packet)
        return em.dropped == 0
    finally:
        em.close()


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineConfig:
    moment_side: str = "right"
    risk_sides: tuple[str, ...] = SIDES
    clock: str = "simulated"
    cost_ms: dict[str, float] = field(default_factory=lambda: dict(SIM_COST_MS))
    buffer_s: float = 12.0
    packet_period_s: float = PACKET_PERIOD_S
    risk_hold_s: float = RISK_HOLD_S
    effort_max: float | None = None
    effort_calibration_s: float = EFFORT_CALIBRATION_S

    def __post_init__(self):
        if self.clock not in ("simulated", "wall"):
            raise ConfigurationError(f"clock must be simulated or wall, got {self.clock!r}")
        if self.buffer_s < D.MET_CONTEXT_S + D.MET_SLIDING_S:
            raise ConfigurationError("buffers must hold at least the 9 s metabolic window")


@dataclass(frozen=True)
class TaskOutput:
    task: str
    side: str
    t_window_s: float  # time of the last sample in the window
    t_out_s: float
    value: object
    latency_ms: float


class _Stream:
    """Conditioning chain and buffers for one (modality, side)."""

    def __init__(self, modality: str, side: str, channels: int, capacity_s: float):
        self.modality, self.side = modality, side
        self.rate = RATES[modality]
        cap = int(math.ceil(capacity_s * self.rate))
        self.count = 0
        self.buffers: dict[str, RingBuffer] = {}
        if modality == "emg":
            self.bp = design_bandpass_butter(4, 20.0, 450.0, self.rate)
            self.env = envelope_cascade(self.rate)
            self.buffers["emg"] = RingBuffer(cap, channels)
            self.buffers["envelope"] = RingBuffer(cap, channels)
            self.buffers["envelope_100"] = RingBuffer(int(math.ceil(capacity_s * RATES["imu"])), channels)
            self.decim = int(round(self.rate / RATES["imu"]))
        elif modality in ("imu", "strain"):
            self.lp = design_lowpass_butter(4, 20.0, self.rate)
            self.buffers[modality] = RingBuffer(cap, channels)
        elif modality == "fsr":
            self.buffers["fsr"] = RingBuffer(cap, channels)
        else:
            raise ConfigurationError(f"pipeline does not ingest {modality!r}")

    def process(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=np.float32)
        if self.modality == "emg":
            bp = self.bp.process(block).astype(np.float32)
            env = self.env.process(np.abs(bp)).astype(np.float32)
            self.buffers["emg"].write(bp)
            self.buffers["envelope"].write(env)
            first = (-self.count) % self.decim
            self.buffers["envelope_100"].write(env[:, first :: self.decim])
        elif self.modality in ("imu", "strain"):
            self.buffers[self.modality].write(self.lp.process(block).astype(np.float32))
        else:
            self.buffers["fsr"].write(block)
        self.count += block.shape[1]


class Pipeline:
    """Owner of all streaming state. ``ingest`` and ``tick`` must be serialized."""

    def __init__(
        self,
        models: Mapping[str, DecoderModel],
        config: PipelineConfig | None = None,
        sink: Callable[[StatusPacket], None] | None = None,
        layout=None,
    ):
        self.config = config or PipelineConfig()
        for task in ("moment", "metabolic", "risk"):
            if task not in models or models[task] is None:
                raise ConfigurationError(f"no model loaded for task {task!r}")
            if models[task].task != task:
                raise ConfigurationError(f"model for {task!r} was trained for {models[task].task!r}")
        self.models = dict(models)
        self.sink = sink
        self.layout = layout or ChannelLayout()
        ch = {
            "emg": len(self.layout.emg_channels), "imu": len(self.layout.imu_channels),
            "strain": len(self.layout.strain_channels), "fsr": len(self.layout.fsr_channels),
        }
        self.streams = {
            (m, s): _Stream(m, s, ch[m], self.config.buffer_s) for m in ("emg", "imu", "strain", "fsr") for s in SIDES
        }
        self.now_s = 0.0
        self.task_outputs: list[TaskOutput] = []
        self.packets: list[StatusPacket] = []
        self._pending: list[TaskOutput] = []
        self._next_window = {"moment": 0, **{("risk", s): 0 for s in self.config.risk_sides}}
        self._transitions: list[float] = []
        self._contexts: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._met_next: dict[float, int] = {}
        self._next_packet = 1
        self._trend = MetClass.STEADY
        self._last_risk_t = -math.inf
        self._latency_since_packet = 0.0
        self._effort_running = 0.0

    # ingestion ------------------------------------------------------------
    def ingest(self, modality: str, side: str, samples: np.ndarray, t_start_s: float | None = None) -> None:
        """Append a ``(channels, n)`` block whose first sample is at ``t_start_s``.

        Blocks must be contiguous: a start time before the next expected
        sample (regression) or after it (gap) is rejected, state unchanged.
        """
        key = (modality, side)
        if key not in self.streams:
            raise ContractError(f"unknown stream {key}")
        st = self.streams[key]
        expected = st.count / st.rate
        if t_start_s is not None and abs(t_start_s - expected) > 0.5 / st.rate:
            kind = "regression" if t_start_s < expected else "gap"
            raise ContractError(
                f"timestamp {kind} on {modality}/{side}: block starts at {t_start_s:.6f} s, expected {expected:.6f} s"
            )
        samples = np.asarray(samples)
        if samples.ndim != 2 or samples.shape[0] != next(iter(st.buffers.values())).channels:
            raise ContractError(f"{modality}/{side} block must be (channels, n), got {samples.shape}")
        st.process(samples)

    def notify_transition(self, t_switch_s: float) -> None:
        """Announce a control-law switch; metabolic windows start 6 s later."""
        if self._transitions and t_switch_s <= self._transitions[-1]:
            raise ContractError("transitions must be announced in increasing time order")
        self._transitions.append(float(t_switch_s))

    # helpers --------------------------------------------------------------
    def _buf(self, modality: str, side: str, name: str | None = None) -> RingBuffer:
        return self.streams[(modality, side)].buffers[name or modality]

    def _infer(self, task: str, inputs: dict[str, np.ndarray]) -> tuple[np.ndarray, float]:
        t0 = time.perf_counter()
        out = self.models[task].predict(inputs)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        return out, (self.config.cost_ms[task] if self.config.clock == "simulated" else wall_ms)

    def _emit(self, task, side, t_window, value, lat):
        o = TaskOutput(task, side, round(t_window, 6), round(t_window + lat / 1000.0, 6), value, lat)
        self.task_outputs.append(o)
        self._pending.append(o)

    def _run_moment(self, now: float) -> None:
        side = self.config.moment_side
        imu, emg = self._buf("imu", side), self._buf("emg", side)
        n_imu = int(round(D.MOMENT_WINDOW_S * RATES["imu"]))
        ratio = int(round(RATES["emg"] / RATES["imu"]))
        step = int(round(D.MOMENT_STRIDE_S * RATES["imu"]))
        lasts = []
        j = self._next_window["moment"]
        while True:
            last = n_imu - 1 + j * step
            if last / RATES["imu"] > now + 1e-9 or last >= imu.total or (last + 1) * ratio > emg.total:
                break
            lasts.append(last)
            j += 1
        self._next_window["moment"] = j
        if not lasts:
            return
        xi = np.stack([imu.read_range(k - n_imu + 1, k + 1) for k in lasts])
        xe = np.stack([emg.read_range((k + 1) * ratio - n_imu * ratio, (k + 1) * ratio) for k in lasts])
        out, lat = self._infer("moment", {"imu": xi, "emg": xe})
        for k, v in zip(lasts, out):
            self._emit("moment", side, k / RATES["imu"], float(v), lat)

    def _run_risk(self, now: float) -> None:
        n = int(round(D.RISK_WINDOW_S * RATES["strain"]))
        step = int(round(D.RISK_STRIDE_S * RATES["strain"]))
        for side in self.config.risk_sides:
            buf = self._buf("strain", side)
            j = self._next_window[("risk", side)]
            lasts = []
            while True:
                last = n - 1 + j * step
                if last / RATES["strain"] > now + 1e-9 or last >= buf.total:
                    break
                lasts.append(last)
                j += 1
            self._next_window[("risk", side)] = j
            if not lasts:
                continue
            x = np.stack([buf.read_range(k - n + 1, k + 1) for k in lasts])
            p, lat = self._infer("risk", {"strain": x})
            thr = self.models["risk"].threshold
            for k, v in zip(lasts, p):
                self._emit("risk", side, k / RATES["strain"], bool(v >= thr), lat)

    def _met_stack(self, i0: int, i1: int) -> tuple[np.ndarray, np.ndarray]:
        imu = np.vstack([self._buf("imu", s).read_range(i0, i1) for s in SIDES])
        env = np.vstack([self._buf("emg", s, "envelope_100").read_range(i0, i1) for s in SIDES])
        return imu, env

    def _run_metabolic(self, now: float) -> None:
        rate = RATES["imu"]
        n_ctx = int(round(D.MET_CONTEXT_S * rate))
        n_sl = int(round(D.MET_SLIDING_S * rate))
        avail = min(
            min(self._buf("imu", s).total for s in SIDES),
            min(self._buf("emg", s, "envelope_100").total for s in SIDES),
        )
        active = [t0 for t0 in self._transitions if t0 <= now + 1e-9]
        if not active:
            return
        t0 = active[-1]
        i_sw = int(round(t0 * rate))
        if t0 not in self._contexts:
            if avail < i_sw:
                return
            self._contexts[t0] = self._met_stack(i_sw - n_ctx, i_sw)
            self._met_next[t0] = 0
        ctx_imu, ctx_env = self._contexts[t0]
        batch, times = [], []
        while True:
            t = t0 + D.MET_FIRST_OFFSET_S + self._met_next[t0] * D.MET_STRIDE_S
            i1 = int(round(t * rate))
            if t > now + 1e-9 or i1 > avail:
                break
            imu, env = self._met_stack(i1 - n_sl, i1)
            batch.append((np.hstack([ctx_imu, imu]), np.hstack([ctx_env, env])))
            times.append(t)
            self._met_next[t0] += 1
        if not batch:
            return
        probs, lat = self._infer(
            "metabolic", {"imu": np.stack([b[0] for b in batch]), "emg": np.stack([b[1] for b in batch])}
        )
        for t, p in zip(times, probs):
            self._emit("metabolic", "bilateral", t - 1.0 / rate, MetClass(int(np.argmax(p))), lat)

    def _effort_window(self, t: float) -> np.ndarray | None:
        """Envelope over the last complete gait cycle before ``t`` (FSR heel
        strikes), falling back to the trailing 1 s."""
        side = self.config.moment_side
        env = self._buf("emg", side, "envelope")
        fsr = self._buf("fsr", side)
        rate = RATES["emg"]
        lo_env = env.total - env.available
        n_now = min(env.total, int(math.floor(t * rate + 1e-9)) + 1)
        if n_now <= lo_env:
            return None
        lo_fsr = fsr.total - fsr.available
        n_fsr = min(fsr.total, int(math.floor(t * RATES["fsr"] + 1e-9)) + 1)
        if n_fsr - lo_fsr >= 2:
            strikes = detect_heel_strikes(TimeSeries(fsr.read_range(lo_fsr, n_fsr), RATES["fsr"], lo_fsr / RATES["fsr"]))
            if len(strikes) >= 2:
                a, b = int(math.ceil(strikes[-2] * rate)), int(math.ceil(strikes[-1] * rate))
                if lo_env <= a < b <= n_now:
                    return env.read_range(a, b)
        return env.read_range(max(lo_env, n_now - int(rate)), n_now)

    def _effort(self, t: float) -> float:
        window = self._effort_window(t)
        if window is None:
            return 0.0
        rms = math.sqrt(float(np.mean(window.astype(np.float64) ** 2)))
        if self.config.effort_max is not None:
            top = self.config.effort_max
        else:
            # subject maximum: largest cycle RMS seen during calibration
            if t <= self.config.effort_calibration_s + 1e-9:
                self._effort_running = max(self._effort_running, rms)
            top = self._effort_running
        if not top > 0:
            return 0.0
        return round(min(100.0, max(0.0, 100.0 * rms / top)), 2)

    # scheduling -----------------------------------------------------------
    def tick(self, now_s: float) -> list[StatusPacket]:
        """Run every due inference up to ``now_s`` and return new packets."""
        if now_s < self.now_s - 1e-12:
            raise ContractError(f"clock moved backwards: {now_s} < {self.now_s}")
        self.now_s = now_s
        self._run_risk(now_s)
        self._run_moment(now_s)
        self._run_metabolic(now_s)
        self._pending.sort(key=lambda o: (o.t_out_s, o.task, o.side))
        packets = []
        while True:
            t_pkt = round(self._next_packet * self.config.packet_period_s, 6)
            if t_pkt > now_s + 1e-9:
                break
            while self._pending and self._pending[0].t_out_s <= t_pkt + 1e-9:
                self._apply(self._pending.pop(0))
            pkt = StatusPacket(
                t_s=t_pkt,
                effort_pct=self._effort(t_pkt),
                trend=self._trend,
                risk=t_pkt - self._last_risk_t <= self.config.risk_hold_s + 1e-9,
                latency_ms=round(self._latency_since_packet, 3),
            )
            self._latency_since_packet = 0.0
            self._next_packet += 1
            packets.append(pkt)
            self.packets.append(pkt)
            if self.sink is not None:
                self.sink(pkt)
        return packets

    def _apply(self, o: TaskOutput) -> None:
        self._latency_since_packet = max(self._latency_since_packet, o.latency_ms)
        if o.task == "metabolic":
            self._trend = o.value
        elif o.task == "risk" and o.value:
            self._last_risk_t = o.t_out_s


def stream_session(
    pipeline: Pipeline,
    session: SessionRecording,
    duration_s: float | None = None,
    chunk_s: float = 0.05,
    realtime: bool = False,
) -> list[StatusPacket]:
    """Replay ``session`` through ``pipeline`` in ``chunk_s`` blocks.

    Control-law switches are announced as they are reached. With
    ``realtime`` the loop sleeps so that stream time tracks wall time.
    """
    end = session.extent()[1] if duration_s is None else min(duration_s, session.extent()[1])
    n_chunks = int(math.floor(end / chunk_s + 1e-9))
    switches = [tr.t_switch_s for tr in session.transitions]
    start_wall = time.perf_counter()
    for c in range(1, n_chunks + 1):
        t1 = round(c * chunk_s, 9)
        for (m, side), st in pipeline.streams.items():
            ts = session.streams.get((m, side))
            if ts is None:
                continue
            i1 = min(int(round(t1 * st.rate)), ts.n_samples)
            if i1 > st.count:
                pipeline.ingest(m, side, ts.data[:, st.count : i1], st.count / st.rate)
        while switches and switches[0] <= t1 + 1e-9:
            pipeline.notify_transition(switches.pop(0))
        if realtime:
            delay = start_wall + t1 - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        pipeline.tick(t1)
    return pipeline.packets


def bench_latency(model: DecoderModel, window: Mapping[str, np.ndarray], n_iters: int = 200, warmup: int = 10) -> dict[str, float]:
    """Wall-clock single-window inference statistics (ms) on this host."""
    if n_iters < 100:
        raise ContractError("bench_latency needs at least 100 iterations")
    batch = {k: np.asarray(v)[None] for k, v in window.items()}
    for _ in range(warmup):
        model.predict(batch)
    times = np.empty(n_iters)
    for i in range(n_iters):
        t0 = time.perf_counter()
        model.predict(batch)
        times[i] = (time.perf_counter() - t0) * 1000.0
    return {
        "p50_ms": float(np.percentile(times, 50)),
        "p95_ms": float(np.percentile(times, 95)),
        "max_ms": float(times.max()),
        "n_iters": n_iters,
    }


def representative_window(task: str) -> dict[str, np.ndarray]:
    """Zero-mean random input of the task's window shape (for benchmarking)."""
    rng = np.random.default_rng(0)
    shapes = {
        "moment": {"imu": (18, 20), "emg": (3, 200)},
        "metabolic": {"imu": (36, 900), "emg": (6, 900)},
        "risk": {"strain": (2, 100)},
    }[task]
    return {k: rng.standard_normal(s).astype(np.float32) for k, s in shapes.items()}
