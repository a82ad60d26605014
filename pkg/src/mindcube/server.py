"""Pipeline orchestrator and network surface.

Two decoupled clocks share one frame ring:

* the 20 Hz control path fuses attitude and emits one CSV control-voltage
  line per frame, broadcast to TCP clients;
* the ~1 Hz generation path snapshots the conditioning window, computes
  the condition, outpaints a latent continuation, renders it, and keeps
  RMS/duration stats for telemetry.

Window snapshots are taken synchronously in the ingest path every
``sensor_read_period_s`` worth of frames and handed to the generation
worker through a depth-1 queue, so the condition/latent trace for a given
frame stream is reproducible offline (``run_offline``) and the live
generator back-pressures by skipping snapshots instead of queueing them.

A packet log is repeated [u64 LE receive-timestamp (ns)][framed packet
bytes including the 0x00 delimiter].
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from . import diffusion, sonify
from .conditioning import ActivityConfig, ActivityWindow, Condition, window_condition
from .fusion import AttitudeTracker
from .simdevice import PanelEvent, Scenario, VirtualDevice, InvalidEvent
from .wire import FrameSplitter, SensorFrame, decode_frame, encode_frame, WireError

log = logging.getLogger("mindcube")

RECONNECT_BASE_S = 0.5
RECONNECT_MAX_S = 8.0
CLIENT_BACKLOG_LIMIT = 1 << 20  # bytes queued per slow CSV client
AUDIO_QUEUE_DEPTH = 3
TELEMETRY_PERIOD_S = 0.1


class BindFailed(Exception):
    """Server socket could not bind its port."""


class SourceLost(Exception):
    """Frame source disconnected and reconnection gave up."""


@dataclass(frozen=True)
class PipelineConfig:
    scenario: str = "idle"
    seed: int = 0
    rate_hz: float = 20.0
    sensor_read_period_s: float = 1.0
    generation_budget_s: float = 1.05
    steps: int = diffusion.DEFAULT_STEPS
    gamma: float = diffusion.DEFAULT_GAMMA
    keep: int = diffusion.DEFAULT_KEEP
    length: int = diffusion.DEFAULT_LENGTH
    alpha: float = 0.98
    tcp_port: int = 7000
    ws_port: int = 7001
    simulated_latency_s: float = 0.0
    activity: ActivityConfig = field(default_factory=ActivityConfig)

    def __post_init__(self):
        if self.sensor_read_period_s <= 0:
            raise ValueError("sensor_read_period_s must be > 0")
        if self.generation_budget_s <= 0:
            raise ValueError("generation_budget_s must be > 0")
        if self.keep >= self.length:
            raise ValueError(f"keep {self.keep} must be < length {self.length}")

    @classmethod
    def from_mapping(cls, conf: dict, **overrides) -> "PipelineConfig":
        kw = {}
        floats = {"sensor_read_period_s": "sensor_read_period_s",
                  "generation_budget_s": "generation_budget_s",
                  "simulated_latency_s": "simulated_latency_s",
                  "diffusion.gamma": "gamma",
                  "fusion.alpha": "alpha",
                  "rate_hz": "rate_hz"}
        ints = {"diffusion.steps": "steps", "diffusion.keep": "keep",
                "diffusion.length": "length",
                "tcp_port": "tcp_port", "ws_port": "ws_port", "seed": "seed"}
        for key, attr in floats.items():
            if key in conf:
                kw[attr] = float(conf[key])
        for key, attr in ints.items():
            if key in conf:
                kw[attr] = int(conf[key])
        if "scenario" in conf:
            kw["scenario"] = conf["scenario"]
        kw["activity"] = ActivityConfig.from_mapping(conf)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class PipelineStats:
    """Counters and recent timings, guarded by one lock."""

    frames_ingested: int = 0
    seq_gaps: int = 0
    snapshots_taken: int = 0
    snapshots_skipped: int = 0
    generations: int = 0
    overruns: int = 0
    audio_dropped: int = 0
    last_generation_s: float = 0.0
    last_audio_rms: float = 0.0
    last_activity: float = 0.0
    last_condition: float = 1.0
    conditions: list[float] = field(default_factory=list)
    emit_times: deque = field(default_factory=lambda: deque(maxlen=4096))

    def emit_intervals(self) -> list[float]:
        times = list(self.emit_times)
        return [b - a for a, b in zip(times, times[1:])]


class CsvBroadcaster:
    """TCP fan-out of the CSV control stream.

    ``broadcast`` never blocks the caller: each client has a private
    byte queue drained by its own sender thread, and a client whose
    backlog exceeds CLIENT_BACKLOG_LIMIT is disconnected.
    """

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            raise BindFailed(f"CSV port {port}: {exc}") from exc
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._clients: list[_CsvClient] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="csv-accept", daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _CsvClient(conn)
            with self._lock:
                self._clients.append(client)
            log.info("csv client connected: %s", addr)

    def broadcast(self, data: bytes) -> None:
        with self._lock:
            clients = list(self._clients)
        dead = []
        for client in clients:
            if not client.offer(data):
                dead.append(client)
        if dead:
            with self._lock:
                for client in dead:
                    if client in self._clients:
                        self._clients.remove(client)
            for client in dead:
                if not client.closed:
                    log.warning("csv client dropped at %d bytes backlog",
                                CLIENT_BACKLOG_LIMIT)
                client.close()

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def close(self):
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for client in clients:
            client.close()


class _CsvClient:
    def __init__(self, conn: socket.socket):
        self._conn = conn
        self._queue: deque[bytes] = deque()
        self._backlog = 0
        self._cv = threading.Condition()
        self._closed = False
        self._thread = threading.Thread(target=self._sender, daemon=True)
        self._thread.start()

    @property
    def closed(self) -> bool:
        return self._closed

    def offer(self, data: bytes) -> bool:
        with self._cv:
            if self._closed:
                return False
            if self._backlog + len(data) > CLIENT_BACKLOG_LIMIT:
                return False
            self._queue.append(data)
            self._backlog += len(data)
            self._cv.notify()
        return True

    def _sender(self):
        while True:
            with self._cv:
                while not self._queue and not self._closed:
                    self._cv.wait(timeout=0.5)
                if self._closed and not self._queue:
                    return
                chunk = self._queue.popleft()
                self._backlog -= len(chunk)
            try:
                self._conn.sendall(chunk)
            except OSError:
                self.close()
                return

    def close(self):
        with self._cv:
            self._closed = True
            self._queue.clear()
            self._backlog = 0
            self._cv.notify_all()
        try:
            self._conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._conn.close()
        except OSError:
            pass


@dataclass
class _Snapshot:
    window: tuple
    cycle: int


class Pipeline:
    """Owns the fusion filter, conditioning ring, and generation worker."""

    def __init__(self, config: PipelineConfig,
                 device: Optional[VirtualDevice] = None,
                 frame_source: Optional["TcpFrameSource"] = None,
                 denoiser: Optional[diffusion.Denoiser] = None,
                 broadcaster: Optional[CsvBroadcaster] = None,
                 wav_dir=None,
                 record_path=None):
        self.config = config
        self.frame_source = frame_source
        self.device = device or VirtualDevice(
            Scenario(config.scenario, config.seed), config.rate_hz)
        self.schedule = diffusion.make_schedule(config.steps)
        self.denoiser = denoiser or diffusion.EnergyCodedDenoiser(self.schedule)
        self.broadcaster = broadcaster
        self.wav_dir = wav_dir
        self.stats = PipelineStats()
        self.audio_queue: deque[sonify.AudioBuffer] = deque(maxlen=AUDIO_QUEUE_DEPTH)
        self._tracker = AttitudeTracker(config.alpha, config.rate_hz)
        self._window = ActivityWindow(config.activity)
        self._read_period_frames = max(
            1, round(config.sensor_read_period_s * config.rate_hz))
        self._encoder_position = 0
        self._last_seq: Optional[int] = None
        self._frames_since_snapshot = 0
        self._cycle = 0
        self._previous_latents: Optional[np.ndarray] = None
        self._job: "deque[_Snapshot]" = deque(maxlen=1)
        self._job_cv = threading.Condition()
        self._skip_next_job = False
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._record_fh = open(record_path, "wb") if record_path else None
        self._record_t0 = time.monotonic_ns()
        self._latest_frame: Optional[SensorFrame] = None
        self._latest_attitude = None
        self.saved_latents: list[np.ndarray] = []

    # frame path -----------------------------------------------------------

    def process_frame(self, frame: SensorFrame, inline_generation: bool = False) -> None:
        """Run one frame through fusion, control emission, and snapshotting."""
        if self._record_fh is not None:
            stamp = time.monotonic_ns() - self._record_t0
            self._record_fh.write(struct.pack("<Q", stamp))
            self._record_fh.write(encode_frame(frame))

        if self._last_seq is not None and (frame.seq - self._last_seq) % 256 != 1:
            self.stats.seq_gaps += 1
            log.warning("seq gap: %d -> %d", self._last_seq, frame.seq)
        self._last_seq = frame.seq

        attitude = self._tracker.update(frame)
        self._encoder_position = (self._encoder_position + frame.encoder_delta) % 16
        self._window.push(frame)

        # live activity for the control stream and telemetry; the generation
        # path consumes its own window snapshots at the slow cadence
        if self._window.ready:
            activity, condition = window_condition(
                self._window.snapshot(), self.config.activity)
            with self._lock:
                self.stats.last_activity = activity
                self.stats.last_condition = condition.value
        else:
            with self._lock:
                activity = self.stats.last_activity
                condition = Condition(self.stats.last_condition)
        cf = sonify.control_frame(attitude, frame, activity, condition,
                                  self._encoder_position)
        line = sonify.serialize_csv(cf).encode("ascii")
        if self.broadcaster is not None:
            self.broadcaster.broadcast(line)
        now = time.perf_counter()
        with self._lock:
            self.stats.frames_ingested += 1
            self.stats.emit_times.append(now)
            self._latest_frame = frame
            self._latest_attitude = attitude

        self._frames_since_snapshot += 1
        if self._frames_since_snapshot >= self._read_period_frames and self._window.ready:
            self._frames_since_snapshot = 0
            snap = _Snapshot(window=self._window.snapshot(), cycle=self._cycle)
            self._cycle += 1
            if inline_generation:
                self.stats.snapshots_taken += 1
                self._generate(snap)
            else:
                with self._job_cv:
                    if len(self._job) < self._job.maxlen:
                        self._job.append(snap)
                        self.stats.snapshots_taken += 1
                        self._job_cv.notify()
                    else:
                        self.stats.snapshots_skipped += 1

    # generation path ------------------------------------------------------

    def _generate(self, snap: _Snapshot) -> None:
        started = time.perf_counter()
        _, condition = window_condition(snap.window, self.config.activity)
        with self._lock:
            self.stats.conditions.append(condition.value)

        guidance = diffusion.GuidanceConfig(self.config.gamma, condition)
        seed = (self.config.seed, snap.cycle)
        if self._previous_latents is None:
            latents = diffusion.sample(self.denoiser, self.schedule, guidance,
                                       length=self.config.length, seed=seed)
        else:
            latents = diffusion.outpaint_continuation(
                self._previous_latents, self.config.keep,
                denoiser=self.denoiser, schedule=self.schedule,
                guidance=guidance, length=self.config.length, seed=seed)
        self._previous_latents = latents
        self.saved_latents.append(latents)

        audio = sonify.render_latents(latents)
        rms = sonify.audio_rms(audio)
        if self.wav_dir is not None:
            sonify.write_wav(f"{self.wav_dir}/gen_{snap.cycle:04d}.wav", audio)
        if len(self.audio_queue) == self.audio_queue.maxlen:
            self.stats.audio_dropped += 1
            log.warning("audio queue full; dropping oldest generation")
        self.audio_queue.append(audio)

        elapsed = time.perf_counter() - started
        if self.config.simulated_latency_s > elapsed and not self._stop.is_set():
            time.sleep(self.config.simulated_latency_s - elapsed)
            elapsed = time.perf_counter() - started

        with self._lock:
            self.stats.generations += 1
            self.stats.last_generation_s = elapsed
            self.stats.last_audio_rms = rms
        if elapsed > 2.0 * self.config.generation_budget_s:
            self.stats.overruns += 1
            self._skip_next_job = True
            log.warning("generation overrun: %.2fs > 2x budget %.2fs; "
                        "skipping a cycle", elapsed, self.config.generation_budget_s)

    def _generation_loop(self):
        while not self._stop.is_set():
            with self._job_cv:
                while not self._job and not self._stop.is_set():
                    self._job_cv.wait(timeout=0.2)
                if self._stop.is_set():
                    return
                snap = self._job.popleft()
                if self._skip_next_job:
                    self._skip_next_job = False
                    continue
            self._generate(snap)

    # live / offline drivers -------------------------------------------------

    def _ingest_loop(self):
        if self.frame_source is not None:
            # remote-paced: the source blocks on the network and reconnects
            # with backoff on its own; the CSV stream pauses meanwhile
            for frame in self.frame_source.frames():
                if self._stop.is_set():
                    return
                self.process_frame(frame)
            return
        start = time.monotonic()
        i = 0
        period = 1.0 / self.config.rate_hz
        while not self._stop.is_set():
            # sleep to ~3 ms short of the deadline, then spin: scheduler
            # wakeup latency is the dominant jitter source otherwise
            deadline = start + i * period
            delay = deadline - time.monotonic() - 0.003
            if delay > 0:
                time.sleep(delay)
            while time.monotonic() < deadline:
                pass
            frame = self.device.next_frame()
            self.process_frame(frame)
            i += 1

    def start(self) -> None:
        """Start the live ingest and generation workers."""
        # short switch interval bounds how long pure-Python stretches in the
        # generation worker can delay the 20 Hz control path
        sys.setswitchinterval(0.002)
        self._threads = [
            threading.Thread(target=self._ingest_loop, name="ingest", daemon=True),
            threading.Thread(target=self._generation_loop, name="generate", daemon=True),
        ]
        for t in self._threads:
            t.start()

    def stop(self) -> None:
        self._stop.set()
        if self.frame_source is not None:
            self.frame_source.stop.set()
        with self._job_cv:
            self._job_cv.notify_all()
        for t in self._threads:
            t.join(timeout=5.0)
        if self._record_fh is not None:
            self._record_fh.close()
            self._record_fh = None

    def run_offline(self, frames: Iterable[SensorFrame]) -> None:
        """Deterministic sequential run: generation happens inline."""
        for frame in frames:
            self.process_frame(frame, inline_generation=True)

    # telemetry ---------------------------------------------------------------

    def telemetry_snapshot(self) -> dict:
        with self._lock:
            frame = self._latest_frame
            attitude = self._latest_attitude
            snap = {
                "activity": self.stats.last_activity,
                "condition": self.stats.last_condition,
                "last_generation_s": self.stats.last_generation_s,
                "last_audio_rms": self.stats.last_audio_rms,
                "generations": self.stats.generations,
                "frames": self.stats.frames_ingested,
            }
        snap["attitude"] = {
            "pitch_deg": np.degrees(attitude.pitch) if attitude else 0.0,
            "roll_deg": np.degrees(attitude.roll) if attitude else 0.0,
        }
        if frame is not None:
            jx, jy = frame.joy_xy()
            snap.update(joy_x=jx, joy_y=jy, buttons=frame.buttons,
                        encoder_position=self._encoder_position, seq=frame.seq)
        return snap


# record / replay --------------------------------------------------------------


def read_packet_log(path) -> Iterator[tuple[int, SensorFrame]]:
    """Yield (timestamp_ns, frame) pairs from a packet log."""
    splitter = FrameSplitter()
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    while pos + 8 <= len(blob):
        (stamp,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        end = blob.find(b"\x00", pos)
        if end < 0:
            log.warning("packet log truncated at byte %d", pos)
            return
        frames = splitter.feed(blob[pos:end + 1])
        pos = end + 1
        for raw in frames:
            try:
                yield stamp, decode_frame(raw)
            except WireError as exc:
                log.warning("packet log: dropping bad frame (%s)", exc)


def record_scenario(path, scenario: Scenario, rate_hz: float, count: int) -> int:
    """Record ``count`` scenario frames to a packet log; returns frames written."""
    device = VirtualDevice(scenario, rate_hz)
    period_ns = int(1e9 / rate_hz)
    with open(path, "wb") as fh:
        for i, packet in enumerate(device.packets(count)):
            fh.write(struct.pack("<Q", i * period_ns))
            fh.write(packet)
    return count


# TCP frame transport -----------------------------------------------------------


def serve_device_tcp(device: VirtualDevice, port: int, host: str = "127.0.0.1",
                     stop: Optional[threading.Event] = None) -> tuple[int, threading.Thread]:
    """Pace the device at rate_hz and stream framed packets to one client."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        raise BindFailed(f"device port {port}: {exc}") from exc
    sock.listen(1)
    bound_port = sock.getsockname()[1]
    stop = stop or threading.Event()

    def loop():
        period = 1.0 / device.rate_hz
        while not stop.is_set():
            try:
                sock.settimeout(0.5)
                conn, _ = sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            start = time.monotonic()
            i = 0
            try:
                while not stop.is_set():
                    deadline = start + i * period
                    delay = deadline - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                    conn.sendall(encode_frame(device.next_frame()))
                    i += 1
            except OSError:
                log.info("device tcp client disconnected")
            finally:
                conn.close()

    thread = threading.Thread(target=loop, name="device-tcp", daemon=True)
    thread.start()
    return bound_port, thread


class TcpFrameSource:
    """Client side of a framed packet stream, reconnecting with backoff."""

    def __init__(self, host: str, port: int,
                 stop: Optional[threading.Event] = None,
                 max_retries: Optional[int] = None):
        self.host = host
        self.port = port
        self.stop = stop or threading.Event()
        self.max_retries = max_retries
        self.reconnects = 0

    def frames(self) -> Iterator[SensorFrame]:
        backoff = RECONNECT_BASE_S
        retries = 0
        while not self.stop.is_set():
            try:
                sock = socket.create_connection((self.host, self.port), timeout=2.0)
            except OSError:
                retries += 1
                if self.max_retries is not None and retries > self.max_retries:
                    raise SourceLost(
                        f"{self.host}:{self.port} unreachable after {retries - 1} retries")
                time.sleep(min(backoff, RECONNECT_MAX_S))
                backoff = min(backoff * 2.0, RECONNECT_MAX_S)
                continue
            retries = 0
            backoff = RECONNECT_BASE_S
            self.reconnects += 1
            sock.settimeout(1.0)
            splitter = FrameSplitter()
            try:
                while not self.stop.is_set():
                    try:
                        chunk = sock.recv(4096)
                    except socket.timeout:
                        continue
                    if not chunk:
                        break
                    for raw in splitter.feed(chunk):
                        try:
                            yield decode_frame(raw)
                        except WireError as exc:
                            log.warning("dropping bad frame: %s", exc)
            finally:
                sock.close()
            log.warning("frame source lost; reconnecting")


# panel websocket ---------------------------------------------------------------


class PanelServer:
    """WebSocket endpoint: panel events in, telemetry JSON out at 10 Hz."""

    def __init__(self, port: int, pipeline: Pipeline, host: str = "127.0.0.1",
                 telemetry_period_s: float = TELEMETRY_PERIOD_S):
        self.host = host
        self.port = port
        self.pipeline = pipeline
        self.telemetry_period_s = telemetry_period_s
        self._thread: Optional[threading.Thread] = None
        self._loop = None
        self._ready = threading.Event()
        self._failure: Optional[BaseException] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="panel-ws", daemon=True)
        self._thread.start()
        self._ready.wait(timeout=5.0)
        if self._failure is not None:
            raise BindFailed(f"ws port {self.port}: {self._failure}")

    def _run(self):
        import asyncio

        from websockets.asyncio.server import serve

        async def handler(ws):
            async for message in ws:
                try:
                    payload = json.loads(message)
                    event = PanelEvent.from_dict(payload)
                except (json.JSONDecodeError, InvalidEvent, TypeError) as exc:
                    await ws.send(json.dumps({"error": str(exc)}))
                    continue
                self.pipeline.device.apply_panel_event(event)
                await ws.send(json.dumps({"ok": event.kind}))

        async def main():
            clients = set()
            stop_event = asyncio.Event()
            self._stop_event = stop_event

            async def tracking_handler(ws):
                clients.add(ws)
                try:
                    await handler(ws)
                finally:
                    clients.discard(ws)

            async def telemetry_loop():
                while True:
                    payload = json.dumps(
                        {"telemetry": self.pipeline.telemetry_snapshot()})
                    for ws in list(clients):
                        try:
                            await ws.send(payload)
                        except Exception:
                            clients.discard(ws)
                    await asyncio.sleep(self.telemetry_period_s)

            try:
                server = await serve(tracking_handler, self.host, self.port)
            except OSError as exc:
                self._failure = exc
                self._ready.set()
                return
            if self.port == 0:
                self.port = server.sockets[0].getsockname()[1]
            self._ready.set()
            task = asyncio.create_task(telemetry_loop())
            try:
                await stop_event.wait()
            finally:
                task.cancel()
                server.close()
                await server.wait_closed()

        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(main())
        except Exception as exc:
            if not self._ready.is_set():
                self._failure = exc
                self._ready.set()
        finally:
            self._loop.close()

    def stop(self) -> None:
        loop = self._loop
        stop_event = getattr(self, "_stop_event", None)
        if loop is not None and stop_event is not None and loop.is_running():
            loop.call_soon_threadsafe(stop_event.set)
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def run_pipeline(config: PipelineConfig, *, wav_dir=None, record_path=None,
                 denoiser=None, with_network: bool = True,
                 device: Optional[VirtualDevice] = None,
                 frame_source: Optional[TcpFrameSource] = None,
                 ) -> tuple[Pipeline, Optional[CsvBroadcaster], Optional[PanelServer]]:
    """Assemble and start the full live pipeline; caller owns shutdown."""
    broadcaster = CsvBroadcaster(config.tcp_port) if with_network else None
    pipeline = Pipeline(config, device=device, frame_source=frame_source,
                        denoiser=denoiser, broadcaster=broadcaster,
                        wav_dir=wav_dir, record_path=record_path)
    panel = None
    if with_network:
        panel = PanelServer(config.ws_port, pipeline)
        panel.start()
    pipeline.start()
    return pipeline, broadcaster, panel
