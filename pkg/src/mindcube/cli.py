"""Command-line entry points.

Subcommands: ``run`` (live pipeline), ``record`` (log framed packets),
``replay`` (deterministic offline re-run of a packet log), ``render``
(latent file to WAV), ``selftest`` (oracle checks).
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
import time
from pathlib import Path

from . import diffusion, sonify
from .config import load_config
from .server import (PipelineConfig, Pipeline, read_packet_log,
                     record_scenario, run_pipeline)
from .simdevice import SCENARIO_NAMES, Scenario


def _add_common(parser):
    parser.add_argument("--scenario", choices=SCENARIO_NAMES, default="idle")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rate", type=float, default=20.0, help="frame rate in Hz")
    parser.add_argument("--config", help="key=value config file")


def _pipeline_config(args, **overrides) -> PipelineConfig:
    conf = load_config(args.config) if args.config else {}
    return PipelineConfig.from_mapping(
        conf, scenario=args.scenario, seed=args.seed, rate_hz=args.rate,
        **overrides)


def _cmd_run(args) -> int:
    overrides = {}
    if args.tcp_port is not None:
        overrides["tcp_port"] = args.tcp_port
    if args.ws_port is not None:
        overrides["ws_port"] = args.ws_port
    if args.simulated_latency is not None:
        overrides["simulated_latency_s"] = args.simulated_latency
    config = _pipeline_config(args, **overrides)

    wav_dir = args.wav_out
    if wav_dir:
        Path(wav_dir).mkdir(parents=True, exist_ok=True)

    frame_source = None
    if args.source:
        from .server import TcpFrameSource

        spec = args.source
        if spec.startswith("tcp:"):
            spec = spec[4:].lstrip("/")
        host, _, port = spec.partition(":")
        if not port:
            raise SystemExit(f"--source must be tcp:HOST:PORT, got {args.source!r}")
        frame_source = TcpFrameSource(host, int(port))

    pipeline, broadcaster, panel = run_pipeline(
        config, wav_dir=wav_dir, record_path=args.record,
        frame_source=frame_source)
    print(f"csv control stream: tcp://127.0.0.1:{broadcaster.port}")
    print(f"panel websocket:    ws://127.0.0.1:{panel.port}")

    httpd = None
    if args.panel_dir and not args.headless:
        import functools
        import http.server

        handler = functools.partial(http.server.SimpleHTTPRequestHandler,
                                    directory=args.panel_dir)
        httpd = http.server.ThreadingHTTPServer(("127.0.0.1", args.http_port), handler)
        threading.Thread(target=httpd.serve_forever, daemon=True).start()
        print(f"panel page:         http://127.0.0.1:{httpd.server_address[1]}/")

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    deadline = time.monotonic() + args.duration if args.duration else None
    while not stop.is_set():
        if deadline is not None and time.monotonic() >= deadline:
            break
        time.sleep(0.1)

    pipeline.stop()
    if panel:
        panel.stop()
    if broadcaster:
        broadcaster.close()
    if httpd:
        httpd.shutdown()
    s = pipeline.stats
    print(f"frames={s.frames_ingested} generations={s.generations} "
          f"skipped={s.snapshots_skipped} last_rms={s.last_audio_rms:.4f}")
    return 0


def _cmd_record(args) -> int:
    scenario = Scenario(args.scenario, args.seed)
    count = int(args.duration * args.rate)
    written = record_scenario(args.file, scenario, args.rate, count)
    print(f"recorded {written} frames to {args.file}")
    return 0


def _cmd_replay(args) -> int:
    config = _pipeline_config(args, simulated_latency_s=0.0)
    pipeline = Pipeline(config)
    frames = (frame for _, frame in read_packet_log(args.file))
    pipeline.run_offline(frames)

    if args.latents_out:
        out = Path(args.latents_out)
        out.mkdir(parents=True, exist_ok=True)
        for i, z in enumerate(pipeline.saved_latents):
            diffusion.save_mclz(out / f"gen_{i:04d}.mclz", z)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            for c in pipeline.stats.conditions:
                fh.write(f"{c!r}\n")
    print(f"frames={pipeline.stats.frames_ingested} "
          f"generations={pipeline.stats.generations}")
    for i, c in enumerate(pipeline.stats.conditions):
        print(f"condition[{i}] = {c!r}")
    return 0


def _cmd_render(args) -> int:
    latents = diffusion.load_mclz(args.file)
    audio = sonify.render_latents(latents, hop=args.hop)
    sonify.write_wav(args.out, audio)
    print(f"{args.out}: {len(audio.samples)} samples, {audio.duration_s:.2f} s, "
          f"rms {sonify.audio_rms(audio):.4f}")
    return 0


def _cmd_selftest(args) -> int:
    import numpy as np

    from . import wire

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    check("cobs vector [11 22 00 33]",
          wire.cobs_encode(bytes([0x11, 0x22, 0x00, 0x33]))
          == bytes([0x03, 0x11, 0x22, 0x02, 0x33]))
    check("cobs round-trip", all(
        wire.cobs_decode(wire.cobs_encode(bytes(range(1, n + 1)))) == bytes(range(1, n + 1))
        for n in range(0, 64)))
    check("crc16 check value 0x29B1", wire.crc16(b"123456789") == 0x29B1)

    sch = diffusion.make_schedule(30)
    ab = sch.alpha_bar
    check("schedule endpoints", ab[0] == 1.0 and 0.0 < ab[-1] < 1e-3)
    check("schedule strictly decreasing", bool(np.all(np.diff(ab) < 0)))

    den = diffusion.GaussianOracleDenoiser(sch, 0.0, 1.0)
    z = diffusion.sample(den, sch, None, length=1024, seed=3)
    check("gaussian oracle marginals",
          abs(float(z.mean())) < 0.05 and abs(float(z.std()) - 1.0) < 0.05)

    audio = sonify.render_latents(np.zeros((32, 4)))
    check("renderer duration arithmetic", len(audio.samples) == 32 * 2048)
    check(f"render backend [{sonify.RENDER_BACKEND}]", True)
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mindcube")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the live pipeline")
    _add_common(p_run)
    p_run.add_argument("--tcp-port", type=int, default=None)
    p_run.add_argument("--ws-port", type=int, default=None)
    p_run.add_argument("--wav-out", help="directory for rendered WAV files")
    p_run.add_argument("--headless", action="store_true",
                       help="no static panel serving")
    p_run.add_argument("--duration", type=float, default=None,
                       help="stop after N seconds (default: run until SIGINT)")
    p_run.add_argument("--simulated-latency", type=float, default=None,
                       help="artificial generation latency in seconds")
    p_run.add_argument("--record", help="log framed packets to FILE while running")
    p_run.add_argument("--source", help="ingest frames from tcp:HOST:PORT instead "
                                        "of the built-in simulator")
    p_run.add_argument("--panel-dir", help="serve this directory as the panel page")
    p_run.add_argument("--http-port", type=int, default=7002)
    p_run.set_defaults(func=_cmd_run)

    p_rec = sub.add_parser("record", help="log framed scenario packets")
    _add_common(p_rec)
    p_rec.add_argument("file")
    p_rec.add_argument("--duration", type=float, default=10.0, help="seconds")
    p_rec.set_defaults(func=_cmd_record)

    p_rep = sub.add_parser("replay", help="re-run a packet log offline")
    _add_common(p_rep)
    p_rep.add_argument("file")
    p_rep.add_argument("--latents-out", help="directory for MCLZ latent files")
    p_rep.add_argument("--trace-out", help="write the condition trace to FILE")
    p_rep.set_defaults(func=_cmd_replay)

    p_ren = sub.add_parser("render", help="render an MCLZ latent file to WAV")
    p_ren.add_argument("file")
    p_ren.add_argument("--out", required=True)
    p_ren.add_argument("--hop", type=int, default=sonify.DEFAULT_HOP)
    p_ren.set_defaults(func=_cmd_render)

    p_self = sub.add_parser("selftest", help="run built-in oracle checks")
    p_self.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
