"""Command-line entry points: run, replay, synth, dict, bench."""

from __future__ import annotations

import argparse
import os
import sys

from . import engine, streaming


def _load_config(path: str) -> engine.TrackerConfig:
    with open(path, encoding="utf-8") as fh:
        return engine.load_config(fh.read())


def _open_source(path: str):
    """dir -> image sequence, raw container -> video, anything else -> scene."""
    if os.path.isdir(path):
        return engine.ImageDirectorySource(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == engine.RAW_VIDEO_MAGIC:
        return engine.RawVideoSource(path)
    from .synthetic import load_scene

    with open(path, encoding="utf-8") as fh:
        return engine.SyntheticSource(load_scene(fh.read()))


def _drain(runtime: engine.TrackerRuntime, source, sink=None) -> int:
    frames = 0
    while (frame := source.next_frame()) is not None:
        records = runtime.process_frame(frame)
        if sink is not None:
            sink(streaming.encode_record(frame.frame_index, frame.timestamp_us, records))
        frames += 1
    return frames


def _rate_csv(runtime: engine.TrackerRuntime, out=sys.stdout):
    print("object_id,frames,detected,rate", file=out)
    for oid, tracker in sorted(runtime.rates.items()):
        detected = sum(tracker.window)
        n = min(tracker.frames_seen, engine.RATE_WINDOW)
        print(f"{oid},{n},{detected},{tracker.rate:.6f}", file=out)


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    control_port = int(
        os.environ.get("FIDTRACK_CONTROL_PORT", args.control_port or cfg.control.port)
    )
    runtime = engine.TrackerRuntime(cfg)
    source = _open_source(args.source)

    stream_server = None
    if cfg.stream.kind == "unix" and cfg.stream.path:
        stream_server = streaming.PoseStreamServer("unix", path=cfg.stream.path)
    elif cfg.stream.kind == "tcp" and cfg.stream.port:
        stream_server = streaming.PoseStreamServer("tcp", port=cfg.stream.port)
    api = (
        streaming.ControlApiServer(runtime, port=control_port, ui_dir=args.ui_dir)
        if control_port
        else None
    )
    try:
        sink = stream_server.publish if stream_server else sys.stdout.buffer.write
        frames = _drain(runtime, source, sink)
        if stream_server:
            print(f"processed {frames} frames", file=sys.stderr)
        _rate_csv(runtime, sys.stderr)
    finally:
        if stream_server:
            stream_server.close()
        if api:
            api.close()
    return 0


def cmd_replay(args) -> int:
    cfg = _load_config(args.config)
    runtime = engine.TrackerRuntime(cfg)
    source = engine.RawVideoSource(args.video)
    lines = []
    _drain(runtime, source, lines.append)
    produced = b"".join(lines)
    with open(args.golden, "rb") as fh:
        expected = fh.read()
    if produced == expected:
        print(f"replay matches golden ({len(lines)} frames)")
        return 0
    print("replay MISMATCH against golden:", file=sys.stderr)
    got = produced.split(b"\n")
    want = expected.split(b"\n")
    for i in range(max(len(got), len(want))):
        g = got[i] if i < len(got) else b"<missing>"
        w = want[i] if i < len(want) else b"<missing>"
        if g != w:
            print(f"  first difference at line {i}:", file=sys.stderr)
            print(f"    got:  {g.decode(errors='replace')}", file=sys.stderr)
            print(f"    want: {w.decode(errors='replace')}", file=sys.stderr)
            break
    return 1


def cmd_synth(args) -> int:
    from .synthetic import load_scene, render_frame

    with open(args.script, encoding="utf-8") as fh:
        script = load_scene(fh.read())
    frames = (render_frame(script, i)[0] for i in range(script.frame_count))
    n = engine.write_raw_video(args.out, frames)
    print(f"wrote {n} frames to {args.out}")
    return 0


def cmd_dict(args) -> int:
    from .binary_marker import generate_dictionary

    dic = generate_dictionary(
        count=args.count, grid_n=args.grid, d_min=args.dmin, seed=args.seed
    )
    text = dic.export_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    import time

    cfg = _load_config(args.config)
    runtime = engine.TrackerRuntime(cfg)
    source = engine.RawVideoSource(args.video)
    start = time.perf_counter()
    frames = _drain(runtime, source)
    total = time.perf_counter() - start
    print(f"# frames: {frames}  total: {total:.3f}s  per-frame: {total / max(frames, 1) * 1e3:.2f}ms")
    for stage, seconds in runtime.stage_seconds.items():
        print(f"# stage {stage}: {seconds:.3f}s ({seconds / max(frames, 1) * 1e3:.2f}ms/frame)")
    _rate_csv(runtime)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fidtrack", description="Fiducial marker tracking pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a source, streaming pose records")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True, help="image dir, raw video, or scene script")
    p.add_argument("--control-port", type=int, default=None)
    p.add_argument("--ui-dir", default=None, help="static UI assets served under /ui/")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="verify a video against a golden pose stream")
    p.add_argument("--config", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--golden", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("synth", help="render a scene script to a raw video")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dict", help="generate a marker dictionary")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dmin", type=int, default=4)
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dict)

    p = sub.add_parser("bench", help="timings and detection-rate CSV for a video")
    p.add_argument("--config", required=True)
    p.add_argument("--video", required=True)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
