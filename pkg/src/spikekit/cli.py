"""``spikekit`` command line: simulate, reconstruct, play, bench, inspect.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import threading
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .codec import StreamMeta, load_stream, meta_path_for, read_dat, read_meta, write_dat, write_meta
from .imageio import IMAGE_SUFFIXES, read_gray, write_gray
from .metrics import psnr, ssim, throughput_report
from .pipeline import (
    Pipeline,
    PipelineConfig,
    PipelineStats,
    RawBlock,
    block_file_source,
    iter_stream_blocks,
    replay_source,
    run_source,
    serve_blocks,
    socket_source,
)
from .reconstruction import brighten, median_despike, sliding_tfp, tfi, tfp
from .simulator import SensorConfig, simulate
from .stream import SpikeStream, StreamGeometry, spike_count_map

log = logging.getLogger("spikekit")


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


# ---------------------------------------------------------------------------
# argument helpers


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or math.isinf(value):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _rate_list(text: str) -> list[float]:
    return [_positive_float(t) for t in text.split(",") if t.strip()]


class Output:
    """Collects key/value results; prints them as lines or one JSON object."""

    def __init__(self, args: argparse.Namespace):
        self.json = args.json
        self.quiet = args.quiet
        self.data: dict = {}

    def config(self, args: argparse.Namespace) -> None:
        cfg = {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in ("func",)}
        if self.json:
            self.data["config"] = cfg
        elif not self.quiet:
            for k, v in cfg.items():
                print(f"# {k}={v}")

    def put(self, key: str, value) -> None:
        self.data[key] = _plain(value)
        if not self.json:
            print(f"{key}={_fmt(value)}")

    def note(self, text: str) -> None:
        if not self.json and not self.quiet:
            print(text)

    def finish(self) -> None:
        if self.json:
            print(json.dumps(self.data, indent=2, sort_keys=False))


def _plain(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _load(dat: Path, meta_path: Path | None) -> tuple[SpikeStream, StreamMeta]:
    if not dat.exists():
        raise CliError(f"spike file not found: {dat}")
    meta_file = meta_path or meta_path_for(dat)
    if not meta_file.exists():
        raise CliError(f"metadata not found: {meta_file} (pass --meta)")
    return load_stream(dat, meta_file)


# ---------------------------------------------------------------------------
# simulate


def _list_images(images_dir: Path) -> list[Path]:
    if not images_dir.is_dir():
        raise CliError(f"image directory not found: {images_dir}")
    images = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise CliError(f"no .pgm/.png images in {images_dir}")
    return images


def cmd_simulate(args, out: Output) -> None:
    paths = _list_images(args.images_dir)
    frames = [read_gray(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise CliError(f"images differ in size: {sorted(shapes)}")
    h, w = frames[0].shape
    config = SensorConfig.from_gain_tau(h, w, args.gain_tau, args.theta, args.polling_interval_us,
                                        args.noise)
    stream = simulate(frames, args.repeats, config, initial=args.initial, seed=args.seed)
    stem = Path(args.out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    dat = stem.with_suffix(".dat")
    write_dat(stream, dat)
    write_meta(StreamMeta(w, h, args.polling_interval_us, "raw",
                          {"source": str(args.images_dir), "theta": f"{args.theta:g}",
                           "gain_tau": f"{args.gain_tau:g}", "repeats": str(args.repeats)}),
               meta_path_for(dat))
    counts = spike_count_map(stream, 0, stream.num_steps)
    out.put("dat", dat)
    out.put("frames", stream.num_steps)
    out.put("height", h)
    out.put("width", w)
    out.put("spikes", int(counts.sum()))
    out.put("count_min", int(counts.min()))
    out.put("count_max", int(counts.max()))
    out.put("count_mean", float(counts.mean()))


# ---------------------------------------------------------------------------
# reconstruct


def _numbered(path: Path, i: int) -> Path:
    return path.with_name(f"{path.stem}_{i:04d}{path.suffix}")


def cmd_reconstruct(args, out: Output) -> None:
    stream, _ = _load(args.dat, args.meta)
    if args.despike:
        stream = median_despike(stream)
    if args.method == "tfp":
        window = args.window if args.window is not None else min(255, stream.num_steps)
        if window < 1 or args.start + window > stream.num_steps:
            raise CliError(f"window [{args.start}, {args.start + window}) exceeds stream of "
                           f"{stream.num_steps} frames")
        if args.stride:
            images = sliding_tfp(stream, window, args.stride, args.full_scale)
        else:
            images = [tfp(stream, args.start, window, args.full_scale)]
    else:
        anchor = args.anchor if args.anchor is not None else stream.num_steps // 2
        if not 0 <= anchor < stream.num_steps:
            raise CliError(f"anchor {anchor} outside stream of {stream.num_steps} frames")
        images = [tfi(stream, anchor, args.max_search, args.full_scale or 255.0)]

    if args.gamma != 1:
        images = [brighten(img, args.gamma) for img in images]

    gt = read_gray(args.gt) if args.gt else None
    written = []
    for i, img in enumerate(images):
        if args.out is not None:
            path = _numbered(args.out, i) if len(images) > 1 else args.out
            path.parent.mkdir(parents=True, exist_ok=True)
            write_gray(img.pixels, path)
            written.append(path)
    out.put("method", args.method.upper())
    out.put("images", len(images))
    if written:
        out.put("out", [str(p) for p in written] if len(written) > 1 else written[0])
    first = images[0]
    out.put("window_start", first.window_start)
    out.put("window_len", first.window_len)
    out.put("mean_gray", float(first.pixels.mean()))
    if gt is not None:
        if gt.shape != first.pixels.shape:
            raise CliError(f"ground truth {gt.shape} does not match reconstruction {first.pixels.shape}")
        out.put("psnr_db", psnr(gt, first.pixels))
        out.put("ssim", ssim(gt, first.pixels))


# ---------------------------------------------------------------------------
# play


def _task_count(stream: SpikeStream) -> int:
    return stream.total_spikes()


def _task_tfp(stream: SpikeStream):
    return tfp(stream, 0, stream.num_steps)


def _task_tfi(stream: SpikeStream):
    return tfi(stream, stream.num_steps // 2, max(1, stream.num_steps // 2))


def _task_noop(stream: SpikeStream) -> int:
    return stream.num_steps


BUILTIN_TASKS: dict[str, Callable[[SpikeStream], object]] = {
    "count": _task_count,
    "tfp": _task_tfp,
    "tfi": _task_tfi,
    "noop": _task_noop,
}


def _with_cost(fn: Callable, cost_s: float) -> Callable:
    if cost_s <= 0:
        return fn

    def task(stream):
        result = fn(stream)
        time.sleep(cost_s)
        return result
    return task


def _build_tasks(task_list: str, cost_ms: float) -> dict[str, Callable]:
    names = [n.strip() for n in task_list.split(",") if n.strip()]
    if names == ["none"]:
        return {}
    tasks = {}
    for name in names:
        if name not in BUILTIN_TASKS:
            raise CliError(f"unknown task {name!r}; choose from {', '.join(BUILTIN_TASKS)} or none")
        tasks[name] = _with_cost(BUILTIN_TASKS[name], cost_ms / 1000.0)
    return tasks


def _run_pipeline(pipe: Pipeline, duration: float | None) -> PipelineStats:
    pipe.start()
    try:
        if duration is not None:
            if not pipe._done.wait(duration):
                pipe.stop()
        return pipe.wait()
    except KeyboardInterrupt:
        pipe.stop()
        pipe._done.wait()
        raise


def _report_stats(out: Output, stats: PipelineStats, log_indices: bool) -> None:
    for key, value in stats.as_dict().items():
        out.put(key, value)
    if stats.produced != stats.delivered + stats.dropped:
        raise CliError("conservation violated: produced != delivered + dropped")
    report = throughput_report(stats, max(stats.wall_time, 1e-9))
    out.put("drop_ratio", report.drop_ratio)
    if log_indices:
        for name, indices in stats.task_log.items():
            out.put(f"task.{name}.indices", indices)


def cmd_play(args, out: Output) -> None:
    config = PipelineConfig(t_cusum=args.t_cusum, block_frames=args.block_frames,
                            lib_capacity=args.lib_capacity, app_capacity=args.app_capacity)

    if args.serve is not None:
        if args.dat is None:
            raise CliError("--serve needs a spike file")
        stream, _ = _load(args.dat, args.meta)

        def ready(addr):
            out.note(f"# serving on {addr[0]}:{addr[1]}")
            sys.stdout.flush()
        sent = serve_blocks(stream, args.serve, args.rate, args.block_frames, ready=ready)
        out.put("blocks_sent", sent)
        out.put("frames", stream.num_steps)
        return

    if args.connect is not None:
        if args.meta is None:
            raise CliError("--connect needs --meta for the stream geometry")
        meta = read_meta(args.meta)
        source = socket_source(args.connect, meta.bytes_per_frame)
    else:
        if args.dat is None:
            raise CliError("need a spike file or --connect HOST:PORT")
        meta_file = args.meta or meta_path_for(args.dat)
        if not args.dat.exists():
            raise CliError(f"spike file not found: {args.dat}")
        if not meta_file.exists():
            raise CliError(f"metadata not found: {meta_file} (pass --meta)")
        meta = read_meta(meta_file)
        if args.dat.suffix == ".blk":
            source = block_file_source(args.dat, meta.bytes_per_frame, args.rate)
        else:
            read_dat(args.dat, meta, mmap=True)  # validate size up front
            source = replay_source(args.dat, meta, args.rate, args.block_frames)

    tasks = _build_tasks(args.tasks, args.task_cost_ms)
    pipe = Pipeline(source, meta.height, meta.width, tasks, config)
    stats = _run_pipeline(pipe, args.duration)

    if args.save_dir is not None and "tfp" in pipe.results:
        args.save_dir.mkdir(parents=True, exist_ok=True)
        for index, img in list(pipe.results["tfp"]):
            write_gray(img.pixels, args.save_dir / f"tfp_{index:06d}.pgm")
    _report_stats(out, stats, args.log_indices)


# ---------------------------------------------------------------------------
# bench


def synthetic_pool(height: int, width: int, distinct_frames: int, seed: int | None) -> np.ndarray:
    """Random packed frames with spike density 1/8 (AND of three uniform bytes)."""
    rng = np.random.default_rng(seed)
    shape = (distinct_frames, StreamGeometry(height, width).bytes_per_frame)
    pool = rng.integers(0, 256, shape, dtype=np.uint8)
    pool &= rng.integers(0, 256, shape, dtype=np.uint8)
    pool &= rng.integers(0, 256, shape, dtype=np.uint8)
    return pool


def synthetic_blocks(pool: np.ndarray, n_frames: int, block_frames: int):
    """Cycle ``pool`` (packed frames) into ``n_frames`` worth of blocks."""
    distinct = pool.shape[0]
    seq = sent = 0
    while sent < n_frames:
        n = min(block_frames, n_frames - sent)
        lo = sent % distinct
        if lo + n > distinct:
            lo = 0
        chunk = pool[lo:lo + n]
        yield RawBlock(seq, chunk.nbytes, 0, chunk)
        seq += 1
        sent += n


SUSTAIN_FRACTION = 0.99


def _bench_point(make_blocks: Callable, height: int, width: int, rate: float | None,
                 config: PipelineConfig, cost_ms: float) -> dict:
    bpf = StreamGeometry(height, width).bytes_per_frame
    counter = {"frames": 0}
    count_lock = threading.Lock()

    def count(stream: SpikeStream) -> int:
        with count_lock:
            counter["frames"] += stream.num_steps
        if cost_ms > 0:
            time.sleep(cost_ms / 1000.0)
        return stream.num_steps

    def source(sink, stop, stats):
        return run_source(make_blocks(), bpf, rate, sink, stop, stats)

    cfg = PipelineConfig(**{**vars(config), "keep_events": False})
    pipe = Pipeline(source, height, width, {"count": count}, cfg)
    stats = pipe.run()
    d = stats.as_dict()
    ingest = stats.ingest_fps()
    drop_ratio = (stats.dropped / stats.produced) if stats.produced else 0.0
    if rate is None:
        sustained = drop_ratio == 0
    else:
        # paced runs finish just after the last block is due, so allow 1% for
        # that tail; lateness must stay under one block period (no backlog)
        sustained = (drop_ratio == 0 and ingest >= SUSTAIN_FRACTION * rate
                     and d["source_max_lateness_s"] < config.block_frames / rate)
    return {
        "rate": rate if rate is not None else "max",
        "frames": stats.frames,
        "ingest_fps": ingest,
        "ingest_mb_s": ingest * bpf / 1e6,
        "unpacked_mb_s": ingest * height * width / 8 / 1e6,
        "drop_ratio": drop_ratio,
        "sustained": sustained,
        "produced": stats.produced,
        "delivered": stats.delivered,
        "dropped": stats.dropped,
        "max_lateness_s": d["source_max_lateness_s"],
        "wall_time_s": d["wall_time_s"],
    }


def cmd_bench(args, out: Output) -> None:
    config = PipelineConfig(t_cusum=args.t_cusum, block_frames=args.block_frames,
                            lib_capacity=args.lib_capacity, app_capacity=args.app_capacity)
    if args.dat is not None and not args.synthetic:
        stream, meta = _load(args.dat, args.meta)
        height, width = meta.height, meta.width

        def make_blocks():
            return iter_stream_blocks(stream, args.block_frames)
    else:
        height, width = args.height, args.width
        pool = synthetic_pool(height, width, max(args.block_frames, min(800, args.frames)), args.seed)

        def make_blocks():
            return synthetic_blocks(pool, args.frames, args.block_frames)

    rates: list[float | None] = list(args.rate_sweep)
    if not args.no_ceiling:
        rates.append(None)
    rows = []
    for rate in rates:
        row = _bench_point(make_blocks, height, width, rate, config, args.task_cost_ms)
        rows.append(row)
        if not out.json:
            print(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    if out.json:
        out.data["points"] = [{k: _plain(v) for k, v in r.items()} for r in rows]
    ceiling = max(r["ingest_fps"] for r in rows)
    out.put("ceiling_fps", ceiling)


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args, out: Output) -> None:
    stream, meta = _load(args.dat, args.meta)
    g = stream.geometry
    out.put("height", g.height)
    out.put("width", g.width)
    out.put("frames", g.num_steps)
    out.put("bytes_per_frame", g.bytes_per_frame)
    out.put("polling_interval_us", meta.polling_interval_us)
    out.put("duration_s", g.num_steps * meta.polling_interval_us / 1e6)
    total = stream.total_spikes()
    bits = g.num_steps * g.pixels
    out.put("spikes", total)
    out.put("density", total / bits if bits else 0.0)
    if g.num_steps:
        per_frame = np.bitwise_count(stream.packed).sum(axis=1, dtype=np.int64)
        pad = g.bytes_per_frame * 8 - g.pixels
        if pad:
            per_frame -= np.bitwise_count(stream.packed[:, -1] >> (8 - pad)).astype(np.int64)
        hist, edges = np.histogram(per_frame / g.pixels, bins=args.bins, range=(0.0, 1.0))
    else:
        hist, edges = np.zeros(args.bins, dtype=np.int64), np.linspace(0.0, 1.0, args.bins + 1)
    out.put("frame_density_edges", [float(e) for e in edges])
    out.put("frame_density_hist", [int(h) for h in hist])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--meta", type=Path, default=argparse.SUPPRESS,
                        help="metadata .info file (default: <stem>.info next to the spike file)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress the effective-config block")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="emit one JSON object instead of key=value lines")

    parser = argparse.ArgumentParser(prog="spikekit", parents=[common],
                                     description="Spike-camera stream engine.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="images -> spike stream")
    p.add_argument("images_dir", type=Path)
    p.add_argument("out_stem", type=Path, help="output path stem; writes <stem>.dat and <stem>.info")
    p.add_argument("--theta", type=_positive_float, default=255.0, help="firing threshold")
    p.add_argument("--gain-tau", type=_positive_float, default=1.0,
                   help="charge per polling step per unit intensity")
    p.add_argument("--repeats", type=_positive_int, default=255, help="polling steps per image")
    p.add_argument("--noise", type=float, default=0.0, help="accumulator noise std per step")
    p.add_argument("--polling-interval-us", type=_positive_float, default=25.0)
    p.add_argument("--initial", choices=("zeros", "uniform"), default="zeros")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", parents=[common], help="spike stream -> PGM image(s)")
    p.add_argument("dat", type=Path)
    p.add_argument("--method", choices=("tfp", "tfi"), default="tfp")
    p.add_argument("--start", type=_nonneg_int, default=0)
    p.add_argument("--window", type=_positive_int, default=None, help="TFP window (default min(255, T))")
    p.add_argument("--full-scale", type=_positive_int, default=None,
                   help="count (TFP) or interval numerator (TFI) mapping to gray 255")
    p.add_argument("--stride", type=_positive_int, default=None, help="sliding TFP stride")
    p.add_argument("--anchor", type=_nonneg_int, default=None, help="TFI anchor step (default T//2)")
    p.add_argument("--max-search", type=_positive_int, default=255)
    p.add_argument("--gamma", type=_positive_float, default=1.0)
    p.add_argument("--despike", action="store_true", help="3-step temporal median pre-filter")
    p.add_argument("--gt", type=Path, default=None, help="ground-truth image for PSNR/SSIM")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("play", parents=[common], help="run the real-time pipeline on a replayed stream")
    p.add_argument("dat", type=Path, nargs="?", default=None, help=".dat recording or .blk block stream")
    p.add_argument("--rate", type=_positive_float, default=40_000.0, help="polling frames per second")
    p.add_argument("--t-cusum", type=_positive_int, default=400)
    p.add_argument("--block-frames", type=_positive_int, default=400)
    p.add_argument("--lib-capacity", type=_positive_int, default=8)
    p.add_argument("--app-capacity", type=_nonneg_int, default=2)
    p.add_argument("--tasks", default="count", help="comma list of count,tfp,tfi,noop or 'none'")
    p.add_argument("--task-cost-ms", type=float, default=0.0, help="extra sleep per task call")
    p.add_argument("--duration", type=_positive_float, default=None, help="stop after this many seconds")
    p.add_argument("--save-dir", type=Path, default=None, help="write tfp task outputs here")
    p.add_argument("--log-indices", action="store_true", help="print each task's processed pieces")
    remote = p.add_mutually_exclusive_group()
    remote.add_argument("--serve", type=_address, default=None, help="serve the block stream on HOST:PORT")
    remote.add_argument("--connect", type=_address, default=None, help="consume a block stream from HOST:PORT")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("bench", parents=[common], help="ingestion throughput sweep")
    p.add_argument("dat", type=Path, nargs="?", default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--height", type=_positive_int, default=250)
    p.add_argument("--width", type=_positive_int, default=400)
    p.add_argument("--frames", type=_positive_int, default=40_000, help="frames per rate point")
    p.add_argument("--rate-sweep", type=_rate_list, default=[10_000.0, 20_000.0, 40_000.0])
    p.add_argument("--no-ceiling", action="store_true", help="skip the unpaced ceiling run")
    p.add_argument("--t-cusum", type=_positive_int, default=400)
    p.add_argument("--block-frames", type=_positive_int, default=400)
    p.add_argument("--lib-capacity", type=_positive_int, default=8)
    p.add_argument("--app-capacity", type=_nonneg_int, default=2)
    p.add_argument("--task-cost-ms", type=float, default=0.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", parents=[common], help="summarize a spike file")
    p.add_argument("dat", type=Path)
    p.add_argument("--bins", type=_positive_int, default=10)
    p.set_defaults(func=cmd_inspect)
    return parser


_GLOBAL_DEFAULTS = {"meta": None, "seed": None, "quiet": False, "json": False}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Output(args)
    out.config(args)
    try:
        args.func(args, out)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except (CliError, OSError, ValueError, IndexError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out.finish()
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
