"""Real-time acquisition and dispatch pipeline.

Stages, each on its own thread::

    source ──blocks──▶ assembler ──▶ lib pool ──handles──▶ app pool ──▶ dispatcher ──▶ task workers
                        (fills slots)          (transfer)                 (idle gate)

The acquisition side (block queue, lib pool) is bounded and blocking so no
camera data is lost there. Frames are only ever discarded in two places:
when the app pool is full at transfer time, and at the dispatcher's idle
gate, which hands a frame piece to every task at once only if all task
workers are idle and otherwise releases it straight back to the lib pool.
Every task therefore sees exactly the same frame pieces.

Slots are moved between pools by handle; the payload is written once by
the assembler and read in place by the tasks.
"""

from __future__ import annotations

import collections
import enum
import logging
import math
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .codec import StreamMeta, read_dat
from .stream import SpikeStream, StreamGeometry

log = logging.getLogger(__name__)

__all__ = [
    "BLOCK_HEADER",
    "FLAG_EOS",
    "BlockFormatError",
    "PipelineError",
    "PipelineClosed",
    "RawBlock",
    "pack_header",
    "unpack_header",
    "iter_stream_blocks",
    "write_blocks",
    "read_blocks",
    "SlotState",
    "SlotStateError",
    "FrameSlot",
    "FramePool",
    "AppFramePool",
    "PipelineStats",
    "PipelineConfig",
    "run_source",
    "run_replay_source",
    "run_assembler",
    "transfer",
    "run_dispatcher",
    "Pipeline",
    "DevicePiece",
    "get_device_piece",
    "get_device_matrix",
    "replay_source",
    "stream_source",
    "block_file_source",
    "socket_source",
    "serve_blocks",
    "worker_cap",
]

# u64 sequence number, u32 payload length, u16 flags, u16 reserved; little-endian
BLOCK_HEADER = struct.Struct("<QIHH")
FLAG_EOS = 0x0001

_POLL = 0.05  # seconds between stop-flag checks in blocking waits


class BlockFormatError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


class PipelineClosed(PipelineError):
    pass


# ---------------------------------------------------------------------------
# block wire format


@dataclass(frozen=True)
class RawBlock:
    seq: int
    payload_len: int
    flags: int
    payload: object  # buffer-protocol object of payload_len bytes

    @classmethod
    def make(cls, seq: int, payload=b"", flags: int = 0) -> RawBlock:
        return cls(seq, memoryview(payload).nbytes, flags, payload)

    @classmethod
    def eos(cls, seq: int) -> RawBlock:
        return cls(seq, 0, FLAG_EOS, b"")

    @property
    def is_eos(self) -> bool:
        return bool(self.flags & FLAG_EOS)

    def header(self) -> bytes:
        return pack_header(self.seq, self.payload_len, self.flags)


def pack_header(seq: int, payload_len: int, flags: int = 0) -> bytes:
    return BLOCK_HEADER.pack(seq, payload_len, flags, 0)


def unpack_header(buf) -> tuple[int, int, int]:
    if len(buf) != BLOCK_HEADER.size:
        raise BlockFormatError(f"block header must be {BLOCK_HEADER.size} bytes, got {len(buf)}")
    seq, length, flags, reserved = BLOCK_HEADER.unpack(buf)
    if reserved:
        raise BlockFormatError(f"block {seq}: reserved header field is {reserved:#x}, expected 0")
    return seq, length, flags


def iter_stream_blocks(stream: SpikeStream, block_frames: int, first_seq: int = 0) -> Iterator[RawBlock]:
    """Cut a stream into blocks of ``block_frames`` frames (last one shorter)."""
    if block_frames < 1:
        raise ValueError(f"block_frames must be >= 1, got {block_frames}")
    seq = first_seq
    for lo in range(0, stream.num_steps, block_frames):
        chunk = stream.packed[lo:lo + block_frames]
        yield RawBlock(seq, chunk.nbytes, 0, chunk)
        seq += 1


def write_blocks(blocks: Iterable[RawBlock], fh, *, eos: bool = True) -> int:
    """Write header+payload records; appends an end-of-stream block. Returns block count."""
    n = 0
    seq = 0
    for blk in blocks:
        fh.write(blk.header())
        if blk.payload_len:
            fh.write(memoryview(blk.payload).cast("B"))
        n += 1
        seq = blk.seq + 1
        if blk.is_eos:
            return n
    if eos:
        fh.write(RawBlock.eos(seq).header())
    return n


def _read_exact(fh, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = fh.readinto(view[got:])
        if not k:
            if got == 0:
                return None
            raise BlockFormatError(f"truncated block record: wanted {n} bytes, got {got}")
        got += k
    return bytes(buf) if n <= BLOCK_HEADER.size else buf


def read_blocks(fh) -> Iterator[RawBlock]:
    """Parse header+payload records until an end-of-stream block or EOF."""
    while True:
        head = _read_exact(fh, BLOCK_HEADER.size)
        if head is None:
            return
        seq, length, flags = unpack_header(head)
        payload = _read_exact(fh, length) if length else b""
        if payload is None:
            raise BlockFormatError(f"block {seq}: missing {length}-byte payload")
        yield RawBlock(seq, length, flags, payload)
        if flags & FLAG_EOS:
            return


# ---------------------------------------------------------------------------
# frame pools


class SlotState(enum.Enum):
    FREE = "free"
    FILLING = "filling"
    READY = "ready"
    PROCESSING = "processing"


_NEXT_STATE = {
    SlotState.FREE: SlotState.FILLING,
    SlotState.FILLING: SlotState.READY,
    SlotState.READY: SlotState.PROCESSING,
    SlotState.PROCESSING: SlotState.FREE,
}


class SlotStateError(RuntimeError):
    pass


class FrameSlot:
    """One ``H x W x T_cusum`` frame piece buffer owned by a :class:`FramePool`."""

    def __init__(self, slot_id: int, t_cusum: int, bytes_per_frame: int):
        self.slot_id = slot_id
        self.buffer = np.zeros((t_cusum, bytes_per_frame), dtype=np.uint8)
        self.state = SlotState.FREE
        self.index = -1  # frame-piece counter, assigned on commit
        self.first_step = 0
        self.n_frames = 0
        self.refs = 0

    def __repr__(self) -> str:
        return f"FrameSlot(id={self.slot_id}, index={self.index}, state={self.state.value})"

    def view(self, height: int, width: int) -> SpikeStream:
        """Read-only stream over the filled part of the buffer (no copy)."""
        return SpikeStream(StreamGeometry(height, width, self.n_frames), self.buffer[:self.n_frames])


class FramePool:
    """Fixed set of slots cycling ``free -> filling -> ready -> processing -> free``.

    Ready slots are handed out in commit order. :meth:`finish` marks that no
    more slots will be committed; once the ready queue drains,
    :meth:`take_ready` returns :data:`FramePool.END`.
    """

    END = object()

    def __init__(self, capacity: int, t_cusum: int, bytes_per_frame: int):
        if capacity < 1:
            raise ValueError(f"pool capacity must be >= 1, got {capacity}")
        if t_cusum < 1:
            raise ValueError(f"t_cusum must be >= 1, got {t_cusum}")
        self.capacity = capacity
        self.t_cusum = t_cusum
        self.bytes_per_frame = bytes_per_frame
        self.slots = [FrameSlot(i, t_cusum, bytes_per_frame) for i in range(capacity)]
        self._free = collections.deque(self.slots)
        self._ready: collections.deque[FrameSlot] = collections.deque()
        self._counts = {s: 0 for s in SlotState}
        self._counts[SlotState.FREE] = capacity
        self._cond = threading.Condition()
        self._finished = False

    def _move(self, slot: FrameSlot, to: SlotState) -> None:
        if slot not in self.slots:
            raise SlotStateError(f"{slot!r} does not belong to this pool")
        if _NEXT_STATE[slot.state] is not to:
            raise SlotStateError(f"illegal transition {slot.state.value} -> {to.value} for {slot!r}")
        self._counts[slot.state] -= 1
        self._counts[to] += 1
        slot.state = to

    def acquire(self, timeout: float | None = None) -> FrameSlot | None:
        """Take a free slot for filling; ``None`` if none frees up within ``timeout``."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._free, timeout):
                return None
            slot = self._free.popleft()
            self._move(slot, SlotState.FILLING)
            slot.n_frames = 0
            return slot

    def commit(self, slot: FrameSlot, n_frames: int, index: int, first_step: int = 0) -> None:
        if not 0 < n_frames <= self.t_cusum:
            raise ValueError(f"n_frames must be in 1..{self.t_cusum}, got {n_frames}")
        with self._cond:
            self._move(slot, SlotState.READY)
            slot.n_frames = n_frames
            slot.index = index
            slot.first_step = first_step
            self._ready.append(slot)
            self._cond.notify_all()

    def take_ready(self, timeout: float | None = None):
        """Oldest ready slot, ``None`` on timeout, or :data:`END` once finished and drained."""
        with self._cond:
            if not self._cond.wait_for(lambda: self._ready or self._finished, timeout):
                return None
            if not self._ready:
                return FramePool.END
            slot = self._ready.popleft()
            self._move(slot, SlotState.PROCESSING)
            return slot

    def release(self, slot: FrameSlot) -> None:
        with self._cond:
            self._move(slot, SlotState.FREE)
            slot.refs = 0
            self._free.append(slot)
            self._cond.notify_all()

    def finish(self) -> None:
        with self._cond:
            self._finished = True
            self._cond.notify_all()

    def counts(self) -> dict[SlotState, int]:
        with self._cond:
            return dict(self._counts)

    def check_invariants(self) -> None:
        """Raise ``AssertionError`` if bookkeeping disagrees with slot states."""
        with self._cond:
            actual = collections.Counter(s.state for s in self.slots)
            assert sum(self._counts.values()) == self.capacity
            assert all(actual[s] == self._counts[s] for s in SlotState), (actual, self._counts)
            assert all(s.state is SlotState.FREE for s in self._free)
            assert all(s.state is SlotState.READY for s in self._ready)
            assert len(self._free) == actual[SlotState.FREE]
            assert len(self._ready) == actual[SlotState.READY]


class AppFramePool:
    """Bounded queue of slot handles on the application side.

    Holds references to lib-pool slots (in ``processing`` state); it never
    owns or copies payload. ``capacity`` may be 0, in which case every offer
    is refused.
    """

    END = FramePool.END

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._items: collections.deque[FrameSlot] = collections.deque()
        self._cond = threading.Condition()
        self._finished = False

    def offer(self, slot: FrameSlot) -> bool:
        with self._cond:
            if len(self._items) >= self.capacity:
                return False
            self._items.append(slot)
            self._cond.notify_all()
            return True

    def get(self, timeout: float | None = None):
        with self._cond:
            if not self._cond.wait_for(lambda: self._items or self._finished, timeout):
                return None
            if not self._items:
                return AppFramePool.END
            return self._items.popleft()

    def drain(self) -> list[FrameSlot]:
        with self._cond:
            items = list(self._items)
            self._items.clear()
            return items

    def finish(self) -> None:
        with self._cond:
            self._finished = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


# ---------------------------------------------------------------------------
# statistics


class PipelineStats:
    """Thread-safe counters for one pipeline run.

    ``produced``/``delivered``/``dropped`` count frame pieces; ``frames``
    counts polling frames ingested by the assembler.
    """

    def __init__(self, task_names: Sequence[str] = (), keep_events: bool = True):
        self._lock = threading.Lock()
        self.blocks = 0
        self.frames = 0
        self.produced = 0
        self.delivered = 0
        self.dropped = 0
        self.dropped_app_full = 0
        self.dropped_busy = 0
        self.dropped_shutdown = 0
        self.gaps = 0
        self.source_max_lateness = 0.0
        self.processed: dict[str, int] = {n: 0 for n in task_names}
        self.failed: dict[str, int] = {n: 0 for n in task_names}
        self.task_log: dict[str, list[int]] = {n: [] for n in task_names}
        self.keep_events = keep_events
        self.events: list[tuple[float, str, int]] = []
        self.started: float | None = None
        self.finished: float | None = None
        self.source_started: float | None = None
        self.last_ingest: float | None = None

    def _event(self, kind: str, index: int) -> None:
        if self.keep_events:
            self.events.append((time.perf_counter(), kind, index))

    def on_source_start(self, t0: float) -> None:
        with self._lock:
            self.source_started = t0

    def on_block(self, seq: int, frames: int) -> None:
        with self._lock:
            self.blocks += 1
            self.frames += frames
            self.last_ingest = time.perf_counter()

    def ingest_fps(self) -> float:
        """Polling frames per second from source start to the last ingested block."""
        if self.source_started is None or self.last_ingest is None:
            return 0.0
        span = self.last_ingest - self.source_started
        return self.frames / span if span > 0 else math.inf

    def on_gap(self, expected: int, got: int) -> None:
        with self._lock:
            self.gaps += 1
            self._event("gap", got)
        log.warning("block sequence gap: expected %d, got %d", expected, got)

    def on_lateness(self, late: float) -> None:
        with self._lock:
            self.source_max_lateness = max(self.source_max_lateness, late)

    def on_produced(self, index: int) -> None:
        with self._lock:
            self.produced += 1
            self._event("produced", index)

    def on_delivered(self, index: int) -> None:
        with self._lock:
            self.delivered += 1
            self._event("delivered", index)

    def on_dropped(self, index: int, reason: str) -> None:
        with self._lock:
            self.dropped += 1
            if reason == "app_full":
                self.dropped_app_full += 1
            elif reason == "busy":
                self.dropped_busy += 1
            else:
                self.dropped_shutdown += 1
            self._event("dropped", index)

    def on_task_done(self, name: str, index: int, ok: bool) -> None:
        with self._lock:
            if ok:
                self.processed[name] = self.processed.get(name, 0) + 1
                self.task_log.setdefault(name, []).append(index)
            else:
                self.failed[name] = self.failed.get(name, 0) + 1

    @property
    def wall_time(self) -> float:
        if self.started is None:
            return 0.0
        end = self.finished if self.finished is not None else time.perf_counter()
        return end - self.started

    def as_dict(self) -> dict:
        with self._lock:
            wall = self.wall_time
            out = {
                "blocks": self.blocks,
                "frames": self.frames,
                "produced": self.produced,
                "delivered": self.delivered,
                "dropped": self.dropped,
                "dropped_app_full": self.dropped_app_full,
                "dropped_busy": self.dropped_busy,
                "dropped_shutdown": self.dropped_shutdown,
                "gaps": self.gaps,
                "wall_time_s": wall,
                "frames_per_s": self.frames / wall if wall > 0 else 0.0,
                "source_max_lateness_s": self.source_max_lateness,
            }
            for name in dict.fromkeys([*self.processed, *self.failed]):
                out[f"task.{name}.processed"] = self.processed.get(name, 0)
                out[f"task.{name}.failed"] = self.failed.get(name, 0)
            return out

    def to_lines(self) -> list[str]:
        return [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.as_dict().items()]


# ---------------------------------------------------------------------------
# stages


def _put(q: queue.Queue, item, stop: threading.Event | None) -> bool:
    while True:
        try:
            q.put(item, timeout=_POLL)
            return True
        except queue.Full:
            if stop is not None and stop.is_set():
                return False


def run_source(blocks: Iterable[RawBlock], bytes_per_frame: int, rate: float | None, sink: queue.Queue,
               stop: threading.Event | None = None, stats: PipelineStats | None = None) -> int:
    """Push ``blocks`` into ``sink`` paced at ``rate`` polling frames per second.

    A block of ``n`` frames becomes due once its last frame would have been
    captured, i.e. at ``t0 + (frames_so_far + n) / rate``. ``rate=None``
    disables pacing. Ends with an end-of-stream block. Returns blocks sent.
    """
    if rate is not None and not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    t0 = time.perf_counter()
    if stats is not None:
        stats.on_source_start(t0)
    sent = frames = 0
    seq = 0
    for blk in blocks:
        if stop is not None and stop.is_set():
            return sent
        if blk.is_eos:
            break
        n = blk.payload_len // bytes_per_frame if bytes_per_frame else 0
        if rate is not None:
            due = t0 + (frames + n) / rate
            delay = due - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            elif stats is not None:
                stats.on_lateness(-delay)
        if not _put(sink, blk, stop):
            return sent
        sent += 1
        frames += n
        seq = blk.seq + 1
    _put(sink, RawBlock.eos(seq), stop)
    return sent


def run_replay_source(dat, meta: StreamMeta, rate: float | None, block_frames: int, sink: queue.Queue,
                      stop: threading.Event | None = None, stats: PipelineStats | None = None) -> int:
    """Replay a recorded ``.dat`` file as paced blocks, standing in for a camera."""
    if block_frames < 1:
        raise ValueError(f"block_frames must be >= 1, got {block_frames}")
    stream = read_dat(dat, meta, mmap=True)
    return run_source(iter_stream_blocks(stream, block_frames), meta.bytes_per_frame, rate, sink, stop, stats)


def run_assembler(blocks: queue.Queue, lib_pool: FramePool, t_cusum: int,
                  stats: PipelineStats | None = None, stop: threading.Event | None = None) -> int:
    """Pack block payloads into lib-pool slots of ``t_cusum`` frames.

    A trailing piece shorter than ``t_cusum`` is flushed at end of stream.
    Returns the number of pieces produced. Calls ``lib_pool.finish()`` on exit.
    """
    if t_cusum < 1 or t_cusum > lib_pool.t_cusum:
        raise ValueError(f"t_cusum must be in 1..{lib_pool.t_cusum}, got {t_cusum}")
    stats = stats if stats is not None else PipelineStats()
    bpf = lib_pool.bytes_per_frame
    expected: int | None = None
    slot: FrameSlot | None = None
    fill = 0
    piece = 0
    step = 0

    def acquire() -> FrameSlot | None:
        while True:
            s = lib_pool.acquire(timeout=_POLL)
            if s is not None or (stop is not None and stop.is_set()):
                return s

    def flush() -> None:
        nonlocal slot, fill, piece
        lib_pool.commit(slot, fill, piece, step - fill)
        stats.on_produced(piece)
        piece += 1
        slot, fill = None, 0

    try:
        while True:
            try:
                blk = blocks.get(timeout=_POLL)
            except queue.Empty:
                if stop is not None and stop.is_set():
                    return piece
                continue
            if blk.is_eos:
                break
            payload = np.frombuffer(blk.payload, dtype=np.uint8) if blk.payload_len else np.empty(0, np.uint8)
            if payload.size != blk.payload_len:
                raise BlockFormatError(
                    f"block {blk.seq}: header says {blk.payload_len} payload bytes, got {payload.size}")
            if blk.payload_len % bpf:
                raise BlockFormatError(
                    f"block {blk.seq}: payload {blk.payload_len} bytes is not whole {bpf}-byte frames")
            if expected is not None and blk.seq != expected:
                stats.on_gap(expected, blk.seq)
            expected = blk.seq + 1
            frames = payload.reshape(-1, bpf)
            n = frames.shape[0]
            stats.on_block(blk.seq, n)
            pos = 0
            while pos < n:
                if slot is None:
                    slot = acquire()
                    if slot is None:
                        return piece
                take = min(t_cusum - fill, n - pos)
                slot.buffer[fill:fill + take] = frames[pos:pos + take]
                fill += take
                pos += take
                step += take
                if fill == t_cusum:
                    flush()
        if slot is not None and fill:
            flush()
        return piece
    finally:
        lib_pool.finish()


def transfer(lib_pool: FramePool, app_pool: AppFramePool, stats: PipelineStats | None = None,
             stop: threading.Event | None = None) -> None:
    """Move ready slot handles lib -> app; a full app pool drops the slot at once."""
    stats = stats if stats is not None else PipelineStats()
    try:
        while True:
            slot = lib_pool.take_ready(timeout=_POLL)
            if slot is FramePool.END:
                return
            if slot is None:
                if stop is not None and stop.is_set():
                    return
                continue
            if not app_pool.offer(slot):
                index = slot.index
                lib_pool.release(slot)
                stats.on_dropped(index, "app_full")
    finally:
        app_pool.finish()


class _TaskWorker(threading.Thread):
    def __init__(self, tasks: Sequence[tuple[str, Callable]], gate: _Gate, height: int, width: int):
        super().__init__(name=f"task-{'+'.join(n for n, _ in tasks)}", daemon=True)
        self.tasks = list(tasks)
        self.gate = gate
        self.height = height
        self.width = width
        self.idle = True
        self.inbox: queue.SimpleQueue = queue.SimpleQueue()

    def run(self) -> None:
        while True:
            slot = self.inbox.get()
            if slot is None:
                return
            stream = slot.view(self.height, self.width)
            for name, fn in self.tasks:
                try:
                    if getattr(fn, "wants_piece", False):
                        result = fn(DevicePiece(slot.index, slot.first_step, stream))
                    else:
                        result = fn(stream)
                except Exception:
                    log.exception("task %s failed on piece %d", name, slot.index)
                    self.gate.stats.on_task_done(name, slot.index, ok=False)
                else:
                    self.gate.stats.on_task_done(name, slot.index, ok=True)
                    self.gate.publish(name, slot.index, result)
            self.gate.done(self, slot)


class _Gate:
    """Idle gate: atomic all-idle check and hand-off, plus slot refcounts."""

    def __init__(self, lib_pool: FramePool, stats: PipelineStats, results: Mapping[str, collections.deque]):
        self.lock = threading.Condition()
        self.lib_pool = lib_pool
        self.stats = stats
        self.results = results
        self.workers: list[_TaskWorker] = []

    def try_dispatch(self, slot: FrameSlot) -> bool:
        with self.lock:
            if not self.workers or not all(w.idle for w in self.workers):
                return False
            slot.refs = len(self.workers)
            for w in self.workers:
                w.idle = False
            self.stats.on_delivered(slot.index)
            for w in self.workers:
                w.inbox.put(slot)
            return True

    def done(self, worker: _TaskWorker, slot: FrameSlot) -> None:
        with self.lock:
            worker.idle = True
            slot.refs -= 1
            if slot.refs == 0:
                self.lib_pool.release(slot)
            self.lock.notify_all()

    def publish(self, name: str, index: int, result) -> None:
        sink = self.results.get(name)
        if sink is not None:
            sink.append((index, result))

    def wait_idle(self, timeout: float | None = None) -> bool:
        with self.lock:
            return self.lock.wait_for(lambda: all(w.idle for w in self.workers), timeout)


def worker_cap() -> int | None:
    """Worker-thread cap from ``SPIKEKIT_THREADS`` (``None`` when unset)."""
    raw = os.environ.get("SPIKEKIT_THREADS")
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"SPIKEKIT_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ValueError(f"SPIKEKIT_THREADS must be a positive integer, got {raw!r}")
    return cap


def run_dispatcher(app_pool: AppFramePool, gate: _Gate, stop: threading.Event | None = None) -> None:
    """Main-program loop: gate each app-pool frame piece, release the losers."""
    while True:
        slot = app_pool.get(timeout=_POLL)
        if slot is AppFramePool.END:
            return
        if slot is None:
            if stop is not None and stop.is_set():
                return
            continue
        if not gate.try_dispatch(slot):
            index = slot.index
            gate.lib_pool.release(slot)
            gate.stats.on_dropped(index, "busy")


# ---------------------------------------------------------------------------
# sources


Source = Callable[[queue.Queue, threading.Event, PipelineStats], object]


def replay_source(dat, meta: StreamMeta, rate: float | None, block_frames: int = 400) -> Source:
    def source(sink, stop, stats):
        return run_replay_source(dat, meta, rate, block_frames, sink, stop, stats)
    return source


def stream_source(stream: SpikeStream, rate: float | None, block_frames: int = 400) -> Source:
    bpf = stream.geometry.bytes_per_frame

    def source(sink, stop, stats):
        return run_source(iter_stream_blocks(stream, block_frames), bpf, rate, sink, stop, stats)
    return source


def block_file_source(path, bytes_per_frame: int, rate: float | None = None) -> Source:
    def source(sink, stop, stats):
        with open(path, "rb") as fh:
            return run_source(read_blocks(fh), bytes_per_frame, rate, sink, stop, stats)
    return source


def socket_source(address: tuple[str, int], bytes_per_frame: int, connect_timeout: float = 10.0) -> Source:
    """Receive a block stream from a remote :func:`serve_blocks` (paced remotely)."""
    def source(sink, stop, stats):
        with socket.create_connection(address, timeout=connect_timeout) as sock:
            sock.settimeout(None)
            with sock.makefile("rb") as fh:
                return run_source(read_blocks(fh), bytes_per_frame, None, sink, stop, stats)
    return source


def serve_blocks(stream: SpikeStream, address: tuple[str, int], rate: float | None,
                 block_frames: int = 400, ready: Callable[[tuple[str, int]], None] | None = None,
                 accept_timeout: float | None = None) -> int:
    """Serve one client the paced block stream of ``stream`` over TCP.

    ``ready`` is called with the bound address (useful with port 0).
    Returns the number of data blocks sent.
    """
    if rate is not None and not rate > 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    bpf = stream.geometry.bytes_per_frame
    with socket.create_server(address) as server:
        server.settimeout(accept_timeout)
        if ready is not None:
            ready(server.getsockname()[:2])
        conn, _ = server.accept()
        with conn:
            conn.settimeout(None)
            t0 = time.perf_counter()
            frames = sent = 0
            seq = 0
            for blk in iter_stream_blocks(stream, block_frames):
                n = blk.payload_len // bpf
                if rate is not None:
                    delay = t0 + (frames + n) / rate - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                conn.sendall(blk.header())
                conn.sendall(memoryview(np.ascontiguousarray(blk.payload)).cast("B"))
                frames += n
                sent += 1
                seq = blk.seq + 1
            conn.sendall(RawBlock.eos(seq).header())
            return sent


# ---------------------------------------------------------------------------
# session


@dataclass
class PipelineConfig:
    t_cusum: int = 400
    block_frames: int = 400
    lib_capacity: int = 8
    app_capacity: int = 2
    block_queue_size: int = 8
    max_workers: int | None = None  # defaults to SPIKEKIT_THREADS, else one per task
    result_backlog: int = 256
    keep_events: bool = True

    def __post_init__(self) -> None:
        if self.t_cusum < 1 or self.block_frames < 1:
            raise ValueError("t_cusum and block_frames must be >= 1")
        if self.lib_capacity < 1 or self.block_queue_size < 1:
            raise ValueError("lib_capacity and block_queue_size must be >= 1")
        if self.app_capacity < 0:
            raise ValueError("app_capacity must be >= 0")


class DevicePiece(NamedTuple):
    index: int
    first_step: int
    stream: SpikeStream


_DEVICE_TASK = "device"


class Pipeline:
    """One acquisition session: source, assembler, transfer, dispatcher, tasks.

    ``tasks`` maps names to callables taking a :class:`SpikeStream`. The
    stream handed to a task is a view of the pool slot and is only valid for
    the duration of the call. With ``device=True`` an extra task copies each
    dispatched piece out for :func:`get_device_matrix`.
    """

    def __init__(self, source: Source, height: int, width: int,
                 tasks: Mapping[str, Callable] | None = None,
                 config: PipelineConfig | None = None, device: bool = False):
        self.config = config or PipelineConfig()
        self.height, self.width = height, width
        self.geometry = StreamGeometry(height, width)
        tasks = dict(tasks or {})
        self._stop = threading.Event()
        if device:
            if _DEVICE_TASK in tasks:
                raise ValueError(f"task name {_DEVICE_TASK!r} is reserved")
            self._device = _DeviceTask(max(1, self.config.app_capacity), self._stop)
            tasks[_DEVICE_TASK] = self._device
        else:
            self._device = None
        self.tasks = tasks
        self.stats = PipelineStats(list(tasks), keep_events=self.config.keep_events)
        self.results = {name: collections.deque(maxlen=self.config.result_backlog)
                        for name in tasks if name != _DEVICE_TASK}
        self.block_queue: queue.Queue = queue.Queue(maxsize=self.config.block_queue_size)
        self.lib_pool = FramePool(self.config.lib_capacity, self.config.t_cusum,
                                  self.geometry.bytes_per_frame)
        self.app_pool = AppFramePool(self.config.app_capacity)
        self._gate = _Gate(self.lib_pool, self.stats, self.results)
        self._source = source
        self._done = threading.Event()
        self._errors: list[BaseException] = []
        self._threads: list[threading.Thread] = []
        self._started = False

        cap = self.config.max_workers if self.config.max_workers is not None else worker_cap()
        items = list(tasks.items())
        n_workers = len(items) if cap is None else min(len(items), cap)
        groups: list[list[tuple[str, Callable]]] = [[] for _ in range(n_workers)]
        for i, item in enumerate(items):
            groups[i % n_workers].append(item)
        self._gate.workers = [_TaskWorker(g, self._gate, height, width) for g in groups]

    # -- lifecycle --------------------------------------------------------

    def _guard(self, fn, *args):
        def body():
            try:
                fn(*args)
            except BaseException as exc:  # surfaced by wait()
                log.debug("pipeline stage %s failed", threading.current_thread().name, exc_info=True)
                self._errors.append(exc)
                self._stop.set()
        return body

    def start(self) -> Pipeline:
        if self._started:
            raise PipelineError("pipeline already started")
        self._started = True
        self.stats.started = time.perf_counter()
        for w in self._gate.workers:
            w.start()
        stages = [
            ("source", self._source, (self.block_queue, self._stop, self.stats)),
            ("assembler", run_assembler, (self.block_queue, self.lib_pool, self.config.t_cusum,
                                          self.stats, self._stop)),
            ("transfer", transfer, (self.lib_pool, self.app_pool, self.stats, self._stop)),
            ("dispatcher", run_dispatcher, (self.app_pool, self._gate, self._stop)),
        ]
        for name, fn, args in stages:
            t = threading.Thread(target=self._guard(fn, *args), name=name, daemon=True)
            self._threads.append(t)
            t.start()
        threading.Thread(target=self._finalize, name="finalize", daemon=True).start()
        return self

    def _finalize(self) -> None:
        for t in self._threads:
            t.join()
        self._gate.wait_idle()
        for w in self._gate.workers:
            w.inbox.put(None)
        for w in self._gate.workers:
            w.join()
        # whatever never reached the gate (cancel or stage failure) counts as dropped
        for slot in self.app_pool.drain():
            index = slot.index
            self.lib_pool.release(slot)
            self.stats.on_dropped(index, "shutdown")
        while True:
            slot = self.lib_pool.take_ready(timeout=0)
            if slot is None or slot is FramePool.END:
                break
            index = slot.index
            self.lib_pool.release(slot)
            self.stats.on_dropped(index, "shutdown")
        self.stats.finished = time.perf_counter()
        self._done.set()

    def stop(self) -> None:
        """Cancel: stages stop at their next wait, in-flight tasks finish."""
        self._stop.set()

    def wait(self, timeout: float | None = None) -> PipelineStats:
        if not self._done.wait(timeout):
            raise TimeoutError(f"pipeline still running after {timeout} s")
        if self._errors:
            raise PipelineError(f"pipeline stage failed: {self._errors[0]!r}") from self._errors[0]
        return self.stats

    def run(self, timeout: float | None = None) -> PipelineStats:
        return self.start().wait(timeout)

    @property
    def done(self) -> bool:
        return self._done.is_set()

    def __enter__(self) -> Pipeline:
        if not self._started:
            self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
        self._done.wait()



class _DeviceTask:
    """Copies each dispatched piece into a bounded queue for pull-style reads."""

    wants_piece = True

    def __init__(self, maxsize: int, stop: threading.Event):
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.stop = stop

    def __call__(self, piece: DevicePiece) -> None:
        item = DevicePiece(piece.index, piece.first_step,
                           SpikeStream(piece.stream.geometry, piece.stream.packed.copy()))
        while not self.stop.is_set():
            try:
                self.queue.put(item, timeout=_POLL)
                return
            except queue.Full:
                pass


def get_device_piece(session: Pipeline, t_cusum: int, timeout: float | None = None) -> DevicePiece | None:
    """Blocking pull of the next dispatched piece; ``None`` after end of stream."""
    if session._device is None:
        raise PipelineError("session was not opened with device=True")
    if t_cusum != session.config.t_cusum:
        raise ValueError(f"session delivers t_cusum={session.config.t_cusum}, asked for {t_cusum}")
    deadline = None if timeout is None else time.monotonic() + timeout
    while True:
        try:
            return session._device.queue.get(timeout=_POLL)
        except queue.Empty:
            pass
        if session.done:
            if session._errors:
                raise PipelineError(f"pipeline stage failed: {session._errors[0]!r}")
            if session._stop.is_set():
                raise PipelineClosed("session stopped")
            try:
                return session._device.queue.get_nowait()
            except queue.Empty:
                return None
        if deadline is not None and time.monotonic() >= deadline:
            raise TimeoutError(f"no frame piece within {timeout} s")


def get_device_matrix(session: Pipeline, t_cusum: int, timeout: float | None = None) -> SpikeStream | None:
    piece = get_device_piece(session, t_cusum, timeout)
    return None if piece is None else piece.stream
