# eotrain/core/swap.py

"""
eotrain swap engine

Moves storage groups between a small in-memory cache and a preallocated backing file,
driven by a schedule derived statically from the EO sets:

- ondemand: only the tensors accessed at EO e are resident during e; everything is
  written back (if dirty) after each EO and read again when next needed.
- reduced: same residency, but a tensor that stays resident across a boundary is
  neither offloaded nor reloaded.
- proactive(k): additionally keeps or prefetches, at EO e, already produced tensors
  that EOs e+1..e+k will access, so loads overlap with compute.

Weights go through the weight stream (WPS), everything else through the tensor stream
(TPS). Each stream is served by its own FIFO worker thread.
"""

import json
import logging
import queue
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import TracebackType
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Type,
    Union,
)

import numpy as np

from .constants import ARENA_ALIGNMENT, DTYPE, ELEM_BYTES, SWAP_STORE_MAGIC
from .exceptions import ResidencyError, SwapIOError
from .exec_order import TensorRole, TensorSpec
from .models import SwapStats, normalize_swap_name

logger = logging.getLogger("eotrain.swap")

_HEADER_LEN = struct.Struct("<I")


class SwapMode(str, Enum):
    OFF = "off"
    ON_DEMAND = "ondemand"
    REDUCED = "reduced"
    PROACTIVE = "proactive"

    @classmethod
    def parse(cls, value: Union[str, "SwapMode"]) -> "SwapMode":
        if isinstance(value, SwapMode):
            return value
        try:
            return cls(normalize_swap_name(value))
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown swap mode '{value}' (expected one of {names})") from None


class Stream(str, Enum):
    WPS = "WPS"
    TPS = "TPS"


class ActionKind(str, Enum):
    LOAD = "load"  # read from the store into a fresh cache buffer
    ALLOCATE = "allocate"  # fresh cache buffer, contents produced at this EO
    STORE = "store"  # write back, then drop from the cache
    DROP = "drop"  # clean and still needed: the store already holds it
    RELEASE = "release"  # dead for the rest of the iteration


@dataclass(frozen=True)
class SwapAction:
    tensor: str
    kind: ActionKind
    stream: Stream
    due: Optional[int] = None


@dataclass(frozen=True)
class SwapSchedule:
    """Per-EO residency and the actions executed at each EO boundary.

    `before[e]` lists the offloads of EO e-1 followed by the loads/allocations for EO
    e; `flush` ends the iteration. The schedule is identical for every iteration.
    """

    mode: SwapMode
    lookahead: Optional[int]
    resident: Tuple[FrozenSet[str], ...]
    before: Tuple[Tuple[SwapAction, ...], ...]
    flush: Tuple[SwapAction, ...]
    sizes: Dict[str, int] = field(default_factory=dict)

    @property
    def eo_max(self) -> int:
        return len(self.before)

    def prefetch(self, eo: int) -> Set[str]:
        return {a.tensor for a in self.before[eo] if a.kind is ActionKind.LOAD}

    def offload(self, eo: int) -> Set[str]:
        """Tensors leaving the cache right after EO `eo`."""
        actions = self.before[eo + 1] if eo + 1 < self.eo_max else self.flush
        leaving = (ActionKind.STORE, ActionKind.DROP, ActionKind.RELEASE)
        return {a.tensor for a in actions if a.kind in leaving}

    def _count(self, kind: ActionKind) -> int:
        actions = [a for step in self.before for a in step] + list(self.flush)
        return sum(1 for a in actions if a.kind is kind)

    @property
    def swap_in_count(self) -> int:
        """Loads per iteration."""
        return self._count(ActionKind.LOAD)

    @property
    def swap_out_count(self) -> int:
        """Write-backs per iteration."""
        return self._count(ActionKind.STORE)

    @property
    def operation_count(self) -> int:
        return self.swap_in_count + self.swap_out_count

    def resident_bytes(self, eo: int) -> int:
        return sum(self.sizes[name] for name in self.resident[eo])

    @property
    def peak_resident_bytes(self) -> int:
        return max((self.resident_bytes(eo) for eo in range(len(self.resident))), default=0)


def _stream(spec: TensorSpec) -> Stream:
    return Stream.WPS if spec.role is TensorRole.WEIGHT else Stream.TPS


def accessed_groups(tensors: Sequence[TensorSpec], eo_max: int) -> List[Set[str]]:
    """Arena storage groups read or written at every EO."""
    access: List[Set[str]] = [set() for _ in range(eo_max)]
    for t in tensors:
        if t.is_placeholder:
            continue
        for eo in t.eos:
            access[eo].add(t.name)
    return access


def build_swap_schedule(
    tensors: Sequence[TensorSpec],
    eo_max: int,
    mode: Union[str, SwapMode],
    lookahead: int = 1,
) -> SwapSchedule:
    """Derive the residency table and boundary actions for one iteration.

    Args:
        tensors: Merged tensor specs (one per storage group)
        eo_max: Number of EOs per iteration
        mode: off, ondemand, reduced or proactive
        lookahead: Proactive window k (ignored by the other modes)

    Returns:
        SwapSchedule: Empty for mode off
    """
    mode = SwapMode.parse(mode)
    groups = {t.name: t for t in tensors if not t.is_placeholder}
    sizes = {name: t.size_bytes for name, t in groups.items()}
    if mode is SwapMode.OFF:
        return SwapSchedule(mode, None, (), (), (), sizes)
    if lookahead < 1:
        raise ValueError(f"lookahead must be >= 1, got {lookahead}")

    access = accessed_groups(tensors, eo_max)
    resident: List[FrozenSet[str]] = []
    for eo in range(eo_max):
        members = set(access[eo])
        if mode is SwapMode.PROACTIVE:
            for ahead in range(eo + 1, min(eo + lookahead, eo_max - 1) + 1):
                for name in access[ahead]:
                    t = groups[name]
                    if t.persistent or t.min_eo <= eo:
                        members.add(name)
        resident.append(frozenset(members))

    dirty: Set[str] = set()
    before: List[Tuple[SwapAction, ...]] = []
    previous: FrozenSet[str] = frozenset()
    for eo in range(eo_max):
        current = resident[eo]
        if mode is SwapMode.ON_DEMAND:
            leaving, entering = set(previous), set(current)
        else:
            leaving, entering = set(previous - current), set(current - previous)
        actions = [_offload(groups[name], eo, dirty) for name in sorted(leaving)]
        for name in sorted(entering):
            t = groups[name]
            if t.persistent or t.min_eo < eo:
                due = min(e for e in t.eos if e >= eo)
                actions.append(SwapAction(name, ActionKind.LOAD, _stream(t), due))
            else:
                actions.append(SwapAction(name, ActionKind.ALLOCATE, _stream(t), eo))
        before.append(tuple(actions))
        dirty.update(name for name in current if eo in groups[name].write_eos)
        previous = current

    flush = tuple(_offload(groups[name], eo_max, dirty) for name in sorted(previous))
    schedule = SwapSchedule(
        mode,
        lookahead if mode is SwapMode.PROACTIVE else None,
        tuple(resident),
        tuple(before),
        flush,
        sizes,
    )
    logger.debug(
        f"Swap schedule {mode.value}: {schedule.operation_count} transfers "
        f"({schedule.swap_in_count} in, {schedule.swap_out_count} out), "
        f"peak {schedule.peak_resident_bytes} B"
    )
    return schedule


def _offload(t: TensorSpec, eo: int, dirty: Set[str]) -> SwapAction:
    stream = _stream(t)
    if t.persistent or t.max_eo >= eo:
        if t.name in dirty:
            dirty.discard(t.name)
            return SwapAction(t.name, ActionKind.STORE, stream)
        return SwapAction(t.name, ActionKind.DROP, stream)
    dirty.discard(t.name)
    return SwapAction(t.name, ActionKind.RELEASE, stream)


class SwapStore:
    """Preallocated backing file with one fixed extent per tensor.

    Layout: magic, u32 little-endian index length, JSON index of
    {name, offset, bytes[, shape]}, then 64-byte aligned little-endian float32 extents.
    """

    def __init__(self, path: Path, index: Dict[str, Dict[str, object]], data_start: int):
        self.path = Path(path)
        self.index = index
        self.data_start = data_start
        self._file = open(self.path, "r+b")
        self._lock = threading.Lock()

    @classmethod
    def create(
        cls,
        path: Union[str, Path],
        extents: Mapping[str, int],
        shapes: Optional[Mapping[str, Sequence[int]]] = None,
    ) -> "SwapStore":
        """Lay out and preallocate a store holding `extents` (name -> bytes)."""
        index: Dict[str, Dict[str, object]] = {}
        offset = 0
        for name, nbytes in extents.items():
            entry: Dict[str, object] = {"name": name, "offset": offset, "bytes": int(nbytes)}
            if shapes is not None and name in shapes:
                entry["shape"] = [int(n) for n in shapes[name]]
            index[name] = entry
            offset += -(-int(nbytes) // ARENA_ALIGNMENT) * ARENA_ALIGNMENT
        header = json.dumps({"dtype": "<f4", "tensors": list(index.values())}).encode()
        prefix = len(SWAP_STORE_MAGIC) + _HEADER_LEN.size + len(header)
        data_start = -(-prefix // ARENA_ALIGNMENT) * ARENA_ALIGNMENT
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(SWAP_STORE_MAGIC)
            f.write(_HEADER_LEN.pack(len(header)))
            f.write(header)
            f.truncate(data_start + offset)
        logger.debug(f"Created swap store {path} ({len(index)} extents, {offset} B)")
        return cls(path, index, data_start)

    @classmethod
    def open(cls, path: Union[str, Path]) -> "SwapStore":
        path = Path(path)
        with open(path, "rb") as f:
            magic = f.read(len(SWAP_STORE_MAGIC))
            if magic != SWAP_STORE_MAGIC:
                raise ValueError(f"{path} is not an eotrain store (bad magic {magic!r})")
            (length,) = _HEADER_LEN.unpack(f.read(_HEADER_LEN.size))
            header = json.loads(f.read(length).decode())
        prefix = len(SWAP_STORE_MAGIC) + _HEADER_LEN.size + length
        data_start = -(-prefix // ARENA_ALIGNMENT) * ARENA_ALIGNMENT
        index = {entry["name"]: entry for entry in header["tensors"]}
        return cls(path, index, data_start)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.index)

    def _extent(self, name: str, nbytes: int) -> int:
        entry = self.index.get(name)
        if entry is None:
            raise KeyError(f"tensor '{name}' has no extent in {self.path}")
        if nbytes > int(entry["bytes"]):  # type: ignore[arg-type]
            raise ValueError(f"{nbytes} B do not fit the {entry['bytes']} B extent of '{name}'")
        return self.data_start + int(entry["offset"])  # type: ignore[arg-type]

    def write(self, name: str, array: np.ndarray) -> None:
        data = np.ascontiguousarray(array, dtype="<f4")
        position = self._extent(name, data.nbytes)
        with self._lock:
            self._file.seek(position)
            self._file.write(memoryview(data).cast("B"))

    def read_into(self, name: str, out: np.ndarray) -> np.ndarray:
        """Fill the contiguous float32 buffer `out` from the extent of `name`."""
        position = self._extent(name, out.nbytes)
        with self._lock:
            self._file.seek(position)
            count = self._file.readinto(memoryview(out).cast("B"))
        if count != out.nbytes:
            raise OSError(f"short read for '{name}': {count} of {out.nbytes} B")
        return out

    def read(self, name: str) -> np.ndarray:
        entry = self.index[name]
        out = np.empty(int(entry["bytes"]) // ELEM_BYTES, dtype=DTYPE)  # type: ignore[arg-type]
        self.read_into(name, out)
        shape = entry.get("shape")
        return out.reshape(shape) if shape else out  # type: ignore[arg-type]

    def flush(self) -> None:
        with self._lock:
            self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.flush()
            self._file.close()

    def __enter__(self) -> "SwapStore":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        self.close()

    @classmethod
    def export(cls, path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> Path:
        """Write named arrays (with their shapes) in the store format."""
        extents = {name: int(a.size) * ELEM_BYTES for name, a in arrays.items()}
        shapes = {name: a.shape for name, a in arrays.items()}
        with cls.create(path, extents, shapes) as store:
            for name, array in arrays.items():
                store.write(name, array)
        return Path(path)

    @classmethod
    def load_arrays(cls, path: Union[str, Path]) -> Dict[str, np.ndarray]:
        with cls.open(path) as store:
            return {name: store.read(name) for name in store.names}


class CachePool:
    """Residency table of the swap cache: storage group -> buffer.

    Buffers are allocated when a group enters the cache. A group whose load is still
    in flight is resident but not readable.
    """

    def __init__(self, elements: Mapping[str, int], dtype: str = DTYPE):
        self._elements = dict(elements)
        self._dtype = np.dtype(dtype)
        self._lock = threading.Lock()
        self._resident: Dict[str, np.ndarray] = {}
        self._loading: Set[str] = set()

    def admit(self, root: str, loading: bool = False) -> np.ndarray:
        buffer = np.empty(self._elements[root], dtype=self._dtype)
        with self._lock:
            if root in self._resident:
                raise ResidencyError(f"'{root}' is already resident")
            self._resident[root] = buffer
            if loading:
                self._loading.add(root)
        return buffer

    def mark_loaded(self, root: str) -> None:
        with self._lock:
            self._loading.discard(root)

    def evict(self, root: str) -> np.ndarray:
        with self._lock:
            buffer = self._resident.pop(root, None)
            self._loading.discard(root)
        if buffer is None:
            raise ResidencyError(f"'{root}' is not resident")
        return buffer

    def buffer(self, root: str) -> np.ndarray:
        with self._lock:
            buffer = self._resident.get(root)
            loading = root in self._loading
        if buffer is None:
            raise ResidencyError(f"compute touched '{root}' which is not resident")
        if loading:
            raise ResidencyError(f"compute touched '{root}' before its load completed")
        return buffer

    @property
    def resident_names(self) -> FrozenSet[str]:
        with self._lock:
            return frozenset(self._resident)

    @property
    def resident_bytes(self) -> int:
        with self._lock:
            return sum(buffer.nbytes for buffer in self._resident.values())


@dataclass
class _Job:
    kind: ActionKind
    tensor: str
    buffer: np.ndarray
    eo: int
    due: Optional[int] = None


class SwapLoader:
    """Background I/O service: one FIFO worker per stream.

    `wait(eo)` blocks the compute path until every load due at or before `eo` has
    landed; the time spent blocked is recorded as a stall.
    """

    def __init__(self, store: SwapStore, cache: CachePool, latency: float = 0.0):
        self.store = store
        self.cache = cache
        self.latency = latency
        self.stall_count = 0
        self.stall_seconds = 0.0
        self._cond = threading.Condition()
        self._pending: Dict[int, int] = {}
        self._error: Optional[SwapIOError] = None
        self._queues: Dict[Stream, "queue.Queue[Optional[_Job]]"] = {
            s: queue.Queue() for s in Stream
        }
        self._threads = [
            threading.Thread(
                target=self._serve, args=(s,), name=f"eotrain-swap-{s.value}", daemon=True
            )
            for s in Stream
        ]
        self._started = False

    def start(self) -> None:
        if not self._started:
            for thread in self._threads:
                thread.start()
            self._started = True

    def submit(self, stream: Stream, job: _Job) -> None:
        if job.kind is ActionKind.LOAD:
            assert job.due is not None
            with self._cond:
                self._pending[job.due] = self._pending.get(job.due, 0) + 1
        self._queues[stream].put(job)

    def _serve(self, stream: Stream) -> None:
        jobs = self._queues[stream]
        while True:
            job = jobs.get()
            if job is None:
                jobs.task_done()
                return
            try:
                if self._error is None:
                    if self.latency:
                        time.sleep(self.latency)
                    if job.kind is ActionKind.LOAD:
                        self.store.read_into(job.tensor, job.buffer)
                    else:
                        self.store.write(job.tensor, job.buffer)
                    logger.debug(f"{stream.value}: {job.kind.value} {job.tensor} (EO {job.eo})")
            except (OSError, ValueError, KeyError) as e:
                with self._cond:
                    if self._error is None:
                        self._error = SwapIOError(job.tensor, job.eo, e)
                    self._cond.notify_all()
            finally:
                if job.kind is ActionKind.LOAD:
                    self.cache.mark_loaded(job.tensor)
                    with self._cond:
                        assert job.due is not None
                        self._pending[job.due] -= 1
                        if not self._pending[job.due]:
                            del self._pending[job.due]
                        self._cond.notify_all()
                jobs.task_done()

    def wait(self, eo: int) -> float:
        """Block until loads due at or before `eo` are done; returns the stall time."""
        start = time.perf_counter()
        stalled = False
        with self._cond:
            while self._error is None and any(due <= eo for due in self._pending):
                stalled = True
                self._cond.wait()
            if self._error is not None:
                raise self._error
        elapsed = time.perf_counter() - start
        if stalled:
            self.stall_count += 1
            self.stall_seconds += elapsed
            logger.debug(f"Stalled {elapsed * 1e3:.3f} ms waiting for loads due at EO {eo}")
        return elapsed if stalled else 0.0

    def drain(self) -> None:
        """Wait until both queues are empty."""
        for jobs in self._queues.values():
            jobs.join()
        if self._error is not None:
            raise self._error

    def stop(self) -> None:
        if self._started:
            for stream in Stream:
                self._queues[stream].put(None)
            for thread in self._threads:
                thread.join()
            self._started = False


class SwapEngine:
    """Executes a SwapSchedule at runtime on top of a CachePool and SwapStore."""

    def __init__(
        self,
        schedule: SwapSchedule,
        tensors: Iterable[TensorSpec],
        store: SwapStore,
        latency: float = 0.0,
    ):
        self.schedule = schedule
        elements = {t.name: t.dim.element_count for t in tensors if not t.is_placeholder}
        self.cache = CachePool(elements)
        self.loader = SwapLoader(store, self.cache, latency)
        self.swap_in_count = 0
        self.swap_out_count = 0
        self.peak_resident_bytes = 0

    def __enter__(self) -> "SwapEngine":
        self.loader.start()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        try:
            if exc_type is None:
                self.loader.drain()
        finally:
            self.loader.stop()

    def buffer(self, root: str) -> np.ndarray:
        return self.cache.buffer(root)

    def _apply(self, action: SwapAction, eo: int) -> None:
        if action.kind is ActionKind.LOAD:
            buffer = self.cache.admit(action.tensor, loading=True)
            job = _Job(action.kind, action.tensor, buffer, eo, action.due)
            self.loader.submit(action.stream, job)
            self.swap_in_count += 1
        elif action.kind is ActionKind.ALLOCATE:
            self.cache.admit(action.tensor)
        elif action.kind is ActionKind.STORE:
            buffer = self.cache.evict(action.tensor)
            self.loader.submit(action.stream, _Job(action.kind, action.tensor, buffer, eo))
            self.swap_out_count += 1
        else:
            self.cache.evict(action.tensor)

    def before(self, eo: int) -> float:
        """Run the boundary actions of `eo` and wait for its loads; returns stall time."""
        for action in self.schedule.before[eo]:
            self._apply(action, eo)
        stall = self.loader.wait(eo)
        self.peak_resident_bytes = max(self.peak_resident_bytes, self.cache.resident_bytes)
        return stall

    def end_iteration(self) -> None:
        for action in self.schedule.flush:
            self._apply(action, self.schedule.eo_max)
        leaked = self.cache.resident_names
        if leaked:
            raise ResidencyError(f"still cached after the iteration: {sorted(leaked)}")

    def stats(self, per_eo_latency: Sequence[float] = ()) -> SwapStats:
        return SwapStats(
            mode=self.schedule.mode.value,
            lookahead=self.schedule.lookahead,
            swap_in_count=self.swap_in_count,
            swap_out_count=self.swap_out_count,
            peak_resident_bytes=self.peak_resident_bytes,
            stall_count=self.loader.stall_count,
            stall_seconds=self.loader.stall_seconds,
            per_eo_latency=list(per_eo_latency),
        )


def swap_stats(
    schedule: SwapSchedule,
    iterations: int,
    pool_bytes: int,
    per_eo_latency: Sequence[float] = (),
) -> SwapStats:
    """Counters a run of `iterations` produces under `schedule`, from the schedule alone.

    Mode off reports no swaps and the whole arena as resident.
    """
    if schedule.mode is SwapMode.OFF:
        return SwapStats(
            mode="off", peak_resident_bytes=pool_bytes, per_eo_latency=list(per_eo_latency)
        )
    return SwapStats(
        mode=schedule.mode.value,
        lookahead=schedule.lookahead,
        swap_in_count=schedule.swap_in_count * iterations,
        swap_out_count=schedule.swap_out_count * iterations,
        peak_resident_bytes=schedule.peak_resident_bytes,
        per_eo_latency=list(per_eo_latency),
    )
