# eotrain/core/data.py

"""
eotrain data production

DataProducer yields (input, label) samples from a seeded synthetic task or from a
raw float32 record file; BatchQueue assembles them into full batches on a background
thread and hands them over through a bounded queue.
"""

import logging
import queue
import threading
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from .constants import DTYPE
from .graph import Dim4
from .models import DataSettings
from .seed import make_rng

logger = logging.getLogger("eotrain.data")

Batch = Tuple[np.ndarray, np.ndarray]

# batches per epoch when neither the settings nor the file fix the dataset size
DEFAULT_BATCHES_PER_EPOCH = 4


class DataProducer:
    """Deterministic sample source for one model.

    Args:
        input_dim: Model input dims (batch axis ignored)
        label_dim: Loss input dims (batch axis ignored)
        settings: Data section of the run config
        seed: Seed of the synthetic generator

    Raises:
        ValueError: Unusable settings (scale task with mismatched sizes, bad file)
    """

    def __init__(
        self,
        input_dim: Dim4,
        label_dim: Dim4,
        settings: Optional[DataSettings] = None,
        seed: int = 0,
    ):
        self.settings = settings or DataSettings()
        self.seed = seed
        self.sample_shape = input_dim.shape[1:]
        self.label_shape = label_dim.shape[1:]
        if self.settings.source == "file":
            self.inputs, self.labels = self._read_records()
        else:
            size = self.settings.dataset_size or input_dim.batch * DEFAULT_BATCHES_PER_EPOCH
            self.inputs, self.labels = self._synthesize(size)
        logger.debug(
            f"DataProducer: {len(self)} samples of {self.sample_shape} -> {self.label_shape}"
        )

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def _synthesize(self, size: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = make_rng(self.seed, "data")
        s = self.settings
        in_features = int(np.prod(self.sample_shape))
        out_features = int(np.prod(self.label_shape))
        if s.distribution == "uniform":
            inputs = rng.uniform(-1.0, 1.0, size=(size, in_features))
        else:
            inputs = rng.normal(0.0, 1.0, size=(size, in_features))

        if s.task == "scale":
            if in_features != out_features:
                raise ValueError(
                    f"scale task needs equal input and label sizes, got {in_features} "
                    f"and {out_features}"
                )
            labels = s.scale * inputs
        elif s.task == "projection":
            spread = 1.0 / np.sqrt(in_features)
            projection = rng.normal(0.0, spread, size=(in_features, out_features))
            labels = np.tanh(inputs @ projection)
        else:
            labels = rng.normal(0.0, 1.0, size=(size, out_features))

        return (
            inputs.reshape((size,) + self.sample_shape).astype(DTYPE),
            labels.reshape((size,) + self.label_shape).astype(DTYPE),
        )

    def _read_records(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.settings.path:
            raise ValueError("file data source needs a path")
        path = Path(self.settings.path)
        if not path.exists():
            raise ValueError(f"data file not found: {path}")
        in_features = int(np.prod(self.sample_shape))
        record = in_features + int(np.prod(self.label_shape))
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % record:
            raise ValueError(
                f"{path}: {raw.size} floats is not a multiple of the {record}-float record"
            )
        records = raw.reshape(-1, record)
        if self.settings.dataset_size is not None:
            records = records[: self.settings.dataset_size]
        count = records.shape[0]
        inputs = records[:, :in_features].reshape((count,) + self.sample_shape)
        labels = records[:, in_features:].reshape((count,) + self.label_shape)
        return inputs.astype(DTYPE), labels.astype(DTYPE)

    def batches_per_epoch(self, batch_size: int) -> int:
        return len(self) // batch_size

    def batches(self, batch_size: int, epoch: int = 0) -> Iterator[Batch]:
        """Full batches of one epoch in dataset order; a partial final batch is dropped."""
        for k in range(self.batches_per_epoch(batch_size)):
            window = slice(k * batch_size, (k + 1) * batch_size)
            yield self.inputs[window], self.labels[window]

    def take(self, batch_size: int, steps: int) -> List[Batch]:
        """The first `steps` batches, cycling through epochs."""
        per_epoch = self.batches_per_epoch(batch_size)
        if per_epoch == 0:
            raise ValueError(f"dataset of {len(self)} samples is smaller than one batch")
        taken: List[Batch] = []
        epoch = 0
        while len(taken) < steps:
            for batch in self.batches(batch_size, epoch):
                taken.append(batch)
                if len(taken) == steps:
                    break
            epoch += 1
        return taken


def write_records(path: Union[str, Path], inputs: np.ndarray, labels: np.ndarray) -> Path:
    """Write samples as raw little-endian float32 records (sample, then label)."""
    count = inputs.shape[0]
    records = np.concatenate(
        [inputs.reshape(count, -1), labels.reshape(count, -1)], axis=1
    ).astype("<f4")
    path = Path(path)
    records.tofile(path)
    return path


_DONE = object()


class BatchQueue:
    """Background batch assembly with a bounded handoff queue."""

    def __init__(self, producer: DataProducer, batch_size: int, capacity: int = 4):
        self.producer = producer
        self.batch_size = batch_size
        self.capacity = capacity

    def stream(self, epochs: int) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yield (epoch, input batch, label batch) for `epochs` epochs."""
        handoff: "queue.Queue[object]" = queue.Queue(maxsize=self.capacity)
        stop = threading.Event()

        def put(item: object) -> bool:
            while not stop.is_set():
                try:
                    handoff.put(item, timeout=0.05)
                    return True
                except queue.Full:
                    continue
            return False

        def fill() -> None:
            try:
                for epoch in range(epochs):
                    for x, y in self.producer.batches(self.batch_size, epoch):
                        if not put((epoch, x, y)):
                            return
                put(_DONE)
            except Exception as e:  # forwarded to the consumer
                put(e)

        worker = threading.Thread(target=fill, name="eotrain-batch-queue", daemon=True)
        worker.start()
        try:
            while True:
                item = handoff.get()
                if item is _DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item  # type: ignore[misc]
        finally:
            stop.set()
            worker.join()
