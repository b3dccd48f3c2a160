# eotrain/core/tensor.py

"""
eotrain tensor engine

Owns the arena that backs a MemoryPlan and hands out per-(tensor, EO) views. Views of
tensors merged into one storage group alias the same bytes. Under swap the arena is
replaced by the cache pool through the same `buffer(root)` protocol.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from .constants import DTYPE
from .exceptions import LifetimeError, ShapeError
from .exec_order import TensorSpec
from .planner import MemoryPlan

logger = logging.getLogger("eotrain.tensor")


class Backing(Protocol):
    def buffer(self, root: str) -> np.ndarray:
        """Flat storage of one storage group."""
        ...


class Workspace:
    """Scratch buffers keyed by (name, shape).

    A buffer is allocated (zero-filled) on first request and reused afterwards;
    `allocations` counts first requests only.
    """

    def __init__(self, dtype: str = DTYPE):
        self.dtype = np.dtype(dtype)
        self._buffers: Dict[Tuple[str, Tuple[int, ...]], np.ndarray] = {}
        self.allocations = 0

    def get(self, name: str, shape: Sequence[int]) -> np.ndarray:
        key = (name, tuple(int(n) for n in shape))
        buffer = self._buffers.get(key)
        if buffer is None:
            buffer = np.zeros(key[1], dtype=self.dtype)
            self._buffers[key] = buffer
            self.allocations += 1
            logger.debug(f"Workspace: allocated {name}{key[1]} ({buffer.nbytes} B)")
        return buffer

    @property
    def nbytes(self) -> int:
        return sum(buffer.nbytes for buffer in self._buffers.values())


class Arena:
    """One contiguous buffer of `plan.pool_bytes`, allocated once."""

    def __init__(self, plan: MemoryPlan, dtype: str = DTYPE):
        self.plan = plan
        self.dtype = np.dtype(dtype)
        if plan.pool_bytes % self.dtype.itemsize:
            raise ShapeError(f"pool of {plan.pool_bytes} B is not a multiple of {self.dtype}")
        self.data = np.zeros(plan.pool_bytes // self.dtype.itemsize, dtype=self.dtype)

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    def buffer(self, root: str) -> np.ndarray:
        assignment = self.plan.assignments[root]
        start = assignment.offset // self.dtype.itemsize
        return self.data[start : start + assignment.size // self.dtype.itemsize]

    def poison(self, root: str) -> None:
        """Fill a storage group with NaN (debug runs, after its lifetime ends)."""
        self.buffer(root).fill(np.nan)


@dataclass(frozen=True)
class TensorView:
    spec: TensorSpec
    data: np.ndarray


class Resolver:
    """Resolves (tensor name, EO) to a view shaped like the tensor's Dim4.

    Args:
        tensors: Merged tensor specs (one per storage group)
        plan: Memory plan mapping every logical name to its group
        backing: Arena or cache pool providing group buffers
        external: Caller-owned buffers for placeholder tensors
    """

    def __init__(
        self,
        tensors: Iterable[TensorSpec],
        plan: MemoryPlan,
        backing: Backing,
        external: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.plan = plan
        self.backing = backing
        self._specs: Dict[str, TensorSpec] = {m.name: m for t in tensors for m in t.members}
        self._external: Dict[str, np.ndarray] = {}
        for name, spec in self._specs.items():
            if not spec.is_placeholder:
                continue
            if external is None or name not in external:
                raise LifetimeError(f"no external buffer supplied for placeholder '{name}'")
            self.bind_external(name, external[name])

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._specs)

    def spec(self, name: str) -> TensorSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise LifetimeError(f"unknown tensor '{name}'") from None

    def bind_external(self, name: str, array: np.ndarray) -> None:
        spec = self.spec(name)
        if array.size != spec.dim.element_count:
            raise ShapeError(
                f"external buffer for '{name}' has {array.size} elements, expected {spec.dim}"
            )
        self._external[name] = array.reshape(spec.dim.shape)

    def resolve(self, name: str, eo: Optional[int] = None) -> TensorView:
        """View of `name`; with `eo` given, the EO must lie inside its lifetime."""
        spec = self.spec(name)
        if eo is not None:
            lo, hi = spec.lifetime
            if not lo <= eo <= hi:
                raise LifetimeError(
                    f"'{name}' requested at EO {eo} outside its lifetime [{lo},{hi}]"
                )
        if spec.is_placeholder:
            return TensorView(spec, self._external[name])
        flat = self.backing.buffer(self.plan.root_of(name))
        return TensorView(spec, flat[: spec.dim.element_count].reshape(spec.dim.shape))

    def view(self, name: str, eo: Optional[int] = None) -> np.ndarray:
        return self.resolve(name, eo).data


def materialize(
    plan: MemoryPlan,
    tensors: Sequence[TensorSpec],
    external: Mapping[str, np.ndarray],
    dtype: str = DTYPE,
) -> Tuple[Arena, Resolver]:
    """Allocate the arena for a validated plan and build the resolver over it.

    Raises:
        LifetimeError: A placeholder tensor has no external buffer
    """
    arena = Arena(plan, dtype)
    resolver = Resolver(tensors, plan, arena, external)
    logger.debug(f"Materialized arena of {arena.nbytes} B for {len(resolver.names)} tensors")
    return arena, resolver
