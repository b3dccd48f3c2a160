# eotrain/core/planner.py

"""
eotrain memory planner

Packs every non-placeholder tensor into one arena so that tensors with disjoint
lifetimes share bytes. Each tensor takes the lowest gap inside the current arena that
is free for its whole lifetime, or extends the arena. Tensors are visited by
ascending first EO (ties: longest lifetime first). When that arena overshoots the
peak-live bound by more than FRAGMENTATION_LIMIT, a second walk by descending size is
tried and the smaller arena wins.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .constants import ARENA_ALIGNMENT, FRAGMENTATION_LIMIT
from .exec_order import TensorSpec

logger = logging.getLogger("eotrain.planner")


@dataclass(frozen=True)
class Assignment:
    offset: int
    size: int

    @property
    def end(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class Conflict:
    first: str
    second: str
    reason: str

    def __str__(self) -> str:
        return f"{self.first} / {self.second}: {self.reason}"


@dataclass(frozen=True)
class MemoryPlan:
    """Arena layout of one compiled model.

    `assignments` is keyed by storage-group name; `roots` maps every logical tensor
    name (aliases included) to the group it lives in.
    """

    assignments: Dict[str, Assignment]
    pool_bytes: int
    peak_live_bytes: int
    external_bytes: int
    live_bytes: Tuple[int, ...]
    roots: Dict[str, str] = field(default_factory=dict)
    alignment: int = ARENA_ALIGNMENT

    @property
    def total_bytes(self) -> int:
        """Arena plus externally owned input and label."""
        return self.pool_bytes + self.external_bytes

    @property
    def eo_max(self) -> int:
        return len(self.live_bytes)

    def root_of(self, name: str) -> str:
        return self.roots.get(name, name)

    def assignment(self, name: str) -> Assignment:
        return self.assignments[self.root_of(name)]

    def to_dict(self) -> Dict[str, object]:
        return {
            "pool_bytes": self.pool_bytes,
            "external_bytes": self.external_bytes,
            "total_bytes": self.total_bytes,
            "peak_live_lower_bound": self.peak_live_bytes,
            "alignment": self.alignment,
            "assignments": {
                name: {"offset": a.offset, "size": a.size} for name, a in self.assignments.items()
            },
            "aliases": {name: root for name, root in self.roots.items() if name != root},
            "live_bytes_per_eo": list(self.live_bytes),
        }


def align(size: int, alignment: int = ARENA_ALIGNMENT) -> int:
    return -(-size // alignment) * alignment


def live_bytes_per_eo(
    tensors: Iterable[TensorSpec], include_external: bool = False
) -> List[int]:
    """Bytes of simultaneously live tensors at every EO (raw, unaligned sizes)."""
    selected = [t for t in tensors if include_external or not t.is_placeholder]
    if not selected:
        return []
    horizon = max(t.lifetime[1] for t in selected) + 1
    live = [0] * horizon
    for t in selected:
        lo, hi = t.lifetime
        for eo in range(lo, hi + 1):
            live[eo] += t.size_bytes
    return live


def peak_live_lower_bound(tensors: Iterable[TensorSpec], include_external: bool = False) -> int:
    """Fragmentation-free lower bound on the arena size.

    Args:
        tensors: Merged tensor specs
        include_external: Also count placeholder tensors (input and label)

    Returns:
        Max over EOs of the bytes whose lifetime covers that EO
    """
    return max(live_bytes_per_eo(tensors, include_external), default=0)


def _first_fit(
    placed: Sequence[Tuple[int, int, int, int]], lo: int, hi: int, size: int, pool: int
) -> Optional[int]:
    busy = sorted((off, end) for off, end, plo, phi in placed if plo <= hi and lo <= phi)
    cursor = 0
    for off, end in busy:
        if off - cursor >= size:
            return cursor
        cursor = max(cursor, end)
    if pool - cursor >= size:
        return cursor
    return None


def _place(
    order: Sequence[TensorSpec], alignment: int
) -> Tuple[Dict[str, Assignment], int]:
    assignments: Dict[str, Assignment] = {}
    placed: List[Tuple[int, int, int, int]] = []
    pool = 0
    for t in order:
        lo, hi = t.lifetime
        size = align(t.size_bytes, alignment)
        offset = _first_fit(placed, lo, hi, size, pool)
        if offset is None:
            offset = pool
            logger.debug(f"{t.name}: no free gap for {size} B over EO [{lo},{hi}], extend @{pool}")
        else:
            logger.debug(f"{t.name}: reuse @{offset} for {size} B over EO [{lo},{hi}]")
        assignments[t.name] = Assignment(offset, size)
        placed.append((offset, offset + size, lo, hi))
        pool = max(pool, offset + size)
    return assignments, pool


def plan_memory(tensors: Sequence[TensorSpec], alignment: int = ARENA_ALIGNMENT) -> MemoryPlan:
    """Assign arena offsets to merged tensors.

    Args:
        tensors: Merged tensor specs with non-empty EO sets
        alignment: Byte alignment of every offset and reservation

    Returns:
        MemoryPlan: Offsets, arena size, lower bound and external bytes

    Raises:
        PlanningError: A tensor carries an empty EO set
    """
    planned = [t for t in tensors if not t.is_placeholder]
    external = sum(t.size_bytes for t in tensors if t.is_placeholder)
    live = live_bytes_per_eo(planned)
    bound = max(live, default=0)
    by_lifetime = sorted(planned, key=lambda t: (t.lifetime[0], -t.lifetime[1]))

    assignments, pool = _place(by_lifetime, alignment)
    if pool > FRAGMENTATION_LIMIT * bound:
        by_size = sorted(by_lifetime, key=lambda t: -align(t.size_bytes, alignment))
        size_assignments, size_pool = _place(by_size, alignment)
        logger.debug(f"Arena by first EO: {pool} B over bound {bound} B, by size: {size_pool} B")
        if size_pool < pool:
            assignments, pool = size_assignments, size_pool

    roots = {m.name: t.name for t in tensors for m in t.members}
    plan = MemoryPlan(
        assignments={t.name: assignments[t.name] for t in planned},
        pool_bytes=pool,
        peak_live_bytes=bound,
        external_bytes=external,
        live_bytes=tuple(live),
        roots=roots,
        alignment=alignment,
    )
    logger.debug(
        f"Planned {len(planned)} tensors: pool={pool} B, bound={plan.peak_live_bytes} B, "
        f"external={external} B"
    )
    return plan


def validate_plan(plan: MemoryPlan, tensors: Sequence[TensorSpec]) -> List[Conflict]:
    """Check that lifetime-overlapping tensors never share bytes.

    Tensors resolving to the same storage group are aliases by construction and are
    not compared. Violations are returned, never raised.
    """
    conflicts: List[Conflict] = []
    placed: List[Tuple[TensorSpec, str, int, int]] = []
    for t in tensors:
        if t.is_placeholder:
            continue
        root = plan.root_of(t.name)
        assignment = plan.assignments.get(root)
        if assignment is None:
            conflicts.append(Conflict(t.name, t.name, "not placed in the arena"))
            continue
        start, end = assignment.offset, assignment.offset + t.size_bytes
        if end > plan.pool_bytes:
            conflicts.append(Conflict(t.name, t.name, f"ends at {end} beyond pool"))
        placed.append((t, root, start, end))

    for i, (a, root_a, start_a, end_a) in enumerate(placed):
        lo_a, hi_a = a.lifetime
        for b, root_b, start_b, end_b in placed[i + 1 :]:
            if root_a == root_b:
                continue
            lo_b, hi_b = b.lifetime
            if lo_a <= hi_b and lo_b <= hi_a and start_a < end_b and start_b < end_a:
                conflicts.append(
                    Conflict(
                        a.name,
                        b.name,
                        f"bytes [{start_a},{end_a}) and [{start_b},{end_b}) overlap while "
                        f"EO [{lo_a},{hi_a}] and [{lo_b},{hi_b}] intersect",
                    )
                )
    return conflicts
