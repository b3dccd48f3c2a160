# eotrain/core/trainer.py

"""
eotrain training loop

Walks the steps of a compiled model EO by EO, once per batch. Tensors live either in
the planned arena (swap off) or in the swap cache, fed from a backing store by the
schedule of the chosen swap mode.
"""

import contextlib
import logging
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import psutil

from .compiler import CompiledModel, compile_model
from .constants import DTYPE, SWAP_STORE_SUFFIX
from .data import BatchQueue, DataProducer
from .exceptions import DivergenceError, ShapeError
from .exec_order import LABEL_NAME, ProcKind, activation_name
from .graph import ModelGraph
from .hashing import hash_weights, weight_deltas
from .layers import (
    LayerKernel,
    MseLossKernel,
    StepContext,
    clip_gradients_global_norm,
    initial_weights,
    make_kernel,
)
from .models import DataSettings, RunConfigModel, RunReport, SwapStats
from .oracle import reference_oracle
from .seed import set_seed
from .swap import SwapEngine, SwapMode, SwapStore, build_swap_schedule, swap_stats
from .tensor import Arena, Resolver, Workspace, materialize

logger = logging.getLogger("eotrain.trainer")

Weights = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainOptions:
    """Run settings that are not part of the model file.

    `None` for swap, lookahead and seed means "use the value from [model]".
    """

    swap: Optional[str] = None
    lookahead: Optional[int] = None
    seed: Optional[int] = None
    steps: Optional[int] = None
    merge: bool = True
    poison: bool = False
    store_dir: Optional[str] = None
    io_latency_ms: float = 0.0
    data: DataSettings = field(default_factory=DataSettings)

    @classmethod
    def from_config(cls, config: RunConfigModel, **overrides: object) -> "TrainOptions":
        """Options from a validated run config; non-None overrides win."""
        options = cls(
            steps=config.run.steps,
            merge=config.run.merge,
            poison=config.run.poison,
            store_dir=config.run.store_dir,
            io_latency_ms=config.run.io_latency_ms,
            data=config.data,
        )
        updates = {key: value for key, value in overrides.items() if value is not None}
        return replace(options, **updates) if updates else options


@dataclass
class TrainResult:
    report: RunReport
    weights: Weights


@dataclass(frozen=True)
class VerifyResult:
    """Outcome of training against the reference trainer."""

    model: str
    steps: int
    tolerance: float
    deltas: Dict[str, float]
    losses: List[float]
    oracle_losses: List[float]

    @property
    def max_abs_delta(self) -> float:
        return max(self.deltas.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_abs_delta <= self.tolerance


def make_producer(
    compiled: CompiledModel, options: Optional[TrainOptions] = None, seed: Optional[int] = None
) -> DataProducer:
    """DataProducer sized for the model's input and label tensors."""
    options = options or TrainOptions()
    if seed is None:
        seed = options.seed if options.seed is not None else compiled.graph.hyper.seed
    return DataProducer(
        compiled.spec(activation_name(0)).dim,
        compiled.spec(LABEL_NAME).dim,
        options.data,
        seed,
    )


class Trainer:
    """Runs training iterations over a compiled model.

    Args:
        compiled: Output of `compile_model`
        options: Run settings (defaults to the [model] section only)
        producer: Data source (defaults to one built from `options.data`)
    """

    def __init__(
        self,
        compiled: CompiledModel,
        options: Optional[TrainOptions] = None,
        producer: Optional[DataProducer] = None,
    ):
        self.compiled = compiled
        self.options = options or TrainOptions()
        hyper = compiled.graph.hyper
        self.seed = self.options.seed if self.options.seed is not None else hyper.seed
        self.mode = SwapMode.parse(self.options.swap or hyper.swap)
        self.lookahead = self.options.lookahead or hyper.lookahead
        self.producer = producer or make_producer(compiled, self.options, self.seed)

        plan = compiled.exec_plan
        self.kernels: Dict[str, LayerKernel] = {b.node.id: make_kernel(b) for b in plan.bindings}
        self.loss = MseLossKernel(plan.loss)
        self.steps_by_eo = plan.steps_by_eo()
        self.gradients = [
            name
            for b in plan.bindings
            for name in (b.weight_grad, b.bias_grad)
            if name is not None
        ]
        self.parameters = [
            name for b in plan.bindings for name in (b.weight, b.bias) if name is not None
        ]
        # storage groups whose last use is at each EO, for poisoning
        self.expiring: Dict[int, List[str]] = {}
        for group in compiled.merged:
            if group.is_placeholder or group.persistent:
                continue
            self.expiring.setdefault(group.lifetime[1], []).append(group.name)
        self.workspace = Workspace()

    # -----------------------------------------------------------------------

    def _external(self) -> Weights:
        return {
            name: np.zeros(self.compiled.spec(name).dim.shape, dtype=DTYPE)
            for name in (activation_name(0), LABEL_NAME)
        }

    def _initial(self, initial: Optional[Mapping[str, np.ndarray]]) -> Weights:
        weights = dict(initial) if initial is not None else initial_weights(
            self.compiled.graph, self.seed
        )
        if set(weights) != set(self.parameters):
            raise ShapeError(
                f"initial weights {sorted(weights)} do not match model parameters "
                f"{sorted(self.parameters)}"
            )
        for name, array in weights.items():
            expected = self.compiled.spec(name).dim
            if array.size != expected.element_count:
                raise ShapeError(f"initial '{name}' has shape {array.shape}, expected {expected}")
        return weights

    def _iteration(
        self,
        ctx: StepContext,
        latency: np.ndarray,
        engine: Optional[SwapEngine] = None,
        arena: Optional[Arena] = None,
    ) -> float:
        plan = self.compiled.exec_plan
        max_norm = self.compiled.graph.hyper.clip_grad_norm
        loss_id = plan.loss.node.id
        loss = math.nan
        for eo in range(plan.eo_max):
            start = time.perf_counter()
            if engine is not None:
                engine.before(eo)
            ctx.eo = eo
            if eo == plan.clip_eo and max_norm is not None:
                clip_gradients_global_norm([ctx.view(name) for name in self.gradients], max_norm)
            for step in self.steps_by_eo.get(eo, ()):
                if step.layer != loss_id:
                    self.kernels[step.layer].run(step.proc, ctx)
                elif step.proc is ProcKind.F:
                    loss = self.loss.forward(ctx)
                else:
                    self.loss.compute_derivative(ctx)
            if arena is not None and self.options.poison:
                for root in self.expiring.get(eo, ()):
                    arena.poison(root)
            latency[eo] += time.perf_counter() - start
        if engine is not None:
            engine.end_iteration()
        return loss

    def _batches(self) -> Tuple[int, Optional[int]]:
        """(epochs, iteration cap) for this run."""
        batch = self.compiled.graph.hyper.batch_size
        per_epoch = self.producer.batches_per_epoch(batch)
        if per_epoch == 0:
            raise ValueError(f"dataset of {len(self.producer)} samples is smaller than one batch")
        steps = self.options.steps
        if steps is None:
            return self.compiled.graph.hyper.epochs, None
        return math.ceil(steps / per_epoch), steps

    def _loop(
        self,
        resolver: Resolver,
        external: Weights,
        engine: Optional[SwapEngine],
        arena: Optional[Arena],
    ) -> Tuple[List[float], List[int], np.ndarray]:
        hyper = self.compiled.graph.hyper
        ctx = StepContext(resolver, self.workspace, hyper.learning_rate)
        latency = np.zeros(self.compiled.exec_plan.eo_max)
        epochs, cap = self._batches()
        losses: List[float] = []
        epoch_of: List[int] = []
        queue = BatchQueue(self.producer, hyper.batch_size, self.options.data.queue_capacity)
        with contextlib.closing(queue.stream(epochs)) as stream:
            for epoch, x, y in stream:
                source = external[activation_name(0)]
                np.copyto(source, x.reshape(source.shape))
                np.copyto(external[LABEL_NAME], y.reshape(external[LABEL_NAME].shape))
                loss = self._iteration(ctx, latency, engine, arena)
                if not math.isfinite(loss):
                    raise DivergenceError(len(losses), loss)
                logger.debug(f"iteration {len(losses)} (epoch {epoch}): loss={loss:.6g}")
                losses.append(loss)
                epoch_of.append(epoch)
                if cap is not None and len(losses) >= cap:
                    break
        return losses, epoch_of, latency

    def _run_arena(self, weights: Weights, external: Weights):
        compiled = self.compiled
        arena, resolver = materialize(compiled.memory, compiled.merged, external)
        for name, array in weights.items():
            view = resolver.view(name)
            np.copyto(view, array.reshape(view.shape))
        losses, epoch_of, latency = self._loop(resolver, external, None, arena)
        final = {name: resolver.view(name).copy() for name in self.parameters}
        return losses, epoch_of, latency, final, compiled.memory.pool_bytes, None

    def _run_swapped(self, weights: Weights, external: Weights, directory: Path):
        compiled = self.compiled
        schedule = build_swap_schedule(
            compiled.merged, compiled.exec_plan.eo_max, self.mode, self.lookahead
        )
        extents = {g.name: g.size_bytes for g in compiled.merged if not g.is_placeholder}
        path = directory / f"{compiled.graph.name}{SWAP_STORE_SUFFIX}"
        with SwapStore.create(path, extents) as store:
            for name, array in weights.items():
                store.write(compiled.memory.root_of(name), array)
            engine = SwapEngine(
                schedule, compiled.merged, store, self.options.io_latency_ms / 1000.0
            )
            resolver = Resolver(compiled.merged, compiled.memory, engine, external)
            with engine:
                losses, epoch_of, latency = self._loop(resolver, external, engine, None)
            final: Weights = {}
            for name in self.parameters:
                dim = compiled.spec(name).dim
                flat = store.read(compiled.memory.root_of(name))
                final[name] = flat[: dim.element_count].reshape(dim.shape)
        return losses, epoch_of, latency, final, engine.peak_resident_bytes, engine

    def run(self, initial: Optional[Mapping[str, np.ndarray]] = None) -> TrainResult:
        """Train and return the run report together with the final weights.

        Raises:
            DivergenceError: Non-finite loss
            ShapeError: `initial` does not match the model parameters
        """
        set_seed(self.seed)
        weights = self._initial(initial)
        external = self._external()
        process = psutil.Process()
        rss_before = process.memory_info().rss
        started = time.perf_counter()

        if self.mode is SwapMode.OFF:
            losses, epoch_of, latency, final, peak, engine = self._run_arena(weights, external)
        else:
            with contextlib.ExitStack() as stack:
                if self.options.store_dir:
                    directory = Path(self.options.store_dir)
                else:
                    directory = Path(
                        stack.enter_context(tempfile.TemporaryDirectory(prefix="eotrain-"))
                    )
                losses, epoch_of, latency, final, peak, engine = self._run_swapped(
                    weights, external, directory
                )

        wall = time.perf_counter() - started
        rss_delta = process.memory_info().rss - rss_before
        iterations = len(losses)
        per_eo = (latency / iterations).tolist() if iterations else latency.tolist()
        stats: SwapStats
        if engine is None:
            off = build_swap_schedule(self.compiled.merged, self.compiled.exec_plan.eo_max, "off")
            stats = swap_stats(off, iterations, self.compiled.memory.pool_bytes, per_eo)
        else:
            stats = engine.stats(per_eo)

        epoch_losses = [
            float(np.mean([loss for loss, e in zip(losses, epoch_of) if e == epoch]))
            for epoch in sorted(set(epoch_of))
        ]
        report = RunReport(
            model=self.compiled.graph.name,
            seed=self.seed,
            iterations=iterations,
            epoch_losses=epoch_losses,
            iteration_losses=losses,
            per_eo_latency=per_eo,
            peak_resident_bytes=peak,
            swap=stats,
            plan=self.compiled.summary(),
            workspace_bytes=self.workspace.nbytes,
            rss_delta_bytes=rss_delta,
            weights_sha256=hash_weights(final),
            wall_seconds=wall,
        )
        logger.info(
            f"Trained '{report.model}' for {iterations} iterations "
            f"(swap={self.mode.value}) in {wall:.2f}s"
        )
        return TrainResult(report=report, weights=final)


def train(
    graph: Union[ModelGraph, CompiledModel],
    options: Optional[TrainOptions] = None,
    producer: Optional[DataProducer] = None,
    initial: Optional[Mapping[str, np.ndarray]] = None,
) -> TrainResult:
    """Compile (if needed) and train a model.

    Args:
        graph: Parsed model or an already compiled one
        options: Run settings
        producer: Data source override
        initial: Starting weights (default: seeded Xavier init)

    Returns:
        TrainResult: Run report and final weights
    """
    options = options or TrainOptions()
    compiled = graph if isinstance(graph, CompiledModel) else compile_model(graph, options.merge)
    return Trainer(compiled, options, producer).run(initial)


def verify(
    graph: ModelGraph,
    steps: int = 10,
    tolerance: float = 1e-4,
    options: Optional[TrainOptions] = None,
) -> VerifyResult:
    """Train for `steps` iterations and compare the weights with the reference trainer."""
    options = replace(options or TrainOptions(), steps=steps)
    compiled = compile_model(graph, options.merge)
    trainer = Trainer(compiled, options)
    result = trainer.run()

    batches = make_producer(compiled, options, trainer.seed).take(
        compiled.graph.hyper.batch_size, steps
    )
    oracle_weights, oracle_losses = reference_oracle(
        compiled.graph, batches, steps=steps, seed=trainer.seed
    )
    deltas = weight_deltas(result.weights, oracle_weights)
    outcome = VerifyResult(
        model=compiled.graph.name,
        steps=steps,
        tolerance=tolerance,
        deltas=deltas,
        losses=result.report.iteration_losses,
        oracle_losses=oracle_losses,
    )
    logger.info(f"verify '{outcome.model}': max |delta| = {outcome.max_abs_delta:.3e}")
    return outcome


def export_weights(path: Union[str, Path], weights: Mapping[str, np.ndarray]) -> Path:
    """Write weights in the swap-store format (index header + float32 extents)."""
    return SwapStore.export(path, weights)


def load_weights(path: Union[str, Path]) -> Weights:
    return SwapStore.load_arrays(path)


def compare_modes(
    graph: ModelGraph, modes: Sequence[str], options: Optional[TrainOptions] = None
) -> Dict[str, TrainResult]:
    """Train the same model once per swap mode."""
    options = options or TrainOptions()
    compiled = compile_model(graph, options.merge)
    return {mode: Trainer(compiled, replace(options, swap=mode)).run() for mode in modes}
