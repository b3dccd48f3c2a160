import dataclasses

import numpy as np
import pytest

from eotrain.core.exceptions import ResidencyError
from eotrain.core.swap import (
    ActionKind,
    CachePool,
    Stream,
    SwapEngine,
    SwapMode,
    SwapStore,
    accessed_groups,
    build_swap_schedule,
    swap_stats,
)


def _schedule(model, mode, lookahead=1):
    return build_swap_schedule(model.merged, model.exec_plan.eo_max, mode, lookahead)


def _actions(schedule, eo):
    return {a.tensor: a.kind for a in schedule.before[eo]}


def test_mode_parsing():
    assert SwapMode.parse("on_demand") is SwapMode.ON_DEMAND
    assert SwapMode.parse("Proactive") is SwapMode.PROACTIVE
    assert SwapMode.parse(SwapMode.OFF) is SwapMode.OFF
    with pytest.raises(ValueError, match="unknown swap mode"):
        SwapMode.parse("sometimes")


def test_off_schedule_is_empty(compiled):
    model = compiled("three_linear")
    schedule = _schedule(model, "off")
    assert schedule.eo_max == 0 and schedule.operation_count == 0
    stats = swap_stats(schedule, 5, model.memory.pool_bytes)
    assert stats.mode == "off"
    assert stats.peak_resident_bytes == model.memory.pool_bytes
    assert stats.swap_in_count == stats.swap_out_count == 0


def test_on_demand_keeps_only_accessed_groups(compiled):
    model = compiled("three_linear")
    schedule = _schedule(model, "ondemand")
    access = accessed_groups(model.merged, model.exec_plan.eo_max)
    assert [set(r) for r in schedule.resident] == access
    # everything resident leaves at every boundary
    for eo in range(1, schedule.eo_max):
        leaving = schedule.offload(eo - 1)
        assert leaving == set(schedule.resident[eo - 1])


def test_load_allocate_store_drop_release(compiled):
    model = compiled("three_linear", merge=False)
    schedule = _schedule(model, "ondemand")
    first = _actions(schedule, 0)
    assert first["W0"] is ActionKind.LOAD
    assert first["X1"] is ActionKind.ALLOCATE
    second = _actions(schedule, 1)
    # X1 is written back and read again by the next layer
    assert [a.kind for a in schedule.before[1] if a.tensor == "X1"] == [
        ActionKind.STORE,
        ActionKind.LOAD,
    ]
    assert second["W0"] is ActionKind.DROP
    third = _actions(schedule, 3)
    assert third["X3"] is ActionKind.RELEASE
    streams = {a.tensor: a.stream for a in schedule.before[0]}
    assert streams["W0"] is Stream.WPS and streams["X1"] is Stream.TPS


@pytest.mark.parametrize("mode", ["reduced", "proactive"])
def test_prefetch_and_offload_are_disjoint(compiled, mode):
    model = compiled("small_conv")
    schedule = _schedule(model, mode, lookahead=2)
    for eo in range(1, schedule.eo_max):
        assert not schedule.prefetch(eo) & schedule.offload(eo - 1)


def test_reduced_keeps_resident_tensors_across_boundaries(compiled):
    model = compiled("three_linear")
    on_demand = _schedule(model, "ondemand")
    reduced = _schedule(model, "reduced")
    assert on_demand.resident == reduced.resident
    assert reduced.swap_in_count < on_demand.swap_in_count
    assert reduced.swap_out_count <= on_demand.swap_out_count


def test_proactive_window(compiled):
    model = compiled("three_linear")
    schedule = _schedule(model, "proactive", lookahead=1)
    # EO 5 applies the last layer's update; X1 and D2 are prefetched for the
    # middle layer's weight gradient at EO 6
    assert schedule.resident[5] == frozenset({"W2", "dW2", "X1", "D2"})
    assert schedule.lookahead == 1
    wider = _schedule(model, "proactive", lookahead=3)
    for narrow, wide in zip(schedule.resident, wider.resident):
        assert narrow <= wide


def test_lookahead_must_be_positive(compiled):
    with pytest.raises(ValueError):
        _schedule(compiled("three_linear"), "proactive", lookahead=0)


def test_peak_resident_ordering_on_vgg16(compiled):
    model = compiled("vgg16")
    peaks = {
        mode: swap_stats(_schedule(model, mode), 1, model.memory.pool_bytes).peak_resident_bytes
        for mode in ("off", "ondemand", "reduced", "proactive")
    }
    assert peaks["ondemand"] == peaks["reduced"]
    assert peaks["reduced"] <= peaks["proactive"] < peaks["off"]
    assert peaks["proactive"] <= 0.5 * peaks["off"]
    on_demand = _schedule(model, "ondemand")
    reduced = _schedule(model, "reduced")
    assert reduced.operation_count < on_demand.operation_count


def test_swap_counts_scale_with_iterations(compiled):
    schedule = _schedule(compiled("three_linear"), "reduced")
    stats = swap_stats(schedule, 3, 0)
    assert stats.swap_in_count == 3 * schedule.swap_in_count
    assert stats.swap_out_count == 3 * schedule.swap_out_count


def test_store_round_trip(tmp_path):
    path = tmp_path / "t.swap"
    with SwapStore.create(path, {"a": 16, "b": 100}) as store:
        store.write("a", np.arange(4, dtype=np.float32))
        store.write("b", np.full(25, 2.5, dtype=np.float32))
        out = np.empty(4, dtype=np.float32)
        np.testing.assert_array_equal(store.read_into("a", out), np.arange(4))
        with pytest.raises(ValueError):
            store.write("a", np.zeros(5, dtype=np.float32))
        with pytest.raises(KeyError):
            store.write("c", np.zeros(1, dtype=np.float32))
    with SwapStore.open(path) as store:
        assert store.names == ("a", "b")
        np.testing.assert_array_equal(store.read("b"), np.full(25, 2.5, dtype=np.float32))


def test_export_keeps_shapes(tmp_path):
    arrays = {"W0": np.ones((1, 1, 3, 2), np.float32), "b0": np.zeros((1, 1, 1, 2), np.float32)}
    loaded = SwapStore.load_arrays(SwapStore.export(tmp_path / "w.swap", arrays))
    assert set(loaded) == {"W0", "b0"}
    assert loaded["W0"].shape == (1, 1, 3, 2)
    np.testing.assert_array_equal(loaded["W0"], arrays["W0"])


def test_open_rejects_foreign_files(tmp_path):
    path = tmp_path / "bad.swap"
    path.write_bytes(b"not a store at all")
    with pytest.raises(ValueError, match="bad magic"):
        SwapStore.open(path)


def test_cache_pool_residency():
    pool = CachePool({"a": 4, "b": 2})
    pool.admit("a")
    with pytest.raises(ResidencyError):
        pool.admit("a")
    pool.admit("b", loading=True)
    with pytest.raises(ResidencyError, match="before its load completed"):
        pool.buffer("b")
    pool.mark_loaded("b")
    assert pool.buffer("b").shape == (2,)
    assert pool.resident_names == frozenset({"a", "b"})
    assert pool.resident_bytes == 24
    pool.evict("a")
    with pytest.raises(ResidencyError):
        pool.evict("a")
    with pytest.raises(ResidencyError, match="not resident"):
        pool.buffer("a")


def test_engine_rejects_groups_left_in_cache(compiled, tmp_path):
    model = compiled("three_linear")
    schedule = dataclasses.replace(_schedule(model, "ondemand"), flush=())
    extents = {g.name: g.size_bytes for g in model.merged if not g.is_placeholder}
    with SwapStore.create(tmp_path / "t.swap", extents) as store:
        engine = SwapEngine(schedule, model.merged, store)
        with pytest.raises(ResidencyError, match="still cached"):
            with engine:
                for eo in range(schedule.eo_max):
                    engine.before(eo)
                engine.end_iteration()
