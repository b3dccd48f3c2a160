import pytest

from eotrain.core.exceptions import PlanningError
from eotrain.core.exec_order import (
    ProcKind,
    SpatialKind,
    SpatialRelation,
    TemporalRelation,
    TensorRole,
    TensorSpec,
    assign_execution_orders,
    assign_spatial_relations,
    disable_merging,
    layer_execution_orders,
    merge_tensors,
)
from eotrain.core.graph import Dim4, parse_model, realize

F, CG, CD, AG = ProcKind.F, ProcKind.CG, ProcKind.CD, ProcKind.AG


def spec(name, eos, spatial=None, writes=()):
    return TensorSpec(
        name=name,
        dim=Dim4(1, 1, 1, 4),
        role=TensorRole.ACTIVATION,
        temporal=frozenset({TemporalRelation.F}),
        spatial=spatial or SpatialRelation.create(),
        eos=tuple(eos),
        write_eos=tuple(writes),
    )


def test_layer_orders_without_clipping():
    assert layer_execution_orders(0, 3) == {F: 0, CG: 9, CD: 10, AG: 11}
    assert layer_execution_orders(2, 3) == {F: 2, CG: 3, CD: 4, AG: 5}


def test_layer_orders_with_clipping_put_every_update_last():
    orders = [layer_execution_orders(i, 3, clipping=True) for i in range(3)]
    assert orders[2] == {F: 2, CG: 3, CD: 4, AG: 9}
    assert orders[0] == {F: 0, CG: 7, CD: 8, AG: 11}
    computed = max(max(o[CG], o[CD]) for o in orders)
    assert computed < min(o[AG] for o in orders)


def test_frozen_layer_collapses_backward_slots():
    orders = layer_execution_orders(1, 3, frozen=True)
    assert orders[CG] == orders[CD] == orders[AG] == 6


def test_walkthrough_model_eos(compiled):
    model = compiled("lin_sig_flat")
    plan = model.exec_plan
    assert plan.eo_max == 12
    assert plan.clip_eo is None
    assert model.spec("X0").eos == (0, 9)
    assert model.spec("X0").is_placeholder
    assert model.group("X1").eos == (0, 1, 2, 7)
    assert {m.name for m in model.group("X1").members} == {"X1", "X2", "X3"}
    assert model.group("R").eos == (2, 3, 4, 7, 9)
    assert {m.name for m in model.group("R").members} == {"R", "D3", "D2", "D1"}


def test_loss_shares_eos_with_last_layer(compiled):
    model = compiled("lin_sig_flat")
    by_eo = model.exec_plan.steps_by_eo()
    loss_id = model.exec_plan.loss.node.id
    assert [(s.layer, s.proc) for s in by_eo[2]][-1] == (loss_id, F)
    assert [(s.layer, s.proc) for s in by_eo[3]][0] == (loss_id, CD)


def test_compute_steps_have_distinct_eos(compiled):
    plan = compiled("small_conv").exec_plan
    loss_id = plan.loss.node.id
    eos = [s.eo for s in plan.steps if s.layer != loss_id]
    assert len(eos) == len(set(eos))
    assert max(eos) == plan.eo_max - 1


def test_clipping_adds_global_write_eo(chain):
    graph = chain([8, 8, 4], extra="clip_grad_norm = 1.0")
    plan, tensors = assign_execution_orders(realize(graph))
    assert plan.clip_eo == 9
    by_name = {t.name: t for t in tensors}
    for name in ("dW0", "db0", "dW1", "db1", "dW2", "db2"):
        assert 9 in by_name[name].eos
        assert 9 in by_name[name].write_eos
    assert max(by_name[f"dW{i}"].eos[0] for i in range(3)) < 9


def test_frozen_layer_has_no_gradient(compiled):
    model = compiled("fc_fc_fc_frozen")
    names = {m.name for g in model.merged for m in g.members}
    assert "W1" in names and "dW1" not in names and "db1" not in names
    procs = [s.proc for s in model.exec_plan.steps if s.layer == "fc2"]
    assert procs == [F, CD]
    assert model.spec("W1").eos == (1, 6)


def test_spatial_relations_follow_inplace_class(bundled):
    graph = realize(bundled("lin_sig_flat"))
    _, tensors = assign_execution_orders(graph)
    related = {t.name: t.spatial for t in assign_spatial_relations(graph, tensors)}
    assert related["X2"] == SpatialRelation.modify_view("X1")
    assert related["X3"] == SpatialRelation.read_only_view("X2")
    assert related["D3"] == SpatialRelation.modify_view("R")
    assert related["X0"].kind is SpatialKind.P
    assert all(t.spatial.kind in (SpatialKind.C, SpatialKind.P) for t in disable_merging(
        assign_spatial_relations(graph, tensors)
    ))


def test_merge_downgrades_late_modify_view():
    target = spec("A", (0, 5))
    late = spec("B", (3, 6), SpatialRelation.modify_view("A"))
    merged = merge_tensors([target, late])
    assert [g.name for g in merged] == ["A", "B"]
    assert merged[1].spatial.kind is SpatialKind.C


def test_merge_folds_views_into_one_group():
    target = spec("A", (0, 2))
    modify = spec("B", (2, 4), SpatialRelation.modify_view("A"))
    read = spec("C", (1, 7), SpatialRelation.read_only_view("B"))
    (group,) = merge_tensors([target, modify, read])
    assert group.name == "A"
    assert group.lifetime == (0, 7)
    assert [m.name for m in group.members] == ["A", "B", "C"]


def test_merge_rejects_unknown_target():
    with pytest.raises(PlanningError):
        merge_tensors([spec("B", (0, 1), SpatialRelation.modify_view("missing"))])
