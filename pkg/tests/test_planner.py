import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchmine import (
    BatchPlanConfig,
    ChecksumError,
    PartitionConfig,
    ValidationError,
    attach_hard_negatives,
    emit_manifest,
    make_random_plan,
    parse_manifest,
    partition,
    plan_epochs,
)
from batchmine.planner import interleave_round_robin

from helpers import random_graph


def make_assignment(n, k, seed=0):
    g = random_graph(n, 2 * n, seed=seed)
    return partition(g, PartitionConfig(K=k, seed=seed))


def test_four_clusters_two_batches():
    assign = make_assignment(8, 2, seed=1)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=4, K=2, seed=0))
    assert len(plan.epochs) == 1
    batches = plan.epochs[0]
    assert len(batches) == 2
    seen = np.sort(np.concatenate([b.members for b in batches]))
    assert np.array_equal(seen, np.arange(8))
    members = {frozenset(m.tolist()) for m in assign.cluster_members}
    for b in batches:
        got = set(b.members.tolist())
        parts = [m for m in members if m <= got]
        assert sum(len(p) for p in parts) == 4


def test_single_cluster_single_batch():
    assign = make_assignment(6, 6, seed=2)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=6, K=6, seed=1))
    assert len(plan.epochs[0]) == 1
    assert np.array_equal(np.sort(plan.epochs[0][0].members), np.arange(6))


def test_epoch_arithmetic_with_remainder():
    # n=1000, K=8, B=64: 125 clusters, 15 full batches + short batch of 40
    assign = make_assignment(1000, 8, seed=3)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=64, K=8, epochs=3, seed=4))
    assert len(plan.epochs) == 3
    for batches in plan.epochs:
        assert len(batches) == 16
        assert all(b.members.size == 64 for b in batches[:15])
        assert batches[15].members.size == 40
        seen = np.sort(np.concatenate([b.members for b in batches]))
        assert np.array_equal(seen, np.arange(1000))


def test_remainder_cluster_rides_final_batch():
    assign = make_assignment(10, 4, seed=5)  # clusters 4+4+2
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=4, K=4, seed=6))
    batches = plan.epochs[0]
    assert [b.members.size for b in batches] == [4, 4 + 2]


def test_cluster_atomicity():
    assign = make_assignment(96, 8, seed=7)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=32, K=8, epochs=2, seed=8))
    for batches in plan.epochs:
        for b in batches:
            got = set(b.members.tolist())
            for m in assign.cluster_members:
                inside = len(set(m.tolist()) & got)
                assert inside in (0, m.size)


def test_epochs_differ():
    assign = make_assignment(64, 4, seed=9)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=16, K=4, epochs=4, seed=10))
    firsts = [tuple(batches[0].members.tolist()) for batches in plan.epochs]
    assert len(set(firsts)) > 1


def test_plan_determinism():
    assign = make_assignment(64, 4, seed=11)
    cfg = BatchPlanConfig(batch_size=16, K=4, epochs=2, seed=12)
    a = plan_epochs(assign, cfg)
    b = plan_epochs(assign, cfg)
    for ba, bb in zip(a.epochs[0] + a.epochs[1], b.epochs[0] + b.epochs[1]):
        assert np.array_equal(ba.members, bb.members)


def test_config_validation():
    with pytest.raises(ValidationError, match="divide"):
        BatchPlanConfig(batch_size=10, K=4)
    assign = make_assignment(20, 4, seed=13)
    with pytest.raises(ValidationError, match="does not match"):
        plan_epochs(assign, BatchPlanConfig(batch_size=8, K=8))
    with pytest.raises(ValidationError, match="exceeds"):
        plan_epochs(assign, BatchPlanConfig(batch_size=24, K=4))


# ------------------------------------------------------------ hard negatives


def test_attach_hard_negatives_roundtrip():
    plan = make_random_plan(12, 6, epochs=1, seed=1)
    negs = [np.array([99, 98, 97]), np.array([96, 95, 94])]
    # indices outside 0..n-1 are not members, so no collision
    out = attach_hard_negatives(plan, negs)
    assert out.h == 3
    assert [b.hard_negatives.tolist() for b in out.epochs[0]] == [[99, 98, 97], [96, 95, 94]]
    # original untouched
    assert plan.epochs[0][0].hard_negatives is None


def test_attach_rejects_collision():
    plan = make_random_plan(12, 6, epochs=1, seed=2)
    inside = int(plan.epochs[0][1].members[0])
    negs = [np.array([100]), np.array([inside])]
    with pytest.raises(ValidationError, match=f"batch 1.*{inside}"):
        attach_hard_negatives(plan, negs)


def test_attach_empty_lists_identity():
    plan = make_random_plan(8, 4, epochs=1, seed=3)
    out = attach_hard_negatives(plan, [np.empty(0, int), np.empty(0, int)])
    assert out.h == 0
    for ba, bb in zip(plan.epochs[0], out.epochs[0]):
        assert np.array_equal(ba.members, bb.members)


def test_attach_length_mismatch():
    plan = make_random_plan(8, 4, epochs=1, seed=4)
    with pytest.raises(ValidationError, match="length"):
        attach_hard_negatives(plan, [np.array([9, 10]), np.array([9])])
    out = attach_hard_negatives(plan, [np.array([9, 10]), np.array([9])], allow_shortfall=True)
    assert out.h == 2


# ---------------------------------------------------------------- manifests


def test_manifest_roundtrip(tmp_path):
    assign = make_assignment(40, 4, seed=15)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=8, K=4, epochs=2, seed=16), task_id="demo")
    negs = [np.array([1000 + i, 2000 + i]) for i in range(sum(len(e) for e in plan.epochs))]
    plan = attach_hard_negatives(plan, negs)
    path = tmp_path / "manifest.txt"
    checksum = emit_manifest(plan, path)
    back = parse_manifest(path)
    assert back.task_id == "demo"
    assert back.n == plan.n and back.K == plan.K
    assert back.batch_size == plan.batch_size and back.h == plan.h
    assert len(back.epochs) == len(plan.epochs)
    for ea, eb in zip(plan.epochs, back.epochs):
        for ba, bb in zip(ea, eb):
            assert np.array_equal(ba.members, bb.members)
            assert np.array_equal(ba.hard_negatives, bb.hard_negatives)
    assert checksum == emit_manifest(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_manifest_empty_plan_header_only(tmp_path):
    from batchmine.planner import BatchPlan

    plan = BatchPlan(task_id="e", n=0, K=1, batch_size=1, h=0, seed=0, epochs=())
    path = tmp_path / "m.txt"
    emit_manifest(plan, path)
    text = path.read_text()
    assert text.startswith("#batch-manifest ")
    assert text.count("\n") == 1


def test_manifest_checksum_detects_tampering(tmp_path):
    plan = make_random_plan(10, 5, seed=17)
    path = tmp_path / "m.txt"
    emit_manifest(plan, path)
    text = path.read_text().replace("members=", "members=0,", 1)
    path.write_text(text)
    with pytest.raises(ChecksumError):
        parse_manifest(path)


def test_record_count_matches_epoch_arithmetic(tmp_path):
    assign = make_assignment(1000, 8, seed=18)
    plan = plan_epochs(assign, BatchPlanConfig(batch_size=64, K=8, epochs=3, seed=19))
    path = tmp_path / "m.txt"
    emit_manifest(plan, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) - 1 == 3 * 16


@settings(max_examples=20)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 1000))
def test_random_plan_coverage(n, epochs, seed):
    b = max(1, n // 3)
    plan = make_random_plan(n, b, epochs=epochs, seed=seed)
    plan.validate_coverage()


def test_interleave_round_robin():
    a = make_random_plan(8, 4, epochs=1, seed=1, task_id="a")
    b = make_random_plan(12, 4, epochs=1, seed=2, task_id="b")
    stream = interleave_round_robin([a, b])
    tasks = [s[0] for s in stream]
    assert tasks == ["a", "b", "a", "b", "b"]
