"""Batch assembly and manifest files.

Clusters are mined once; each epoch reshuffles only the cluster-to-batch
grouping, drawing |B|/K whole clusters per batch so every full batch is a
disjoint union of clusters. The remainder cluster (when K does not divide n)
rides along in the final batch of each epoch, keeping epoch coverage exact.

Manifests are line-oriented UTF-8 text: a header line with the plan
parameters and an FNV-1a checksum of the body, then one self-describing
key-value record per batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._hashing import fnv1a64
from .errors import ChecksumError, FormatError, ValidationError
from .partition import ClusterAssignment

FORMAT_VERSION = 1


@dataclass(frozen=True)
class BatchPlanConfig:
    batch_size: int
    K: int
    epochs: int = 1
    seed: int = 0
    shuffle_within_batch: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.batch_size % self.K != 0:
            raise ValidationError(
                f"K = {self.K} must divide batch_size = {self.batch_size}"
            )
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class Batch:
    members: np.ndarray
    hard_negatives: np.ndarray | None = None

    def __post_init__(self):
        self.members.setflags(write=False)
        if self.hard_negatives is not None:
            self.hard_negatives.setflags(write=False)


@dataclass(frozen=True)
class BatchPlan:
    task_id: str
    n: int
    K: int
    batch_size: int
    h: int
    seed: int
    epochs: tuple[tuple[Batch, ...], ...]

    def validate_coverage(self) -> None:
        """Every epoch must contain each example index exactly once."""
        for e, batches in enumerate(self.epochs):
            seen = np.concatenate([b.members for b in batches]) if batches else np.empty(0, int)
            if seen.size != self.n or not np.array_equal(np.sort(seen), np.arange(self.n)):
                raise ValidationError(f"epoch {e} does not cover 0..n-1 exactly once")

    def batch_of(self, epoch: int) -> np.ndarray:
        """Per-example batch index within one epoch."""
        out = np.empty(self.n, dtype=np.int64)
        for b, batch in enumerate(self.epochs[epoch]):
            out[batch.members] = b
        return out


def plan_epochs(
    assignment: ClusterAssignment, config: BatchPlanConfig, task_id: str = ""
) -> BatchPlan:
    """Group a seeded permutation of whole clusters into batches, per epoch."""
    if config.K != assignment.K:
        raise ValidationError(
            f"config K = {config.K} does not match assignment K = {assignment.K}"
        )
    if config.batch_size > assignment.n:
        raise ValidationError(
            f"batch_size = {config.batch_size} exceeds corpus size n = {assignment.n}"
        )
    members = assignment.cluster_members
    full = [c for c in range(assignment.C) if members[c].size == assignment.K]
    remainder = [c for c in range(assignment.C) if members[c].size != assignment.K]
    group = config.batch_size // config.K

    epochs = []
    for e in range(config.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, e]))
        perm = rng.permutation(len(full))
        chunks = [perm[i : i + group] for i in range(0, len(perm), group)]
        batches = []
        for bi, chunk in enumerate(chunks):
            idx = np.concatenate([members[full[c]] for c in chunk])
            if bi == len(chunks) - 1 and remainder:
                idx = np.concatenate([idx] + [members[c] for c in remainder])
            if config.shuffle_within_batch:
                brng = np.random.default_rng(np.random.SeedSequence([config.seed, 3, e, bi]))
                idx = idx[brng.permutation(idx.size)]
            batches.append(Batch(members=idx.astype(np.int32)))
        if not chunks and remainder:
            idx = np.concatenate([members[c] for c in remainder])
            batches.append(Batch(members=idx.astype(np.int32)))
        epochs.append(tuple(batches))

    plan = BatchPlan(
        task_id=task_id,
        n=assignment.n,
        K=config.K,
        batch_size=config.batch_size,
        h=0,
        seed=config.seed,
        epochs=tuple(epochs),
    )
    plan.validate_coverage()
    return plan


def make_random_plan(
    n: int, batch_size: int, epochs: int = 1, seed: int = 0, task_id: str = ""
) -> BatchPlan:
    """Baseline: a seeded random permutation chopped into batches (no cluster
    structure, K = 1)."""
    out = []
    for e in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, e]))
        perm = rng.permutation(n).astype(np.int32)
        out.append(
            tuple(
                Batch(members=perm[i : i + batch_size])
                for i in range(0, n, batch_size)
            )
        )
    plan = BatchPlan(
        task_id=task_id, n=n, K=1, batch_size=batch_size, h=0, seed=seed, epochs=tuple(out)
    )
    plan.validate_coverage()
    return plan


def attach_hard_negatives(
    plan: BatchPlan, negatives: list[np.ndarray], allow_shortfall: bool = False
) -> BatchPlan:
    """Splice per-batch hard-negative lists into a plan (batch order is
    epoch-major). Negative indices must not collide with their batch."""
    total = sum(len(b) for b in plan.epochs)
    if len(negatives) != total:
        raise ValidationError(
            f"expected {total} negative lists (one per batch), got {len(negatives)}"
        )
    h = max((len(neg) for neg in negatives), default=0)
    pos = 0
    epochs = []
    for e, batches in enumerate(plan.epochs):
        out = []
        for bi, batch in enumerate(batches):
            neg = np.asarray(negatives[pos], dtype=np.int32)
            pos += 1
            if neg.size != h and not allow_shortfall:
                raise ValidationError(
                    f"epoch {e} batch {bi}: negative list length {neg.size} != h = {h}"
                )
            clash = np.intersect1d(neg, batch.members)
            if clash.size:
                raise ValidationError(
                    f"epoch {e} batch {bi}: negative index {int(clash[0])} "
                    "is a member of its own batch"
                )
            out.append(replace(batch, hard_negatives=neg))
        epochs.append(tuple(out))
    return replace(plan, h=h, epochs=tuple(epochs))


def _ints(arr) -> str:
    return ",".join(str(int(x)) for x in arr)


def _format_records(plan: BatchPlan) -> str:
    lines = []
    for e, batches in enumerate(plan.epochs):
        for bi, batch in enumerate(batches):
            neg = _ints(batch.hard_negatives) if batch.hard_negatives is not None else ""
            lines.append(
                f"epoch={e} batch={bi} task={plan.task_id} "
                f"members={_ints(batch.members)} negatives={neg}"
            )
    return "".join(line + "\n" for line in lines)


def emit_manifest(plan: BatchPlan, path: str | Path, extra: dict | None = None) -> int:
    """Write the manifest; returns the checksum of its body."""
    body = _format_records(plan)
    checksum = fnv1a64(body.encode("utf-8"))
    fields = {
        "format_version": FORMAT_VERSION,
        "task": plan.task_id,
        "n": plan.n,
        "K": plan.K,
        "B": plan.batch_size,
        "h": plan.h,
        "seed": plan.seed,
        "epochs": len(plan.epochs),
        **(extra or {}),
        "body_fnv1a64": f"{checksum:016x}",
    }
    header = "#batch-manifest " + " ".join(f"{k}={v}" for k, v in fields.items())
    Path(path).write_text(header + "\n" + body, encoding="utf-8")
    return checksum


def _parse_kv(line: str, what: str, path) -> dict[str, str]:
    out = {}
    for tok in line.split(" "):
        if not tok:
            continue
        if "=" not in tok:
            raise FormatError(f"{path}: malformed {what} token {tok!r}")
        k, _, v = tok.partition("=")
        out[k] = v
    return out


def parse_manifest(path: str | Path) -> BatchPlan:
    """Read a manifest back into a plan, verifying the body checksum."""
    text = Path(path).read_text(encoding="utf-8")
    head, _, body = text.partition("\n")
    if not head.startswith("#batch-manifest "):
        raise FormatError(f"{path}: missing #batch-manifest header line")
    fields = _parse_kv(head[len("#batch-manifest ") :], "header", path)
    for key in ("format_version", "n", "K", "B", "h", "seed", "epochs", "body_fnv1a64"):
        if key not in fields:
            raise FormatError(f"{path}: header missing field {key!r}")
    if fnv1a64(body.encode("utf-8")) != int(fields["body_fnv1a64"], 16):
        raise ChecksumError(f"{path}: manifest body checksum mismatch")

    n_epochs = int(fields["epochs"])
    epochs: list[list[Batch]] = [[] for _ in range(n_epochs)]
    for line in body.splitlines():
        if not line.strip():
            continue
        rec = _parse_kv(line, "record", path)
        members = np.array([int(x) for x in rec["members"].split(",") if x], dtype=np.int32)
        negs = rec.get("negatives", "")
        hard = (
            np.array([int(x) for x in negs.split(",") if x], dtype=np.int32)
            if negs
            else (np.empty(0, dtype=np.int32) if int(fields["h"]) > 0 else None)
        )
        e, bi = int(rec["epoch"]), int(rec["batch"])
        if e >= n_epochs or bi != len(epochs[e]):
            raise FormatError(f"{path}: out-of-order record epoch={e} batch={bi}")
        epochs[e].append(Batch(members=members, hard_negatives=hard))
    return BatchPlan(
        task_id=fields["task"],
        n=int(fields["n"]),
        K=int(fields["K"]),
        batch_size=int(fields["B"]),
        h=int(fields["h"]),
        seed=int(fields["seed"]),
        epochs=tuple(tuple(b) for b in epochs),
    )


def interleave_round_robin(plans: list[BatchPlan]) -> list[tuple[str, int, int, Batch]]:
    """Round-robin merge of per-task batch streams, epoch by epoch.

    Yields (task_id, epoch, batch_index, batch) in stream order; each batch
    stays single-task.
    """
    if not plans:
        return []
    n_epochs = {len(p.epochs) for p in plans}
    if len(n_epochs) != 1:
        raise ValidationError("all plans must have the same epoch count to interleave")
    stream = []
    for e in range(n_epochs.pop()):
        cursors = [0] * len(plans)
        remaining = sum(len(p.epochs[e]) for p in plans)
        while remaining:
            for ti, p in enumerate(plans):
                if cursors[ti] < len(p.epochs[e]):
                    stream.append((p.task_id, e, cursors[ti], p.epochs[e][cursors[ti]]))
                    cursors[ti] += 1
                    remaining -= 1
    return stream
