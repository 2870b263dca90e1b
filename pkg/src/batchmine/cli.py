"""Command-line pipeline: rank -> graph -> partition -> plan -> negatives -> diagnose.

Each stage reads its predecessor's artifact and writes its own, so `pipeline`
output is bitwise identical to running the stages individually with the same
config. All sub-stage seeds derive from the single global seed by stage-name
hashing. A run summary (stage timings, artifact checksums, config echo) is
always written, even on failure.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import reporting
from ._hashing import derive_seed
from .corpus import CorpusManifest, EmbeddingCorpus, load_corpus, save_corpus
from .errors import ValidationError
from .graph import build_graph, graph_stats, load_graph, save_graph
from .partition import PartitionConfig, load_assignment, partition, save_assignment
from .planner import (
    BatchPlanConfig,
    attach_hard_negatives,
    emit_manifest,
    interleave_round_robin,
    make_random_plan,
    parse_manifest,
    plan_epochs,
)
from .ranking import RankConfig, build_rank_slice, load_slice, save_slice
from .sampling import build_distribution, sample_negatives

STAGES = ("rank", "graph", "partition", "plan", "negatives", "diagnose", "pipeline", "synth")


class RunSummary:
    """Collects stage timings and artifact checksums; flushed in a finally."""

    def __init__(self, out_dir: Path, args: argparse.Namespace):
        self.out_dir = out_dir
        self.lines: list[str] = []
        skip = {"config", "command", "func"}
        for key, val in sorted(vars(args).items()):
            if key not in skip and val is not None:
                self.lines.append(f"config.{key} = {val}")

    def stage(self, name: str, seconds: float, artifacts: dict[str, int]) -> None:
        parts = [f"stage={name}", f"seconds={seconds:.3f}"]
        for path, checksum in artifacts.items():
            parts.append(f"artifact={path}:{checksum:016x}")
        self.lines.append(" ".join(parts))

    def error(self, exc: BaseException) -> None:
        self.lines.append(f"error = {type(exc).__name__}: {exc}")

    def flush(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "run_summary.txt").write_text(
            "\n".join(self.lines) + "\n", encoding="utf-8"
        )


def _timed(summary: RunSummary, name: str):
    class _Ctx:
        def __enter__(self):
            self.t0 = time.perf_counter()
            self.artifacts: dict[str, int] = {}
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc_type is None:
                summary.stage(name, time.perf_counter() - self.t0, self.artifacts)
            return False

    return _Ctx()


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _rank_config(args, corpus: EmbeddingCorpus) -> RankConfig:
    p = args.p if args.p is not None else None
    if p is None:
        cfg = RankConfig.for_category(
            corpus.task_category, m=args.m, similarity=args.similarity,
            block_size=args.block_size,
        )
    else:
        cfg = RankConfig(p=p, m=args.m, similarity=args.similarity, block_size=args.block_size)
    cfg.validate_for(corpus.n)
    return cfg


def _check_cross_fields(args) -> None:
    """Cross-field constraints checked before any work."""
    k = getattr(args, "cluster_size", None)
    b = getattr(args, "batch_size", None)
    if k is not None and b is not None and b % k != 0:
        raise ValidationError(
            f"cluster size K = {k} must divide batch_size = {b}"
        )


def _task_path(out: Path, task_id: str, name: str, multi: bool) -> Path:
    return out / (f"{task_id}.{name}" if multi else name)


def stage_rank(args, corpus, out, summary, task_prefix=False):
    cfg = _rank_config(args, corpus)
    with _timed(summary, "rank") as t:
        slc = build_rank_slice(corpus, cfg)
        path = _task_path(out, corpus.task_id, "slice.bin", task_prefix)
        t.artifacts[path.name] = save_slice(slc, path)
    return slc, path


def stage_graph(args, slc, out, summary, task_prefix=False):
    with _timed(summary, "graph") as t:
        g = build_graph(slc, weighted=args.weighted)
        path = _task_path(out, slc.task_id, "graph.bin", task_prefix)
        t.artifacts[path.name] = save_graph(g, path)
        stats = graph_stats(g)
    return g, stats, path


def stage_partition(args, graph, out, summary, task_id="", task_prefix=False):
    cfg = PartitionConfig(
        K=args.cluster_size,
        seed=derive_seed(args.seed, "partition", task_id),
        coarsen_stop=args.coarsen_stop,
        refine_passes=args.refine_passes,
        exhaustive_threshold=args.exhaustive_threshold,
    )
    with _timed(summary, "partition") as t:
        assign = partition(graph, cfg)
        path = _task_path(out, task_id, "assignment.bin", task_prefix)
        t.artifacts[path.name] = save_assignment(assign, path)
    return assign, path


def stage_plan(args, assign, out, summary, task_id="", task_prefix=False, emit=True):
    cfg = BatchPlanConfig(
        batch_size=args.batch_size,
        K=assign.K,
        epochs=args.epochs,
        seed=derive_seed(args.seed, "plan", task_id),
        shuffle_within_batch=not args.no_shuffle,
    )
    with _timed(summary, "plan") as t:
        plan = plan_epochs(assign, cfg, task_id=task_id)
        path = _task_path(out, task_id, "manifest.txt", task_prefix)
        if emit:
            t.artifacts[path.name] = emit_manifest(plan, path)
    return plan, path


def stage_negatives(args, plan, slc, out, summary, task_id="", task_prefix=False, emit=True):
    neg_seed = derive_seed(args.seed, "negatives", task_id)
    with _timed(summary, "negatives") as t:
        lists = []
        for e, batches in enumerate(plan.epochs):
            for bi, batch in enumerate(batches):
                dist = build_distribution(slc, batch.members, batch_id=(e, bi))
                sample = sample_negatives(dist, args.h, derive_seed(neg_seed, e, bi))
                lists.append(sample.negatives)
        plan = attach_hard_negatives(plan, lists, allow_shortfall=True)
        path = _task_path(out, task_id, "manifest.txt", task_prefix)
        if emit:
            t.artifacts[path.name] = emit_manifest(plan, path)
    return plan, path


def stage_diagnose(args, corpus, plan, out, summary, slc=None, assign=None):
    ks = _parse_int_list(args.k_list)
    tau = args.tau
    with _timed(summary, "diagnose") as t:
        pairs: dict[str, object] = {"n": corpus.n, "tau": tau}
        records: list[dict] = []
        top_k = min(args.top_k, corpus.n)
        profile = diag.peakedness(corpus, tau, top_k, Ks=[k for k in ks if k <= corpus.n])
        reporting.write_two_column(
            np.arange(1, profile.profile.size + 1),
            profile.profile,
            out / "peakedness.tsv",
            header="rank\tmean_similarity",
        )
        for k, ratio in profile.ratios.items():
            pairs[f"peakedness.low_to_high_ratio.K{k}"] = f"{ratio:.6g}"

        graph = build_graph(slc) if slc is not None else None

        mined_report = diag.loss_report(corpus, plan.epochs[0], tau, Ks=ks)
        pairs.update(reporting.loss_report_pairs("mined", mined_report))
        records.append({"plan": "mined", "gap": mined_report.gap, "tau": tau})
        if slc is not None and graph is not None:
            quality = diag.batch_quality(corpus, slc, graph, plan)
            pairs["mined.co_location_mean"] = f"{quality.co_location_mean:.6g}"
            pairs["mined.retained_edge_fraction"] = f"{quality.retained_edge_fraction:.6g}"

        if args.compare == "random":
            rnd = make_random_plan(
                corpus.n,
                plan.batch_size,
                epochs=len(plan.epochs),
                seed=derive_seed(args.seed, "diagnose", "random"),
                task_id=plan.task_id,
            )
            if slc is not None and graph is not None:
                cmp = diag.compare_plans(
                    corpus, slc, graph, plan, rnd, tau, Ks=ks
                )
                pairs.update(reporting.loss_report_pairs("random", cmp.report_b))
                pairs["random.co_location_mean"] = f"{cmp.quality_b.co_location_mean:.6g}"
                pairs["gap_difference"] = f"{cmp.gap_difference:.12g}"
                pairs["co_location_difference"] = f"{cmp.co_location_difference:.12g}"
                records.extend(reporting.comparison_records(cmp, ("mined", "random")))
            else:
                rnd_report = diag.loss_report(corpus, rnd.epochs[0], tau, Ks=ks)
                pairs.update(reporting.loss_report_pairs("random", rnd_report))
                records.append({"plan": "random", "gap": rnd_report.gap, "tau": tau})

        sweep_sizes = _parse_int_list(args.sweep_batch_sizes) if args.sweep_batch_sizes else []
        if sweep_sizes:
            if assign is None:
                raise ValidationError("--sweep-batch-sizes requires --assignment")
            gaps: dict[str, list[float]] = {"mined": [], "random": []}
            for b in sweep_sizes:
                pcfg = BatchPlanConfig(
                    batch_size=b, K=assign.K, epochs=1,
                    seed=derive_seed(args.seed, "sweep", b),
                )
                mined_b = plan_epochs(assign, pcfg, task_id=plan.task_id)
                random_b = make_random_plan(
                    corpus.n, b, seed=derive_seed(args.seed, "sweep-random", b)
                )
                gaps["mined"].append(
                    diag.loss_report(corpus, mined_b.epochs[0], tau).gap
                )
                gaps["random"].append(
                    diag.loss_report(corpus, random_b.epochs[0], tau).gap
                )
            for tag, ys in gaps.items():
                reporting.write_two_column(
                    sweep_sizes, ys, out / f"gap_sweep_{tag}.tsv",
                    header="batch_size\tloss_gap",
                )
            if args.figures:
                reporting.render_gap_sweep_figure(sweep_sizes, gaps, out / "gap_sweep.png")

        reporting.write_kv_text(pairs, out / "diagnostics.txt")
        reporting.write_records(records, out / "diagnostics.jsonl")
        if args.figures:
            reporting.render_peakedness_figure(profile, out / "peakedness.png")
    return pairs


def _load_corpus_list(args) -> list[EmbeddingCorpus]:
    if getattr(args, "corpus_manifest", None):
        manifest = CorpusManifest.load(args.corpus_manifest)
        base = Path(args.corpus_manifest).parent
        return [load_corpus(base / e.path) for e in manifest.entries]
    if not getattr(args, "corpus", None):
        raise ValidationError("pipeline requires --corpus or --corpus-manifest")
    return [load_corpus(args.corpus)]


def _mine_one(args, corpus, out, summary, task_prefix):
    """rank -> graph -> partition -> plan (-> negatives) for one task."""
    tid = corpus.task_id
    slc, _ = stage_rank(args, corpus, out, summary, task_prefix)
    graph, _, _ = stage_graph(args, slc, out, summary, task_prefix)
    assign, _ = stage_partition(args, graph, out, summary, tid, task_prefix)
    plan, _ = stage_plan(args, assign, out, summary, tid, task_prefix, emit=True)
    if args.h > 0:
        plan, _ = stage_negatives(args, plan, slc, out, summary, tid, task_prefix, emit=True)
    return corpus, slc, graph, assign, plan


def run_pipeline(args, out, summary) -> int:
    corpora = _load_corpus_list(args)
    multi = len(corpora) > 1
    workers = args.workers or int(os.environ.get("BATCHMINE_WORKERS", "1"))
    if multi and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda c: _mine_one(args, c, out, summary, multi), corpora)
            )
    else:
        results = [_mine_one(args, c, out, summary, multi) for c in corpora]

    if multi:
        stream = interleave_round_robin([r[4] for r in results])
        lines = []
        for task_id, e, bi, batch in stream:
            neg = ",".join(str(int(x)) for x in batch.hard_negatives) if batch.hard_negatives is not None else ""
            mem = ",".join(str(int(x)) for x in batch.members)
            lines.append(f"epoch={e} batch={bi} task={task_id} members={mem} negatives={neg}")
        from ._hashing import fnv1a64

        body = "".join(ln + "\n" for ln in lines)
        checksum = fnv1a64(body.encode("utf-8"))
        tasks_field = ",".join(f"{c.task_id}:{c.n}" for c in corpora)
        header = (
            f"#batch-manifest format_version=1 task=* n={sum(c.n for c in corpora)} "
            f"K={args.cluster_size} B={args.batch_size} h={args.h} seed={args.seed} "
            f"epochs={args.epochs} tasks={tasks_field} body_fnv1a64={checksum:016x}"
        )
        (out / "manifest.txt").write_text(header + "\n" + body, encoding="utf-8")

    corpus, slc, graph, assign, plan = results[0]
    if not args.skip_diagnose and not multi:
        stage_diagnose(args, corpus, plan, out, summary, slc=slc, assign=assign)
    return 0


def run_subcommand(name: str, args) -> int:
    """Dispatch one stage; the orchestration surface used by main() and tests."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = RunSummary(out, args)
    try:
        _check_cross_fields(args)
        if name == "synth":
            with _timed(summary, "synth") as t:
                corpus, truth = diag.make_planted_corpus(
                    clusters=args.clusters,
                    size=args.cluster_members,
                    d=args.dim,
                    intra_similarity=args.intra,
                    noise=args.noise,
                    seed=args.seed,
                    task_id=args.task_id,
                )
                path = out / "corpus.bin"
                t.artifacts[path.name] = save_corpus(corpus, path)
                truth_lines = [f"{i}\t{c}" for i, c in enumerate(truth)]
                (out / "truth.tsv").write_text("\n".join(truth_lines) + "\n", encoding="utf-8")
        elif name == "rank":
            corpus = load_corpus(args.corpus)
            stage_rank(args, corpus, out, summary)
        elif name == "graph":
            slc = load_slice(args.slice)
            stage_graph(args, slc, out, summary)
        elif name == "partition":
            graph = load_graph(args.graph)
            stage_partition(args, graph, out, summary, task_id=args.task_id)
        elif name == "plan":
            assign = load_assignment(args.assignment)
            stage_plan(args, assign, out, summary, task_id=args.task_id)
        elif name == "negatives":
            plan = parse_manifest(args.manifest)
            slc = load_slice(args.slice)
            stage_negatives(args, plan, slc, out, summary, task_id=plan.task_id)
        elif name == "diagnose":
            corpus = load_corpus(args.corpus)
            plan = parse_manifest(args.manifest)
            slc = load_slice(args.slice) if args.slice else None
            assign = load_assignment(args.assignment) if args.assignment else None
            stage_diagnose(args, corpus, plan, out, summary, slc=slc, assign=assign)
        elif name == "pipeline":
            return run_pipeline(args, out, summary)
        else:
            raise ValidationError(f"unknown subcommand {name!r}")
        return 0
    except ValidationError as exc:
        summary.error(exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        summary.error(exc)
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    finally:
        try:
            summary.flush()
        except OSError:
            pass


def _add_common(sp):
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="global seed")
    sp.add_argument("--config", help="key=value config file; command line wins")


def _add_rank_flags(sp):
    sp.add_argument("--p", type=int, default=None,
                    help="top ranks excluded as false negatives (default: per task category)")
    sp.add_argument("--m", type=int, default=100, help="slice width")
    sp.add_argument("--similarity", choices=("cosine", "dot"), default="cosine")
    sp.add_argument("--block-size", type=int, default=1024)


def _add_graph_flags(sp):
    sp.add_argument("--weighted", action="store_true",
                    help="weight edges by mutual rank strength")


def _add_partition_flags(sp):
    sp.add_argument("--cluster-size", type=int, default=32, help="vertices per cluster (K)")
    sp.add_argument("--coarsen-stop", type=int, default=None)
    sp.add_argument("--refine-passes", type=int, default=8)
    sp.add_argument("--exhaustive-threshold", type=int, default=16)


def _add_plan_flags(sp):
    sp.add_argument("--batch-size", type=int, default=1024)
    sp.add_argument("--epochs", type=int, default=1)
    sp.add_argument("--no-shuffle", action="store_true",
                    help="keep cluster order inside batches")


def _add_diag_flags(sp):
    sp.add_argument("--tau", type=float, default=0.02, help="temperature")
    sp.add_argument("--k-list", default="1,2,4,8,16")
    sp.add_argument("--top-k", type=int, default=100)
    sp.add_argument("--compare", choices=("none", "random"), default="none")
    sp.add_argument("--sweep-batch-sizes", default="")
    sp.add_argument("--no-figures", dest="figures", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="batchmine",
        description="Offline batch mining for contrastive learning",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a planted-cluster corpus")
    _add_common(sp)
    sp.add_argument("--clusters", type=int, required=True)
    sp.add_argument("--cluster-members", type=int, required=True)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--intra", type=float, default=0.7)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--task-id", default="planted")

    sp = sub.add_parser("rank", help="build the rank slice for a corpus")
    _add_common(sp)
    sp.add_argument("--corpus", required=True)
    _add_rank_flags(sp)

    sp = sub.add_parser("graph", help="build the mutual-preference graph")
    _add_common(sp)
    sp.add_argument("--slice", required=True)
    _add_graph_flags(sp)

    sp = sub.add_parser("partition", help="balanced K-way min-cut clustering")
    _add_common(sp)
    sp.add_argument("--graph", required=True)
    sp.add_argument("--task-id", default="")
    sp.add_argument("--batch-size", type=int, default=None,
                    help="optional; validated against the cluster size")
    _add_partition_flags(sp)

    sp = sub.add_parser("plan", help="assemble per-epoch batch manifests")
    _add_common(sp)
    sp.add_argument("--assignment", required=True)
    sp.add_argument("--task-id", default="")
    _add_plan_flags(sp)

    sp = sub.add_parser("negatives", help="attach unified hard negatives")
    _add_common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--slice", required=True)
    sp.add_argument("--h", type=int, default=5, help="hard negatives per batch")

    sp = sub.add_parser("diagnose", help="loss-gap and batch-quality reports")
    _add_common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--slice", default=None)
    sp.add_argument("--assignment", default=None)
    _add_diag_flags(sp)

    sp = sub.add_parser("pipeline", help="run every stage in order")
    _add_common(sp)
    sp.add_argument("--corpus")
    sp.add_argument("--corpus-manifest", help="multi-task corpus manifest")
    sp.add_argument("--workers", type=int, default=None,
                    help="parallel tasks (default: BATCHMINE_WORKERS or 1)")
    sp.add_argument("--h", type=int, default=0, help="hard negatives per batch (0 = none)")
    sp.add_argument("--skip-diagnose", action="store_true")
    _add_rank_flags(sp)
    _add_graph_flags(sp)
    _add_partition_flags(sp)
    _add_plan_flags(sp)
    _add_diag_flags(sp)

    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Load --config key=value defaults; explicit command-line flags win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}: malformed config line {line!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    extra: list[str] = []
    for key, val in values.items():
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if val.lower() in ("true", "false"):
            if val.lower() == "true":
                extra.append(flag)
        else:
            extra.extend([flag, val])
    return argv[:1] + extra + argv[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        argv = _apply_config_file(ap, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    args = ap.parse_args(argv)
    return run_subcommand(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
