"""batchmine: offline batch mining for contrastive learning.

Teacher-similarity ranking, mutual-preference graphs, balanced min-cut
clustering, batch manifests with unified hard negatives, and loss-gap
diagnostics.
"""

from .corpus import (
    CorpusManifest,
    EmbeddingCorpus,
    load_corpus,
    normalize_rows,
    save_corpus,
)
from .diagnostics import (
    adjusted_rand_index,
    batch_loss,
    bound_rhs,
    compare_plans,
    global_loss,
    hl_decomposition,
    loss_report,
    make_planted_corpus,
    peakedness,
)
from .errors import ChecksumError, FormatError, ValidationError
from .graph import PreferenceGraph, build_graph, graph_stats, load_graph, save_graph
from .partition import (
    ClusterAssignment,
    PartitionConfig,
    coarsen,
    initial_partition,
    load_assignment,
    partition,
    refine,
    save_assignment,
)
from .planner import (
    BatchPlan,
    BatchPlanConfig,
    attach_hard_negatives,
    emit_manifest,
    make_random_plan,
    parse_manifest,
    plan_epochs,
)
from .ranking import (
    RankConfig,
    RankSlice,
    build_rank_slice,
    load_slice,
    save_slice,
    score_block,
    top_select,
)
from .sampling import (
    NegativeSampleSet,
    UnifiedDistribution,
    build_distribution,
    sample_negatives,
)

__version__ = "0.1.0"

__all__ = [
    "BatchPlan",
    "BatchPlanConfig",
    "ChecksumError",
    "ClusterAssignment",
    "CorpusManifest",
    "EmbeddingCorpus",
    "FormatError",
    "NegativeSampleSet",
    "PartitionConfig",
    "PreferenceGraph",
    "RankConfig",
    "RankSlice",
    "UnifiedDistribution",
    "ValidationError",
    "adjusted_rand_index",
    "attach_hard_negatives",
    "batch_loss",
    "bound_rhs",
    "build_distribution",
    "build_graph",
    "build_rank_slice",
    "coarsen",
    "compare_plans",
    "emit_manifest",
    "global_loss",
    "graph_stats",
    "hl_decomposition",
    "initial_partition",
    "load_assignment",
    "load_corpus",
    "load_graph",
    "load_slice",
    "loss_report",
    "make_planted_corpus",
    "make_random_plan",
    "normalize_rows",
    "parse_manifest",
    "partition",
    "peakedness",
    "plan_epochs",
    "refine",
    "sample_negatives",
    "save_assignment",
    "save_corpus",
    "save_graph",
    "save_slice",
    "score_block",
    "top_select",
]
