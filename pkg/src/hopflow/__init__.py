"""Multi-hop QA pipeline: plan, retrieve, inspect, solve, memoize.

A library plus CLI for dependency-aware question decomposition over an
in-memory retrieval cascade, with dual-phase inspection and repair, a
semantic evidence cache, full execution tracing, and pure-computation
harnesses for rewards, group-normalized advantages, and evaluation metrics.
"""

from .config import PipelineConfig, RunConfig, load_config
from .embedding import HashingEmbedder, HttpEmbedder, unit_normalize
from .evaluation import (
    MetricReport,
    QARecord,
    exact_match,
    inspection_precision_recall,
    latency_breakdown,
    load_dataset,
    normalize_answer,
    retrieval_recall,
    token_f1,
)
from .gateway import (
    ChatRequest,
    ChatResponse,
    DecodingParams,
    Gateway,
    GREEDY_DECODING,
    HttpBackend,
    ScriptedBackend,
    TRAINING_SAMPLING,
    load_script,
)
from .grpo import GainEstimate, GroupSample, gain_decomposition, grpo_loss, group_loss, normalize_group
from .memoize import (
    DEFAULT_REJECTION_PATTERNS,
    EvidenceStore,
    GuardVerdict,
    cascade_guard,
    clear,
    is_rejected_answer,
    lookup,
    store_answer,
)
from .mining import Stage2Record, load_teacher_labels, mine_stage2_dataset, write_stage2_dataset
from .orchestrator import (
    FinalResult,
    Pipeline,
    StepRecord,
    compare_answers,
    execution_guard,
    looks_missing_evidence,
)
from .protocol import (
    AuditDocument,
    PlanDocument,
    RewriteDocument,
    SolverDocument,
    extract_placeholder_refs,
    fill_placeholders,
    parse_audit,
    parse_plan,
    parse_rewrite,
    parse_solver_output,
    validate_format,
)
from .retrieval import (
    CascadeConfig,
    DocumentPool,
    Passage,
    RetrievalEngine,
    ScoredPassage,
    SparseScorer,
    build_index,
    cross_rerank,
    expand_pool,
    hybrid_rerank,
    load_corpus,
)
from .rewards import (
    DEFAULT_WEIGHTS,
    RewardWeights,
    inspector_reward,
    planner_reward,
    resolve_n_gold,
    solver_reward,
)
from .trace import EVENT_TYPES, TraceEvent, TrajectoryStore, events_by_question, load_trace

__version__ = "0.1.0"
