"""End-to-end question execution: plan, then per subquestion guard/fill,
cache check, retrieve, context inspection with repair, solve, reasoning
inspection with repair, conservative answer selection, and memoization.

Repair budgets are hard caps enforced structurally: at most one
guard-triggered rewrite and one inspector-triggered rewrite per step, at
most the configured number of retrieval expansions per phase, and at most
one solver retry. Audit parse failures fail open (treated as a clean stage,
with an error event logged) so a misbehaving inspector can slow the
pipeline down but never deadlock it.
"""

from __future__ import annotations

import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import prompts
from .config import PipelineConfig
from .embedding import Embedder
from .errors import FormatError, HopflowError, PipelineError, UnresolvedPlaceholder
from .evaluation import MetricReport, QARecord, exact_match, latency_breakdown, retrieval_recall, token_f1
from .gateway import ChatRequest, Gateway
from .memoize import (
    DEFAULT_REJECTION_PATTERNS,
    EvidenceStore,
    GUARD_REWRITE_NEEDED,
    REJECTION_ANSWER,
    cascade_guard,
    is_rejected_answer,
    lookup,
    store_answer,
)
from .protocol import (
    AuditDocument,
    SolverDocument,
    fill_placeholders,
    parse_audit,
    parse_plan,
    parse_rewrite,
    parse_solver_output,
)
from .retrieval import RetrievalEngine, ScoredPassage
from .trace import TrajectoryStore, load_trace

_STOPWORDS = frozenset(
    "the a an of in on at to for from by with and or is was are were who what when where which".split()
)
_QUOTED_RE = re.compile(r"[\"']([^\"']+)[\"']")
_CAPITALIZED_RE = re.compile(r"\b[A-Z][\w-]*\b")
_NEGATION_RE = re.compile(r"\bnot\s+(?:mentioned|stated|specified|given)\b", re.IGNORECASE)

#: Explanation phrases that mark a reasoning failure as evidence-starved,
#: making it worth another retrieval round instead of an immediate retry.
MISSING_EVIDENCE_PHRASES = ("not mention", "missing", "no document", "does not state", "not found")


def looks_missing_evidence(audit: AuditDocument) -> bool:
    text = audit.explanation.lower()
    return any(phrase in text for phrase in MISSING_EVIDENCE_PHRASES)


def key_entity_tokens(subquestion: str) -> set[str]:
    """Capitalized and quoted spans of the subquestion, minus stopwords."""
    tokens: set[str] = set()
    for span in _QUOTED_RE.findall(subquestion):
        tokens.update(t.lower() for t in span.split())
    tokens.update(t.lower() for t in _CAPITALIZED_RE.findall(subquestion))
    return {t for t in tokens if t not in _STOPWORDS}


def execution_guard(
    answer: str,
    docs: list[ScoredPassage],
    subquestion: str,
    patterns: tuple[str, ...] = DEFAULT_REJECTION_PATTERNS,
) -> AuditDocument | None:
    """Heuristic override for answers the reasoning inspector waved through.

    A refusal while some document mentions the subquestion's key entity is
    flagged as a reasoning error; an answer carrying extra clauses or
    negations is flagged as an extraction error. Returns None when neither
    fires.
    """
    if is_rejected_answer(answer, patterns):
        entities = key_entity_tokens(subquestion)
        if entities:
            for doc in docs:
                text = (doc.passage.title + " " + doc.passage.body).lower()
                if any(entity in text for entity in entities):
                    return AuditDocument(
                        phase="reasoning",
                        error_stage="reasoning",
                        explanation="Answer is a refusal but the documents mention the key entity.",
                    )
        return None
    if ";" in answer or _NEGATION_RE.search(answer):
        return AuditDocument(
            phase="reasoning",
            error_stage="extraction",
            explanation="Answer carries extra clauses or negations; extract the minimal answer span.",
        )
    return None


def compare_answers(
    original: str,
    retry: str,
    retry_audit: AuditDocument | None,
    docs: list[ScoredPassage],
    subquestion: str,
    patterns: tuple[str, ...] = DEFAULT_REJECTION_PATTERNS,
) -> tuple[str, str]:
    """Conservative selection between the original and retried answers.

    The retry wins only when it resolved the flagged error (its re-audit is
    clean) and introduces no new guard flag or rejection; otherwise the
    original stands. Returns (chosen, rationale).
    """
    if retry_audit is not None and retry_audit.error_stage != "none":
        return original, f"retry re-audit flagged {retry_audit.error_stage}"
    if is_rejected_answer(retry, patterns):
        return original, "retry is a rejection"
    if execution_guard(retry, docs, subquestion, patterns) is not None:
        return original, "retry triggered the execution guard"
    return retry, "retry resolved the flagged error"


@dataclass
class RepairCounts:
    subq_rewrites: int = 0
    ctx_expansions: int = 0
    posthoc_expansions: int = 0
    solver_retries: int = 0


@dataclass
class StepRecord:
    """Per-subquestion execution state."""

    index: int
    subquestion_raw: str
    subquestion: str = ""
    pool_ids: list[str] = field(default_factory=list)
    audits: list[AuditDocument] = field(default_factory=list)
    solver_outputs: list[SolverDocument] = field(default_factory=list)
    chosen_answer: str = ""
    cache_hit: bool = False
    guard_rewrites: int = 0
    guard_blocked: bool = False
    repair_counts: RepairCounts = field(default_factory=RepairCounts)


@dataclass
class FinalResult:
    question_id: str
    final_answer: str
    steps: list[StepRecord]
    trace_path: str
    error: str | None = None

    def step_stats(self) -> dict:
        counts = RepairCounts()
        cache_hits = 0
        guard_blocked = 0
        for step in self.steps:
            counts.subq_rewrites += step.repair_counts.subq_rewrites
            counts.ctx_expansions += step.repair_counts.ctx_expansions
            counts.posthoc_expansions += step.repair_counts.posthoc_expansions
            counts.solver_retries += step.repair_counts.solver_retries
            cache_hits += int(step.cache_hit)
            guard_blocked += int(step.guard_blocked)
        return {
            "steps": len(self.steps),
            "cache_hits": cache_hits,
            "guard_blocked": guard_blocked,
            "subq_rewrites": counts.subq_rewrites,
            "ctx_expansions": counts.ctx_expansions,
            "posthoc_expansions": counts.posthoc_expansions,
            "solver_retries": counts.solver_retries,
        }


def merge_unique(new: list[ScoredPassage], old: list[ScoredPassage], cap: int) -> list[ScoredPassage]:
    """New results first, first occurrence per id wins, truncated to cap."""
    merged: list[ScoredPassage] = []
    seen: set[str] = set()
    for doc in [*new, *old]:
        if doc.passage_id in seen:
            continue
        seen.add(doc.passage_id)
        merged.append(doc)
    return merged[:cap]


class Pipeline:
    """Binds the gateway, retrieval engine, embedder, and config together."""

    def __init__(
        self,
        gateway: Gateway,
        engine: RetrievalEngine,
        embedder: Embedder,
        config: PipelineConfig | None = None,
        shared_evidence: EvidenceStore | None = None,
    ):
        self.gateway = gateway
        self.engine = engine
        self.embedder = embedder
        self.config = config or PipelineConfig()
        # One store spans all questions when the global cache is on.
        if self.config.global_cache:
            self.shared_evidence = shared_evidence or EvidenceStore()
        else:
            self.shared_evidence = shared_evidence

    def run_question(self, question: str, question_id: str, trace_path: str) -> FinalResult:
        runner = _QuestionRun(self, question, question_id, trace_path)
        return runner.run()

    def run_dataset(
        self,
        records: list[QARecord],
        trace_dir: str,
        parallelism: int = 1,
    ) -> tuple[list[FinalResult], MetricReport]:
        """Run every record, at most ``parallelism`` at a time, in input order.

        Per-question failures are recorded on the result and do not stop the
        run. The metric report aggregates answers against golds, retrieval
        recall where gold support ids exist, and the latency breakdown from
        the written traces.
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        os.makedirs(trace_dir, exist_ok=True)

        def run_one(record: QARecord) -> FinalResult:
            trace_path = os.path.join(trace_dir, f"{record.id}.jsonl")
            try:
                return self.run_question(record.question, record.id, trace_path)
            except PipelineError as exc:
                return FinalResult(
                    question_id=record.id,
                    final_answer="",
                    steps=[],
                    trace_path=trace_path,
                    error=str(exc),
                )

        if parallelism == 1:
            results = [run_one(r) for r in records]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                results = list(pool.map(run_one, records))
        report = build_report(results, records)
        return results, report


def build_report(results: list[FinalResult], records: list[QARecord]) -> MetricReport:
    by_id = {r.id: r for r in records}
    ems, f1s = [], []
    retrieved: dict[str, set[str]] = {}
    gold_support: dict[str, set[str]] = {}
    events = []
    n_failed = 0
    for result in results:
        record = by_id[result.question_id]
        golds = record.golds()
        ems.append(exact_match(result.final_answer, golds))
        f1s.append(token_f1(result.final_answer, golds))
        if result.error is not None:
            n_failed += 1
        if record.gold_support_ids:
            gold_support[record.id] = set(record.gold_support_ids)
            retrieved[record.id] = set()
            for step in result.steps:
                retrieved[record.id].update(step.pool_ids)
        try:
            events.extend(load_trace(result.trace_path))
        except (OSError, HopflowError):
            pass
    recall, n_scored = retrieval_recall(retrieved, gold_support) if gold_support else (None, 0)
    n = len(results)
    return MetricReport(
        em=sum(ems) / n if n else 0.0,
        f1=sum(f1s) / n if n else 0.0,
        n=n,
        n_failed=n_failed,
        retrieval_recall=recall,
        n_recall_scored=n_scored,
        latency_ms_by_phase=latency_breakdown(events),
    )


class _QuestionRun:
    """State for a single question's execution."""

    def __init__(self, pipeline: Pipeline, question: str, question_id: str, trace_path: str):
        self.p = pipeline
        self.cfg = pipeline.config
        self.question = question
        self.question_id = question_id
        self.trace_path = trace_path
        self.store = TrajectoryStore(trace_path)
        if self.cfg.global_cache and pipeline.shared_evidence is not None:
            self.evidence = pipeline.shared_evidence
        else:
            self.evidence = EvidenceStore(question_id=question_id)
        self.answers: list[str] = []
        self.steps: list[StepRecord] = []
        self.deadline = time.monotonic() + self.cfg.question_deadline_s

    # -- infrastructure -----------------------------------------------------

    def emit(self, event_type: str, payload: dict, parent_id: int | None = None) -> int:
        return self.store.append_event(self.question_id, event_type, payload, parent_id)

    def _check_deadline(self, stage: str) -> None:
        if time.monotonic() > self.deadline:
            self.emit("error", {"reason": "deadline_exceeded", "stage": stage})
            raise PipelineError(stage, f"question exceeded {self.cfg.question_deadline_s}s deadline")

    def _ask(self, role: str, system: str, user: str) -> tuple[str, int]:
        request = ChatRequest(
            role_id=role, system_prompt=system, user_prompt=user, context_id=self.question_id
        )
        start = time.monotonic()
        response = self.p.gateway.complete(request)
        duration_ms = int((time.monotonic() - start) * 1000)
        return response.text, max(response.latency_ms, duration_ms)

    def _retrieve(self, query: str, step: int, kind: str) -> list[ScoredPassage]:
        start = time.monotonic()
        holder: dict = {}
        results = self.p.engine.retrieve(query, trace=holder.update)
        holder.update(
            {"step": step, "kind": kind, "duration_ms": int((time.monotonic() - start) * 1000)}
        )
        self.emit("retrieve", holder)
        return results

    # -- pipeline phases ----------------------------------------------------

    def run(self) -> FinalResult:
        try:
            subquestions = self._plan()
            for index, raw in enumerate(subquestions):
                self._check_deadline(f"step_{index}")
                proceed = self._run_step(index, raw)
                if not proceed:
                    break
            return FinalResult(
                question_id=self.question_id,
                final_answer=self.answers[-1] if self.answers else "",
                steps=self.steps,
                trace_path=self.trace_path,
            )
        except PipelineError:
            raise
        except HopflowError as exc:
            self.emit("error", {"reason": "pipeline_failure", "detail": str(exc)})
            raise PipelineError("pipeline", str(exc), exc) from exc
        finally:
            self.store.close()

    def _plan(self) -> list[str]:
        if not self.cfg.planner_on:
            self.emit(
                "plan",
                {
                    "question": self.question,
                    "plan_text": "",
                    "subquestions": [self.question],
                    "planner": False,
                    "duration_ms": 0,
                },
            )
            return [self.question]
        text, duration = self._ask("planner", prompts.PLANNER_SYSTEM, prompts.planner_user(self.question))
        try:
            plan = parse_plan(text)
        except FormatError as exc:
            self.emit("error", {"reason": "plan_parse_failure", "detail": str(exc)})
            raise PipelineError("plan", f"planner output unparseable: {exc}", exc) from exc
        self.emit(
            "plan",
            {
                "question": self.question,
                "plan_text": text,
                "subquestions": plan.subquestions,
                "planner": True,
                "duration_ms": duration,
            },
        )
        return plan.subquestions

    def _run_step(self, index: int, raw_subquestion: str) -> bool:
        """Execute one subquestion; returns False when the chain must stop."""
        step = StepRecord(index=index, subquestion_raw=raw_subquestion)
        self.steps.append(step)
        subquestion = raw_subquestion

        # Step 0: cascade guard + placeholder fill.
        verdict = cascade_guard(subquestion, self.answers)
        if verdict.status == GUARD_REWRITE_NEEDED:
            step.guard_rewrites = 1
            feedback = (
                "The subquestion depends on rejected or missing earlier answers "
                f"(placeholders {verdict.offending_indices}); restate it without them."
            )
            subquestion = self._rewrite_subquestion(step, subquestion, feedback, parent_id=None)
            second = cascade_guard(subquestion, self.answers)
            if second.status == GUARD_REWRITE_NEEDED:
                self.emit(
                    "error",
                    {
                        "step": index,
                        "reason": "cascade_guard_blocked",
                        "offending_indices": second.offending_indices,
                        "appended_answer": REJECTION_ANSWER,
                    },
                )
                step.guard_blocked = True
                step.chosen_answer = REJECTION_ANSWER
                step.subquestion = subquestion
                self.answers.append(REJECTION_ANSWER)
                return False
        filled = self._fill(subquestion, step)
        step.subquestion = filled

        # Step 1: evidence-cache fast path.
        if self.cfg.memoize_on:
            cached = lookup(
                self.evidence,
                filled,
                self.cfg.cache_tau,
                self.p.embedder,
                trace=lambda payload: self.emit("cache_hit", {"step": index, **payload}),
            )
            if cached is not None:
                step.cache_hit = True
                step.chosen_answer = cached
                self.answers.append(cached)
                return True

        # Step 2: initial retrieval into a fresh pool.
        pool = self.p.engine.new_pool(cap=self.cfg.pool_cap)
        pool.strategy = self.cfg.merge_strategy
        pool.add_batch(self._retrieve(filled, index, "initial"))

        # Step 3: context inspection and repair.
        if self.cfg.context_inspector_on:
            filled, pool = self._context_inspect_repair(step, filled, pool)

        retries_exhausted = step.repair_counts.ctx_expansions >= self.cfg.max_ctx_expansions
        docs = pool.select_docs(self.cfg.solve_docs, retries_exhausted)

        # Step 4: solve.
        solver_doc = self._solve(step, filled, docs, kind="initial")
        answer = solver_doc.answer

        # Step 5: reasoning inspection and repair.
        if self.cfg.reasoning_inspector_on:
            answer, docs = self._reasoning_inspect_repair(step, filled, docs, pool, solver_doc)

        # Step 6: memoize and record.
        if self.cfg.memoize_on:
            store_answer(self.evidence, filled, answer, self.p.embedder)
        step.chosen_answer = answer
        step.pool_ids = pool.ids()
        self.answers.append(answer)
        return True

    def _fill(self, subquestion: str, step: StepRecord) -> str:
        try:
            return fill_placeholders(subquestion, self.answers)
        except UnresolvedPlaceholder as exc:
            # The guard vouched for this text, so an unresolved index here is
            # an orchestration bug or a rewriter inventing references; keep
            # the raw text rather than killing the question.
            self.emit(
                "error",
                {"step": step.index, "reason": "unresolved_placeholder", "index": exc.index},
            )
            return subquestion

    def _rewrite_subquestion(
        self, step: StepRecord, subquestion: str, feedback: str, parent_id: int | None
    ) -> str:
        text, duration = self._ask(
            "subq_rewriter",
            prompts.SUBQ_REWRITER_SYSTEM,
            prompts.subq_rewriter_user(self.question, subquestion, feedback, self.answers),
        )
        try:
            rewritten = parse_rewrite(text, "subquestion").text
        except FormatError as exc:
            self.emit(
                "error",
                {"step": step.index, "reason": "rewrite_parse_failure", "detail": str(exc)},
            )
            rewritten = subquestion
        self.emit(
            "retry",
            {
                "step": step.index,
                "action": "rewrite_subquestion",
                "rewritten": rewritten,
                "duration_ms": duration,
            },
            parent_id=parent_id,
        )
        return rewritten

    def _rewrite_query(self, step: StepRecord, subquestion: str, feedback: str) -> str:
        text, _ = self._ask(
            "query_rewriter",
            prompts.QUERY_REWRITER_SYSTEM,
            prompts.query_rewriter_user(self.question, subquestion, feedback),
        )
        try:
            return parse_rewrite(text, "query").text
        except FormatError as exc:
            self.emit(
                "error",
                {"step": step.index, "reason": "rewrite_parse_failure", "detail": str(exc)},
            )
            return subquestion

    def _context_audit(self, step: StepRecord, subquestion: str, pool) -> tuple[AuditDocument, int]:
        text, duration = self._ask(
            "context_inspector",
            prompts.CONTEXT_INSPECTOR_SYSTEM,
            prompts.context_inspector_user(
                self.question,
                subquestion,
                self.answers,
                pool.passages(),
                max_docs=self.cfg.ctx_doc_limit,
                char_limit=self.cfg.doc_char_limit,
            ),
        )
        audit = self._parse_audit_fail_open(step, text, "context")
        event_id = self.emit(
            "inspect_context",
            {
                "step": step.index,
                "subquestion": subquestion,
                "stage": audit.error_stage,
                "explanation": audit.explanation,
                "doc_ids": pool.ids()[: self.cfg.ctx_doc_limit],
                "audit_text": text,
                "duration_ms": duration,
            },
        )
        step.audits.append(audit)
        return audit, event_id

    def _parse_audit_fail_open(self, step: StepRecord, text: str, phase: str) -> AuditDocument:
        try:
            return parse_audit(text, phase)
        except FormatError as exc:
            self.emit(
                "error",
                {"step": step.index, "reason": "audit_parse_failure", "phase": phase, "detail": str(exc)},
            )
            return AuditDocument(phase=phase, error_stage="none", explanation="")

    def _context_inspect_repair(self, step: StepRecord, filled: str, pool):
        audit, event_id = self._context_audit(step, filled, pool)
        if audit.error_stage == "subquestion" and step.repair_counts.subq_rewrites < 1:
            step.repair_counts.subq_rewrites = 1
            rewritten = self._rewrite_subquestion(step, filled, audit.explanation, parent_id=event_id)
            filled = self._fill(rewritten, step)
            step.subquestion = filled
            pool = self.p.engine.new_pool(cap=self.cfg.pool_cap)
            pool.strategy = self.cfg.merge_strategy
            pool.add_batch(self._retrieve(filled, step.index, "subq_rewrite"))
            audit, event_id = self._context_audit(step, filled, pool)
        while (
            audit.error_stage == "retrieval"
            and step.repair_counts.ctx_expansions < self.cfg.max_ctx_expansions
        ):
            step.repair_counts.ctx_expansions += 1
            query = self._rewrite_query(step, filled, audit.explanation)
            pool.add_batch(self._retrieve(query, step.index, "ctx_expansion"))
            self.emit(
                "retry",
                {
                    "step": step.index,
                    "action": "expand_context",
                    "rewritten_query": query,
                    "pool_size": len(pool),
                },
                parent_id=event_id,
            )
            audit, event_id = self._context_audit(step, filled, pool)
        return filled, pool

    def _solve(self, step: StepRecord, subquestion: str, docs: list[ScoredPassage], kind: str,
               feedback: str | None = None, previous_answer: str | None = None) -> SolverDocument:
        text, duration = self._ask(
            "solver",
            prompts.SOLVER_SYSTEM,
            prompts.solver_user(subquestion, docs, feedback=feedback, previous_answer=previous_answer),
        )
        try:
            doc = parse_solver_output(text)
        except FormatError as exc:
            # An unparseable solver turn yields an empty answer (a rejection)
            # so downstream inspection and rewards still see the failure.
            self.emit(
                "error",
                {"step": step.index, "reason": "solver_parse_failure", "detail": str(exc)},
            )
            doc = SolverDocument(reasoning="", sources=[], answer="")
        self.emit(
            "solve",
            {
                "step": step.index,
                "subquestion": subquestion,
                "answer": doc.answer,
                "sources": doc.sources,
                "solver_text": text,
                "doc_ids": [d.passage_id for d in docs],
                "kind": kind,
                "duration_ms": duration,
            },
        )
        step.solver_outputs.append(doc)
        return doc

    def _reasoning_audit(
        self, step: StepRecord, subquestion: str, docs: list[ScoredPassage],
        solver_doc: SolverDocument, answer: str,
    ) -> tuple[AuditDocument, int]:
        text, duration = self._ask(
            "reasoning_inspector",
            prompts.REASONING_INSPECTOR_SYSTEM,
            prompts.reasoning_inspector_user(
                self.question,
                subquestion,
                docs,
                solver_doc.reasoning,
                answer,
                max_docs=self.cfg.rea_doc_limit,
                char_limit=self.cfg.doc_char_limit,
            ),
        )
        audit = self._parse_audit_fail_open(step, text, "reasoning")
        event_id = self.emit(
            "inspect_reason",
            {
                "step": step.index,
                "subquestion": subquestion,
                "answer": answer,
                "stage": audit.error_stage,
                "explanation": audit.explanation,
                "doc_ids": [d.passage_id for d in docs][: self.cfg.rea_doc_limit],
                "audit_text": text,
                "duration_ms": duration,
            },
        )
        step.audits.append(audit)
        return audit, event_id

    def _reasoning_inspect_repair(self, step, subquestion, docs, pool, solver_doc):
        answer = solver_doc.answer
        audit, event_id = self._reasoning_audit(step, subquestion, docs, solver_doc, answer)
        if audit.error_stage == "none":
            override = execution_guard(answer, docs, subquestion)
            if override is not None:
                step.audits.append(override)
                audit = override
        while (
            audit.error_stage == "reasoning"
            and looks_missing_evidence(audit)
            and step.repair_counts.posthoc_expansions < self.cfg.max_posthoc_expansions
        ):
            step.repair_counts.posthoc_expansions += 1
            query = self._rewrite_query(step, subquestion, audit.explanation)
            new_docs = self._retrieve(query, step.index, "posthoc_expansion")
            pool.add_batch(new_docs)
            docs = merge_unique(new_docs, docs, self.cfg.pool_cap)
            self.emit(
                "retry",
                {
                    "step": step.index,
                    "action": "expand_posthoc",
                    "rewritten_query": query,
                    "docs_in_play": len(docs),
                },
                parent_id=event_id,
            )
            solver_doc = self._solve(step, subquestion, docs, kind="posthoc")
            answer = solver_doc.answer
            audit, event_id = self._reasoning_audit(step, subquestion, docs, solver_doc, answer)
        if audit.error_stage in ("reasoning", "extraction") and step.repair_counts.solver_retries < 1:
            step.repair_counts.solver_retries = 1
            retry_doc = self._solve(
                step,
                subquestion,
                docs,
                kind="retry",
                feedback=audit.explanation,
                previous_answer=answer,
            )
            retry_audit, _ = self._reasoning_audit(step, subquestion, docs, retry_doc, retry_doc.answer)
            chosen, rationale = compare_answers(
                answer, retry_doc.answer, retry_audit, docs, subquestion
            )
            self.emit(
                "retry",
                {
                    "step": step.index,
                    "action": "solver_retry",
                    "retry_answer": retry_doc.answer,
                    "chosen_answer": chosen,
                    "decision": rationale,
                },
                parent_id=event_id,
            )
            answer = chosen
        return answer, docs
