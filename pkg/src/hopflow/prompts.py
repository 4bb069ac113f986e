"""System prompts and user-prompt builders for every agent role.

All roles communicate through small XML-tagged documents so outputs stay
machine-checkable; the tag vocabulary here must stay in sync with the
protocol module's parsers.
"""

from __future__ import annotations

from .retrieval import ScoredPassage

PLANNER_SYSTEM = """You decompose a complex question into a chain of atomic subquestions for step-by-step retrieval.

Rules:
- Each subquestion must ask for exactly one fact.
- Reference earlier answers with [ANSWER_N] tokens, counting from 0: [ANSWER_0] is the first subquestion's answer.
- Keep every qualifier (dates, places, conditions) from the original question.
- Order subquestions so each one only depends on answers that come before it.

Respond with exactly:
<reasoning>one or two sentences on your decomposition</reasoning>
<subquestions>
1. first subquestion
2. second subquestion
</subquestions>"""

SOLVER_SYSTEM = """You answer a single question using ONLY the numbered documents provided.

Rules:
- Never use outside knowledge.
- Cite the documents that support your answer as [Doc_1], [Doc_3], etc.
- If the documents do not contain the answer, reply exactly: Cannot answer from provided documents
- Keep the answer minimal: just the entity, date, or value asked for.

Respond with exactly:
<reasoning>short reasoning with citations</reasoning>
<sources>[Doc_X], [Doc_Y]</sources>
<answer>the answer</answer>"""

CONTEXT_INSPECTOR_SYSTEM = """You audit one retrieval step of a multi-hop pipeline BEFORE the answer is produced. Decide, from the documents alone, whether the current subquestion can be answered.

Pick exactly one error stage:
- subquestion: the subquestion itself is broken (wrong entity or constraint, depends on an unresolved or rejected earlier answer, cannot lead to the original question).
- retrieval: no document mentions the subquestion's key entity, or the documents are empty.
- none: otherwise. If the entity is present but the requested attribute is not stated, still answer none and let the solver refuse.

Respond with exactly:
<error_stage>none | subquestion | retrieval</error_stage>
<explanation>If none: write 'OK'. Otherwise 1-3 sentences naming what is missing or wrong, citing document numbers.</explanation>"""

REASONING_INSPECTOR_SYSTEM = """You audit one solved step of a multi-hop pipeline AFTER the answer is produced. Judge only from the provided documents whether the extracted answer actually answers the subquestion.

Pick exactly one error stage:
- reasoning: no document explicitly supports the answer for the right entity, or the answer is a refusal even though a document covers the entity and attribute.
- extraction: the answer is supported but badly extracted: extra clauses, several entities, commentary, or negations bolted on.
- none: the answer is grounded, bound to the right entity, and matches the question type (who -> person, when -> date, how many -> number, where -> place).

Respond with exactly:
<error_stage>none | reasoning | extraction</error_stage>
<explanation>If none: write 'OK'. Otherwise name the exact problem, cite document numbers, and state the minimal fix.</explanation>"""

SUBQ_REWRITER_SYSTEM = """You repair a broken subquestion inside a multi-hop chain.

Rules:
- Fix the problem described in the feedback and nothing else.
- Keep the intent and the expected answer type.
- Do not invent entities or facts; only use the original question and prior answers.
- Output ONLY the rewritten subquestion inside the tag.

Respond with exactly:
<subquestion>rewritten subquestion</subquestion>"""

QUERY_REWRITER_SYSTEM = """You rewrite a search query after a failed retrieval round.

Rules:
- Target the missing fact named in the feedback.
- Keep the key entities; add the requested attribute or likely synonyms.
- Do not guess answers or add new entities.
- Output ONLY the rewritten query inside the tag.

Respond with exactly:
<query>rewritten query</query>"""

JUDGE_SYSTEM = """You grade one aspect of a question decomposition. Answer with a single token: yes or no."""


def format_docs(
    docs: list[ScoredPassage],
    max_docs: int | None = None,
    char_limit: int | None = None,
) -> str:
    """Render documents as numbered Doc_N blocks, optionally truncated.

    Numbering is positional within the shown list; citations like [Doc_3]
    refer to these positions.
    """
    shown = docs if max_docs is None else docs[:max_docs]
    blocks = []
    for i, doc in enumerate(shown, start=1):
        body = doc.passage.body
        if char_limit is not None and len(body) > char_limit:
            body = body[:char_limit] + "..."
        title = f" ({doc.passage.title})" if doc.passage.title else ""
        blocks.append(f"Doc_{i}{title}: {body}")
    return "\n".join(blocks) if blocks else "(no documents)"


def _answers_block(prior_answers: list[str]) -> str:
    if not prior_answers:
        return "(none yet)"
    return "\n".join(f"[ANSWER_{i}] = {a}" for i, a in enumerate(prior_answers))


def planner_user(question: str) -> str:
    return f"Question: {question}"


def solver_user(
    subquestion: str,
    docs: list[ScoredPassage],
    feedback: str | None = None,
    previous_answer: str | None = None,
) -> str:
    parts = [f"Subquestion: {subquestion}", "", "Documents:", format_docs(docs)]
    if feedback is not None:
        parts += [
            "",
            f"Your previous answer was: {previous_answer}",
            f"An auditor flagged it: {feedback}",
            "Answer again, fixing that problem.",
        ]
    return "\n".join(parts)


def context_inspector_user(
    question: str,
    subquestion: str,
    prior_answers: list[str],
    docs: list[ScoredPassage],
    max_docs: int = 20,
    char_limit: int = 900,
) -> str:
    return "\n".join(
        [
            f"Original question: {question}",
            f"Current subquestion: {subquestion}",
            "Previous answers:",
            _answers_block(prior_answers),
            "",
            "Retrieved documents:",
            format_docs(docs, max_docs=max_docs, char_limit=char_limit),
        ]
    )


def reasoning_inspector_user(
    question: str,
    subquestion: str,
    docs: list[ScoredPassage],
    solver_reasoning: str,
    answer: str,
    max_docs: int = 25,
    char_limit: int = 900,
) -> str:
    return "\n".join(
        [
            f"Original question: {question}",
            f"Current subquestion: {subquestion}",
            "",
            "Documents:",
            format_docs(docs, max_docs=max_docs, char_limit=char_limit),
            "",
            f"Solver reasoning: {solver_reasoning}",
            f"EXTRACTED_ANSWER: {answer}",
        ]
    )


def subq_rewriter_user(
    question: str,
    subquestion: str,
    feedback: str,
    prior_answers: list[str],
) -> str:
    return "\n".join(
        [
            f"Original question: {question}",
            f"Problematic subquestion: {subquestion}",
            f"Feedback: {feedback}",
            "Previous answers:",
            _answers_block(prior_answers),
        ]
    )


def query_rewriter_user(question: str, subquestion: str, feedback: str) -> str:
    return "\n".join(
        [
            f"Original question: {question}",
            f"Current subquestion: {subquestion}",
            f"Retrieval feedback: {feedback}",
        ]
    )


def judge_user(question: str, plan_text: str, criterion: str) -> str:
    return "\n".join(
        [
            f"Question: {question}",
            f"Decomposition:\n{plan_text}",
            f"Criterion: does the decomposition satisfy '{criterion}'? Answer yes or no.",
        ]
    )
