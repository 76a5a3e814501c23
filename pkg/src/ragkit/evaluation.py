"""Evaluation tooling: synthetic question generation with quality control,
benchmark dataset loading, retrieval metrics (hit@k, adjusted accuracy,
coverage), judge-based semantic accuracy, and system comparison.

Link identity is exact string equality after trimming, with only the URI
scheme and host lowercased; everything else in a link is case-sensitive.
"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

from .agents import PromptLibrary
from .corpus import TABLE_SIGNATURE_RE, Chunk
from .gateway import ChatTurn, Gateway, ModelRequest, parse_first_int
from .orchestrator import PipelineRun

logger = logging.getLogger(__name__)

Category = Literal["procedural", "definitional", "acronym", "synthetic"]
Origin = Literal["generated", "human"]
System = Literal["brag", "arag"]

CATEGORIES = ("procedural", "definitional", "acronym", "synthetic")

WarnFn = Callable[[str], None]


class EvaluationError(Exception):
    """Raised on malformed datasets or unsatisfiable metric inputs."""


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    ground_truth_answer: str
    ground_truth_links: tuple[str, ...]
    category: Category
    origin: Origin

    def __post_init__(self) -> None:
        if not self.ground_truth_links:
            raise EvaluationError(f"item {self.id!r} has no ground-truth links")
        if self.category not in CATEGORIES:
            raise EvaluationError(f"item {self.id!r} has unknown category {self.category!r}")
        if self.origin not in ("generated", "human"):
            raise EvaluationError(f"item {self.id!r} has unknown origin {self.origin!r}")
        if self.origin == "generated" and len(self.ground_truth_links) != 1:
            raise EvaluationError(
                f"generated item {self.id!r} must have exactly one link"
            )


@dataclass(frozen=True)
class JudgeScore:
    item_id: str
    system: System
    score: int
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 10:
            raise EvaluationError(f"judge score out of band for {self.item_id!r}: {self.score}")


@dataclass(frozen=True)
class AdjustedOverride:
    item_id: str
    accepted_links: tuple[str, ...]
    reviewer_note: str = ""


@dataclass
class CategoryBreakdown:
    n: int
    coverage: float | None = None
    mean_score: float | None = None


@dataclass
class EvalReport:
    n_questions: int
    hit_at_k: float
    mean_judge_score: float | None = None
    adjusted_hit_at_k: float | None = None
    coverage: float | None = None
    per_category: dict[str, CategoryBreakdown] = field(default_factory=dict)
    mean_latency_ms: float = 0.0
    k: int = 5


@dataclass
class ComparisonResult:
    deltas: list[tuple[str, int]]
    win: float
    tie: float
    loss: float
    mean_a: float
    mean_b: float


def normalize_link(link: str) -> str:
    """Trim, and lowercase only the scheme and host of URI-shaped links."""
    link = link.strip()
    if "://" in link:
        scheme, rest = link.split("://", 1)
        host, slash, path = rest.partition("/")
        return scheme.lower() + "://" + host.lower() + slash + path
    return link


# --- dataset generation ------------------------------------------------------

_QA_RE = re.compile(r"Q:\s*(?P<q>.+?)\n\s*A:\s*(?P<a>.+)", re.DOTALL)


def generate_eval_items(
    chunks: Sequence[Chunk],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn | None = None,
) -> list[EvalItem]:
    """Generate one question-answer candidate per chunk.

    The table prompt template is used when the chunk carries the
    "col: val; col: val" linearization signature, otherwise the narrative
    template. Unparsable replies skip the chunk instead of fabricating."""
    if not chunks:
        raise EvaluationError("cannot generate items from an empty chunk sample")
    warn = warn or (lambda msg: logger.warning("%s", msg))
    items = []
    for chunk in chunks:
        template = "evalgen_table" if TABLE_SIGNATURE_RE.search(chunk.text) else "evalgen_narrative"
        prompt = prompts.render(template, context=chunk.text)
        reply = gw.complete(ModelRequest(turns=[ChatTurn("user", prompt)], tag="evalgen")).text
        match = _QA_RE.search(reply)
        if not match:
            warn(f"unparsable generation reply for {chunk.chunk_id}; skipped")
            continue
        items.append(EvalItem(
            id=f"gen-{chunk.chunk_id}",
            question=match.group("q").strip(),
            ground_truth_answer=match.group("a").strip(),
            ground_truth_links=(chunk.source_link,),
            category="synthetic",
            origin="generated",
        ))
    return items


_QC_CRITERIA = ("qc_specificity", "qc_faithfulness", "qc_completeness")


def _parse_verdict(reply: str) -> bool | None:
    first = reply.strip().lower().split()
    if not first:
        return None
    word = first[0].strip(".,:;!")
    if word == "yes":
        return True
    if word == "no":
        return False
    return None


def qc_filter(
    items: Sequence[EvalItem],
    source_chunks: Mapping[str, Chunk],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn | None = None,
) -> list[EvalItem]:
    """Three yes/no judgments per item (specificity, faithfulness,
    completeness); only items passing all three are retained. Unparsable
    verdicts count as "no"."""
    warn = warn or (lambda msg: logger.warning("%s", msg))
    retained = []
    for item in items:
        chunk = source_chunks.get(item.id)
        if chunk is None:
            raise EvaluationError(f"no source chunk supplied for item {item.id!r}")
        verdicts = []
        for criterion in _QC_CRITERIA:
            prompt = prompts.render(
                criterion,
                context=chunk.text,
                query=item.question,
                answer=item.ground_truth_answer,
            )
            reply = gw.complete(ModelRequest(turns=[ChatTurn("user", prompt)], tag=criterion)).text
            verdict = _parse_verdict(reply)
            if verdict is None:
                warn(f"unparsable {criterion} verdict for {item.id}: {reply!r}; treating as no")
                verdict = False
            verdicts.append(verdict)
        logger.info("qc %s: specificity=%s faithfulness=%s completeness=%s",
                    item.id, *verdicts)
        if all(verdicts):
            retained.append(item)
    return retained


# --- retrieval metrics -------------------------------------------------------

def _join_runs(
    runs: Sequence[PipelineRun], items: Sequence[EvalItem]
) -> dict[str, PipelineRun]:
    """Map item id -> run, joining on exact question text (last run wins)."""
    by_question: dict[str, PipelineRun] = {}
    for run in runs:
        by_question[run.question] = run
    joined = {}
    missing = []
    for item in items:
        run = by_question.get(item.question)
        if run is None:
            missing.append(item.id)
        else:
            joined[item.id] = run
    if missing:
        raise EvaluationError(f"missing runs for items: {', '.join(missing)}")
    return joined


def _top_k_links(run: PipelineRun, k: int) -> set[str]:
    return {normalize_link(link) for link in run.retrieved_links_top5[:k]}


def hit_at_k(
    runs: Sequence[PipelineRun], items: Sequence[EvalItem], k: int = 5
) -> float:
    """Fraction of items whose ground-truth link appears in the run's top-k
    retrieved links."""
    if not items:
        raise EvaluationError("no items to evaluate")
    joined = _join_runs(runs, items)
    hits = 0
    for item in items:
        retrieved = _top_k_links(joined[item.id], k)
        if any(normalize_link(link) in retrieved for link in item.ground_truth_links):
            hits += 1
    return hits / len(items)


def adjusted_hit_at_k(
    runs: Sequence[PipelineRun],
    items: Sequence[EvalItem],
    overrides: Sequence[AdjustedOverride],
    k: int = 5,
) -> float:
    """hit@k where reviewer-accepted semantically-equivalent links also
    count as hits."""
    if not items:
        raise EvaluationError("no items to evaluate")
    by_id = {item.id: item for item in items}
    accepted: dict[str, set[str]] = defaultdict(set)
    for override in overrides:
        item = by_id.get(override.item_id)
        if item is None:
            raise EvaluationError(f"override references unknown item: {override.item_id}")
        links = {normalize_link(l) for l in override.accepted_links}
        ground_truth = {normalize_link(l) for l in item.ground_truth_links}
        if links & ground_truth:
            raise EvaluationError(
                f"override for {override.item_id} repeats ground-truth links"
            )
        accepted[override.item_id].update(links)
    joined = _join_runs(runs, items)
    hits = 0
    for item in items:
        retrieved = _top_k_links(joined[item.id], k)
        valid = {normalize_link(l) for l in item.ground_truth_links} | accepted[item.id]
        if valid & retrieved:
            hits += 1
    return hits / len(items)


def coverage(
    runs: Sequence[PipelineRun], items: Sequence[EvalItem], k: int = 5
) -> tuple[float, dict[str, float]]:
    """|R| / |G|: the fraction of all distinct ground-truth links retrieved
    in the top-k across the whole question set, overall and with G restricted
    per category."""
    if not items:
        raise EvaluationError("no items to evaluate")
    joined = _join_runs(runs, items)
    goal: set[str] = set()
    goal_by_category: dict[str, set[str]] = defaultdict(set)
    for item in items:
        links = {normalize_link(l) for l in item.ground_truth_links}
        goal |= links
        goal_by_category[item.category] |= links
    if not goal:
        raise EvaluationError("empty ground-truth link set")
    retrieved: set[str] = set()
    for run in joined.values():
        retrieved |= _top_k_links(run, k)
    overall = len(goal & retrieved) / len(goal)
    per_category = {
        category: len(links & retrieved) / len(links)
        for category, links in sorted(goal_by_category.items())
    }
    return overall, per_category


# --- judge-based semantic accuracy -------------------------------------------

def judge(
    items: Sequence[EvalItem],
    runs: Sequence[PipelineRun],
    gw: Gateway,
    prompts: PromptLibrary,
) -> list[JudgeScore]:
    """One judge call per item scoring the run's answer 1-10 against the
    ground truth; an out-of-band or unparsable reply is retried once, then
    the item errors out."""
    joined = _join_runs(runs, items)
    scores = []
    for item in sorted(items, key=lambda i: i.id):
        run = joined[item.id]
        if run.final_answer is None:
            raise EvaluationError(f"run {run.run_id} for item {item.id} has no answer")
        prompt = prompts.render(
            "judge",
            query=item.question,
            ground_truth=item.ground_truth_answer,
            answer=run.final_answer.text,
        )
        value: int | None = None
        reply = ""
        for _ in range(2):
            reply = gw.complete(ModelRequest(turns=[ChatTurn("user", prompt)], tag="judge")).text
            value = parse_first_int(reply, 1, 10)
            if value is not None:
                break
        if value is None:
            raise EvaluationError(f"judge returned no usable score for item {item.id}: {reply!r}")
        scores.append(JudgeScore(item_id=item.id, system=run.mode, score=value,
                                 rationale=reply.strip()))
    return scores


def semantic_accuracy(scores: Sequence[JudgeScore]) -> float:
    """Mean judge score."""
    if not scores:
        raise EvaluationError("no judge scores")
    return sum(s.score for s in scores) / len(scores)


def compare(
    scores_a: Sequence[JudgeScore], scores_b: Sequence[JudgeScore]
) -> ComparisonResult:
    """Per-item score difference (a - b) plus win/tie/loss fractions."""
    a_by_id = {s.item_id: s for s in scores_a}
    b_by_id = {s.item_id: s for s in scores_b}
    if set(a_by_id) != set(b_by_id):
        only_a = sorted(set(a_by_id) - set(b_by_id))
        only_b = sorted(set(b_by_id) - set(a_by_id))
        raise EvaluationError(
            f"mismatched item sets: only in a: {only_a[:5]}, only in b: {only_b[:5]}"
        )
    if not a_by_id:
        raise EvaluationError("no scores to compare")
    deltas = [
        (item_id, a_by_id[item_id].score - b_by_id[item_id].score)
        for item_id in sorted(a_by_id)
    ]
    n = len(deltas)
    win = sum(1 for _, d in deltas if d > 0) / n
    tie = sum(1 for _, d in deltas if d == 0) / n
    loss = sum(1 for _, d in deltas if d < 0) / n
    return ComparisonResult(
        deltas=deltas, win=win, tie=tie, loss=loss,
        mean_a=semantic_accuracy(list(a_by_id.values())),
        mean_b=semantic_accuracy(list(b_by_id.values())),
    )


# --- report assembly ---------------------------------------------------------

def build_report(
    runs: Sequence[PipelineRun],
    items: Sequence[EvalItem],
    overrides: Sequence[AdjustedOverride] | None = None,
    scores: Sequence[JudgeScore] | None = None,
    k: int = 5,
) -> EvalReport:
    joined = _join_runs(runs, items)
    overall_coverage, coverage_by_category = coverage(runs, items, k)
    report = EvalReport(
        n_questions=len(items),
        hit_at_k=hit_at_k(runs, items, k),
        coverage=overall_coverage,
        mean_latency_ms=sum(r.total_latency_ms for r in joined.values()) / len(joined),
        k=k,
    )
    if overrides is not None:
        report.adjusted_hit_at_k = adjusted_hit_at_k(runs, items, overrides, k)
    score_by_item = {s.item_id: s.score for s in scores} if scores else {}
    if scores:
        report.mean_judge_score = semantic_accuracy(list(scores))
    items_by_category: dict[str, list[EvalItem]] = defaultdict(list)
    for item in items:
        items_by_category[item.category].append(item)
    for category, members in sorted(items_by_category.items()):
        breakdown = CategoryBreakdown(n=len(members))
        breakdown.coverage = coverage_by_category.get(category)
        member_scores = [score_by_item[m.id] for m in members if m.id in score_by_item]
        if member_scores:
            breakdown.mean_score = sum(member_scores) / len(member_scores)
        report.per_category[category] = breakdown
    return report


def report_to_dict(report: EvalReport) -> dict:
    return {
        "n_questions": report.n_questions,
        "k": report.k,
        "hit_at_k": round(report.hit_at_k, 6),
        "adjusted_hit_at_k": None if report.adjusted_hit_at_k is None
        else round(report.adjusted_hit_at_k, 6),
        "coverage": None if report.coverage is None else round(report.coverage, 6),
        "mean_judge_score": None if report.mean_judge_score is None
        else round(report.mean_judge_score, 6),
        "mean_latency_ms": round(report.mean_latency_ms, 3),
        "per_category": {
            category: {
                "n": b.n,
                "coverage": None if b.coverage is None else round(b.coverage, 6),
                "mean_score": None if b.mean_score is None else round(b.mean_score, 6),
            }
            for category, b in sorted(report.per_category.items())
        },
    }


def render_report_text(report: EvalReport) -> str:
    """Human-readable rendering: headline metrics plus a per-category table."""
    lines = []
    lines.append(f"{'Metric':40s} {'Value':>10s}")
    lines.append("-" * 51)
    lines.append(f"{'Total Questions Evaluated':40s} {report.n_questions:>10d}")
    lines.append(f"{f'Retrieval Accuracy (Hit @{report.k}, %)':40s} "
                 f"{report.hit_at_k * 100:>10.2f}")
    if report.adjusted_hit_at_k is not None:
        lines.append(f"{f'Adjusted Retrieval Accuracy (@{report.k}, %)':40s} "
                     f"{report.adjusted_hit_at_k * 100:>10.2f}")
    if report.coverage is not None:
        lines.append(f"{'Coverage (%)':40s} {report.coverage * 100:>10.2f}")
    if report.mean_judge_score is not None:
        lines.append(f"{'Semantic Accuracy (mean judge score)':40s} "
                     f"{report.mean_judge_score:>10.2f}")
    lines.append(f"{'Avg. Latency per Query (s)':40s} "
                 f"{report.mean_latency_ms / 1000.0:>10.2f}")
    if report.per_category:
        lines.append("")
        lines.append(f"{'Category':14s} {'#Questions':>10s} {'Coverage (%)':>14s} "
                     f"{'Semantic Acc.':>14s}")
        lines.append("-" * 55)
        for category, b in sorted(report.per_category.items()):
            cov = f"{b.coverage * 100:.2f}" if b.coverage is not None else "-"
            score = f"{b.mean_score:.2f}" if b.mean_score is not None else "-"
            lines.append(f"{category:14s} {b.n:>10d} {cov:>14s} {score:>14s}")
    return "\n".join(lines)


def render_comparison_text(result: ComparisonResult) -> str:
    counts = defaultdict(int)
    for _, delta in result.deltas:
        counts[delta] += 1
    lines = []
    lines.append(f"Mean score A: {result.mean_a:.2f}   Mean score B: {result.mean_b:.2f}   "
                 f"Mean delta: {result.mean_a - result.mean_b:+.2f}")
    lines.append(f"Win (A better): {result.win * 100:.1f}%   Tie: {result.tie * 100:.1f}%   "
                 f"Loss: {result.loss * 100:.1f}%")
    lines.append("Delta distribution:")
    for delta in sorted(counts):
        lines.append(f"  {delta:+3d}: {counts[delta]}")
    return "\n".join(lines)


def comparison_to_dict(result: ComparisonResult) -> dict:
    return {
        "win": round(result.win, 6),
        "tie": round(result.tie, 6),
        "loss": round(result.loss, 6),
        "mean_a": round(result.mean_a, 6),
        "mean_b": round(result.mean_b, 6),
        "deltas": [{"item_id": i, "delta": d} for i, d in result.deltas],
    }


# --- file formats -------------------------------------------------------------

def write_eval_items(items: Sequence[EvalItem], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({
                "id": item.id,
                "question": item.question,
                "ground_truth_answer": item.ground_truth_answer,
                "ground_truth_links": list(item.ground_truth_links),
                "category": item.category,
                "origin": item.origin,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def read_eval_items(path: Path | str) -> list[EvalItem]:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"eval dataset not found: {path}")
    items = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                items.append(EvalItem(
                    id=record["id"],
                    question=record["question"],
                    ground_truth_answer=record["ground_truth_answer"],
                    ground_truth_links=tuple(record["ground_truth_links"]),
                    category=record["category"],
                    origin=record["origin"],
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"bad eval item at {path}:{line_no}: {exc}") from exc
    ids = [item.id for item in items]
    if len(set(ids)) != len(ids):
        raise EvaluationError(f"duplicate item ids in {path}")
    return items


def read_overrides(path: Path | str) -> list[AdjustedOverride]:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"overrides file not found: {path}")
    overrides = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                overrides.append(AdjustedOverride(
                    item_id=record["item_id"],
                    accepted_links=tuple(record["accepted_links"]),
                    reviewer_note=record.get("reviewer_note", ""),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"bad override at {path}:{line_no}: {exc}") from exc
    return overrides


def write_scores(scores: Sequence[JudgeScore], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for score in scores:
            fh.write(json.dumps({
                "item_id": score.item_id,
                "system": score.system,
                "score": score.score,
                "rationale": score.rationale,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def read_scores(path: Path | str) -> list[JudgeScore]:
    path = Path(path)
    if not path.is_file():
        raise EvaluationError(f"scores file not found: {path}")
    scores = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                scores.append(JudgeScore(
                    item_id=record["item_id"],
                    system=record["system"],
                    score=record["score"],
                    rationale=record.get("rationale", ""),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"bad score record at {path}:{line_no}: {exc}") from exc
    return scores
