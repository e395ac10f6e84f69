"""Zero-shot statute prompting: summarization, templates, clients, pipeline.

For each case the attention model ranks all statutes and only the top K are
put to the LLM, one prompt per (case, statute): packing many statutes into
one prompt is infeasible at realistic statute counts.  Case text is first
shortened to at most 25 sentences by centroid-cosine extractive selection
over the (already masked) sentence embeddings.

Two prompt modes ship as versioned resource files: ``standard`` asks for a
verdict plus explanation; ``cot`` additionally requires the common aspects
between case and statute to be listed before the verdict.  A statute is
predicted when the parsed response carries ``Applicable: Yes``.

Transport is an abstract chat-completion client.  The HTTP client speaks
the chat wire format with retries; the replay client serves recorded
responses keyed by prompt SHA-256 so the whole pipeline runs offline and
byte-reproducibly.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import model
from .corpus import CaseDescription, Statute
from .matrixio import text_sha256

logger = logging.getLogger(__name__)

MODES = ("standard", "cot")
MAX_SUMMARY_SENTENCES = 25

_APPLICABLE_RE = re.compile(r"^[\s*_`>#-]*applicable[\s*_`]*:[\s*_`]*(yes|no)\b", re.IGNORECASE)
_EXPLANATION_RE = re.compile(r"[\s*_`>#-]*explanation[\s*_`]*:[\s*_`]*", re.IGNORECASE)
_COMMON_RE = re.compile(r"^[\s*_`>#-]*common aspects[\s*_`]*:[\s*_`]*", re.IGNORECASE)
_MARKER_LINE_RE = re.compile(r"^[\s*_`>#-]*(applicable|explanation)[\s*_`]*:", re.IGNORECASE)
_SLOT_RE = re.compile(r"\{(statute|case)\}")


class ChatClientError(RuntimeError):
    """Transport or protocol failure after the retry policy is exhausted."""


@dataclass(frozen=True)
class CaseSummary:
    """At most 25 sentences kept in original order."""

    case_id: str
    sentence_indices: tuple[int, ...]
    text: str


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    statute_name: str
    text: str


@dataclass(frozen=True)
class LlmVerdict:
    applicable: bool
    explanation: str
    common_aspects: tuple[str, ...] | None
    raw: str
    missing_verdict: bool = False
    missing_explanation: bool = False


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.3
    max_tokens: int = 200
    in_flight: int = 1
    max_retries: int = 2
    retry_delay: float = 0.5
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


def summarize_case(
    case: CaseDescription, X: np.ndarray, max_sentences: int = MAX_SUMMARY_SENTENCES
) -> CaseSummary:
    """Keep the sentences most similar to the centroid of all sentences.

    Scores are cosine similarities to the mean embedding; ties go to the
    earlier sentence.  Cases already within the limit pass through whole.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != len(case.sentences):
        raise ValueError(
            f"case {case.case_id!r}: {X.shape[0]} embedding rows for {len(case.sentences)} sentences"
        )
    n = len(case.sentences)
    if n <= max_sentences:
        indices = tuple(range(n))
    else:
        centroid = X.mean(axis=0)
        c_norm = float(np.linalg.norm(centroid))
        norms = np.linalg.norm(X, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            scores = (X @ centroid) / (norms * c_norm)
        scores = np.where((norms > 0) & (c_norm > 0), scores, 0.0)
        ranked = sorted(range(n), key=lambda j: (-scores[j], j))
        indices = tuple(sorted(ranked[:max_sentences]))
    text = " ".join(case.sentences[j] for j in indices)
    return CaseSummary(case_id=case.case_id, sentence_indices=indices, text=text)


def _template(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}; expected one of {MODES}")
    return (resources.files("statutepred") / "prompts" / f"{mode}.txt").read_text(encoding="utf-8")


def build_prompt(statute: Statute, summary: CaseSummary, mode: str = "standard") -> PromptSpec:
    """Fill the mode's template; statute and case text go in verbatim."""
    if not statute.content.strip():
        raise ValueError(f"statute {statute.name!r} has empty content")
    if not summary.text.strip():
        raise ValueError(f"case {summary.case_id!r} has an empty summary")
    slots = {"statute": statute.content, "case": summary.text}
    text = _SLOT_RE.sub(lambda m: slots[m.group(1)], _template(mode))
    return PromptSpec(mode=mode, statute_name=statute.name, text=text)


def _extract_common_aspects(raw: str) -> tuple[str, ...] | None:
    lines = raw.splitlines()
    for i, line in enumerate(lines):
        m = _COMMON_RE.match(line)
        if not m:
            continue
        collected = [line[m.end():]]
        for rest in lines[i + 1 :]:
            if _MARKER_LINE_RE.match(rest):
                break
            collected.append(rest)
        body = " ".join(part.strip() for part in collected).strip()
        if body.strip("*_` ").rstrip(".").strip().lower() == "none":
            return ()
        items = [piece.strip(" *_`\t.") for piece in body.split(",")]
        return tuple(item for item in items if item)
    return None


def parse_response(raw: str, mode: str = "standard") -> LlmVerdict:
    """Pull the verdict, explanation, and (CoT) aspect list out of a response.

    The first line carrying ``Applicable: Yes|No`` decides, case-insensitive
    and tolerant of surrounding whitespace/markdown.  A response with no
    such line is treated as not applicable and flagged, never an exception.
    """
    applicable = False
    missing_verdict = True
    for line in raw.splitlines():
        m = _APPLICABLE_RE.match(line.strip())
        if m:
            applicable = m.group(1).lower() == "yes"
            missing_verdict = False
            break
    if missing_verdict:
        logger.warning("response has no Applicable line; treating as not applicable")

    explanation = ""
    missing_explanation = False
    m = _EXPLANATION_RE.search(raw)
    if m:
        explanation = raw[m.end():].strip()
    if not explanation:
        missing_explanation = True
        logger.warning("response has no Explanation text")

    common = _extract_common_aspects(raw) if mode == "cot" else None
    return LlmVerdict(
        applicable=applicable,
        explanation=explanation,
        common_aspects=common,
        raw=raw,
        missing_verdict=missing_verdict,
        missing_explanation=missing_explanation,
    )


class ChatClient:
    """Prompt in, raw completion text out."""

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class HttpChatClient(ChatClient):
    """Chat-completions HTTP client with bounded retries.

    Sends ``{"model", "messages": [{"role": "user", "content": prompt}],
    "temperature", "max_tokens"}`` and returns the first choice's message
    content.  Connection errors and 5xx responses are retried
    ``max_retries`` times with linear backoff; 4xx responses fail fast.
    """

    def __init__(self, config: LlmClientConfig):
        if not config.endpoint:
            raise ValueError("HTTP client needs an endpoint")
        self.config = config

    def complete(self, prompt: str) -> str:
        import requests

        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                time.sleep(self.config.retry_delay * attempt)
            try:
                resp = requests.post(self.config.endpoint, json=payload, timeout=self.config.timeout)
            except Exception as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = ChatClientError(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ChatClientError(f"request rejected: {resp.status_code} {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ChatClientError(f"malformed completion response: {exc}") from exc
        raise ChatClientError(f"transport failed after {self.config.max_retries + 1} attempts: {last_error}")


class ReplayChatClient(ChatClient):
    """Serves recorded responses keyed by SHA-256 of the prompt text.

    Fixture format: JSON lines ``{"prompt_sha256": ..., "response": ...}``.
    """

    def __init__(self, fixture: str | Path | Mapping[str, str]):
        if isinstance(fixture, Mapping):
            self._responses = dict(fixture)
        else:
            self._responses = {}
            with open(fixture, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    self._responses[record["prompt_sha256"]] = record["response"]

    def complete(self, prompt: str) -> str:
        key = text_sha256(prompt)
        if key not in self._responses:
            raise ChatClientError(f"no recorded response for prompt {key[:12]}...")
        return self._responses[key]


class RecordingChatClient(ChatClient):
    """Wraps another client and appends every exchange to a fixture file."""

    def __init__(self, inner: ChatClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        response = self.inner.complete(prompt)
        record = json.dumps({"prompt_sha256": text_sha256(prompt), "response": response})
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(record + "\n")
        return response


@dataclass(frozen=True)
class PairResult:
    case_id: str
    statute_id: int
    statute_name: str
    mode: str
    rank: int
    probability: float
    prompt_sha256: str
    verdict: LlmVerdict | None = None
    error: str | None = None

    def as_record(self) -> dict:
        record = {
            "case_id": self.case_id,
            "statute": self.statute_name,
            "mode": self.mode,
            "applicable": self.verdict.applicable if self.verdict else None,
            "explanation": self.verdict.explanation if self.verdict else "",
            "common_aspects": list(self.verdict.common_aspects or ()) if self.verdict else None,
            "raw_sha": text_sha256(self.verdict.raw) if self.verdict else None,
        }
        if self.error is not None:
            record["error"] = self.error
        return record


@dataclass
class PipelineResult:
    mode: str
    k: int
    pairs: list[PairResult] = field(default_factory=list)
    predicted: dict[str, set[int]] = field(default_factory=dict)

    @property
    def errored(self) -> list[PairResult]:
        return [p for p in self.pairs if p.error is not None]


def run_pipeline(
    cases: Sequence[tuple[CaseDescription, np.ndarray]],
    params: model.ModelParams,
    config: model.ModelConfig,
    Y: np.ndarray,
    registry: Sequence[Statute],
    k: int,
    client: ChatClient,
    mode: str = "standard",
    in_flight: int = 1,
    max_summary_sentences: int = MAX_SUMMARY_SENTENCES,
) -> PipelineResult:
    """Gate each case to its top-k statutes, prompt once per pair, collect verdicts.

    The predicted set per case is the statutes answered ``Applicable: Yes``
    (always a subset of the k prompted).  Pairs whose transport failed are
    reported with an error and excluded from predicted sets.  Results are
    joined by (case, statute) key, so output order does not depend on
    completion order.
    """
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    statutes = {s.statute_id: s for s in registry}
    Y = np.asarray(Y, dtype=np.float64)

    jobs: list[tuple[CaseDescription, int, int, float, PromptSpec]] = []
    for case, X in cases:
        summary = summarize_case(case, X, max_summary_sentences)
        ranked = model.top_k(params, config, X, Y, k)
        for rank, (statute_id, prob) in enumerate(ranked):
            prompt = build_prompt(statutes[statute_id], summary, mode)
            jobs.append((case, statute_id, rank, prob, prompt))

    def execute(job: tuple) -> PairResult:
        case, statute_id, rank, prob, prompt = job
        base = dict(
            case_id=case.case_id,
            statute_id=statute_id,
            statute_name=statutes[statute_id].name,
            mode=mode,
            rank=rank,
            probability=prob,
            prompt_sha256=text_sha256(prompt.text),
        )
        try:
            raw = client.complete(prompt.text)
        except ChatClientError as exc:
            logger.warning("pair (%s, %s) errored: %s", case.case_id, statutes[statute_id].name, exc)
            return PairResult(**base, error=str(exc))
        return PairResult(**base, verdict=parse_response(raw, mode))

    if in_flight > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=in_flight) as pool:
            results = list(pool.map(execute, jobs))
    else:
        results = [execute(job) for job in jobs]

    by_key = {(r.case_id, r.statute_id): r for r in results}
    case_order = {case.case_id: i for i, (case, _) in enumerate(cases)}
    result = PipelineResult(mode=mode, k=k)
    result.pairs = sorted(
        by_key.values(), key=lambda r: (case_order[r.case_id], r.rank)
    )
    for case, _ in cases:
        result.predicted[case.case_id] = set()
    for pair in result.pairs:
        if pair.verdict is not None and pair.verdict.applicable:
            result.predicted[pair.case_id].add(pair.statute_id)
    return result
