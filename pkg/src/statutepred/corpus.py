"""Statute registries and case corpora: loading, validation, masking, truncation.

Input files are UTF-8 JSON lines.  Statute files carry one object per line,
``{"name": str, "content": str}``; the line index becomes the statute id.
Case files carry ``{"case_id": str, "sentences": [str, ...], "labels":
[str, ...]}`` where labels are statute names.  Case text arrives already
split into sentences; no sentence segmentation happens in this package.

Masking replaces every decimal digit with ``'#'`` so statute/article numbers
quoted inside a case can never reveal its labels.  Masking is applied to case
sentences only, never to statute contents.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

MASK_CHAR = "#"
SPLITS = ("train", "dev", "test")

_DIGIT_RE = re.compile(r"\d")  # any Unicode decimal digit (category Nd)


class CorpusError(ValueError):
    """Malformed statute/case file or a dataset consistency violation."""


@dataclass(frozen=True)
class Statute:
    """One class label: a section or article together with its legal text."""

    statute_id: int
    name: str
    content: str


@dataclass(frozen=True)
class CaseDescription:
    """An ordered list of fact sentences plus the gold statute-id set."""

    case_id: str
    sentences: tuple[str, ...]
    gold_labels: frozenset[int]
    split: str = "test"


@dataclass(frozen=True)
class Dataset:
    registry: tuple[Statute, ...]
    splits: Mapping[str, tuple[CaseDescription, ...]]

    def cases(self, split: str) -> tuple[CaseDescription, ...]:
        return self.splits.get(split, ())

    def counts(self) -> dict[str, int]:
        return {name: len(cases) for name, cases in self.splits.items()}


def name_index(registry: Sequence[Statute]) -> dict[str, int]:
    return {s.name: s.statute_id for s in registry}


def mask_numerics(text: str) -> str:
    """Replace every decimal digit character with the mask character.

    Length-preserving and idempotent: the mask character is not a digit.
    """
    return _DIGIT_RE.sub(MASK_CHAR, text)


def mask_case(case: CaseDescription) -> CaseDescription:
    return replace(case, sentences=tuple(mask_numerics(s) for s in case.sentences))


def truncate_sentences(case: CaseDescription, max_sentences: int) -> CaseDescription:
    """Keep the first ``max_sentences`` sentences; labels are untouched."""
    if max_sentences < 1:
        raise ValueError(f"max_sentences must be >= 1, got {max_sentences}")
    if len(case.sentences) <= max_sentences:
        return case
    return replace(case, sentences=case.sentences[:max_sentences])


def prepare_case(case: CaseDescription, max_sentences: int) -> CaseDescription:
    """Masking followed by truncation, the order every pipeline stage assumes."""
    return truncate_sentences(mask_case(case), max_sentences)


def prepare_dataset(dataset: Dataset, max_sentences: int) -> Dataset:
    return Dataset(
        registry=dataset.registry,
        splits={
            split: tuple(prepare_case(c, max_sentences) for c in cases)
            for split, cases in dataset.splits.items()
        },
    )


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def load_statutes(path: str | Path) -> list[Statute]:
    """Read a statute registry; ids are assigned 0..N-1 in file order."""
    path = Path(path)
    registry: list[Statute] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            name = obj["name"]
            content = obj["content"]
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
        if not isinstance(name, str) or not name.strip():
            raise CorpusError(f"{path}:{lineno}: statute name must be a non-empty string")
        if not isinstance(content, str) or not content.strip():
            raise CorpusError(f"{path}:{lineno}: empty content for statute {name!r}")
        if name in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate statute name {name!r}")
        seen.add(name)
        registry.append(Statute(statute_id=len(registry), name=name, content=content))
    if not registry:
        raise CorpusError(f"{path}: no statutes")
    return registry


def load_cases(
    path: str | Path, registry: Sequence[Statute], split: str = "test"
) -> list[CaseDescription]:
    """Read one split of case descriptions, resolving label names to ids.

    Unknown labels are a hard error: skipping them would hide a registry /
    dataset mismatch.  Masking is NOT applied here; it is an explicit step.
    """
    path = Path(path)
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}; expected one of {SPLITS}")
    by_name = name_index(registry)
    cases: list[CaseDescription] = []
    for lineno, obj in _iter_jsonl(path):
        try:
            case_id = obj["case_id"]
            sentences = obj["sentences"]
            labels = obj["labels"]
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
        if not isinstance(case_id, str) or not case_id:
            raise CorpusError(f"{path}:{lineno}: case_id must be a non-empty string")
        if not isinstance(sentences, list) or not sentences:
            raise CorpusError(f"{path}:{lineno}: case {case_id!r} has zero sentences")
        for j, sent in enumerate(sentences):
            if not isinstance(sent, str) or not sent.strip():
                raise CorpusError(
                    f"{path}:{lineno}: case {case_id!r} sentence {j} is empty or not a string"
                )
        gold: set[int] = set()
        for label in labels:
            if label not in by_name:
                raise CorpusError(f"{path}:{lineno}: unknown statute {label!r} in case {case_id!r}")
            gold.add(by_name[label])
        cases.append(
            CaseDescription(
                case_id=case_id,
                sentences=tuple(sentences),
                gold_labels=frozenset(gold),
                split=split,
            )
        )
    return cases


def save_statutes(registry: Sequence[Statute], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for statute in registry:
            fh.write(json.dumps({"name": statute.name, "content": statute.content}) + "\n")


def save_cases(
    cases: Sequence[CaseDescription], path: str | Path, registry: Sequence[Statute]
) -> None:
    names = {s.statute_id: s.name for s in registry}
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            record = {
                "case_id": case.case_id,
                "sentences": list(case.sentences),
                "labels": [names[i] for i in sorted(case.gold_labels)],
            }
            fh.write(json.dumps(record) + "\n")


def load_manifest(path: str | Path) -> dict:
    """Read a ``{"train": path, "dev": path, "test": path}`` manifest.

    Split paths are resolved relative to the manifest's directory.  An
    optional ``"counts"`` object declares expected split sizes.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON manifest ({exc.msg})") from exc
    if not isinstance(manifest, dict):
        raise CorpusError(f"{path}: manifest must be a JSON object")
    return manifest


def load_dataset(
    statutes_path: str | Path,
    manifest_path: str | Path | None = None,
    split_paths: Mapping[str, str | Path] | None = None,
) -> Dataset:
    """Assemble a Dataset from a statute file plus per-split case files.

    Exactly one of ``manifest_path`` / ``split_paths`` must be given.  When
    the manifest carries a ``"counts"`` object, loaded split sizes must match.
    """
    registry = load_statutes(statutes_path)
    expected_counts: Mapping[str, int] = {}
    if manifest_path is not None:
        manifest = load_manifest(manifest_path)
        base = Path(manifest_path).parent
        split_paths = {
            split: base / manifest[split] for split in SPLITS if manifest.get(split)
        }
        expected_counts = manifest.get("counts", {})
    if not split_paths:
        raise CorpusError("no split files given")
    splits: dict[str, tuple[CaseDescription, ...]] = {}
    for split, case_path in split_paths.items():
        splits[split] = tuple(load_cases(case_path, registry, split=split))
    for split, expected in expected_counts.items():
        actual = len(splits.get(split, ()))
        if actual != expected:
            raise CorpusError(
                f"split {split!r} has {actual} cases but the manifest declares {expected}"
            )
    return Dataset(registry=tuple(registry), splits=splits)
