"""Bundled synthetic corpus: keyword-defined statutes with exact gold labels.

Twelve statutes are each defined by one offence keyword.  A case is 10-40
generated sentences; its gold labels are exactly the statutes whose keyword
occurs in the text.  Sentences carry dates, amounts, and section numbers so
digit masking has real work to do, and keyword/scaffold vocabularies are
chosen so that, under the bundled 32-dimension hashing embedder, every
keyword owns a (dimension, sign) slot that no other corpus word touches -
the labels stay separable and a small model can be trained end to end in
seconds.

Run ``python -m statutepred.synthetic --out DIR`` to write statute, split,
and manifest files ready for the ``ingest`` CLI stage.
"""

from __future__ import annotations

import argparse
import json
import re
from pathlib import Path

import numpy as np

from .corpus import CaseDescription, Statute, save_cases, save_statutes
from .embeddings import token_slot

HASH_DIM = 32

KEYWORDS = (
    "theft", "forgery", "rioting", "bribery", "assault", "smuggling",
    "arson", "kidnapping", "perjury", "extortion", "trespass", "poaching",
)

CONTENT_TEMPLATE = (
    "Whoever commits {keyword} or aids the commission of {keyword} shall be "
    "punished with imprisonment or fine or with both."
)

NOISE_TEMPLATES = (
    "During {month} {year} the {actor} appeared before the {court} of the village.",
    "The {actor} moved the {court} with a claim about the {object}.",
    "Counsel argued the {object} had not been produced before the {court}.",
    "The {court} adjourned the matter to the {day} day of {month} {year}.",
    "A copy of the {object} was served upon the {actor} at the {place}.",
    "The {actor} deposited a sum of {amount} rupees with the {court}.",
    "The clerk entered the {object} at page {page} of the daily ledger.",
    "The {court} directed the {actor} to produce the {object} within {span} sessions.",
    "The {actor} remained at the {place} during the hearing.",
    "The matter of the {object} was listed before the {court} again.",
    "A statement was read aloud and noted by the {court} clerk.",
    "The meeting of the society members was held at the {place} during {month}.",
)

KEYWORD_TEMPLATES = (
    "The charge alleges {keyword} by the {actor} near the {place}.",
    "The {actor} committed {keyword} at the {place} during {month} {year}.",
    "The report registered the offence of {keyword} under section {section}.",
    "Proof of {keyword} was placed before the {court}.",
    "The prosecution stated the {actor} had committed {keyword} there.",
)

POOLS = {
    "actor": ("appellant", "petitioner", "complainant", "defendant",
              "guardian", "trustee", "tenant", "vendor"),
    "court": ("magistrate", "commission", "registrar", "authority", "panchayat"),
    "object": ("ledger", "contract", "warrant", "deposit", "notice", "agreement", "receipt"),
    "place": ("warehouse", "premises", "market", "residence", "courtyard", "village"),
    "month": ("february", "may", "june", "july", "august", "september", "november"),
}

_WORD_RE = re.compile(r"[a-z]+")


def _scaffold_words() -> set[str]:
    words: set[str] = set()
    for template in NOISE_TEMPLATES + KEYWORD_TEMPLATES + (CONTENT_TEMPLATE,):
        skeleton = re.sub(r"\{[a-z]+\}", " ", template)
        words |= set(_WORD_RE.findall(skeleton.lower()))
    for pool in POOLS.values():
        words |= set(pool)
    return words


def check_vocabulary() -> None:
    """Fail loudly if the frozen vocabulary lost its separability guarantees."""
    slots = [token_slot(word, HASH_DIM) for word in KEYWORDS]
    if len(set(slots)) != len(KEYWORDS):
        raise AssertionError("keyword hash slots collide")
    keyword_slots = set(slots)
    scaffold = _scaffold_words()
    if scaffold & set(KEYWORDS):
        raise AssertionError("scaffold vocabulary contains a keyword")
    dirty = sorted(w for w in scaffold if token_slot(w, HASH_DIM) in keyword_slots)
    if dirty:
        raise AssertionError(f"scaffold words share keyword hash slots: {dirty}")


def build_registry() -> list[Statute]:
    return [
        Statute(
            statute_id=i,
            name=f"Section {101 + i}",
            content=CONTENT_TEMPLATE.format(keyword=keyword),
        )
        for i, keyword in enumerate(KEYWORDS)
    ]


def _fill(template: str, rng: np.random.Generator, keyword: str | None = None) -> str:
    def value(field: str) -> str:
        if field == "keyword":
            assert keyword is not None
            return keyword
        if field in POOLS:
            return str(rng.choice(POOLS[field]))
        if field == "day":
            return str(int(rng.integers(1, 29)))
        if field == "year":
            return str(int(rng.integers(1951, 2021)))
        if field == "amount":
            return str(int(rng.integers(100, 100000)))
        if field == "page":
            return str(int(rng.integers(1, 400)))
        if field == "span":
            return str(int(rng.integers(2, 9)))
        if field == "section":
            return str(int(rng.integers(101, 113)))
        raise KeyError(field)

    return re.sub(r"\{([a-z]+)\}", lambda m: value(m.group(1)), template)


def gold_labels_from_text(sentences: list[str]) -> frozenset[int]:
    """Recompute labels straight from the text: statute i iff its keyword occurs."""
    tokens: set[str] = set()
    for sentence in sentences:
        tokens |= set(_WORD_RE.findall(sentence.lower()))
    return frozenset(i for i, keyword in enumerate(KEYWORDS) if keyword in tokens)


def generate_case(
    case_id: str, split: str, rng: np.random.Generator,
    min_sentences: int = 10, max_sentences: int = 40,
) -> CaseDescription:
    n_sentences = int(rng.integers(min_sentences, max_sentences + 1))
    n_labels = int(rng.integers(1, 4))
    labels = sorted(rng.choice(len(KEYWORDS), size=n_labels, replace=False).tolist())

    placements: list[tuple[int, str]] = []  # (sentence position, keyword)
    positions = list(rng.permutation(n_sentences))
    for statute_id in labels:
        occurrences = 1 if rng.random() < 0.8 else 2
        for _ in range(occurrences):
            if positions:
                placements.append((int(positions.pop()), KEYWORDS[statute_id]))

    by_position = {pos: kw for pos, kw in placements}
    sentences = []
    for j in range(n_sentences):
        if j in by_position:
            template = KEYWORD_TEMPLATES[int(rng.integers(len(KEYWORD_TEMPLATES)))]
            sentences.append(_fill(template, rng, keyword=by_position[j]))
        else:
            template = NOISE_TEMPLATES[int(rng.integers(len(NOISE_TEMPLATES)))]
            sentences.append(_fill(template, rng))

    gold = gold_labels_from_text(sentences)
    if gold != frozenset(labels):  # placement ran out of room or vocab drifted
        raise AssertionError(f"case {case_id}: planned labels {labels}, text implies {sorted(gold)}")
    return CaseDescription(
        case_id=case_id, sentences=tuple(sentences), gold_labels=gold, split=split
    )


def generate_corpus(
    out_dir: str | Path,
    seed: int = 0,
    train: int = 600,
    dev: int = 100,
    test: int = 100,
) -> Path:
    """Write statutes.jsonl, per-split case files, and manifest.json."""
    check_vocabulary()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    registry = build_registry()
    save_statutes(registry, out_dir / "statutes.jsonl")

    sizes = {"train": train, "dev": dev, "test": test}
    for split, size in sizes.items():
        cases = [
            generate_case(f"{split}-{i:04d}", split, rng) for i in range(size)
        ]
        save_cases(cases, out_dir / f"{split}.jsonl", registry)
    manifest = {
        "statutes": "statutes.jsonl",
        "train": "train.jsonl",
        "dev": "dev.jsonl",
        "test": "test.jsonl",
        "counts": sizes,
        "seed": seed,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m statutepred.synthetic",
        description="Generate the bundled keyword-statute corpus.",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train", type=int, default=600)
    parser.add_argument("--dev", type=int, default=100)
    parser.add_argument("--test", type=int, default=100)
    args = parser.parse_args(argv)
    manifest = generate_corpus(
        args.out, seed=args.seed, train=args.train, dev=args.dev, test=args.test
    )
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
