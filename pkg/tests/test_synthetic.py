import re

from statutepred import synthetic
from statutepred.corpus import load_dataset
from statutepred.embeddings import token_slot


def test_vocabulary_guarantees_hold():
    synthetic.check_vocabulary()


def test_keyword_slots_pairwise_distinct():
    slots = [token_slot(k, synthetic.HASH_DIM) for k in synthetic.KEYWORDS]
    assert len(set(slots)) == len(synthetic.KEYWORDS) == 12


def test_generated_corpus_shape(tmp_path):
    manifest = synthetic.generate_corpus(tmp_path, seed=3, train=40, dev=10, test=10)
    dataset = load_dataset(tmp_path / "statutes.jsonl", manifest_path=manifest)
    assert len(dataset.registry) == 12
    assert dataset.counts() == {"train": 40, "dev": 10, "test": 10}
    for split in ("train", "dev", "test"):
        for case in dataset.cases(split):
            assert 10 <= len(case.sentences) <= 40
            assert 1 <= len(case.gold_labels) <= 3


def test_gold_labels_exactly_match_keyword_occurrence(tmp_path):
    manifest = synthetic.generate_corpus(tmp_path, seed=4, train=30, dev=5, test=5)
    dataset = load_dataset(tmp_path / "statutes.jsonl", manifest_path=manifest)
    for split in ("train", "dev", "test"):
        for case in dataset.cases(split):
            derived = synthetic.gold_labels_from_text(list(case.sentences))
            assert derived == case.gold_labels


def test_corpus_contains_digits_before_masking(tmp_path):
    synthetic.generate_corpus(tmp_path, seed=5, train=20, dev=2, test=2)
    text = (tmp_path / "train.jsonl").read_text(encoding="utf-8")
    assert re.search(r"\d", text) is not None


def test_generation_is_seed_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    synthetic.generate_corpus(a, seed=11, train=15, dev=3, test=3)
    synthetic.generate_corpus(b, seed=11, train=15, dev=3, test=3)
    for name in ("statutes.jsonl", "train.jsonl", "dev.jsonl", "test.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_module_entry_point(tmp_path, capsys):
    code = synthetic.main(["--out", str(tmp_path / "gen"), "--train", "5", "--dev", "2", "--test", "2"])
    assert code == 0
    assert (tmp_path / "gen" / "manifest.json").exists()
