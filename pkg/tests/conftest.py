"""Shared fixtures: tiny model instances, the trained synthetic bundle, HTTP stubs."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from statutepred import corpus, embeddings as emb, model, synthetic, training

TINY = model.ModelConfig(
    num_statutes=3, heads=2, embed_dim=4, attn_dim=2, hidden_dim=3,
    dropout=0.0, max_sentences=10,
)


def random_instance(rng: np.random.Generator, config: model.ModelConfig, n_sentences: int):
    """Random params + case/statute matrices + a random gold set."""
    params = model.init_params(config, seed=int(rng.integers(1_000_000)))
    X = rng.normal(size=(n_sentences, config.embed_dim))
    Y = rng.normal(size=(config.num_statutes, config.embed_dim))
    gold = {int(i) for i in rng.choice(config.num_statutes,
                                       size=int(rng.integers(0, config.num_statutes + 1)),
                                       replace=False)}
    return params, X, Y, gold


@dataclass
class SynthBundle:
    data_dir: Path
    dataset: corpus.Dataset
    provider: emb.HashingProvider
    Y: np.ndarray
    train_cases: list[emb.EmbeddedCase]
    dev_cases: list[emb.EmbeddedCase]
    test_cases: list[emb.EmbeddedCase]
    config: model.ModelConfig
    params: model.ModelParams
    history: list = field(default_factory=list)
    train_seconds: float = 0.0


SYNTH_SEED = 0
SYNTH_TRAIN_SEED = 1
SYNTH_OPTIONS = training.TrainerOptions(
    learning_rate=5e-3, batch_size=32, epochs=30, patience=None, seed=SYNTH_TRAIN_SEED
)
SYNTH_CONFIG_KWARGS = dict(
    num_statutes=len(synthetic.KEYWORDS), heads=3, embed_dim=synthetic.HASH_DIM,
    attn_dim=16, hidden_dim=64, dropout=0.1, max_sentences=150,
)


def embed_split(dataset: corpus.Dataset, provider: emb.EmbeddingProvider, split: str):
    return [
        emb.EmbeddedCase(
            case_id=c.case_id,
            matrix=provider.embed(list(c.sentences)).astype(np.float64),
            gold_labels=c.gold_labels,
        )
        for c in dataset.cases(split)
    ]


@pytest.fixture(scope="session")
def synth(tmp_path_factory) -> SynthBundle:
    """Generate, preprocess, embed, and train the synthetic corpus once."""
    import time

    data_dir = tmp_path_factory.mktemp("synth")
    manifest = synthetic.generate_corpus(data_dir, seed=SYNTH_SEED)
    dataset = corpus.load_dataset(data_dir / "statutes.jsonl", manifest_path=manifest)
    dataset = corpus.prepare_dataset(dataset, max_sentences=150)
    provider = emb.HashingProvider(dim=synthetic.HASH_DIM)
    Y = provider.embed([s.content for s in dataset.registry]).astype(np.float64)
    train_cases = embed_split(dataset, provider, "train")
    dev_cases = embed_split(dataset, provider, "dev")
    test_cases = embed_split(dataset, provider, "test")
    config = model.ModelConfig(**SYNTH_CONFIG_KWARGS)
    params = model.init_params(config, seed=SYNTH_TRAIN_SEED)
    started = time.perf_counter()
    result = training.train(params, config, train_cases, dev_cases, Y, SYNTH_OPTIONS)
    elapsed = time.perf_counter() - started
    return SynthBundle(
        data_dir=data_dir,
        dataset=dataset,
        provider=provider,
        Y=Y,
        train_cases=train_cases,
        dev_cases=dev_cases,
        test_cases=test_cases,
        config=config,
        params=result.params,
        history=result.history,
        train_seconds=elapsed,
    )


class _JsonHandler(BaseHTTPRequestHandler):
    """POST handler driven by a callable set on the server object."""

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        status, payload = self.server.respond(self.path, body)  # type: ignore[attr-defined]
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # silence test output
        pass


class StubHttpServer:
    """Local HTTP server whose behaviour is a (path, body) -> (status, payload) callable."""

    def __init__(self, respond):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _JsonHandler)
        self.server.respond = respond  # type: ignore[attr-defined]
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)
