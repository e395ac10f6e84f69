"""Sentence/statute embedding providers, disk cache, and batch embedding.

The numeric core never talks to an encoder directly: it consumes matrices
produced here.  Three providers ship:

* :class:`HashingProvider` - deterministic token-hash bag vectors; no model,
  no network.  Used for tests and the bundled synthetic corpus.
* :class:`PrecomputedProvider` - serves vectors from a matrix file written
  earlier (rows looked up by text hash).
* :class:`HttpEmbeddingProvider` - client for a sidecar encoder service:
  ``POST <base>/embed`` with ``{"texts": [...]}`` returning
  ``{"dim": int, "vectors": [[...], ...]}``.

Vectors are float32 end to end.  The cache key is the SHA-256 of the
provider identity, a NUL framing byte, and the exact text bytes, so masked
and unmasked variants of the same sentence can never collide.
"""

from __future__ import annotations

import hashlib
import json
import re
import sqlite3
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import matrixio
from .corpus import CaseDescription, Statute

DEFAULT_DIM = 768

_TOKEN_RE = re.compile(r"[a-z]+")


class EmbeddingError(RuntimeError):
    """Provider failure or a violated embedding contract."""


class DimensionMismatch(EmbeddingError):
    """Provider returned vectors that do not match its declared dimension."""


@dataclass(frozen=True)
class EmbeddedCase:
    """A case joined with its sentence matrix (rows follow sentence order)."""

    case_id: str
    matrix: np.ndarray
    gold_labels: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise ValueError(f"case {self.case_id!r}: bad sentence matrix shape {self.matrix.shape}")


class EmbeddingProvider:
    """Base contract: deterministic text -> fixed-dimension float32 vectors."""

    identity: str
    dim: int
    supports_concurrency: bool = False

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


def token_slot(token: str, dim: int) -> tuple[int, int]:
    """Hash a token to its (dimension index, sign) slot."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    index = int.from_bytes(digest[:4], "little") % dim
    sign = 1 if digest[4] & 1 else -1
    return index, sign


class HashingProvider(EmbeddingProvider):
    """Bag-of-words feature hashing into a fixed-dimension unit vector.

    Tokens are lowercase alphabetic runs, so digit masking leaves these
    vectors untouched.  Purely arithmetic and fully deterministic.
    """

    def __init__(self, dim: int = 32):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.identity = f"hashing-{dim}-v1"

    supports_concurrency = True

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.lower()):
                index, sign = token_slot(token, self.dim)
                out[row, index] += sign
            norm = float(np.linalg.norm(out[row]))
            if norm > 0.0:
                out[row] /= norm
        return out


class PrecomputedProvider(EmbeddingProvider):
    """Serves vectors from a matrix file keyed by the sidecar text hashes."""

    def __init__(self, matrix_path: str | Path, identity: str | None = None):
        self._matrix = matrixio.read_matrix(matrix_path)
        hashes = matrixio.read_row_hashes(matrix_path)
        self._rows = {h: i for i, h in enumerate(hashes)}
        self.dim = int(self._matrix.shape[1])
        self.identity = identity or f"precomputed:{Path(matrix_path).name}"

    supports_concurrency = True

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            key = matrixio.text_sha256(text)
            if key not in self._rows:
                raise EmbeddingError(f"no precomputed vector for text hash {key[:12]}...")
            out[row] = self._matrix[self._rows[key]]
        return out


class HttpEmbeddingProvider(EmbeddingProvider):
    """Client for the embedding service protocol (``POST /embed``)."""

    def __init__(
        self,
        base_url: str,
        identity: str,
        dim: int = DEFAULT_DIM,
        timeout: float = 60.0,
        supports_concurrency: bool = True,
    ):
        self._url = base_url.rstrip("/") + "/embed"
        self.identity = identity
        self.dim = dim
        self.timeout = timeout
        self.supports_concurrency = supports_concurrency

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        try:
            resp = requests.post(self._url, json={"texts": list(texts)}, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:
            raise EmbeddingError(f"embedding service unavailable: {exc}") from exc
        if payload.get("dim") != self.dim:
            raise DimensionMismatch(
                f"service reports dim {payload.get('dim')}, provider declares {self.dim}"
            )
        return np.asarray(payload["vectors"], dtype=np.float32)


class EmbeddingCache:
    """Disk-backed (provider identity, text) -> vector map, bit-exact.

    SQLite keeps it a single file; reads may come from any thread, writes are
    serialized behind a lock.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS vectors"
                " (key TEXT PRIMARY KEY, dim INTEGER NOT NULL, data BLOB NOT NULL)"
            )
            self._conn.commit()

    @staticmethod
    def key(provider_identity: str, text: str) -> str:
        material = provider_identity.encode("utf-8") + b"\0" + text.encode("utf-8")
        return hashlib.sha256(material).hexdigest()

    def get(self, provider_identity: str, text: str) -> np.ndarray | None:
        k = self.key(provider_identity, text)
        with self._lock:
            row = self._conn.execute("SELECT dim, data FROM vectors WHERE key = ?", (k,)).fetchone()
        if row is None:
            return None
        dim, blob = row
        return np.frombuffer(blob, dtype="<f4", count=dim).copy()

    def put(self, provider_identity: str, text: str, vector: np.ndarray) -> None:
        k = self.key(provider_identity, text)
        blob = np.ascontiguousarray(vector, dtype="<f4").tobytes()
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO vectors (key, dim, data) VALUES (?, ?, ?)",
                (k, int(vector.shape[0]), blob),
            )
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()


def _check_batch(provider: EmbeddingProvider, texts: Sequence[str], batch: np.ndarray) -> None:
    if batch.shape != (len(texts), provider.dim):
        raise DimensionMismatch(
            f"provider {provider.identity!r} declares dim {provider.dim} "
            f"but returned shape {tuple(batch.shape)} for {len(texts)} texts"
        )
    if not np.isfinite(batch).all():
        bad = int(np.argwhere(~np.isfinite(batch))[0][0])
        raise EmbeddingError(f"provider {provider.identity!r} returned non-finite values (text {bad})")


def embed_texts(
    provider: EmbeddingProvider,
    texts: Sequence[str],
    cache: EmbeddingCache | None = None,
    in_flight: int = 1,
    batch_size: int = 64,
) -> np.ndarray:
    """Embed texts in order, going to the provider only for cache misses."""
    for i, text in enumerate(texts):
        if not isinstance(text, str) or not text:
            raise ValueError(f"text {i} is empty; providers require non-empty strings")
    out = np.empty((len(texts), provider.dim), dtype=np.float32)
    misses: list[int] = []
    for i, text in enumerate(texts):
        hit = cache.get(provider.identity, text) if cache is not None else None
        if hit is not None:
            if hit.shape[0] != provider.dim:
                raise DimensionMismatch(
                    f"cached vector has dim {hit.shape[0]}, provider declares {provider.dim}"
                )
            out[i] = hit
        else:
            misses.append(i)

    def run_batch(indices: list[int]) -> tuple[list[int], np.ndarray]:
        chunk = [texts[i] for i in indices]
        vectors = np.asarray(provider.embed(chunk), dtype=np.float32)
        _check_batch(provider, chunk, vectors)
        return indices, vectors

    batches = [misses[i : i + batch_size] for i in range(0, len(misses), batch_size)]
    if len(batches) > 1 and in_flight > 1 and provider.supports_concurrency:
        with ThreadPoolExecutor(max_workers=in_flight) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(b) for b in batches]
    for indices, vectors in results:
        for row, i in enumerate(indices):
            out[i] = vectors[row]
            if cache is not None:
                cache.put(provider.identity, texts[i], vectors[row])
    return out


def _case_file_name(case_id: str, used: set[str]) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", case_id)
    name = safe
    if safe != case_id or name in used:
        name = f"{safe}-{hashlib.sha256(case_id.encode('utf-8')).hexdigest()[:8]}"
    used.add(name)
    return name + ".emb"


def embed_dataset(
    provider: EmbeddingProvider,
    registry: Sequence[Statute],
    cases_by_split: Mapping[str, Sequence[CaseDescription]],
    out_dir: str | Path,
    cache: EmbeddingCache | None = None,
    in_flight: int = 1,
) -> dict:
    """Embed every statute content and case sentence; write matrix files.

    Emits ``statutes.emb`` plus one ``cases/<case>.emb`` per case, and an
    ``index.json`` mapping case ids to their matrix files.  Inputs are
    expected to be masked and truncated already.
    """
    out_dir = Path(out_dir)
    (out_dir / "cases").mkdir(parents=True, exist_ok=True)
    contents = [s.content for s in registry]
    statute_matrix = embed_texts(provider, contents, cache=cache, in_flight=in_flight)
    matrixio.write_matrix(
        out_dir / "statutes.emb", statute_matrix, [matrixio.text_sha256(t) for t in contents]
    )
    index: dict = {
        "provider": provider.identity,
        "dim": provider.dim,
        "statutes": "statutes.emb",
        "cases": {},
    }
    used_names: set[str] = set()
    for split in sorted(cases_by_split):
        for case in cases_by_split[split]:
            try:
                matrix = embed_texts(provider, case.sentences, cache=cache, in_flight=in_flight)
            except Exception as exc:
                raise EmbeddingError(f"case {case.case_id!r}: {exc}") from exc
            rel = "cases/" + _case_file_name(case.case_id, used_names)
            matrixio.write_matrix(
                out_dir / rel, matrix, [matrixio.text_sha256(s) for s in case.sentences]
            )
            index["cases"][case.case_id] = rel
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    return index


def load_embedding_index(emb_dir: str | Path) -> dict:
    return json.loads((Path(emb_dir) / "index.json").read_text(encoding="utf-8"))


def load_statute_matrix(emb_dir: str | Path) -> np.ndarray:
    index = load_embedding_index(emb_dir)
    return matrixio.read_matrix(Path(emb_dir) / index["statutes"])


def load_case_matrix(emb_dir: str | Path, case_id: str) -> np.ndarray:
    index = load_embedding_index(emb_dir)
    try:
        rel = index["cases"][case_id]
    except KeyError as exc:
        raise EmbeddingError(f"case {case_id!r} missing from embedding index") from exc
    return matrixio.read_matrix(Path(emb_dir) / rel)


def random_statute_embeddings(n: int, dim: int, seed: int) -> np.ndarray:
    """Seeded uniform(-1, 1) statute matrix for the content-swap ablation."""
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, dim)).astype(np.float32)
