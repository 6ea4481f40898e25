"""Text encoders mapping metadata, column names, and categories to fixed-width vectors.

Two interchangeable implementations sit behind the same caching base class: a
fully offline seeded character n-gram projection encoder, and an adapter for a
pre-trained sentence embedding model. Every unique string is encoded exactly
once per encoder instance; repeated lookups hit the cache.
"""

from __future__ import annotations

import hashlib
import threading

import numpy as np

TEXT_DIM = 768


class TextEncoder:
    """Base class: deterministic text -> vector map with a thread-safe cache."""

    def __init__(self, dim: int = TEXT_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.encode_calls = 0

    def encode(self, text: str) -> np.ndarray:
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(text)
            if hit is not None:
                return hit
            vec = np.asarray(self._encode(text), dtype=np.float32)
            if vec.shape != (self.dim,):
                raise ValueError(f"encoder produced shape {vec.shape}, expected ({self.dim},)")
            vec.setflags(write=False)
            self.encode_calls += 1
            self._cache[text] = vec
            return vec

    def encode_many(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts])

    def _encode(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def cache_digest(self) -> str:
        """Stable digest of all cached (text, vector) pairs, for checkpoint manifests."""
        h = hashlib.sha256()
        for text in sorted(self._cache):
            h.update(text.encode("utf-8"))
            h.update(b"\x00")
            h.update(self._cache[text].tobytes())
        return h.hexdigest()

    def spec(self) -> dict:
        raise NotImplementedError


class HashedNGramEncoder(TextEncoder):
    """Offline encoder: hashed character n-gram counts through a seeded random projection.

    Tokens are word unigrams plus character n-grams of the padded lowercase
    text. Each token is hashed (keyed blake2b, stable across processes) into a
    bucketed count vector, which is projected by a fixed Gaussian matrix drawn
    from ``seed`` and L2-normalized. Distinct seeds give unrelated encoders.
    """

    def __init__(self, dim: int = TEXT_DIM, seed: int = 0, buckets: int = 4096,
                 ngram_sizes: tuple[int, ...] = (3, 4, 5)):
        super().__init__(dim)
        self.seed = seed
        self.buckets = buckets
        self.ngram_sizes = ngram_sizes
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((buckets, dim)).astype(np.float32)
        self._projection /= np.sqrt(buckets)

    def _tokens(self, text: str):
        text = text.lower().strip()
        for word in text.split():
            yield "w:" + word
        padded = f"^{text}$"
        for size in self.ngram_sizes:
            for i in range(max(len(padded) - size + 1, 0)):
                yield padded[i:i + size]

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.buckets

    def _encode(self, text: str) -> np.ndarray:
        counts = np.zeros(self.buckets, dtype=np.float32)
        for token in self._tokens(text):
            counts[self._bucket(token)] += 1.0
        vec = counts @ self._projection
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # degenerate input (e.g. empty string): fall back to a hash direction
            idx = self._bucket("fallback:" + text)
            vec = self._projection[idx].copy()
            norm = float(np.linalg.norm(vec))
        return vec / norm

    def spec(self) -> dict:
        return {
            "kind": "hashed-ngram",
            "dim": self.dim,
            "seed": self.seed,
            "buckets": self.buckets,
            "ngram_sizes": list(self.ngram_sizes),
        }


class SentenceModelEncoder(TextEncoder):
    """Adapter over a pre-trained sentence embedding model (optional dependency)."""

    def __init__(self, model_name: str, dim: int = TEXT_DIM):
        super().__init__(dim)
        self.model_name = model_name
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ImportError(
                "sentence-transformers is not installed; use HashedNGramEncoder "
                "or install the 'sentence' extra"
            ) from exc
        self._model = SentenceTransformer(model_name)
        model_dim = self._model.get_sentence_embedding_dimension()
        if model_dim != dim:
            raise ValueError(f"model {model_name} produces {model_dim}-d embeddings, expected {dim}")

    def _encode(self, text: str) -> np.ndarray:
        vec = self._model.encode([text], normalize_embeddings=True)[0]
        return np.asarray(vec, dtype=np.float32)

    def spec(self) -> dict:
        return {"kind": "sentence-model", "dim": self.dim, "model_name": self.model_name}


def encoder_from_spec(spec: dict) -> TextEncoder:
    kind = spec.get("kind")
    if kind == "hashed-ngram":
        return HashedNGramEncoder(
            dim=spec["dim"], seed=spec["seed"], buckets=spec["buckets"],
            ngram_sizes=tuple(spec["ngram_sizes"]),
        )
    if kind == "sentence-model":
        return SentenceModelEncoder(spec["model_name"], dim=spec["dim"])
    raise ValueError(f"unknown text encoder kind {kind!r}")
