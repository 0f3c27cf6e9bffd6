"""Text encoders, the on-disk embedding cache, and the item embedding matrix.

Encoders map raw strings to d-dimensional vectors. Three implementations:

* ``hash``: a deterministic mock. Each text maps to a unit-norm vector drawn
  from a generator seeded with (seed, blake2b(text)), so the output is a pure
  function of (text, seed) and reproducible across machines. Used by tests.
* ``sentence-bert``: adapter over a pretrained sentence-transformers model
  (default dimension 384).
* ``remote``: HTTP adapter; endpoint taken from $LANE_ENCODER_ENDPOINT.

Vectors are stored as float32. The cache keeps one record per
(encoder tag, text hash): a raw binary sidecar plus a JSON index. Writes are
serialized through a file lock; readers need no lock because the index is
replaced atomically.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from .corpus import ItemCatalog
from .errors import ConfigError, EncodingError


@dataclass(frozen=True)
class EmbeddingMatrix:
    """(|I|+1) x d matrix of item-title embeddings; row 0 is the zero pad row."""

    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.dim:
            raise ConfigError(f"embedding matrix shape {self.values.shape} does not match dim {self.dim}")
        if not np.all(self.values[0] == 0.0):
            raise ConfigError("pad row 0 of the embedding matrix must be zero")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("embedding matrix contains non-finite values")


class TextEncoder:
    """Interface: name, output dim, determinism flag, and batch encode()."""

    name: str = "base"
    dim: int = 0
    deterministic: bool = True

    @property
    def cache_tag(self) -> str:
        return f"{self.name}-{self.dim}"

    def encode(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


class HashEncoder(TextEncoder):
    """Seeded-hash mock encoder: unit-norm vector per text, pure in (text, seed)."""

    name = "hash"

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        self.seed = seed

    @property
    def cache_tag(self) -> str:
        return f"{self.name}-{self.dim}-{self.seed}"

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest, "big")])
            v = rng.standard_normal(self.dim)
            out[i] = (v / np.linalg.norm(v)).astype(np.float32)
        return out


class SentenceTransformerEncoder(TextEncoder):
    """Adapter over a pretrained sentence encoder; the model loads lazily."""

    name = "sentence-bert"

    def __init__(self, model_name: str = "sentence-transformers/all-MiniLM-L6-v2", dim: int = 384):
        self.model_name = model_name
        self.dim = dim
        self._model = None

    @property
    def cache_tag(self) -> str:
        return f"{self.name}-{self.model_name}-{self.dim}"

    def _load(self):
        if self._model is None:
            try:
                from sentence_transformers import SentenceTransformer
            except ImportError as exc:
                raise ConfigError(
                    "encoder 'sentence-bert' needs the sentence-transformers package "
                    "(pip install lane[encoders])"
                ) from exc
            self._model = SentenceTransformer(self.model_name)
            actual = self._model.get_sentence_embedding_dimension()
            if actual != self.dim:
                raise ConfigError(
                    f"model {self.model_name} produces dim {actual}, config says {self.dim}"
                )
        return self._model

    def encode(self, texts: list[str]) -> np.ndarray:
        model = self._load()
        vectors = model.encode(texts, convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(vectors, dtype=np.float32)


class RemoteEncoder(TextEncoder):
    """POSTs {"texts": [...]} to an embedding endpoint, expects {"vectors": [[...]]}."""

    name = "remote"

    def __init__(self, dim: int, endpoint: str | None = None, timeout: float = 30.0):
        self.dim = dim
        self.endpoint = endpoint or os.environ.get("LANE_ENCODER_ENDPOINT", "")
        self.timeout = timeout
        if not self.endpoint:
            raise ConfigError("remote encoder needs an endpoint (set LANE_ENCODER_ENDPOINT)")

    @property
    def cache_tag(self) -> str:
        return f"{self.name}-{self.endpoint}-{self.dim}"

    def encode(self, texts: list[str]) -> np.ndarray:
        import requests

        resp = requests.post(self.endpoint, json={"texts": texts}, timeout=self.timeout)
        resp.raise_for_status()
        vectors = np.asarray(resp.json()["vectors"], dtype=np.float32)
        if vectors.shape != (len(texts), self.dim):
            raise EncodingError(f"endpoint returned shape {vectors.shape}, expected ({len(texts)}, {self.dim})")
        return vectors


def build_encoder(name: str, dim: int, seed: int = 0, model_name: str | None = None) -> TextEncoder:
    if name == "hash":
        return HashEncoder(dim=dim, seed=seed)
    if name == "sentence-bert":
        return SentenceTransformerEncoder(model_name=model_name or "sentence-transformers/all-MiniLM-L6-v2", dim=dim)
    if name == "remote":
        return RemoteEncoder(dim=dim)
    raise ConfigError(f"unknown encoder {name!r} (expected hash, sentence-bert or remote)")


class EmbeddingCache:
    """Append-only vector store: vectors.bin (raw float32) + index.json.

    Single-writer, many-reader: writes hold a file lock and replace the index
    atomically; reads go straight to the current index.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.index_path = self.directory / "index.json"
        self.data_path = self.directory / "vectors.bin"
        self.lock = FileLock(str(self.directory / "cache.lock"))

    @staticmethod
    def key_for(encoder: TextEncoder, text: str) -> str:
        return f"{encoder.cache_tag}:{hashlib.sha1(text.encode('utf-8')).hexdigest()}"

    def _read_index(self) -> dict:
        if not self.index_path.exists():
            return {}
        with self.index_path.open("r", encoding="utf-8") as fh:
            return json.load(fh)

    def get(self, key: str) -> np.ndarray | None:
        entry = self._read_index().get(key)
        if entry is None:
            return None
        with self.data_path.open("rb") as fh:
            fh.seek(entry["offset"])
            raw = fh.read(entry["dim"] * 4)
        return np.frombuffer(raw, dtype=np.float32).copy()

    def put_many(self, vectors: dict[str, np.ndarray]) -> None:
        if not vectors:
            return
        with self.lock:
            index = self._read_index()
            with self.data_path.open("ab") as fh:
                for key, vec in vectors.items():
                    if key in index:
                        continue
                    vec = np.ascontiguousarray(vec, dtype=np.float32)
                    offset = fh.tell()
                    fh.write(vec.tobytes())
                    index[key] = {"offset": offset, "dim": int(vec.shape[0])}
            tmp = self.index_path.with_suffix(".json.tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                json.dump(index, fh)
            os.replace(tmp, self.index_path)


def _cached_encode(texts: list[str], encoder: TextEncoder, cache: EmbeddingCache | None) -> np.ndarray:
    out = np.empty((len(texts), encoder.dim), dtype=np.float32)
    missing: list[int] = []
    if cache is not None:
        for i, text in enumerate(texts):
            vec = cache.get(EmbeddingCache.key_for(encoder, text))
            if vec is None:
                missing.append(i)
            else:
                out[i] = vec
    else:
        missing = list(range(len(texts)))

    if missing:
        fresh = encoder.encode([texts[i] for i in missing])
        for row, i in enumerate(missing):
            out[i] = fresh[row]
        if cache is not None:
            cache.put_many(
                {EmbeddingCache.key_for(encoder, texts[i]): fresh[row] for row, i in enumerate(missing)}
            )
    return out


def encode_titles(
    catalog: ItemCatalog, encoder: TextEncoder, cache: EmbeddingCache | None = None
) -> EmbeddingMatrix:
    """Encode every catalog title into row item_index of the matrix; row 0 stays zero."""
    if len(catalog) == 0:
        raise ValueError("catalog must be nonempty")
    values = np.zeros((len(catalog) + 1, encoder.dim), dtype=np.float32)
    titles = catalog.titles()
    try:
        values[1:] = _cached_encode(titles, encoder, cache)
    except Exception as exc:
        if isinstance(exc, (ConfigError, EncodingError)):
            raise
        # locate the failing title so the error names the item
        for it in catalog.items:
            try:
                values[it.item_index] = _cached_encode([it.title], encoder, cache)[0]
            except Exception as inner:
                raise EncodingError(
                    f"encoder {encoder.name!r} failed on item {it.item_id!r} ({it.title!r}): {inner}"
                ) from inner
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values).all(axis=1))[0][0])
        raise EncodingError(f"encoder produced non-finite vector for item index {bad}")
    return EmbeddingMatrix(values=values, dim=encoder.dim)


def encode_texts(
    texts: list[str], encoder: TextEncoder, cache: EmbeddingCache | None = None
) -> np.ndarray:
    """Encode free texts (e.g. user preferences) into an m x d float32 matrix."""
    if not texts:
        raise ValueError("texts must be nonempty")
    for i, text in enumerate(texts):
        if not text or not text.strip():
            raise ValueError(f"text {i} is blank")
    return _cached_encode(list(texts), encoder, cache)
