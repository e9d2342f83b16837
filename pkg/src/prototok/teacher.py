"""Teacher embedding providers at model dimension.

Two sources: a JSON-lines file of stored vectors (projected down with a
fixed random map when stored at a different dimension), and a synthetic
provider that hashes a text's token multiset into a deterministic unit
vector. The synthetic kernel is a signed-random-feature bag of words, so
texts sharing content words land near each other, which is exactly the
structure the relational objective needs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateVectorError,
    MissingKeyError,
    ValidationError,
)
from .regularizers import TeacherEmbedding, similarity_matrix

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TeacherSource:
    mode: str                      # "file" or "synthetic"
    dimension: int
    path: Optional[str] = None
    seed: int = 0                  # synthetic feature-map seed
    projection_seed: int = 0       # dimension-adaptation seed (file mode)

    def __post_init__(self) -> None:
        if self.mode not in ("file", "synthetic"):
            raise ConfigurationError(f"mode must be 'file' or 'synthetic', got {self.mode!r}")
        if self.dimension < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.dimension}")
        if self.mode == "file":
            if not self.path:
                raise ConfigurationError("file mode requires a path")
            if not os.path.exists(self.path):
                raise ConfigurationError(f"teacher file does not exist: {self.path}")


def bag_of_tokens(text: str) -> dict:
    """Lowercased alphanumeric token counts; the synthetic kernel's input."""
    counts: dict = {}
    for token in _TOKEN_RE.findall(text.lower()):
        counts[token] = counts.get(token, 0) + 1
    return counts


def _token_feature(token: str, seed: int, d: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    entropy = int.from_bytes(digest, "little")
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    return rng.standard_normal(d)


def synthetic_embedding(text: str, d: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector from the text's token multiset."""
    counts = bag_of_tokens(text)
    if not counts:
        raise ValidationError(f"text has no tokens: {text!r}")
    vec = np.zeros(d)
    for token, count in sorted(counts.items()):
        vec += count * _token_feature(token, seed, d)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise DegenerateVectorError("synthetic embedding collapsed to zero")
    return vec / norm


def projection_matrix(src_dim: int, dst_dim: int, seed: int) -> np.ndarray:
    """Fixed random map used for every vector stored at src_dim."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(src_dim, dst_dim)))
    return rng.normal(0.0, 1.0 / math.sqrt(dst_dim), size=(src_dim, dst_dim))


def adapt_dimension(vector: np.ndarray, d: int, projection_seed: int) -> np.ndarray:
    """Project to d and renormalize to unit length; identity when dimensions match."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape == (d,):
        return vector
    projected = vector @ projection_matrix(vector.shape[0], d, projection_seed)
    norm = np.linalg.norm(projected)
    if norm == 0.0:
        raise DegenerateVectorError("projected teacher vector collapsed to zero")
    return projected / norm


def load_teacher_file(path) -> dict:
    """Parse the JSON-lines store; entries keyed by both text_id and exact text."""
    store: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            for field in ("text_id", "text", "vector"):
                if field not in record:
                    raise ValidationError(f"{path}:{line_no}: missing field '{field}'")
            vector = np.asarray(record["vector"], dtype=np.float64)
            if vector.ndim != 1 or not np.isfinite(vector).all():
                raise ValidationError(f"{path}:{line_no}: vector must be a finite 1-D array")
            if np.linalg.norm(vector) == 0.0:
                raise ValidationError(f"{path}:{line_no}: stored vector is zero")
            store[str(record["text_id"])] = vector
            store[record["text"]] = vector
    return store


def save_teacher_file(path, records) -> None:
    """Write (text_id, text, vector) triples in the documented format."""
    with open(path, "w", encoding="utf-8") as f:
        for text_id, text, vector in records:
            f.write(json.dumps({
                "text_id": str(text_id),
                "text": text,
                "vector": [float(x) for x in np.asarray(vector).ravel()],
            }) + "\n")


def teacher_embedding(source: TeacherSource, text: str) -> TeacherEmbedding:
    """Look up (file mode) or derive (synthetic mode) the teacher vector for a text."""
    if source.mode == "synthetic":
        vec = synthetic_embedding(text, source.dimension, seed=source.seed)
        return TeacherEmbedding(vector=vec, source=f"synthetic:{source.seed}")
    store = load_teacher_file(source.path)
    if text not in store:
        raise MissingKeyError(f"no teacher entry for key {text!r} in {source.path}")
    vec = adapt_dimension(store[text], source.dimension, source.projection_seed)
    return TeacherEmbedding(vector=vec, source=f"file:{source.path}")


def teacher_matrix(source: TeacherSource, texts) -> np.ndarray:
    """Pairwise teacher cosine matrix for a batch of texts."""
    vectors = [teacher_embedding(source, text).vector for text in texts]
    return similarity_matrix(np.stack(vectors))
