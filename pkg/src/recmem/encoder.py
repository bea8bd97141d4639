"""Dense text encoders.

Two backends share one interface: a remote OpenAI-compatible embeddings
service and a deterministic feature-hashing encoder used offline and in
tests. Every vector leaving this module is a float64 numpy array with unit
L2 norm (or all zeros when the text has no tokens at all).
"""

from __future__ import annotations

import logging
import math
import os
import re
import threading
from dataclasses import dataclass
from typing import Optional

import httpx
import numpy as np

from .errors import DimMismatch, EmptyText, RemoteUnavailable

logger = logging.getLogger(__name__)

API_KEY_ENV = "RECMEM_API_KEY"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass
class EncoderConfig:
    backend: str = "hashed-test"  # "remote" | "hashed-test"
    dim: int = 256
    model_name: str = "text-embedding-3-small"
    endpoint_url: str = "https://api.openai.com/v1"
    timeout: float = 30.0
    cache: bool = True

    def __post_init__(self) -> None:
        if self.backend not in ("remote", "hashed-test"):
            raise ValueError(f"unknown encoder backend {self.backend!r}")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.backend == "hashed-test" and self.dim & (self.dim - 1):
            raise ValueError("hashed-test backend requires a power-of-two dim")


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def unit_text(user_message: str, assistant_message: str) -> str:
    return f"USER: {user_message}\nASSISTANT: {assistant_message}"


def normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return np.zeros_like(vec, dtype=np.float64)
    return (vec / norm).astype(np.float64)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two encoder outputs (both unit-norm or zero)."""
    return float(np.dot(a, b))


class Encoder:
    """Text -> unit vector. Thread-safe; results may be cached per text."""

    def __init__(self, config: Optional[EncoderConfig] = None, client: Optional[httpx.Client] = None):
        self.config = config or EncoderConfig()
        self.dim = self.config.dim
        self._client = client
        self._cache: dict[str, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot encode empty text")
        if self.config.cache:
            with self._cache_lock:
                hit = self._cache.get(text)
            if hit is not None:
                return hit.copy()
        if self.config.backend == "hashed-test":
            vec = self._encode_hashed(text)
        else:
            vec = self._encode_remote(text)
        vec.setflags(write=False)
        if self.config.cache:
            with self._cache_lock:
                self._cache[text] = vec
        return vec.copy()

    def encode_unit(self, unit) -> np.ndarray:
        if not unit.user_message and not unit.assistant_message:
            raise EmptyText(f"turn {unit.turn_id} has no message text")
        return self.encode(unit_text(unit.user_message, unit.assistant_message))

    def _encode_hashed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            h = fnv1a_64(tok.encode("utf-8"))
            vec[h % self.dim] += -1.0 if (h >> 63) & 1 else 1.0
        return normalize(vec)

    def _encode_remote(self, text: str) -> np.ndarray:
        cfg = self.config
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        client = self._client or httpx.Client(timeout=cfg.timeout)
        try:
            resp = client.post(
                cfg.endpoint_url.rstrip("/") + "/embeddings",
                json={"model": cfg.model_name, "input": [text]},
                headers=headers,
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise RemoteUnavailable(f"embedding request failed: {exc}") from exc
        finally:
            if self._client is None:
                client.close()
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DimMismatch(f"service returned dim {vec.shape}, expected {self.dim}")
        if not math.isfinite(float(np.linalg.norm(vec))):
            raise RemoteUnavailable("service returned non-finite embedding")
        return normalize(vec)
