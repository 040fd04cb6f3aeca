"""
Tucker-L2E Seeding - Content hashes and derived random streams.

Every random draw in a sweep or cross-validation run comes from a seed
derived by hashing (master seed, labels...). A table cell can therefore be
regenerated from its labels alone, in any execution order.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

from .tensors import DenseTensor

SEED_BITS = 63


def canonical_serialize(obj: Any) -> str:
    """
    Serialize to canonical JSON.

    - Keys sorted
    - No extra whitespace
    - Tuples serialize as lists
    """
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def content_hash(content: Any, prefix: str = "") -> str:
    """
    SHA-256 of a string or of the canonical JSON of any other value.

    Args:
        content: String, or JSON-serializable value
        prefix: Optional domain separator (e.g. "cv", "sweep")

    Returns:
        64-character hex digest
    """
    serialized = content if isinstance(content, str) else canonical_serialize(content)
    if prefix:
        serialized = f"{prefix}\0{serialized}"
    return hashlib.sha256(serialized.encode("utf-8")).hexdigest()


def short_hash(full_hash: str, length: int = 8) -> str:
    return full_hash[:length]


def derive_seed(master_seed: int, *parts: Any) -> int:
    """
    Seed for an independent random stream labelled by `parts`.

    Example:
        >>> derive_seed(0, "cv", [2, 2, 2], 3) == derive_seed(0, "cv", [2, 2, 2], 3)
        True
    """
    digest = content_hash([int(master_seed), *parts], prefix="seed")
    return int(digest[:16], 16) & ((1 << SEED_BITS) - 1)


def rng_for(master_seed: int, *parts: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *parts))


def tensor_fingerprint(tensor: DenseTensor, mask: DenseTensor | None = None) -> str:
    """SHA-256 over dims and little-endian float64 data (and mask when given)."""
    h = hashlib.sha256()
    h.update(canonical_serialize(list(tensor.dims)).encode("utf-8"))
    h.update(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    if mask is not None:
        h.update(np.ascontiguousarray(mask.data, dtype="<f8").tobytes())
    return h.hexdigest()
