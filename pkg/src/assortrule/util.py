"""Small shared helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def levenshtein(a: str, b: str) -> int:
    """Plain edit distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def nearest_token(word: str, tokens, max_distance: int) -> tuple[str | None, int]:
    """Closest token by edit distance; ties break lexicographically.

    Returns (token, distance); token is None when nothing lies within
    ``max_distance``.
    """
    best = None
    best_d = max_distance + 1
    for tok in sorted(tokens):
        d = levenshtein(word, tok)
        if d < best_d:
            best, best_d = tok, d
    if best is None:
        return None, best_d
    return best, best_d


def stable_hash_vector(tokens, dim: int = 256) -> np.ndarray:
    """Deterministic hashing bag-of-tokens embedding (salt-free, md5-based)."""
    v = np.zeros(dim, dtype=float)
    for tok in tokens:
        h = hashlib.md5(tok.encode("utf-8")).digest()
        idx = int.from_bytes(h[:4], "little") % dim
        sign = 1.0 if h[4] % 2 == 0 else -1.0
        v[idx] += sign
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
