"""Frozen hashed bag-of-tokens prompt encoder."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

TEXT_DIM = 64
_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    prompt: str


def tokenize(prompt: str) -> list:
    return _TOKEN.findall(prompt.lower())


def _slots(token: str, dim: int):
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    for i in range(0, 16, 4):
        v = int.from_bytes(h[i:i + 4], "little")
        yield v % dim, 1.0 if (v >> 31) & 1 else -1.0


def embed_text(prompt: str, dim: int = TEXT_DIM) -> TextEmbedding:
    """Unit-norm signed feature hashing of the prompt's tokens."""
    if not isinstance(prompt, str) or not prompt.strip():
        raise ValueError("prompt must be a non-empty string")
    tokens = tokenize(prompt)
    if not tokens:
        raise ValueError(f"prompt {prompt!r} has no tokens")
    v = np.zeros(dim)
    for tok in tokens:
        for idx, sign in _slots(tok, dim):
            v[idx] += sign
    n = np.linalg.norm(v)
    if n == 0:
        # hash collisions cancelled out; fall back to the first token alone
        for idx, sign in _slots(tokens[0], dim):
            v[idx] += sign
        n = np.linalg.norm(v)
    return TextEmbedding(vector=v / n, prompt=prompt)


_NAMES = {1: "central incisor", 2: "lateral incisor", 3: "canine", 4: "first premolar",
          5: "second premolar", 6: "first molar", 7: "second molar", 8: "third molar"}


def tooth_name(tooth_id: int) -> str:
    return _NAMES[tooth_id % 10]


def jaw_prompt(jaw_side: str, missing_ids) -> str:
    """Scene prompt naming the teeth to restore, e.g. for training and CLI defaults."""
    parts = [f"{tooth_name(t)} {t}" for t in sorted(missing_ids)]
    if not parts:
        return f"complete {jaw_side} jaw"
    return f"{jaw_side} jaw missing " + ", ".join(parts)


def tooth_prompt(tooth_id: int) -> str:
    return f"a {tooth_name(tooth_id)} tooth, FDI {tooth_id}"
