"""Byte-level corpora: bundled text, token files and deterministic splits."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

VOCAB = 256
EVAL_FRACTION = 0.1


def encode(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def decode(tokens) -> str:
    return bytes(np.asarray(tokens, dtype=np.uint8).tolist()).decode("utf-8", errors="replace")


def bundled_text() -> str:
    return resources.files("mobilequant").joinpath("data/corpus.txt").read_text(encoding="utf-8")


def bundled_tokens() -> np.ndarray:
    return encode(bundled_text())


def load_tokens(path: str | Path | None) -> np.ndarray:
    """Raw UTF-8 text, or little-endian u32 ids for ``.ids``/``.u32`` files. None = bundled."""
    if path is None:
        return bundled_tokens()
    path = Path(path)
    if path.suffix in (".ids", ".u32"):
        ids = np.fromfile(path, dtype="<u4").astype(np.int64)
        if ids.size and ids.max() >= VOCAB:
            raise ValueError(f"{path}: token id {int(ids.max())} outside the byte vocabulary")
        return ids
    return encode(path.read_text(encoding="utf-8"))


def save_token_ids(tokens, path: str | Path) -> None:
    np.asarray(tokens, dtype="<u4").tofile(path)


def split(tokens: np.ndarray, eval_fraction: float = EVAL_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """(train, held-out) with the held-out slice at the end."""
    tokens = np.asarray(tokens)
    cut = int(round(len(tokens) * (1.0 - eval_fraction)))
    return tokens[:cut], tokens[cut:]


def sample_windows(tokens: np.ndarray, n: int, seq_len: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` random windows of ``seq_len`` tokens, shape [n, seq_len]."""
    if len(tokens) < seq_len:
        raise ValueError("corpus shorter than one window")
    starts = rng.integers(0, len(tokens) - seq_len + 1, size=n)
    return np.stack([tokens[s:s + seq_len] for s in starts])


def sentences(tokens: np.ndarray, min_len: int = 24) -> list[np.ndarray]:
    """Sentence-like spans ending in '.', '!' or '?' (for last-token accuracy)."""
    ends = set(b".!?")
    out, start = [], 0
    for i, t in enumerate(np.asarray(tokens).tolist()):
        if t in ends:
            if i + 1 - start >= min_len:
                out.append(np.asarray(tokens[start:i + 1]))
            start = i + 1
    return out
