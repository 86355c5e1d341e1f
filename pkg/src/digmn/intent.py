"""Per-session intent scoring against a mined intent basis.

Two methods: cosine similarity against fixed basis rows (the default), and a
small trainable map ``tanh(W @ freq + b)`` whose gradients flow during
end-to-end training.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .domain import Session, event_frequency


class ZeroVector(ValueError):
    """Raised when a frequency vector (or basis row) has zero norm."""


def infer_cosine(freq: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Cosine similarity of one session's event frequency to each basis row.

    ``basis`` is (k, 10) with nonnegative rows; output components lie in
    [0, 1] for nonnegative inputs.
    """
    freq = np.asarray(freq, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    nu_norm = np.linalg.norm(freq)
    if nu_norm == 0.0:
        raise ZeroVector("frequency vector has zero norm")
    row_norms = np.linalg.norm(basis, axis=1)
    if np.any(row_norms == 0.0):
        raise ZeroVector("basis contains a zero row")
    return (basis @ freq) / (row_norms * nu_norm)


def infer_learned(freq: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Trainable alternative: ``tanh(w @ freq + b)`` with w of shape (k, 10).

    Forward only; the training graph differentiates through the same formula
    (see the model's learned-intent path).
    """
    freq = np.asarray(freq, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.shape[1] != freq.shape[-1] or b.shape[0] != w.shape[0]:
        raise ValueError(f"shape mismatch: w {w.shape}, b {b.shape}, freq {freq.shape}")
    return np.tanh(freq @ w.T + b)


def intent_sequence(
    sessions: Sequence[Session],
    basis: np.ndarray,
    method: str = "cosine",
    w: np.ndarray | None = None,
    b: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Score every session independently; output length equals input length."""
    if not sessions:
        raise ValueError("need at least one session")
    freqs = [event_frequency(s) for s in sessions]
    if method == "cosine":
        return [infer_cosine(f, basis) for f in freqs]
    if method == "learned":
        if w is None or b is None:
            raise ValueError("learned method needs w and b")
        return [infer_learned(f, w, b) for f in freqs]
    raise ValueError(f"unknown intent method {method!r}")
