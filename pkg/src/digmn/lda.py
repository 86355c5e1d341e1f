"""Topic mining over sessions-as-documents with collapsed Gibbs sampling.

Each session is a document whose tokens are its event-type ids, so the
vocabulary has exactly 10 symbols and a fitted topic is a distribution over
event types: a basic intent. The sampler keeps the usual doc-topic and
topic-word count tables; the hot loop is compiled with numba and fed
pre-drawn uniforms so runs are reproducible bit-for-bit from the seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .domain import N_EVENT_TYPES, UserRecord, event_frequency

VOCAB = N_EVENT_TYPES


@dataclass
class LdaModel:
    k: int
    topic_event: np.ndarray   # (k, 10), row-stochastic
    alpha: float              # doc-topic prior
    eta: float                # topic-word prior

    def __post_init__(self):
        self.topic_event = np.asarray(self.topic_event, dtype=np.float64)
        if self.topic_event.shape != (self.k, VOCAB):
            raise ValueError(f"topic_event must be ({self.k}, {VOCAB})")
        if np.any(self.topic_event < 0):
            raise ValueError("topic_event entries must be >= 0")
        if not np.allclose(self.topic_event.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("topic_event rows must sum to 1")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "eta": self.eta,
            "topic_event": self.topic_event.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LdaModel":
        return cls(
            k=int(d["k"]),
            topic_event=np.asarray(d["topic_event"], dtype=np.float64),
            alpha=float(d["alpha"]),
            eta=float(d["eta"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "LdaModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class LdaFitReport:
    perplexity_history: list[float] = field(default_factory=list)
    final_perplexity: float = 0.0
    iterations: int = 0
    seed: int = 0


def documents_from_records(records: Iterable[UserRecord]) -> list[np.ndarray]:
    """One document per session: the array of 0-based event-type tokens."""
    docs = []
    for r in records:
        for s in r.sessions:
            docs.append(np.array([int(e.event_type) - 1 for e in s.events], dtype=np.int32))
    return docs


def _flatten(docs: Sequence[np.ndarray]):
    lengths = np.array([len(d) for d in docs], dtype=np.int64)
    if len(docs) == 0:
        raise ValueError("corpus is empty")
    if lengths.min() == 0:
        raise ValueError("corpus contains an empty document")
    tokens = np.concatenate([np.asarray(d, dtype=np.int32) for d in docs])
    doc_of = np.repeat(np.arange(len(docs), dtype=np.int32), lengths)
    return tokens, doc_of, lengths


@njit(cache=True, nogil=True)
def _train_sweep(tokens, doc_of, z, n_dk, n_kw, n_k, alpha, eta, uniforms, cum):
    n_topics = n_kw.shape[0]
    vocab = n_kw.shape[1]
    for i in range(tokens.shape[0]):
        w = tokens[i]
        d = doc_of[i]
        old = z[i]
        n_dk[d, old] -= 1
        n_kw[old, w] -= 1
        n_k[old] -= 1
        total = 0.0
        for k in range(n_topics):
            p = (n_dk[d, k] + alpha) * (n_kw[k, w] + eta) / (n_k[k] + eta * vocab)
            total += p
            cum[k] = total
        r = uniforms[i] * total
        new = 0
        while new < n_topics - 1 and cum[new] < r:
            new += 1
        z[i] = new
        n_dk[d, new] += 1
        n_kw[new, w] += 1
        n_k[new] += 1


@njit(cache=True, nogil=True)
def _infer_sweep(tokens, doc_of, z, n_dk, phi, alpha, uniforms, cum):
    n_topics = phi.shape[0]
    for i in range(tokens.shape[0]):
        w = tokens[i]
        d = doc_of[i]
        old = z[i]
        n_dk[d, old] -= 1
        total = 0.0
        for k in range(n_topics):
            p = (n_dk[d, k] + alpha) * phi[k, w]
            total += p
            cum[k] = total
        r = uniforms[i] * total
        new = 0
        while new < n_topics - 1 and cum[new] < r:
            new += 1
        z[i] = new
        n_dk[d, new] += 1


def _counts_from_assignments(tokens, doc_of, z, n_docs, k):
    n_dk = np.zeros((n_docs, k), dtype=np.float64)
    n_kw = np.zeros((k, VOCAB), dtype=np.float64)
    np.add.at(n_dk, (doc_of, z), 1.0)
    np.add.at(n_kw, (z, tokens), 1.0)
    return n_dk, n_kw, n_kw.sum(axis=1)


def _corpus_perplexity(theta, phi, tokens, doc_of):
    # (D, V) predictive table keeps this fully vectorized; V is only 10
    predictive = theta @ phi
    ll = np.log(predictive[doc_of, tokens]).sum()
    return float(np.exp(-ll / tokens.shape[0]))


def fit(
    docs: Sequence[np.ndarray],
    k: int,
    alpha: float = 1.0,
    eta: float = 0.01,
    iterations: int = 100,
    seed: int = 0,
) -> tuple[LdaModel, LdaFitReport]:
    """Collapsed Gibbs sampling; records training perplexity every 10 sweeps.

    ``alpha`` is a per-topic prior, so total doc-topic smoothing grows with k.
    That matters for model selection: a constant total (the 50/k heuristic)
    removes the complexity penalty and lets held-out perplexity keep falling
    past the true topic count.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    tokens, doc_of, lengths = _flatten(docs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))

    z = rng.integers(0, k, size=tokens.shape[0]).astype(np.int32)
    n_dk, n_kw, n_k = _counts_from_assignments(tokens, doc_of, z, len(docs), k)
    cum = np.empty(k, dtype=np.float64)

    report = LdaFitReport(iterations=iterations, seed=seed)
    denom = (lengths + k * alpha)[:, None]
    for it in range(iterations):
        uniforms = rng.random(tokens.shape[0])
        _train_sweep(tokens, doc_of, z, n_dk, n_kw, n_k, alpha, eta, uniforms, cum)
        if (it + 1) % 10 == 0:
            theta = (n_dk + alpha) / denom
            phi = (n_kw + eta) / (n_k + eta * VOCAB)[:, None]
            report.perplexity_history.append(
                _corpus_perplexity(theta, phi, tokens, doc_of)
            )

    theta = (n_dk + alpha) / denom
    phi = (n_kw + eta) / (n_k + eta * VOCAB)[:, None]
    report.final_perplexity = _corpus_perplexity(theta, phi, tokens, doc_of)
    model = LdaModel(k=k, topic_event=phi, alpha=alpha, eta=eta)
    return model, report


def perplexity(
    model: LdaModel,
    docs: Sequence[np.ndarray],
    inference_iterations: int = 30,
    seed: int = 0,
) -> float:
    """Held-out perplexity with topics frozen.

    Per-document topic proportions come from Gibbs inference sweeps against
    the fixed topic table; the proportions are averaged over the second half
    of the sweeps to tame sampling noise.
    """
    tokens, doc_of, lengths = _flatten(docs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1DA]))
    k = model.k
    phi = model.topic_event
    z = rng.integers(0, k, size=tokens.shape[0]).astype(np.int32)
    n_dk = np.zeros((len(docs), k), dtype=np.float64)
    np.add.at(n_dk, (doc_of, z), 1.0)
    cum = np.empty(k, dtype=np.float64)

    burn_in = max(1, inference_iterations // 2)
    theta_sum = np.zeros_like(n_dk)
    n_avg = 0
    for it in range(inference_iterations):
        uniforms = rng.random(tokens.shape[0])
        _infer_sweep(tokens, doc_of, z, n_dk, phi, model.alpha, uniforms, cum)
        if it >= burn_in:
            theta_sum += (n_dk + model.alpha) / (lengths + k * model.alpha)[:, None]
            n_avg += 1
    theta = theta_sum / n_avg
    return _corpus_perplexity(theta, phi, tokens, doc_of)


def select_k(
    docs: Sequence[np.ndarray],
    k_range: Iterable[int] = range(2, 11),
    alpha: float = 1.0,
    eta: float = 0.01,
    iterations: int = 80,
    inference_iterations: int = 30,
    holdout_frac: float = 0.1,
    seed: int = 0,
    max_docs: int | None = 50_000,
    threads: int = 1,
    tolerance: float = 0.002,
) -> tuple[int, dict[int, float]]:
    """Fit one model per candidate k; score each on a held-out split.

    Returns the smallest k whose held-out perplexity is within ``tolerance``
    (relative) of the best, plus the per-k perplexities. The default tolerance
    is a noise guard: when several k tie within Gibbs sampling jitter the
    smallest wins. ``max_docs`` caps the fit at a seeded subsample for
    desk-scale runtimes; pass None to use everything.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E1]))
    order = rng.permutation(len(docs))
    if max_docs is not None and len(order) > max_docs:
        order = order[:max_docs]
    n_holdout = max(1, int(round(holdout_frac * len(order))))
    holdout_idx = order[:n_holdout]
    train_idx = order[n_holdout:]
    if len(train_idx) == 0:
        raise ValueError("not enough documents for a train split")
    train_docs = [docs[i] for i in train_idx]
    holdout_docs = [docs[i] for i in holdout_idx]

    def run(k: int) -> float:
        model, _ = fit(train_docs, k, alpha=alpha, eta=eta, iterations=iterations, seed=seed)
        return perplexity(model, holdout_docs, inference_iterations, seed=seed)

    per_k: dict[int, float] = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for k, p in zip(ks, pool.map(run, ks)):
                per_k[k] = p
    else:
        for k in ks:
            per_k[k] = run(k)

    best_perp = min(per_k.values())
    best_k = min(k for k, p in per_k.items() if p <= best_perp * (1.0 + tolerance))
    return best_k, per_k


def match_topics(recovered: np.ndarray, truth: np.ndarray) -> tuple[list[int], float]:
    """Greedy cosine matching of recovered topic rows to reference rows.

    Returns the assignment (index into ``truth`` per recovered row) and the
    mean cosine over matched pairs.
    """
    rec = recovered / np.linalg.norm(recovered, axis=1, keepdims=True)
    ref = truth / np.linalg.norm(truth, axis=1, keepdims=True)
    sims = rec @ ref.T
    assignment = [-1] * len(rec)
    used = set()
    pairs = sorted(
        ((sims[i, j], i, j) for i in range(len(rec)) for j in range(len(ref))),
        reverse=True,
    )
    total, matched = 0.0, 0
    for s, i, j in pairs:
        if assignment[i] == -1 and j not in used:
            assignment[i] = j
            used.add(j)
            total += s
            matched += 1
    return assignment, total / max(matched, 1)
