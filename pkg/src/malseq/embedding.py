"""API vocabulary, frequency filtering, skip-gram embeddings and padding."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import EmptyCorpus, ModelMismatch, ZeroDimension
from .extraction import BehaviorSequence

MALICIOUS = "malicious"
BENIGN = "benign"

EMBEDDING_MAGIC = b"MSQE"
EMBEDDING_VERSION = 1


@dataclass(frozen=True)
class ApiFrequency:
    malicious: float
    benign: float
    overall: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.malicious, self.benign, self.overall)


def api_frequency_stats(corpus: Iterable[BehaviorSequence]) -> dict[str, ApiFrequency]:
    """Fraction of programs (not occurrences) containing each API, per class and overall."""
    counts: dict[str, list[int]] = {}
    n_mal = n_ben = n_all = 0
    for seq in corpus:
        n_all += 1
        is_mal = seq.label == MALICIOUS
        if is_mal:
            n_mal += 1
        elif seq.label == BENIGN:
            n_ben += 1
        for api in set(seq.apis):
            c = counts.setdefault(api, [0, 0, 0])
            c[0] += is_mal
            c[1] += seq.label == BENIGN
            c[2] += 1
    if n_all == 0:
        raise EmptyCorpus("no programs to count")
    return {
        api: ApiFrequency(c[0] / n_mal if n_mal else 0.0, c[1] / n_ben if n_ben else 0.0, c[2] / n_all)
        for api, c in sorted(counts.items())
    }


@dataclass(frozen=True)
class ApiVocab:
    apis: tuple[str, ...]
    frequencies: tuple[ApiFrequency, ...]
    filtered: tuple[bool, ...]
    threshold: float = 0.75
    rule: str = "all"
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {a: i for i, a in enumerate(self.apis)})

    @property
    def size(self) -> int:
        return len(self.apis)

    def is_filtered(self, api: str) -> bool:
        i = self.index.get(api)
        return i is not None and self.filtered[i]

    def to_json(self) -> str:
        doc = {
            "threshold": self.threshold,
            "rule": self.rule,
            "entries": [
                {"api": a, "index": i, "freq": list(f.as_tuple()), "filtered": flt}
                for i, (a, f, flt) in enumerate(zip(self.apis, self.frequencies, self.filtered))
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ApiVocab:
        doc = json.loads(text)
        entries = sorted(doc["entries"], key=lambda e: e["index"])
        return cls(
            apis=tuple(e["api"] for e in entries),
            frequencies=tuple(ApiFrequency(*e["freq"]) for e in entries),
            filtered=tuple(e["filtered"] for e in entries),
            threshold=doc["threshold"],
            rule=doc["rule"],
        )


def build_vocab(stats: dict[str, ApiFrequency], threshold: float = 0.75, rule: str = "all") -> ApiVocab:
    """Index every observed API and flag the ubiquitous ones.

    With ``rule="all"`` an API is filtered when its frequency exceeds the
    threshold in malicious, benign and all programs at once; ``rule="any"``
    filters on any single column.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    combine = {"all": all, "any": any}[rule]
    apis = tuple(sorted(stats))
    freqs = tuple(stats[a] for a in apis)
    filtered = tuple(combine(x > threshold for x in f.as_tuple()) for f in freqs)
    return ApiVocab(apis, freqs, filtered, threshold, rule)


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    seed: int = 0
    batch: int = 512


@dataclass
class EmbeddingMatrix:
    weights: np.ndarray  # (l, v)
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def padded(self) -> np.ndarray:
        """Weights with one extra all-zero row used for UNK and padding."""
        return np.vstack([self.weights, np.zeros((1, self.dim))])


def encode(seq: Sequence[str], vocab: ApiVocab) -> tuple[np.ndarray, np.ndarray]:
    """Map a sequence to vocabulary indices, dropping filtered APIs.

    Returns (indices, position_map); unseen APIs get index ``vocab.size``
    (the zero row of :meth:`EmbeddingMatrix.padded`).
    """
    idx = []
    pos = []
    unk = vocab.size
    for p, api in enumerate(seq):
        i = vocab.index.get(api)
        if i is not None and vocab.filtered[i]:
            continue
        idx.append(unk if i is None else i)
        pos.append(p)
    return np.asarray(idx, dtype=np.int64), np.asarray(pos, dtype=np.int64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _pairs(encoded: list[np.ndarray], window: int) -> np.ndarray:
    chunks = []
    for s in encoded:
        for off in range(1, window + 1):
            if len(s) <= off:
                break
            chunks.append(np.stack([s[:-off], s[off:]], axis=1))
            chunks.append(np.stack([s[off:], s[:-off]], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(chunks)


def train_skipgram(corpus: Iterable[BehaviorSequence | Sequence[str]], vocab: ApiVocab, config: SkipGramConfig = SkipGramConfig()) -> EmbeddingMatrix:
    """Skip-gram with negative sampling over (center, context) pairs.

    Pairs within ``config.window`` of each other are shuffled each epoch and
    applied in mini-batches whose per-row gradients are summed; negatives come from the unigram distribution
    raised to 0.75 and the learning rate decays linearly to ``lr * 1e-4``.
    """
    if config.dim < 1:
        raise ZeroDimension("embedding dimension must be >= 1")
    encoded = []
    for seq in corpus:
        apis = seq.apis if isinstance(seq, BehaviorSequence) else seq
        idx, _ = encode(apis, vocab)
        idx = idx[idx < vocab.size]
        if len(idx):
            encoded.append(idx)
    if not encoded:
        raise EmptyCorpus("no unfiltered APIs to train on")

    rng = np.random.default_rng(config.seed)
    l, v = vocab.size, config.dim
    w_in = (rng.random((l, v)) - 0.5) / v
    w_out = np.zeros((l, v))

    counts = np.bincount(np.concatenate(encoded), minlength=l).astype(float)
    noise = counts**0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    pairs = _pairs(encoded, config.window)
    history: list[float] = []
    if len(pairs) == 0:
        return EmbeddingMatrix(w_in, history)

    total_steps = config.epochs * ((len(pairs) + config.batch - 1) // config.batch)
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), config.batch):
            batch = pairs[order[start : start + config.batch]]
            lr = config.lr * max(1e-4, 1.0 - step / total_steps)
            step += 1
            center, context = batch[:, 0], batch[:, 1]
            negs = np.searchsorted(noise_cdf, rng.random((len(batch), config.negatives)))
            negs = np.minimum(negs, l - 1)
            targets = np.concatenate([context[:, None], negs], axis=1)  # (B, 1+K)
            h = w_in[center]  # (B, v)
            out = w_out[targets]  # (B, 1+K, v)
            scores = np.matmul(out, h[:, :, None])[:, :, 0]
            sig = _sigmoid(scores)
            epoch_loss += -(np.log(sig[:, 0] + 1e-12).sum() + np.log(1.0 - sig[:, 1:] + 1e-12).sum())
            g = sig
            g[:, 0] -= 1.0  # dLoss/dscore
            grad_h = np.matmul(g[:, None, :], out)[:, 0, :]
            rows = np.arange(len(batch))
            to_out = sparse.csr_matrix((g.ravel(), (targets.ravel(), np.repeat(rows, g.shape[1]))), shape=(l, len(batch)))
            to_in = sparse.csr_matrix((np.ones(len(batch)), (center, rows)), shape=(l, len(batch)))
            w_out -= lr * (to_out @ h)
            w_in -= lr * (to_in @ grad_h)
        history.append(epoch_loss / len(pairs))
    return EmbeddingMatrix(w_in, history)


@dataclass(frozen=True)
class PaddedVectorSequence:
    vectors: np.ndarray  # (L, v)
    valid_len: int
    position_map: np.ndarray  # valid position -> index in the original sequence

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


def vectorize(seq: BehaviorSequence | Sequence[str], vocab: ApiVocab, emb: EmbeddingMatrix, length: int) -> PaddedVectorSequence:
    """Look up embeddings, drop filtered APIs, zero-pad (or truncate) to ``length``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    apis = seq.apis if isinstance(seq, BehaviorSequence) else seq
    idx, pos = encode(apis, vocab)
    idx, pos = idx[:length], pos[:length]
    out = np.zeros((length, emb.dim))
    out[: len(idx)] = emb.padded()[idx]
    return PaddedVectorSequence(out, len(idx), pos)


def save_embedding(path, emb: EmbeddingMatrix, vocab_bytes: bytes) -> None:
    """Container: magic, version, l, v, SHA-256 of the vocabulary file, then W
    as row-major little-endian float64."""
    l, v = emb.weights.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC + struct.pack("<III", EMBEDDING_VERSION, l, v))
        fh.write(hashlib.sha256(vocab_bytes).digest())
        fh.write(np.ascontiguousarray(emb.weights, dtype="<f8").tobytes())


def load_embedding(path, vocab_bytes: bytes | None = None) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBEDDING_MAGIC:
        raise ModelMismatch(f"{path}: not an embedding file")
    version, l, v = struct.unpack_from("<III", data, 4)
    if version != EMBEDDING_VERSION:
        raise ModelMismatch(f"{path}: unsupported embedding version {version}")
    digest = data[16:48]
    if vocab_bytes is not None and hashlib.sha256(vocab_bytes).digest() != digest:
        raise ModelMismatch(f"{path}: vocabulary hash does not match")
    body = data[48:]
    if len(body) != 8 * l * v:
        raise ModelMismatch(f"{path}: expected {l}x{v} weights")
    return EmbeddingMatrix(np.frombuffer(body, dtype="<f8").reshape(l, v).astype(np.float64))
