"""Bidirectional LSTM with additive attention and a two-way softmax head.

Per position the forward and backward hidden states are summed, squashed
with tanh and scored against a learned context vector; the attention
weights come from a softmax over valid (non-padded) positions only.  The
attention-weighted sum of hidden states goes through tanh and a linear
softmax layer.  Class index 0 is malicious, 1 benign.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lstm
from .embedding import PaddedVectorSequence
from .errors import DimensionMismatch, ModelMismatch, NonFiniteLoss, SingleClassDataset

MALICIOUS, BENIGN = 0, 1
LABELS = ("malicious", "benign")

MODEL_MAGIC = b"MSQM"
MODEL_VERSION = 1
PARAM_ORDER = ("fwd_Wx", "fwd_Wh", "fwd_b", "bwd_Wx", "bwd_Wh", "bwd_b", "t_a", "W_out", "b_out")
GROUPS = {
    "forward_cell": ("fwd_Wx", "fwd_Wh", "fwd_b"),
    "backward_cell": ("bwd_Wx", "bwd_Wh", "bwd_b"),
    "t_a": ("t_a",),
    "W_out": ("W_out",),
    "b_out": ("b_out",),
}


@dataclass
class DetectionModel:
    params: dict[str, np.ndarray]
    v: int
    hidden: int
    length: int
    seed: int = 0
    embedding_hash: bytes = b"\x00" * 32

    @classmethod
    def init(cls, v: int, hidden: int = 128, length: int = 1, seed: int = 0, scale: float = 0.08) -> DetectionModel:
        rng = np.random.default_rng(seed)
        params = {}
        for prefix in ("fwd", "bwd"):
            for k, arr in lstm.init_cell(rng, v, hidden, scale).items():
                params[f"{prefix}_{k}"] = arr
        params["t_a"] = rng.uniform(-scale, scale, hidden)
        params["W_out"] = rng.uniform(-scale, scale, (2, hidden))
        params["b_out"] = np.zeros(2)
        return cls(params, v, hidden, length, seed)

    def cell(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: self.params[f"{prefix}_{k}"] for k in ("Wx", "Wh", "b")}

    def copy(self) -> DetectionModel:
        return DetectionModel({k: a.copy() for k, a in self.params.items()}, self.v, self.hidden, self.length, self.seed, self.embedding_hash)

    def swapped(self) -> DetectionModel:
        """The same model with forward and backward cells exchanged."""
        m = self.copy()
        for k in ("Wx", "Wh", "b"):
            m.params[f"fwd_{k}"], m.params[f"bwd_{k}"] = self.params[f"bwd_{k}"].copy(), self.params[f"fwd_{k}"].copy()
        return m

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_bytes(self) -> bytes:
        out = bytearray(MODEL_MAGIC)
        out += struct.pack("<IIIIq", MODEL_VERSION, self.v, self.hidden, self.length, self.seed)
        out += self.embedding_hash
        for name in PARAM_ORDER:
            out += np.ascontiguousarray(self.params[name], dtype="<f8").tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> DetectionModel:
        if data[:4] != MODEL_MAGIC:
            raise ModelMismatch("not a model file")
        version, v, hidden, length, seed = struct.unpack_from("<IIIIq", data, 4)
        if version != MODEL_VERSION:
            raise ModelMismatch(f"unsupported model version {version}")
        off = 4 + struct.calcsize("<IIIIq")
        emb_hash = data[off : off + 32]
        off += 32
        shapes = _shapes(v, hidden)
        params = {}
        for name in PARAM_ORDER:
            n = int(np.prod(shapes[name]))
            chunk = data[off : off + 8 * n]
            if len(chunk) != 8 * n:
                raise ModelMismatch("model file truncated")
            params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shapes[name]).astype(np.float64)
            off += 8 * n
        if off != len(data):
            raise ModelMismatch("trailing bytes in model file")
        return cls(params, v, hidden, length, seed, emb_hash)


def _shapes(v: int, h: int) -> dict[str, tuple[int, ...]]:
    cell = {"Wx": (v, 4 * h), "Wh": (h, 4 * h), "b": (4 * h,)}
    shapes = {f"{p}_{k}": s for p in ("fwd", "bwd") for k, s in cell.items()}
    shapes.update(t_a=(h,), W_out=(2, h), b_out=(2,))
    return shapes


@dataclass
class AttentionTrace:
    alpha: np.ndarray  # (L,), zero on padded positions
    h: np.ndarray  # (valid_len, H)
    s: np.ndarray
    s_prime: np.ndarray
    p: np.ndarray
    valid_len: int


@dataclass
class Prediction:
    label: str
    p: np.ndarray
    trace: AttentionTrace


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    t = np.arange(T)[None, :]
    n = lengths[:, None]
    return np.where(t < n, n - 1 - t, t)


def _forward(model: DetectionModel, x: np.ndarray, lengths: np.ndarray):
    B, T, _ = x.shape
    P = model.params
    rows = np.arange(B)[:, None]
    rev = _reverse_index(lengths, T)
    mask = np.arange(T)[None, :] < lengths[:, None]

    hf, cache_f = lstm.forward(x, model.cell("fwd"))
    hbr, cache_b = lstm.forward(x[rows, rev], model.cell("bwd"))
    h = hf + hbr[rows, rev]
    t = np.tanh(h)
    e = t @ P["t_a"]
    e = np.where(mask, e, -np.inf)
    emax = np.max(e, axis=1, keepdims=True) if T else np.zeros((B, 1))
    emax = np.where(np.isfinite(emax), emax, 0.0)
    w = np.where(mask, np.exp(e - emax), 0.0)
    denom = w.sum(axis=1, keepdims=True)
    alpha = np.divide(w, denom, out=np.zeros_like(w), where=denom > 0)
    s = np.einsum("bt,bth->bh", alpha, h)
    sp = np.tanh(s)
    z = sp @ P["W_out"].T + P["b_out"]
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    cache = dict(x=x, lengths=lengths, rows=rows, rev=rev, mask=mask, cache_f=cache_f, cache_b=cache_b, h=h, t=t, alpha=alpha, s=s, sp=sp, p=p)
    return p, cache


def _backward(model: DetectionModel, cache: dict, y: np.ndarray, need_dx: bool = False):
    """Gradients of the mean cross-entropy over the batch."""
    P = model.params
    p, alpha, h, t, sp = cache["p"], cache["alpha"], cache["h"], cache["t"], cache["sp"]
    rows, rev, mask = cache["rows"], cache["rev"], cache["mask"]
    B = p.shape[0]
    dz = p.copy()
    dz[np.arange(B), y] -= 1.0
    dz /= B
    grads = {"W_out": dz.T @ sp, "b_out": dz.sum(axis=0)}
    ds = (dz @ P["W_out"]) * (1.0 - sp * sp)
    dalpha = np.einsum("bh,bth->bt", ds, h)
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    de = np.where(mask, de, 0.0)
    grads["t_a"] = np.einsum("bt,bth->h", de, t)
    dh = alpha[:, :, None] * ds[:, None, :] + de[:, :, None] * P["t_a"] * (1.0 - t * t)
    dh = np.where(mask[:, :, None], dh, 0.0)
    gf, dxf = lstm.backward(dh, cache["cache_f"], model.cell("fwd"), need_dx)
    gb, dxbr = lstm.backward(dh[rows, rev], cache["cache_b"], model.cell("bwd"), need_dx)
    for k in ("Wx", "Wh", "b"):
        grads[f"fwd_{k}"] = gf[k]
        grads[f"bwd_{k}"] = gb[k]
    dx = dxf + dxbr[rows, rev] if need_dx else None
    return grads, dx


def _loss(p: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))


def _check(model: DetectionModel, x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[2] != model.v:
        raise DimensionMismatch(f"expected (*, *, {model.v}) input, got {x.shape}")


def forward_pass(model: DetectionModel, inp: PaddedVectorSequence) -> AttentionTrace:
    if inp.vectors.shape != (model.length, model.v):
        raise DimensionMismatch(f"expected ({model.length}, {model.v}) input, got {inp.vectors.shape}")
    n = inp.valid_len
    x = inp.vectors[None, :n]
    p, cache = _forward(model, x, np.array([n]))
    alpha = np.zeros(model.length)
    alpha[:n] = cache["alpha"][0]
    return AttentionTrace(alpha, cache["h"][0], cache["s"][0], cache["sp"][0], p[0], n)


def label_of(p: np.ndarray) -> str:
    """Malicious only on a strict majority; an exact tie is benign."""
    return LABELS[MALICIOUS] if p[MALICIOUS] > p[BENIGN] else LABELS[BENIGN]


def predict(model: DetectionModel, inp: PaddedVectorSequence) -> Prediction:
    trace = forward_pass(model, inp)
    return Prediction(label_of(trace.p), trace.p, trace)


class IndexedDataset:
    """Sequences stored as embedding-table indices, expanded per batch.

    ``table`` is the (l + 1, v) lookup with a trailing zero row for UNK.
    """

    def __init__(self, indices: Sequence[np.ndarray], labels: Sequence[int], table: np.ndarray, length: int):
        self.indices = [np.asarray(i[:length], dtype=np.int64) for i in indices]
        self.labels = np.asarray(labels, dtype=np.int64)
        self.table = table
        self.length = length
        self.lengths = np.array([len(i) for i in self.indices], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.indices)

    def batch(self, ids: np.ndarray):
        lengths = self.lengths[ids]
        T = int(lengths.max()) if len(ids) else 0
        pad = self.table.shape[0] - 1
        idx = np.full((len(ids), T), pad, dtype=np.int64)
        for r, i in enumerate(ids):
            idx[r, : lengths[r]] = self.indices[i]
        return self.table[idx], lengths, self.labels[ids], idx


class VectorDataset:
    """Already vectorized, padded sequences."""

    def __init__(self, inputs: Sequence[PaddedVectorSequence], labels: Sequence[int]):
        self.inputs = list(inputs)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.lengths = np.array([s.valid_len for s in self.inputs], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.inputs)

    def batch(self, ids: np.ndarray):
        lengths = self.lengths[ids]
        T = int(lengths.max()) if len(ids) else 0
        x = np.stack([self.inputs[i].vectors[:T] for i in ids]) if len(ids) else np.zeros((0, 0, 0))
        return x, lengths, self.labels[ids], None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float | None = 5.0
    finetune_embedding: bool = False


@dataclass
class TrainResult:
    model: DetectionModel
    loss_history: list[float] = field(default_factory=list)
    table: np.ndarray | None = None


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(a) for k, a in params.items()}
        self.v = {k: np.zeros_like(a) for k, a in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


def train(model: DetectionModel, dataset, config: TrainConfig = TrainConfig(), on_epoch=None) -> TrainResult:
    """Mini-batch Adam on cross-entropy; the model is trained in place.

    ``on_epoch(epoch, loss, model)`` is called after every epoch.
    """
    labels = set(np.unique(dataset.labels).tolist())
    if labels != {MALICIOUS, BENIGN}:
        raise SingleClassDataset(f"training data holds only {sorted(LABELS[i] for i in labels)}")
    finetune = config.finetune_embedding and isinstance(dataset, IndexedDataset)
    rng = np.random.default_rng(config.seed)
    opt = _Adam(model.params, config)
    if finetune:
        table_opt = _Adam({"table": dataset.table}, config)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch):
            ids = order[start : start + config.batch]
            x, lengths, y, idx = dataset.batch(ids)
            p, cache = _forward(model, x, lengths)
            loss = _loss(p, y)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} in epoch {epoch}")
            total += loss * len(ids)
            grads, dx = _backward(model, cache, y, need_dx=finetune)
            if config.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > config.clip_norm:
                    scale = config.clip_norm / norm
                    grads = {k: g * scale for k, g in grads.items()}
            opt.step(model.params, grads)
            if finetune:
                gt = np.zeros_like(dataset.table)
                np.add.at(gt, idx.ravel(), dx.reshape(-1, dx.shape[-1]))
                gt[-1] = 0.0
                table_opt.step({"table": dataset.table}, {"table": gt})
                dataset.table[-1] = 0.0
        history.append(total / len(dataset))
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    return TrainResult(model, history, dataset.table if finetune else None)


def predict_dataset(model: DetectionModel, dataset, batch: int = 64) -> np.ndarray:
    """Class probabilities (N, 2) for every sequence in a dataset."""
    out = np.zeros((len(dataset), 2))
    for start in range(0, len(dataset), batch):
        ids = np.arange(start, min(start + batch, len(dataset)))
        x, lengths, _, _ = dataset.batch(ids)
        p, _ = _forward(model, x, lengths)
        out[ids] = p
    return out


def loss_and_grads(model: DetectionModel, x: np.ndarray, lengths: np.ndarray, y: np.ndarray):
    _check(model, x)
    p, cache = _forward(model, x, np.asarray(lengths))
    grads, _ = _backward(model, cache, np.asarray(y))
    return _loss(p, np.asarray(y)), grads


def gradient_check(model: DetectionModel, sample: PaddedVectorSequence, label: int, epsilon: float = 1e-5, floor: float = 1e-6) -> dict[str, float]:
    """Compare analytic gradients with central finite differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; returns
    the maximum per parameter group plus an overall ``"max"`` entry.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = sample.valid_len
    x = sample.vectors[None, :n]
    lengths = np.array([n])
    y = np.array([label])
    _, grads = loss_and_grads(model, x, lengths, y)
    errors = {}
    for group, names in GROUPS.items():
        worst = 0.0
        for name in names:
            arr = model.params[name]
            flat = arr.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + epsilon
                lp = _loss(_forward(model, x, lengths)[0], y)
                flat[i] = old - epsilon
                lm = _loss(_forward(model, x, lengths)[0], y)
                flat[i] = old
                num = (lp - lm) / (2 * epsilon)
                ana = grads[name].reshape(-1)[i]
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
        errors[group] = worst
    errors["max"] = max(errors.values())
    return errors
