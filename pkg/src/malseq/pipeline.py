"""End-to-end orchestration shared by the command-line front end."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import classifier as clf
from .config import PipelineConfig
from .corpus import read_manifest
from .dex import DexError, DexProgram, load_program
from .embedding import ApiVocab, EmbeddingMatrix, SkipGramConfig, api_frequency_stats, build_vocab, encode, load_embedding, save_embedding, train_skipgram, vectorize
from .errors import ModelMismatch
from .extraction import BehaviorSequence, ExtractionConfig, TraversalStats, build_cross_reference, extract_sequence
from .localization import MethodSuspicion, Report, SuspectApi, generate_report, select_methods, suspect_scores, top_k_suspects
from .metrics import EvalMetrics, LocalizationMetrics, compute_metrics, localization_metrics

log = logging.getLogger(__name__)

VOCAB_FILE = "vocab.json"
EMBEDDING_FILE = "embedding.bin"
MODEL_FILE = "model.bin"
TRAINING_FILE = "training.json"

INPUT_SUFFIXES = (".dex", ".json")


@dataclass
class Extracted:
    id: str
    path: str
    program: DexProgram
    sequence: BehaviorSequence
    stats: TraversalStats
    label: str | None = None
    planted: tuple[str, ...] = ()


def extraction_config(cfg: PipelineConfig) -> ExtractionConfig:
    return ExtractionConfig(max_len=cfg.extraction.max_len, memo_cap=cfg.extraction.memo_cap)


def extract_path(path, cfg: PipelineConfig, sample_id: str | None = None, label: str | None = None, planted: Sequence[str] = ()) -> Extracted:
    program = load_program(path)
    seq, stats = extract_sequence(program, build_cross_reference(program), extraction_config(cfg))
    sid = sample_id or Path(path).stem
    label = label if label is not None else program.label
    seq = BehaviorSequence(seq.apis, seq.provenance, seq.bounds, seq.methods, seq.truncated, sid, label)
    return Extracted(sid, str(path), program, seq, stats, label, tuple(planted))


def expand_inputs(inputs: Iterable) -> list[Path]:
    """Files as given, directories searched recursively for .dex / .json, sorted."""
    out = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            out.extend(q for q in p.rglob("*") if q.is_file() and q.suffix in INPUT_SUFFIXES and q.name != "manifest.jsonl")
        else:
            out.append(p)
    return sorted(out)


def load_corpus(path, cfg: PipelineConfig, on_error: Callable[[str, Exception], None] | None = None) -> list[Extracted]:
    """Extract every program of a corpus.

    ``path`` is a manifest (``manifest.jsonl``), a directory holding one, or
    a directory of labeled IR / DEX files.
    """
    p = Path(path)
    if p.is_dir() and (p / "manifest.jsonl").exists():
        p = p / "manifest.jsonl"
    items: list[tuple[str, str, str | None, tuple[str, ...]]] = []
    if p.is_file() and p.suffix == ".jsonl":
        for rec in read_manifest(p):
            items.append((rec["id"], rec["ir_path"], rec["label"], tuple(rec.get("planted", ()))))
    else:
        for f in expand_inputs([p]):
            items.append((f.stem, str(f), None, ()))
    out = []
    for sid, fpath, label, planted in items:
        try:
            out.append(extract_path(fpath, cfg, sid, label, planted))
        except (DexError, OSError) as exc:
            if on_error is None:
                raise
            on_error(fpath, exc)
    return out


@dataclass
class Artifacts:
    vocab: ApiVocab
    embedding: EmbeddingMatrix
    model: clf.DetectionModel

    @property
    def length(self) -> int:
        return self.model.length


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def save_artifacts(art: Artifacts, model_dir) -> dict[str, str]:
    """Write vocab, embedding and model files, each hashing its predecessor."""
    d = Path(model_dir)
    d.mkdir(parents=True, exist_ok=True)
    vocab_bytes = art.vocab.to_json().encode()
    (d / VOCAB_FILE).write_bytes(vocab_bytes)
    save_embedding(d / EMBEDDING_FILE, art.embedding, vocab_bytes)
    emb_bytes = (d / EMBEDDING_FILE).read_bytes()
    art.model.embedding_hash = _sha256(emb_bytes)
    model_bytes = art.model.to_bytes()
    (d / MODEL_FILE).write_bytes(model_bytes)
    return {
        VOCAB_FILE: hashlib.sha256(vocab_bytes).hexdigest(),
        EMBEDDING_FILE: hashlib.sha256(emb_bytes).hexdigest(),
        MODEL_FILE: hashlib.sha256(model_bytes).hexdigest(),
    }


def load_artifacts(model_dir) -> Artifacts:
    d = Path(model_dir)
    try:
        vocab_bytes = (d / VOCAB_FILE).read_bytes()
        emb_bytes = (d / EMBEDDING_FILE).read_bytes()
        model_bytes = (d / MODEL_FILE).read_bytes()
    except OSError as exc:
        raise ModelMismatch(f"missing model file: {exc}") from None
    vocab = ApiVocab.from_json(vocab_bytes.decode())
    emb = load_embedding(d / EMBEDDING_FILE, vocab_bytes)
    model = clf.DetectionModel.from_bytes(model_bytes)
    if model.embedding_hash != _sha256(emb_bytes):
        raise ModelMismatch("model was trained against a different embedding file")
    if emb.weights.shape != (vocab.size, model.v):
        raise ModelMismatch("embedding and model dimensions disagree")
    return Artifacts(vocab, emb, model)


def label_index(label: str) -> int:
    return clf.MALICIOUS if label == "malicious" else clf.BENIGN


def make_dataset(samples: Sequence[Extracted], art: Artifacts) -> clf.IndexedDataset:
    table = art.embedding.padded()
    return clf.IndexedDataset(
        [encode(s.sequence.apis, art.vocab)[0] for s in samples],
        [label_index(s.label or "benign") for s in samples],
        table,
        art.length,
    )


@dataclass
class TrainOutcome:
    artifacts: Artifacts
    loss_history: list[float]
    skipgram_loss: list[float]
    validation: list[dict] = field(default_factory=list)


def train_artifacts(train: Sequence[Extracted], cfg: PipelineConfig, validation: Sequence[Extracted] = (), echo: Callable[[str], None] = log.info) -> TrainOutcome:
    """Frequency stats, vocabulary, skip-gram, then the classifier."""
    seqs = [s.sequence for s in train]
    stats = api_frequency_stats(seqs)
    vocab = build_vocab(stats, cfg.vocab.threshold, cfg.vocab.rule)
    echo(f"vocabulary: {vocab.size} APIs, {sum(vocab.filtered)} filtered")
    sg = cfg.skipgram
    emb = train_skipgram(seqs, vocab, SkipGramConfig(sg.dim, sg.window, sg.negatives, sg.epochs, sg.lr, cfg.seed, sg.batch))
    echo("skip-gram loss per epoch: " + " ".join(f"{x:.4f}" for x in emb.loss_history))
    length = max(1, min(cfg.extraction.max_len, max(len(encode(s.apis, vocab)[0]) for s in seqs)))
    model = clf.DetectionModel.init(sg.dim, cfg.classifier.hidden, length, seed=cfg.seed)
    art = Artifacts(vocab, emb, model)
    data = make_dataset(train, art)
    val_data = make_dataset(validation, art) if validation else None
    val_rows: list[dict] = []

    def on_epoch(epoch: int, loss: float, m: clf.DetectionModel) -> None:
        line = f"epoch {epoch + 1:3d}  loss {loss:.5f}"
        if val_data is not None:
            metrics = evaluate_dataset(m, val_data)
            val_rows.append({"epoch": epoch + 1, "loss": loss, **metrics.to_dict()})
            line += f"  val acc {metrics.accuracy:.4f}  f1 {metrics.f1:.4f}"
        echo(line)

    c = cfg.classifier
    tc = clf.TrainConfig(epochs=c.epochs, batch=c.batch, lr=c.lr, seed=cfg.seed, clip_norm=c.clip_norm, finetune_embedding=c.finetune_embedding)
    result = clf.train(model, data, tc, on_epoch=on_epoch)
    if result.table is not None:
        emb = EmbeddingMatrix(result.table[:-1].copy(), emb.loss_history)
    return TrainOutcome(Artifacts(vocab, emb, result.model), result.loss_history, emb.loss_history, val_rows)


def evaluate_dataset(model: clf.DetectionModel, data: clf.IndexedDataset) -> EvalMetrics:
    p = clf.predict_dataset(model, data)
    preds = [clf.label_of(row) for row in p]
    truth = [clf.LABELS[y] for y in data.labels]
    return compute_metrics(zip(truth, preds))


@dataclass
class ScanResult:
    id: str
    label: str
    p: np.ndarray
    trace: clf.AttentionTrace
    suspects: list[SuspectApi]
    scores: list[MethodSuspicion]
    report: Report | None = None


def scan(sample: Extracted, art: Artifacts, cfg: PipelineConfig, always_localize: bool = False) -> ScanResult:
    """Classify one program; localize and report when it is judged malicious."""
    vec = vectorize(sample.sequence, art.vocab, art.embedding, art.length)
    pred = clf.predict(art.model, vec)
    suspects: list[SuspectApi] = []
    scores: list[MethodSuspicion] = []
    report = None
    if pred.label == "malicious" or always_localize:
        if vec.valid_len:
            suspects = top_k_suspects(pred.trace, sample.sequence, cfg.localization.k, vec.position_map)
            scores = suspect_scores(suspects)
        if pred.label == "malicious":
            meta = {"sha256": hashlib.sha256(Path(sample.path).read_bytes()).hexdigest()} if Path(sample.path).exists() else {}
            report = generate_report(sample.program, sample.sequence, pred.trace, suspects, select_methods(scores, cfg.localization.n) if scores else [], meta)
    return ScanResult(sample.id, pred.label, pred.p, pred.trace, suspects, scores, report)


@dataclass
class EvalOutcome:
    detection: EvalMetrics
    localization: LocalizationMetrics | None
    curve: list[dict]
    predictions: list[dict]


def evaluate(samples: Sequence[Extracted], art: Artifacts, cfg: PipelineConfig, n_sweep: Sequence[int] = (), truth: dict[str, Sequence[str]] | None = None) -> EvalOutcome:
    """Detection metrics over all samples; localization over truly malicious ones.

    Misclassified malware is still localized so every truly malicious
    sample counts toward the hit rate.
    """
    preds = []
    ranked: dict[str, list[str]] = {}
    for s in samples:
        r = scan(s, art, cfg, always_localize=s.label == "malicious")
        preds.append({"id": s.id, "label": s.label, "predicted": r.label, "p_malicious": float(r.p[0])})
        if s.label == "malicious":
            ranked[s.id] = [m.method for m in r.scores]
    detection = compute_metrics((p["label"], p["predicted"]) for p in preds)
    if truth is None:
        truth = {s.id: s.planted for s in samples if s.label == "malicious"}
    else:
        truth = {sid: planted for sid, planted in truth.items() if sid in ranked}
    loc = None
    curve = []
    if ranked:
        loc = localization_metrics(ranked, truth, cfg.localization.n)
        for n in n_sweep:
            m = localization_metrics(ranked, truth, n)
            curve.append({"n": n, "hit_rate": m.hit_rate, "accuracy": m.accuracy})
    return EvalOutcome(detection, loc, curve, preds)


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
