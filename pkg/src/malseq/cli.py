"""``malseq`` command line: extract, stats, gen-corpus, train, scan, eval.

Exit codes: 0 success, 1 usage/config error, 2 input error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .corpus import SyntheticSpec, generate_corpus, split_dataset, write_corpus
from .dex import DexError
from .errors import ConfigError, EmptyCorpus, EmptySet, InfeasibleSpec, MisalignedSets, ModelMismatch, SingleClassDataset, BadRatios
from .extraction import write_sequences
from .localization import n_max_apis
from .metrics import format_table
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MODEL = 0, 1, 2, 3

log = logging.getLogger("malseq")


def _echo(msg: str = "") -> None:
    print(msg, flush=True)


def _overrides(args) -> dict:
    o: dict = {}

    def put(section, key, value):
        if value is not None:
            (o.setdefault(section, {}) if section else o)[key] = value

    put(None, "seed", getattr(args, "seed", None))
    put(None, "format", getattr(args, "format", None))
    put("localization", "k", getattr(args, "k", None))
    put("localization", "n", getattr(args, "top_n", None))
    put("extraction", "max_len", getattr(args, "max_len", None))
    put("skipgram", "dim", getattr(args, "dim", None))
    put("classifier", "hidden", getattr(args, "hidden", None))
    put("classifier", "epochs", getattr(args, "epochs", None))
    put("vocab", "threshold", getattr(args, "threshold", None))
    return o


def _model_dir(args, cfg) -> Path:
    d = getattr(args, "model_dir", None) or cfg.paths.model_dir or os.environ.get("MALSEQ_MODEL_DIR")
    if not d:
        raise ConfigError("no model directory: pass --model-dir, set paths.model_dir or MALSEQ_MODEL_DIR")
    return Path(d)


def cmd_extract(args, cfg) -> int:
    failures = []
    records = []
    rows = []
    for path in pipeline.expand_inputs(args.inputs):
        try:
            ex = pipeline.extract_path(path, cfg)
        except (DexError, OSError) as exc:
            if not args.skip_errors:
                print(f"error: {path}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return EXIT_INPUT
            failures.append((str(path), exc))
            continue
        records.append(ex.sequence)
        rows.append({"file": path.name, **{k: v for k, v in ex.stats.to_dict().items() if k != "cost_estimate"}, "truncated": ex.sequence.truncated})
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        write_sequences(records, fh)
    _echo(format_table(rows, ["file", "n", "n_avg", "d", "roots", "max_depth", "memo_hits", "emitted_len", "truncated"]))
    _echo(f"{len(records)} sequences written to {out}")
    for path, exc in failures:
        print(f"warning: skipped {path}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_OK


def _warn(path, exc):
    print(f"warning: skipped {path}: {type(exc).__name__}: {exc}", file=sys.stderr)


def _split(samples, cfg):
    return split_dataset(samples, [s.label or "benign" for s in samples], cfg.corpus.ratios, cfg.seed)


def cmd_stats(args, cfg) -> int:
    from .embedding import api_frequency_stats, build_vocab

    samples = pipeline.load_corpus(args.corpus, cfg, _warn if args.skip_errors else None)
    stats = api_frequency_stats(s.sequence for s in samples)
    vocab = build_vocab(stats, cfg.vocab.threshold, cfg.vocab.rule)
    rows = sorted(
        ({"api": a, "malicious": f.malicious, "benign": f.benign, "all": f.overall, "filtered": flt} for a, f, flt in zip(vocab.apis, vocab.frequencies, vocab.filtered)),
        key=lambda r: (-r["all"], r["api"]),
    )
    _echo(f"{len(samples)} programs, {vocab.size} APIs, {sum(vocab.filtered)} filtered at threshold {cfg.vocab.threshold}")
    _echo(format_table(rows[: args.top], ["api", "malicious", "benign", "all", "filtered"]))
    result = {"programs": len(samples), "apis": rows}
    if args.model_dir:
        art = pipeline.load_artifacts(args.model_dir)
        sets = []
        for s in samples:
            r = pipeline.scan(s, art, cfg)
            if r.label == "malicious":
                sets.append(r.suspects)
        if sets:
            nmax = n_max_apis(sets, args.n_max)
            _echo(f"\n{args.n_max}-max APIs over {len(sets)} programs detected as malicious (k={cfg.localization.k})")
            _echo(format_table([r.to_dict() for r in nmax], ["api", "suspected_rate", "average_weight"]))
            result["n_max"] = [r.to_dict() for r in nmax]
    if args.output:
        pipeline.write_json(args.output, result)
    return EXIT_OK


def cmd_gen_corpus(args, cfg) -> int:
    c = cfg.corpus
    spec = SyntheticSpec(methods=(c.min_methods, c.max_methods), planted=c.planted, seed=cfg.seed)
    samples = generate_corpus(spec, args.malicious if args.malicious is not None else c.malicious, args.benign if args.benign is not None else c.benign)
    manifest = write_corpus(samples, args.out_dir)
    _echo(f"{len(samples)} programs written, manifest {manifest}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    model_dir = _model_dir(args, cfg)
    samples = pipeline.load_corpus(args.corpus, cfg, _warn if args.skip_errors else None)
    train, val, _ = _split(samples, cfg)
    _echo(f"{len(samples)} programs: {len(train)} train / {len(val)} validation")
    outcome = pipeline.train_artifacts(train, cfg, val, echo=_echo)
    hashes = pipeline.save_artifacts(outcome.artifacts, model_dir)
    report = {
        "config": cfg.to_dict(),
        "hashes": hashes,
        "length": outcome.artifacts.length,
        "vocab_size": outcome.artifacts.vocab.size,
        "filtered": [a for a, f in zip(outcome.artifacts.vocab.apis, outcome.artifacts.vocab.filtered) if f],
        "loss_history": outcome.loss_history,
        "skipgram_loss": outcome.skipgram_loss,
        "validation": outcome.validation,
    }
    pipeline.write_json(model_dir / pipeline.TRAINING_FILE, report)
    if outcome.validation:
        last = outcome.validation[-1]
        _echo(f"final validation accuracy {last['accuracy']:.4f}  f1 {last['f1']:.4f}")
    for name, digest in hashes.items():
        _echo(f"{digest}  {model_dir / name}")
    return EXIT_OK


def cmd_scan(args, cfg) -> int:
    art = pipeline.load_artifacts(_model_dir(args, cfg))
    report_dir = Path(args.report_dir or cfg.paths.report_dir)
    status = EXIT_OK
    for path in pipeline.expand_inputs(args.inputs):
        try:
            sample = pipeline.extract_path(path, cfg)
        except (DexError, OSError) as exc:
            print(f"error: {path}: {type(exc).__name__}: {exc}", file=sys.stderr)
            if not args.skip_errors:
                return EXIT_INPUT
            status = EXIT_INPUT
            continue
        r = pipeline.scan(sample, art, cfg)
        line = f"{path}\t{r.label}\t{r.p[0]:.6f}"
        if r.report is not None:
            report_dir.mkdir(parents=True, exist_ok=True)
            ext = "json" if cfg.format == "json" else "txt"
            out = report_dir / f"{path.stem}.report.{ext}"
            out.write_text(r.report.to_json() + "\n" if cfg.format == "json" else r.report.to_text())
            line += f"\t{out}"
        _echo(line)
    return status


def _parse_sweep(text: str | None) -> list[int]:
    if not text:
        return []
    if "-" in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_eval(args, cfg) -> int:
    art = pipeline.load_artifacts(_model_dir(args, cfg))
    samples = pipeline.load_corpus(args.corpus, cfg, _warn if args.skip_errors else None)
    if args.split != "all":
        samples = dict(zip(("train", "val", "test"), _split(samples, cfg)))[args.split]
    truth = None
    if args.truth:
        truth = {}
        with open(args.truth) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    truth[rec["id"]] = rec.get("planted", [])
    outcome = pipeline.evaluate(samples, art, cfg, _parse_sweep(args.n_sweep), truth)
    result = {"detection": outcome.detection.to_dict(), "samples": len(samples)}
    _echo(f"detection over {len(samples)} samples")
    _echo(format_table([outcome.detection.to_dict()], ["accuracy", "precision", "recall", "f1", "fpr", "tp", "fp", "fn", "tn"]))
    if outcome.localization is not None:
        loc = outcome.localization
        result["localization"] = loc.to_dict()
        _echo(f"\nlocalization over {loc.N} malicious samples (k={cfg.localization.k}, n={loc.n})")
        _echo(format_table([{"N": loc.N, "N_hit": loc.N_hit, "hit_rate": loc.hit_rate, "accuracy": loc.accuracy}], ["N", "N_hit", "hit_rate", "accuracy"]))
    if outcome.curve:
        result["curve"] = outcome.curve
        _echo("\nhit rate / accuracy by n")
        _echo(format_table(outcome.curve, ["n", "hit_rate", "accuracy"]))
    result["predictions"] = outcome.predictions
    if args.output:
        pipeline.write_json(args.output, result)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--k", type=int, help="number of suspect APIs per program")
    common.add_argument("--top-n", type=int, help="number of suspect methods per report")
    common.add_argument("--max-len", type=int, help="maximum extracted sequence length")
    common.add_argument("--dim", type=int, help="embedding dimension")
    common.add_argument("--hidden", type=int, help="recurrent hidden size")
    common.add_argument("--epochs", type=int, help="classifier training epochs")
    common.add_argument("--threshold", type=float, help="frequency filter threshold")
    common.add_argument("--format", choices=("json", "text"))
    common.add_argument("--skip-errors", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="malseq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="extract behavior sequences")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", default="sequences.jsonl")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", parents=[common], help="API frequency statistics and n-max APIs")
    p.add_argument("corpus")
    p.add_argument("--model-dir")
    p.add_argument("--top", type=int, default=30)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic labeled corpus")
    p.add_argument("out_dir")
    p.add_argument("--malicious", type=int)
    p.add_argument("--benign", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", parents=[common], help="train vocabulary, embeddings and classifier")
    p.add_argument("corpus")
    p.add_argument("--model-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("scan", parents=[common], help="classify programs and write reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model-dir")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("eval", parents=[common], help="detection and localization metrics")
    p.add_argument("corpus")
    p.add_argument("--model-dir")
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="test")
    p.add_argument("--truth", help="JSONL of {id, planted} overriding the manifest")
    p.add_argument("--n-sweep", help="e.g. 1-20 or 1,5,9")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (ConfigError, BadRatios, InfeasibleSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DexError, EmptyCorpus, SingleClassDataset, MisalignedSets, EmptySet, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelMismatch as exc:
        print(f"error: ModelMismatch: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
