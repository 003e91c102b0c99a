"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the conftest hook prints at the end
of the run.  Criteria 7, 8 and 10 share two full default pipeline runs
(2000 synthetic programs, seed 0) made through the command line.

    pytest tests/test_acceptance.py -v
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from dexbuild import minimal_fixture
from malseq.classifier import DetectionModel, forward_pass, gradient_check
from malseq.cli import main
from malseq.dex import MalformedHeader, RefKind, TruncatedFile, parse_dex
from malseq.dex.ir import load_ir
from malseq.embedding import ApiFrequency, PaddedVectorSequence, SkipGramConfig, api_frequency_stats, build_vocab, train_skipgram
from malseq.extraction import BehaviorSequence, build_cross_reference, extract_sequence, find_root_methods
from malseq.localization import suspect_scores, top_k_suspects
from oracles import brute_roots, cosine, fig2_doc, naive_extract, random_ir


def record(cid, ok, label, detail):
    ACCEPTANCE[cid] = (bool(ok), label, detail)
    print(f"{'PASS' if ok else 'FAIL'}  [{cid}] {label}: {detail}")
    assert ok, detail


def test_c01_extraction_oracle_equivalence():
    rng = np.random.default_rng(1001)
    docs = [random_ir(rng, max_methods=30) for _ in range(1000)]
    t0 = time.perf_counter()
    mismatches = 0
    for doc in docs:
        seq, _ = extract_sequence(load_ir(doc))
        m = seq.methods
        got = [(a, m[p.direct_invoker], m[p.root], p.offset) for a, p in zip(seq.apis, seq.provenance)]
        mismatches += json.dumps(got).encode() != json.dumps(naive_extract(doc)).encode()
    dt = time.perf_counter() - t0
    record(1, mismatches == 0 and dt < 30, "extraction oracle equivalence", f"1000 programs, {mismatches} mismatches, {dt:.1f} s (< 30 s)")


def test_c02_nested_call_fixture_order():
    seq, _ = extract_sequence(load_ir(fig2_doc()))
    got = [a.split("->")[1].removesuffix("()V") for a in seq.apis]
    want = [f"api{i}" for i in (1, 2, 5, 6, 7, 8, 9, 3, 4)]
    record(2, got == want, "nested call emission order", " ".join(got))


def test_c03_root_methods():
    rng = np.random.default_rng(1003)
    bad = 0
    for _ in range(500):
        doc = random_ir(rng, max_methods=30)
        prog = load_ir(doc)
        got = [prog.signature(m) for m in find_root_methods(build_cross_reference(prog))]
        bad += got != brute_roots(doc)
    record(3, bad == 0, "root-method correctness", f"500 graphs, {bad} mismatches")


def test_c04_gradient_check():
    rng = np.random.default_rng(1004)
    t0 = time.perf_counter()
    worst = {}
    for i in range(20):
        model = DetectionModel.init(4, 3, length=6, seed=i)
        n = int(rng.integers(1, 7))
        x = np.zeros((6, 4))
        x[:n] = rng.normal(size=(n, 4))
        errs = gradient_check(model, PaddedVectorSequence(x, n, np.arange(n)), int(rng.integers(0, 2)), epsilon=1e-5)
        for k, e in errs.items():
            worst[k] = max(worst.get(k, 0.0), e)
    dt = time.perf_counter() - t0
    ok = worst["max"] < 1e-4 and dt < 60
    groups = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
    record(4, ok, "gradient verification", f"{groups}; {dt:.1f} s")


def test_c05_attention_masking():
    rng = np.random.default_rng(1005)
    worst_sum, pad_mass, variant = 0.0, 0.0, 0
    for i in range(100):
        L, v = int(rng.integers(2, 30)), int(rng.integers(1, 8))
        model = DetectionModel.init(v, int(rng.integers(1, 9)), length=L, seed=i, scale=0.5)
        n = int(rng.integers(1, L + 1))
        x = np.zeros((L, v))
        x[:n] = rng.normal(size=(n, v))
        tr = forward_pass(model, PaddedVectorSequence(x, n, np.arange(n)))
        worst_sum = max(worst_sum, abs(tr.alpha[:n].sum() - 1))
        pad_mass = max(pad_mass, float(np.abs(tr.alpha[n:]).max(initial=0.0)))
        x2 = x.copy()
        x2[n:] = rng.normal(size=(L - n, v)) * 10
        tr2 = forward_pass(model, PaddedVectorSequence(x2, n, np.arange(n)))
        variant += not (np.array_equal(tr.alpha, tr2.alpha) and np.array_equal(tr.p, tr2.p))
    ok = worst_sum <= 1e-6 and pad_mass == 0 and variant == 0
    record(5, ok, "attention normalization and masking", f"max |sum-1|={worst_sum:.1e}, max pad alpha={pad_mass}, {variant} traces moved by pad noise")


def test_c06_suspect_score_conservation():
    rng = np.random.default_rng(1006)
    from malseq.classifier import AttentionTrace
    worst, done = 0.0, 0
    while done < 100:
        seq, _ = extract_sequence(load_ir(random_ir(rng, call_p=0.3)))
        if not len(seq):
            continue
        n = len(seq)
        alpha = rng.dirichlet(np.ones(n))
        tr = AttentionTrace(alpha, np.zeros((n, 1)), np.zeros(1), np.zeros(1), np.array([1.0, 0.0]), n)
        sus = top_k_suspects(tr, seq, int(rng.integers(1, 2 * n + 1)))
        worst = max(worst, abs(sum(s.sus for s in suspect_scores(sus)) - sum(s.alpha for s in sus)))
        done += 1
    record(6, worst <= 1e-9, "suspect-score conservation", f"100 traces, max deviation {worst:.1e}")


# --- full pipeline runs shared by criteria 7, 8 and 10 ---

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _full_run(root: Path) -> dict:
    t0 = time.perf_counter()
    corpus, model, reports = root / "corpus", root / "model", root / "reports"
    assert main(["gen-corpus", str(corpus), "--seed", "0"]) == 0
    assert main(["train", str(corpus), "--model-dir", str(model), "--seed", "0"]) == 0
    assert main(["eval", str(corpus), "--model-dir", str(model), "--seed", "0", "--split", "test",
                 "--k", "200", "--top-n", "9", "--n-sweep", "1-20", "-o", str(root / "eval.json")]) == 0
    # reports for every program in the held-out split
    manifest = [json.loads(l) for l in (corpus / "manifest.jsonl").read_text().splitlines()]
    test_ids = {p["id"] for p in json.loads((root / "eval.json").read_text())["predictions"]}
    files = [str(corpus / r["ir"]) for r in manifest if r["id"] in test_ids]
    assert main(["scan", *files, "--model-dir", str(model), "--seed", "0", "--report-dir", str(reports)]) == 0
    hashes = {f"model/{p.name}": _digest(p) for p in sorted(model.iterdir()) if p.suffix != ".json" or p.name == "vocab.json"}
    hashes.update({f"reports/{p.name}": _digest(p) for p in sorted(reports.iterdir())})
    return {"eval": json.loads((root / "eval.json").read_text()), "hashes": hashes, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    return _full_run(tmp_path_factory.mktemp("full_a"))


@pytest.mark.slow
def test_c07_end_to_end_detection(full_run):
    det, dt = full_run["eval"]["detection"], full_run["seconds"]
    ok = det["accuracy"] >= 0.95 and det["f1"] >= 0.95 and dt <= 15 * 60
    record(7, ok, "end-to-end synthetic detection",
           f"test accuracy {det['accuracy']:.4f}, F1 {det['f1']:.4f}, FPR {det['fpr']:.4f} over {full_run['eval']['samples']} programs; run {dt / 60:.1f} min")


@pytest.mark.slow
def test_c08_end_to_end_localization(full_run):
    loc, curve = full_run["eval"]["localization"], full_run["eval"]["curve"]
    rates = [c["hit_rate"] for c in curve]
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    ok = loc["hit_rate"] >= 0.90 and monotone and [c["n"] for c in curve] == list(range(1, 21))
    record(8, ok, "end-to-end synthetic localization",
           f"hit rate {loc['hit_rate']:.4f} ({loc['N_hit']}/{loc['N']}) at k=200 n=9, accuracy {loc['accuracy']:.4f}; "
           f"sweep 1..20 monotone={monotone} ({rates[0]:.3f} -> {rates[-1]:.3f})")


def test_c09_embedding_cooccurrence():
    rng = np.random.default_rng(1009)
    G, S = 12, 4
    apis = [f"Landroid/g{g}/Api;->m{i}()V" for g in range(G) for i in range(S)]
    # each program strings together whole groups, so members always co-occur
    corpus = [[apis[g * S + i] for g in rng.integers(0, G, 30) for i in rng.permutation(S)] for _ in range(400)]
    vocab = build_vocab({a: ApiFrequency(0.5, 0.5, 0.5) for a in apis})
    w = train_skipgram(corpus, vocab, SkipGramConfig(seed=0)).weights
    together = [cosine(w[g * S + i], w[g * S + j]) for g in range(G) for i in range(S) for j in range(i + 1, S)]
    pairs = rng.choice(len(apis), size=(2000, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    random_pairs = [cosine(w[a], w[b]) for a, b in pairs]
    gap = np.mean(together) - np.mean(random_pairs)
    record(9, gap >= 0.2, "embedding co-occurrence", f"mean cosine co-occurring {np.mean(together):.3f}, random {np.mean(random_pairs):.3f}, gap {gap:.3f} (>= 0.2)")


@pytest.mark.slow
def test_c10_determinism(full_run, tmp_path_factory):
    second = _full_run(tmp_path_factory.mktemp("full_b"))
    a, b = full_run["hashes"], second["hashes"]
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and any(k.startswith("reports/") for k in a)
    record(10, ok, "determinism", f"{len(a)} model/report files compared, {len(differing)} differ {differing[:3]}")


def test_c11_frequency_filter():
    def seq(apis, label):
        return BehaviorSequence(tuple(apis), (), (), (), label=label)

    common, mal_only, filler = "Landroid/x/C;->common()V", "Landroid/x/M;->mal()V", "Landroid/x/F;->f()V"
    corpus = [seq([common, mal_only, filler], "malicious")] * 9 + [seq([filler], "malicious")] \
        + [seq([common, filler], "benign")] * 8 + [seq([filler], "benign")] * 2
    vocab = build_vocab(api_frequency_stats(corpus), 0.75)
    f = vocab.frequencies
    ok = vocab.is_filtered(common) and not vocab.is_filtered(mal_only)
    record(11, ok, "frequency filter conjunction rule",
           f"common {f[vocab.index[common]].as_tuple()} filtered={vocab.is_filtered(common)}; "
           f"malicious-only {f[vocab.index[mal_only]].as_tuple()} filtered={vocab.is_filtered(mal_only)}")


def test_c12_dex_fixture():
    data = (Path(__file__).parent / "fixtures" / "minimal.dex").read_bytes()
    prog = parse_dex(data)
    calls = [(i.offset, i.mnemonic, prog.method_refs[i.invoke_target].signature, prog.method_refs[i.invoke_target].kind)
             for i in prog.invokes(0)]
    want = [(0, "invoke-virtual", "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;", RefKind.EXTERNAL_API),
            (4, "invoke-static", "Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;", RefKind.EXTERNAL_API)]
    parsed = data == minimal_fixture() and [prog.signature(m) for m in range(len(prog.methods))] == [
        "Lcom/example/Main;->run(Landroid/telephony/TelephonyManager;)V"] and calls == want
    wrong = []
    for cut in range(0x70):
        for damaged in (data[:cut], data[:cut] + data[cut + 1:]):
            try:
                parse_dex(damaged)
                wrong.append((cut, "parsed"))
            except (MalformedHeader, TruncatedFile):
                pass
            except Exception as exc:  # anything else is a failure of the criterion
                wrong.append((cut, type(exc).__name__))
    record(12, parsed and not wrong, "DEX fixture parsing",
           f"methods and invokes match={parsed}; 224 header truncations/deletions, {len(wrong)} not MalformedHeader/TruncatedFile {wrong[:3]}")
