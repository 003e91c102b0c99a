import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malseq.dex.ir import load_ir
from malseq.extraction import (
    ExtractionConfig, build_cross_reference, extract_sequence, find_root_methods, read_sequences, write_sequences,
)
from oracles import brute_roots, fig2_doc, naive_extract, random_ir


def emitted(doc, **cfg):
    seq, stats = extract_sequence(load_ir(doc), config=ExtractionConfig(**cfg))
    m = seq.methods
    return [(a, m[p.direct_invoker], m[p.root], p.offset) for a, p in zip(seq.apis, seq.provenance)], seq, stats


def test_fig2_order():
    out, seq, stats = emitted(fig2_doc())
    assert [a.split("->")[1] for a, *_ in out] == [f"api{i}()V" for i in (1, 2, 5, 6, 7, 8, 9, 3, 4)]
    assert [inv for _, inv, _, _ in out] == ["Lb;->a()V"] * 2 + ["Lc;->a()V"] * 2 + ["Ld;->a()V"] * 2 + ["Lc;->a()V"] + ["Lb;->a()V"] * 2
    assert {r for _, _, r, _ in out} == {"Lb;->a()V"}
    assert seq.bounds == ((0, 0, 9),)
    assert stats.max_depth == 3


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_memoized_equals_naive(seed):
    doc = random_ir(np.random.default_rng(seed))
    assert emitted(doc)[0] == naive_extract(doc)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_memo_off_equals_memo_on(seed):
    doc = random_ir(np.random.default_rng(seed), call_p=0.5)
    assert emitted(doc, memoize=False)[0] == emitted(doc)[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roots_match_brute_force(seed):
    doc = random_ir(np.random.default_rng(seed))
    prog = load_ir(doc)
    got = [prog.signature(m) for m in find_root_methods(build_cross_reference(prog))]
    assert got == brute_roots(doc)


def test_self_and_mutual_recursion_terminate():
    api = "Landroid/a/A;->x()V"
    doc = {"methods": [
        {"class": "Lr;", "name": "root", "proto": "()V", "invokes": ["Lp;->a()V"]},
        {"class": "Lp;", "name": "a", "proto": "()V", "invokes": [api, "Lp;->a()V", "Lp;->b()V"]},
        {"class": "Lp;", "name": "b", "proto": "()V", "invokes": ["Lp;->a()V", api]},
    ]}
    out, _, _ = emitted(doc)
    assert out == naive_extract(doc)
    assert [inv for _, inv, _, _ in out] == ["Lp;->a()V", "Lp;->b()V"]


def test_pure_cycle_has_no_roots():
    doc = {"methods": [
        {"class": "La;", "name": "f", "proto": "()V", "invokes": ["La;->g()V", "Landroid/a/A;->x()V"]},
        {"class": "La;", "name": "g", "proto": "()V", "invokes": ["La;->f()V"]},
    ]}
    out, seq, stats = emitted(doc)
    assert out == [] and seq.bounds == () and stats.roots == 0 and stats.d == 0


def test_empty_program():
    seq, stats = extract_sequence(load_ir({"methods": []}))
    assert len(seq) == 0 and stats.n == 0 and stats.n_avg == 0


def test_max_len_truncates_prefix():
    doc = random_ir(np.random.default_rng(7), max_methods=30, call_p=0.45)
    full = naive_extract(doc)
    assert len(full) > 5
    out, seq, _ = emitted(doc, max_len=5)
    assert out == full[:5] and seq.truncated


def test_roots_ordered_lexicographically():
    api = "Landroid/a/A;->x()V"
    leaf = {"class": "Lz;", "name": "leaf", "proto": "()V", "invokes": [api]}
    roots = [{"class": c, "name": n, "proto": p, "invokes": ["Lz;->leaf()V"]}
             for c, n, p in [("Lb;", "a", "()V"), ("La;", "z", "()V"), ("La;", "a", "(I)V"), ("La;", "a", "()V")]]
    out, seq, _ = emitted({"methods": [leaf] + roots})
    assert [r for _, _, r, _ in out] == ["La;->a()V", "La;->a(I)V", "La;->z()V", "Lb;->a()V"]


def test_shared_callee_memo_hits():
    api = [f"Landroid/a/A;->x{i}()V" for i in range(3)]
    doc = {"methods": [
        {"class": "La;", "name": "r", "proto": "()V", "invokes": ["La;->s()V", "La;->s()V", "La;->s()V"]},
        {"class": "La;", "name": "s", "proto": "()V", "invokes": api},
    ]}
    out, _, stats = emitted(doc)
    assert len(out) == 9 and stats.memo_hits == 2
    assert stats.n == 2 and stats.n_avg == 1.5 and stats.d == 2.0


def test_records_round_trip():
    _, seq, _ = emitted(fig2_doc())
    buf = io.StringIO()
    write_sequences([seq, seq], buf)
    buf.seek(0)
    assert read_sequences(buf) == [seq, seq]


def test_deep_chain_no_recursion_limit():
    n = 3000
    methods = [{"class": "Lc;", "name": f"m{i}", "proto": "()V",
                "invokes": ([f"Lc;->m{i + 1}()V"] if i + 1 < n else []) + ["Landroid/a/A;->x()V"]} for i in range(n)]
    seq, stats = extract_sequence(load_ir({"methods": methods}))
    assert len(seq) == n and stats.max_depth == n
