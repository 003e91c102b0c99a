import json

import pytest

from malseq.dex import DuplicateMethodSignature, RefKind, SchemaViolation, Source, UnresolvedReference, load_program
from malseq.dex.ir import dumps_ir, load_ir, parse_signature, program_to_ir


def doc(*methods, label=None):
    return {"methods": [dict(zip(("class", "name", "proto", "invokes"), m)) for m in methods], "label": label}


def test_round_trip():
    d = doc(("La;", "f", "()V", ["La;->g(I)V", "Landroid/os/Handler;->post(Ljava/lang/Runnable;)Z"]),
            ("La;", "g", "(I)V", ["Ljava/lang/Object;-><init>()V"]), label="benign")
    p = load_ir(d, "x")
    assert p.source is Source.TEXT_IR and p.label == "benign" and p.name == "x"
    assert [r.kind for r in p.method_refs] == [RefKind.INTERNAL, RefKind.INTERNAL, RefKind.EXTERNAL_API, RefKind.EXTERNAL_IGNORED]
    assert [i.offset for i in p.methods[0].instructions] == [0, 1]
    again = load_ir(json.loads(dumps_ir(program_to_ir(p))))
    assert [r.signature for r in again.method_refs] == [r.signature for r in p.method_refs]


def test_internal_wins_over_prefix():
    p = load_ir(doc(("Landroid/app/Mine;", "f", "()V", ["Landroid/app/Mine;->f()V"])))
    assert p.method_refs[0].kind is RefKind.INTERNAL
    assert len(p.method_refs) == 1


def test_errors():
    with pytest.raises(SchemaViolation):
        load_ir({"methods": [{"class": "bad", "name": "f", "proto": "()V", "invokes": []}]})
    with pytest.raises(SchemaViolation):
        load_ir('{"methods": [], "label": "evil"}')
    with pytest.raises(SchemaViolation):
        load_ir("not json")
    with pytest.raises(DuplicateMethodSignature):
        load_ir(doc(("La;", "f", "()V", []), ("La;", "f", "()V", [])))
    with pytest.raises(UnresolvedReference):
        load_ir(doc(("La;", "f", "()V", ["garbage"])))


@pytest.mark.parametrize("sig,parts", [
    ("La;->f()V", ("La;", "f", "()V")),
    ("Lx/Y$Z;-><init>(I[JLjava/lang/String;)V", ("Lx/Y$Z;", "<init>", "(I[JLjava/lang/String;)V")),
    ("[I->clone()Ljava/lang/Object;", ("[I", "clone", "()Ljava/lang/Object;")),
])
def test_parse_signature(sig, parts):
    assert parse_signature(sig) == parts


def test_load_program_reads_ir(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(doc(("La;", "f", "()V", []))))
    assert load_program(path).source is Source.TEXT_IR
