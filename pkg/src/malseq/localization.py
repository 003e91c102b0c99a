"""From attention weights to suspect APIs, per-method suspicion and analyst reports."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .classifier import AttentionTrace, label_of
from .dex.types import DexProgram, RefKind
from .errors import EmptySet, ProvenanceMismatch
from .extraction import BehaviorSequence

DEFAULT_K = 200
DEFAULT_N = 9


@dataclass(frozen=True)
class SuspectApi:
    position: int  # index into the original behavior sequence
    api: str
    alpha: float
    direct_invoker: str
    root: str


@dataclass(frozen=True)
class MethodSuspicion:
    method: str
    sus: float
    contributing: tuple[int, ...]
    entry_points: tuple[str, ...]


def top_k_suspects(trace: AttentionTrace, seq: BehaviorSequence, k: int = DEFAULT_K, position_map: Sequence[int] | None = None) -> list[SuspectApi]:
    """The ``k`` valid positions with the largest attention, joined to provenance.

    Ties go to the earlier position.  ``position_map`` translates model
    positions back to sequence indices when filtering removed APIs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = trace.valid_len
    pmap = np.arange(n) if position_map is None else np.asarray(position_map)
    if len(pmap) != n or (n and (pmap.max() >= len(seq) or len(seq.provenance) != len(seq.apis))):
        raise ProvenanceMismatch(f"trace covers {n} positions, sequence has {len(seq)}")
    alpha = trace.alpha[:n]
    order = np.lexsort((np.arange(n), -alpha))[:k]
    out = []
    for i in order:
        pos = int(pmap[i])
        prov = seq.provenance[pos]
        out.append(SuspectApi(pos, seq.apis[pos], float(alpha[i]), seq.methods[prov.direct_invoker], seq.methods[prov.root]))
    return out


def suspect_scores(suspects: Iterable[SuspectApi]) -> list[MethodSuspicion]:
    """Sum suspect attention per directly invoking method.

    Attribution is positional: a suspect counts toward the method that issued
    that particular invoke, not toward every method calling the same API.
    """
    sums: dict[str, float] = defaultdict(float)
    positions: dict[str, list[int]] = defaultdict(list)
    roots: dict[str, dict[str, None]] = defaultdict(dict)
    for s in suspects:
        sums[s.direct_invoker] += s.alpha
        positions[s.direct_invoker].append(s.position)
        roots[s.direct_invoker][s.root] = None
    scores = [MethodSuspicion(m, sums[m], tuple(positions[m]), tuple(roots[m])) for m in sums]
    return _rank(scores)


def _rank(scores: Iterable[MethodSuspicion]) -> list[MethodSuspicion]:
    return sorted(scores, key=lambda s: (-s.sus, s.method))


def select_methods(scores: Iterable[MethodSuspicion], n: int = DEFAULT_N) -> list[MethodSuspicion]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _rank(scores)[:n]


@dataclass
class Report:
    brief: dict
    summary: list[dict]
    details: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"brief": self.brief, "summary": self.summary, "details": self.details}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        b = self.brief
        lines = ["== Brief information =="]
        for key in sorted(b):
            value = b[key]
            if isinstance(value, list):
                value = ", ".join(map(str, value)) or "-"
            lines.append(f"{key:>16}: {value}")
        lines += ["", f"== Summary: {len(self.summary)} suspected APIs =="]
        for s in self.summary:
            lines.append(f"{s['rank']:>4}  {s['alpha']:.6f}  {s['api']}  [{s['method']}]")
        lines += ["", f"== Details: {len(self.details)} suspected methods =="]
        for d in self.details:
            lines.append(f"#{d['rank']} {d['method']}")
            lines.append(f"    suspect score: {d['sus']:.6f}")
            lines.append(f"    class: {d['class']}  parameters: ({', '.join(d['parameters'])})  returns: {d['return_type']}")
            lines.append(f"    entry points: {', '.join(d['entry_points'])}")
            lines.append("    suspected APIs:")
            for s in d["suspect_apis"]:
                lines.append(f"      @{s['position']:<6} {s['alpha']:.6f}  {s['api']}")
            lines.append("    invokes:")
            lines.extend(f"      {row}" for row in d["invokes"])
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"


def invoke_listing(program: DexProgram, method: int) -> list[str]:
    refs = program.method_refs
    rows = []
    for ins in program.invokes(method):
        ref = refs[ins.invoke_target]
        tag = {RefKind.INTERNAL: "", RefKind.EXTERNAL_API: "  ; api", RefKind.EXTERNAL_IGNORED: "  ; ignored"}[ref.kind]
        rows.append(f"{ins.offset:04x}: {ins.mnemonic} {ref.signature}{tag}")
    return rows


def _package(program: DexProgram) -> str:
    counts = Counter(c.descriptor[1:].rsplit("/", 1)[0] for c in program.classes if "/" in c.descriptor)
    return counts.most_common(1)[0][0].replace("/", ".") if counts else ""


def generate_report(
    program: DexProgram,
    seq: BehaviorSequence,
    trace: AttentionTrace,
    suspects: Sequence[SuspectApi],
    methods: Sequence[MethodSuspicion],
    metadata: dict | None = None,
) -> Report:
    """Three-part report: brief program facts, the suspect APIs with their
    attention, and per-method details with the method's invoke listing."""
    meta = {**program.metadata, **(metadata or {})}
    brief = {
        "file": program.name,
        "package": meta.get("package") or _package(program),
        "source": program.source.value,
        "classes": len(program.classes),
        "methods": len(program.methods),
        "api_refs": sum(r.kind is RefKind.EXTERNAL_API for r in program.method_refs),
        "sequence_length": len(seq),
        "truncated": seq.truncated,
        "verdict": label_of(trace.p),
        "p_malicious": float(trace.p[0]),
        "permissions": list(meta.get("permissions", [])),
    }
    for key in ("sdk", "version", "sha256"):
        if key in meta:
            brief[key] = meta[key]
    summary = [
        {"rank": i + 1, "position": s.position, "api": s.api, "alpha": s.alpha, "method": s.direct_invoker}
        for i, s in enumerate(suspects)
    ]
    by_pos = {s.position: s for s in suspects}
    details = []
    for rank, ms in enumerate(methods, 1):
        mid = program.method_by_signature.get(ms.method)
        ref = program.method_ref(mid) if mid is not None else None
        details.append(
            {
                "rank": rank,
                "method": ms.method,
                "class": ref.class_descriptor if ref else "",
                "name": ref.name if ref else "",
                "parameters": list(ref.proto.parameters) if ref else [],
                "return_type": ref.proto.return_type if ref else "",
                "sus": ms.sus,
                "entry_points": list(ms.entry_points),
                "suspect_apis": [{"position": p, "api": by_pos[p].api, "alpha": by_pos[p].alpha} for p in ms.contributing],
                "invokes": invoke_listing(program, mid) if mid is not None else [],
            }
        )
    return Report(brief, summary, details)


@dataclass(frozen=True)
class NMaxApi:
    api: str
    suspected_rate: float
    average_weight: float

    def to_dict(self) -> dict:
        return asdict(self)


def n_max_apis(suspect_sets: Iterable[Sequence[SuspectApi]], n: int = 5) -> list[NMaxApi]:
    """Most frequently suspected APIs across programs.

    ``suspect_sets`` holds one k-suspect list per program (see
    :func:`top_k_suspects`).  The rate is the fraction of programs whose
    suspects include the API; the weight is its mean attention over all
    suspect occurrences.
    """
    programs = 0
    hits: Counter[str] = Counter()
    weights: dict[str, list[float]] = defaultdict(list)
    for suspects in suspect_sets:
        programs += 1
        seen = set()
        for s in suspects:
            weights[s.api].append(s.alpha)
            seen.add(s.api)
        hits.update(seen)
    if programs == 0:
        raise EmptySet("no programs given")
    rows = [NMaxApi(api, hits[api] / programs, float(np.mean(weights[api]))) for api in hits]
    rows.sort(key=lambda r: (-r.suspected_rate, -r.average_weight, r.api))
    return rows[:n]
