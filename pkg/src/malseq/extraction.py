"""Cross-reference graph, root methods and depth-first API sequence extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple

from .dex.types import DexProgram, RefKind


@dataclass(frozen=True)
class CallGraph:
    """Direct-invocation relation over the internal methods of one program.

    ``r_from[m]`` lists internal callees in call-site order, one entry per
    call site; ``r_to[m]`` is the set of distinct callers.
    """

    r_from: tuple[tuple[int, ...], ...]
    r_to: tuple[frozenset[int], ...]
    keys: tuple[tuple[str, str, str], ...]

    @property
    def n(self) -> int:
        return len(self.r_from)

    def ind(self, m: int) -> int:
        return len(self.r_to[m])

    def outd(self, m: int) -> int:
        return len(self.r_from[m])

    @property
    def roots(self) -> list[int]:
        return find_root_methods(self)


@dataclass(frozen=True)
class ExtractionConfig:
    max_len: int = 200_000
    memo_cap: int = 50_000
    memoize: bool = True


class Provenance(NamedTuple):
    direct_invoker: int
    root: int
    offset: int


@dataclass(frozen=True)
class BehaviorSequence:
    apis: tuple[str, ...]
    provenance: tuple[Provenance, ...]
    bounds: tuple[tuple[int, int, int], ...]  # (root, start, end)
    methods: tuple[str, ...]  # internal method signatures, indexed by method id
    truncated: bool = False
    program_id: str = ""
    label: str | None = None

    def __len__(self) -> int:
        return len(self.apis)

    def to_record(self) -> dict:
        return {
            "id": self.program_id,
            "label": self.label,
            "apis": list(self.apis),
            "provenance": [list(p) for p in self.provenance],
            "bounds": [list(b) for b in self.bounds],
            "methods": list(self.methods),
            "truncated": self.truncated,
        }

    @classmethod
    def from_record(cls, rec: dict) -> BehaviorSequence:
        return cls(
            apis=tuple(rec["apis"]),
            provenance=tuple(Provenance(*p) for p in rec["provenance"]),
            bounds=tuple(tuple(b) for b in rec["bounds"]),
            methods=tuple(rec["methods"]),
            truncated=rec["truncated"],
            program_id=rec["id"],
            label=rec["label"],
        )


@dataclass(frozen=True)
class TraversalStats:
    n: int
    n_avg: float
    d: float
    memo_hits: int
    emitted_len: int
    roots: int = 0
    max_depth: int = 0

    @property
    def cost_estimate(self) -> float:
        """Exponential traversal cost model ``n_avg ** d``."""
        return self.n_avg**self.d if self.n_avg > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_avg": self.n_avg,
            "d": self.d,
            "memo_hits": self.memo_hits,
            "emitted_len": self.emitted_len,
            "roots": self.roots,
            "max_depth": self.max_depth,
            "cost_estimate": self.cost_estimate,
        }


def build_cross_reference(program: DexProgram) -> CallGraph:
    """Edges only join internal methods; external invokes are emissions, not edges."""
    n = len(program.methods)
    by_ref = program.method_by_ref
    r_from = []
    r_to: list[set[int]] = [set() for _ in range(n)]
    for m in range(n):
        callees = []
        for ins in program.invokes(m):
            target = by_ref.get(ins.invoke_target)
            if target is not None:
                callees.append(target)
                r_to[target].add(m)
        r_from.append(tuple(callees))
    keys = tuple(program.method_ref(m).key for m in range(n))
    return CallGraph(tuple(r_from), tuple(frozenset(s) for s in r_to), keys)


def find_root_methods(graph: CallGraph) -> list[int]:
    """Methods nobody invokes that invoke at least one internal method,
    in (class, name, prototype) order."""
    roots = [m for m in range(graph.n) if not graph.r_to[m] and graph.r_from[m]]
    return sorted(roots, key=lambda m: graph.keys[m])


def method_steps(program: DexProgram) -> list[list[tuple[bool, int, int]]]:
    """Per method, its behavior-relevant invokes as (is_call, target, offset).

    ``target`` is an internal method id for calls and a method_refs index for
    API emissions; ignored externals are dropped.
    """
    by_ref = program.method_by_ref
    refs = program.method_refs
    steps = []
    for m in range(len(program.methods)):
        out = []
        for ins in program.invokes(m):
            t = ins.invoke_target
            if t in by_ref:
                out.append((True, by_ref[t], ins.offset))
            elif refs[t].kind is RefKind.EXTERNAL_API:
                out.append((False, t, ins.offset))
        steps.append(out)
    return steps


class _Frame:
    __slots__ = ("m", "depth", "i", "start", "visited", "min_cut", "truncated")

    def __init__(self, m: int, depth: int, start: int):
        self.m = m
        self.depth = depth
        self.i = 0
        self.start = start  # first output slot written under this frame
        self.visited = {m}
        self.min_cut = math.inf
        self.truncated = False


def extract_sequence(
    program: DexProgram,
    graph: CallGraph | None = None,
    config: ExtractionConfig = ExtractionConfig(),
) -> tuple[BehaviorSequence, TraversalStats]:
    """Depth-first expansion of every root method into one API sequence.

    Invokes are followed in instruction order; an internal call whose target
    is already on the DFS stack is skipped.  A method's flattened expansion is
    memoized when no cut inside it reached above it, and reused only where
    none of the methods it entered sit on the current stack, which keeps
    memoized output identical to plain recursion.
    """
    if graph is None:
        graph = build_cross_reference(program)
    steps = method_steps(program)
    roots = find_root_methods(graph)
    # memo[m] = (start, end, depth of m, methods entered): a slice of the output
    memo: dict[int, tuple[int, int, int, set[int]]] = {}
    memo_hits = 0

    # output slots: api ref, direct invoker, offset, depth (root callees are 1)
    apis: list[int] = []
    invokers: list[int] = []
    offsets: list[int] = []
    depths: list[int] = []
    roots_of: list[int] = []
    bounds = []
    truncated = False

    for root in roots:
        if truncated:
            break
        start = len(apis)
        limit = config.max_len
        stack = [_Frame(root, 0, start)]
        on_stack = {root: 0}
        while stack:
            f = stack[-1]
            body = steps[f.m]
            if f.i >= len(body) or f.truncated:
                stack.pop()
                del on_stack[f.m]
                if (
                    config.memoize
                    and not f.truncated
                    and f.min_cut >= f.depth
                    and len(apis) - f.start <= config.memo_cap
                ):
                    memo[f.m] = (f.start, len(apis), f.depth, f.visited)
                if not stack:
                    truncated = f.truncated
                    break
                parent = stack[-1]
                parent.visited |= f.visited
                parent.min_cut = min(parent.min_cut, f.min_cut)
                parent.truncated |= f.truncated
                continue
            is_call, target, offset = body[f.i]
            f.i += 1
            if not is_call:
                if len(apis) >= limit:
                    f.truncated = True
                    continue
                apis.append(target)
                invokers.append(f.m)
                offsets.append(offset)
                depths.append(f.depth + 1)
                continue
            if target in on_stack:
                f.min_cut = min(f.min_cut, on_stack[target])
                continue
            hit = memo.get(target)
            if hit is not None and hit[3].isdisjoint(on_stack):
                memo_hits += 1
                lo, hi, d0, visited = hit
                if hi - lo > limit - len(apis):
                    hi = lo + limit - len(apis)
                    f.truncated = True
                shift = f.depth + 1 - d0
                apis.extend(apis[lo:hi])
                invokers.extend(invokers[lo:hi])
                offsets.extend(offsets[lo:hi])
                depths.extend(d + shift for d in depths[lo:hi])
                f.visited |= visited
                continue
            stack.append(_Frame(target, f.depth + 1, len(apis)))
            on_stack[target] = f.depth + 1

        roots_of.extend([root] * (len(apis) - start))
        bounds.append((root, start, len(apis)))

    prov = tuple(map(Provenance, invokers, roots_of, offsets))
    depth_sum = sum(depths)
    max_depth = max(depths, default=0)

    refs = program.method_refs
    seq = BehaviorSequence(
        apis=tuple(refs[a].signature for a in apis),
        provenance=tuple(prov),
        bounds=tuple(bounds),
        methods=tuple(program.signature(m) for m in range(len(program.methods))),
        truncated=truncated,
        program_id=program.name,
        label=program.label,
    )
    n = graph.n
    call_sites = sum(len(c) for c in graph.r_from)
    if apis:
        d = depth_sum / len(apis)
    else:
        d = 1.0 if roots else 0.0
    stats = TraversalStats(
        n=n,
        n_avg=call_sites / n if n else 0.0,
        d=d,
        memo_hits=memo_hits,
        emitted_len=len(apis),
        roots=len(roots),
        max_depth=max_depth,
    )
    return seq, stats


def write_sequences(records: Iterable[BehaviorSequence], fh: IO[str]) -> None:
    """Line-delimited JSON, one program per line."""
    for seq in records:
        fh.write(json.dumps(seq.to_record(), sort_keys=True, separators=(",", ":")) + "\n")


def read_sequences(fh: IO[str]) -> list[BehaviorSequence]:
    return [BehaviorSequence.from_record(json.loads(line)) for line in fh if line.strip()]
