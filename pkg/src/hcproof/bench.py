"""Size accounting against a static Huffman baseline.

Structural compression is measured with ``size_of`` on the grounded DLDS
before and after compression; the Huffman baseline is measured in bytes on
the canonical JSON serialization of the input derivation.  Both numbers are
reported side by side.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import statistics
import time
from dataclasses import astuple, dataclass, fields
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .compression import compress
from .dlds import DLDS, GroundedDLDS, ground, size_of, to_json_obj
from .flow_verify import verify_derivation
from .generators import (
    Digraph,
    fibonacci_premises,
    gen_fibonacci_proof,
    gen_nonhamiltonian_proof,
    open_assumptions,
)
from .nd_proof import TreeDerivation, prepare, proof_to_json_obj

CSV_COLUMNS = (
    "family", "param", "orig_bytes", "hc_size", "hc_ratio",
    "huffman_bytes", "huffman_ratio", "compress_ms", "verify_ms",
)


class BenchError(RuntimeError):
    pass


def serialize_proof(obj) -> bytes:
    """Canonical compact JSON: sorted keys, no whitespace."""
    if isinstance(obj, TreeDerivation):
        doc = proof_to_json_obj(obj)
    elif isinstance(obj, (DLDS, GroundedDLDS)):
        doc = to_json_obj(obj)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


# -- Huffman -------------------------------------------------------------------

def huffman_code_lengths(data: bytes) -> Dict[int, int]:
    """Code length per byte value for a static Huffman code over ``data``."""
    freq: Dict[int, int] = {}
    for b in data:
        freq[b] = freq.get(b, 0) + 1
    if len(freq) == 1:
        return {next(iter(freq)): 1}
    # heap items: (weight, tiebreak, symbols in the subtree)
    heap: List[Tuple[int, int, Tuple[int, ...]]] = [(w, s, (s,)) for s, w in sorted(freq.items())]
    heapq.heapify(heap)
    lengths = {s: 0 for s in freq}
    tick = 256
    while len(heap) > 1:
        w1, _, a = heapq.heappop(heap)
        w2, _, b = heapq.heappop(heap)
        for s in a + b:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, tick, a + b))
        tick += 1
    return lengths


def canonical_codes(lengths: Dict[int, int]) -> Dict[int, Tuple[int, int]]:
    """Canonical (code, length) per symbol: ordered by length, then symbol."""
    codes = {}
    code = 0
    prev = 0
    for sym, ln in sorted(lengths.items(), key=lambda kv: (kv[1], kv[0])):
        code <<= ln - prev
        codes[sym] = (code, ln)
        code += 1
        prev = ln
    return codes


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        low = n & 0x7F
        n >>= 7
        out.append(low | (0x80 if n else 0))
        if not n:
            return bytes(out)


def _read_varint(blob: bytes, i: int) -> Tuple[int, int]:
    n = shift = 0
    while True:
        byte = blob[i]
        n |= (byte & 0x7F) << shift
        i += 1
        if not byte & 0x80:
            return n, i
        shift += 7


def huffman_encode(data: bytes) -> bytes:
    """Self-describing encoding: header, code-length table, packed payload.

    The header is the input length as a varint and the number of distinct
    symbols minus one.  The table lists the symbols in increasing order and
    then their code lengths.  A stream of one repeated symbol carries no
    lengths and no payload.
    """
    if not data:
        raise ValueError("cannot Huffman-encode empty input")
    lengths = huffman_code_lengths(data)
    syms = sorted(lengths)
    out = bytearray(_varint(len(data)))
    out.append(len(syms) - 1)
    out += bytes(syms)
    if len(syms) == 1:
        return bytes(out)
    out += bytes(lengths[s] for s in syms)
    codes = canonical_codes(lengths)
    acc = 0
    nbits = 0
    for b in data:
        code, ln = codes[b]
        acc = (acc << ln) | code
        nbits += ln
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
        acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def huffman_decode(blob: bytes) -> bytes:
    n, i = _read_varint(blob, 0)
    k = blob[i] + 1
    syms = blob[i + 1:i + 1 + k]
    if k == 1:
        return bytes(syms) * n
    lens = blob[i + 1 + k:i + 1 + 2 * k]
    lookup = {v: s for s, v in canonical_codes(dict(zip(syms, lens))).items()}
    out = bytearray()
    code = ln = 0
    for byte in blob[i + 1 + 2 * k:]:
        for j in range(7, -1, -1):
            code = (code << 1) | ((byte >> j) & 1)
            ln += 1
            sym = lookup.get((code, ln))
            if sym is not None:
                out.append(sym)
                code = ln = 0
                if len(out) == n:
                    return bytes(out)
    if len(out) != n:
        raise ValueError("truncated Huffman stream")
    return bytes(out)


def huffman_compress(data: bytes) -> dict:
    blob = huffman_encode(data)
    return {"bytes": len(blob), "ratio": len(blob) / len(data)}


# -- suite ---------------------------------------------------------------------------

@dataclass
class BenchRecord:
    family: str
    param: int
    orig_bytes: int
    hc_size: int
    hc_ratio: float
    huffman_bytes: int
    huffman_ratio: float
    compress_ms: float
    verify_ms: float


def _median_ms(fn: Callable[[], object], repeats: int):
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(times), result


def star_digraph(n: int) -> Digraph:
    """Vertex 1 points at every other vertex; not Hamiltonian once n >= 3."""
    return Digraph(n, frozenset((1, j) for j in range(2, n + 1)))


def _instance(family: str, param: int):
    if family == "fib":
        return gen_fibonacci_proof(param), [str(f) for f in fibonacci_premises(param)]
    if family == "nonham":
        t = gen_nonhamiltonian_proof(star_digraph(param))
        return t, sorted(str(f) for f in open_assumptions(t))
    raise BenchError(f"unknown family {family!r}")


def bench_row(family: str, param: int, repeats: int = 3) -> BenchRecord:
    tree, delta = _instance(family, param)
    raw = serialize_proof(tree)
    huff = huffman_compress(raw)
    d = prepare(tree)
    orig_size = size_of(ground(d))
    compress_ms, c = _median_ms(lambda: compress(d), repeats)
    g = ground(c)
    verify_ms, report = _median_ms(lambda: verify_derivation(g, delta), repeats)
    if not report["valid"]:
        raise BenchError(f"{family} {param}: compressed proof does not verify: {report['diagnostics']}")
    hc_size = size_of(g)
    return BenchRecord(family, param, len(raw), hc_size, hc_size / orig_size,
                       huff["bytes"], huff["ratio"], compress_ms, verify_ms)


def bench_suite(family: str, params: Iterable[int], repeats: int = 3,
                progress: Optional[Callable[[BenchRecord], None]] = None) -> List[BenchRecord]:
    rows = []
    for p in params:
        row = bench_row(family, p, repeats)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def records_to_csv(rows: Iterable[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([f"{x:.6g}" if isinstance(x, float) else x for x in astuple(r)])
    return buf.getvalue()


def crossover(rows: List[BenchRecord]) -> Optional[int]:
    """Smallest param from which hc_ratio stays below huffman_ratio and never rises."""
    rows = sorted(rows, key=lambda r: r.param)
    for i, r in enumerate(rows):
        tail = rows[i:]
        if all(x.hc_ratio < x.huffman_ratio for x in tail) and all(
            b.hc_ratio <= a.hc_ratio for a, b in zip(tail, tail[1:])
        ):
            return r.param
    return None


assert tuple(f.name for f in fields(BenchRecord)) == CSV_COLUMNS
