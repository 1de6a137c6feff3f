"""Canonical Huffman coding of quantization codes and the container format.

Tables are canonical: only (symbol, length) pairs are stored; codes are
reassigned by sorting on (length, symbol) with sequential values. Tree
construction breaks count ties deterministically by (leaf before internal,
symbol or creation order), so identical histograms always serialize to
identical bytes.

Bit packing is big-endian within bytes; every multi-byte integer anywhere
in the container is little-endian. A single-symbol alphabet encodes to an
empty payload: the symbol count alone reconstructs the stream, the table
still records length 1, and the declared bit count is 0.

Container layout ("FLRZ"): a fixed header (magic, version, flags, dims,
eb_rel, value range, block size, radius, taps id, section count), a section
table of (id, byte length) entries, then the section bodies in id order:
1 anchors (raw float32), 2 outliers (u64 count + (u64 canonical index,
f32 value) pairs), 3 Huffman table, 4 payload (u64 bit count + packed
bytes), 5 network parameters (u32 count + float32 values; count 0 means
predictor-only). The value range rides in the header so the decompressor
recomputes eb_abs = eb_rel * (vmax - vmin) bit-exactly.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, StreamCorruptError

MAGIC = b"FLRZ"
FORMAT_VERSION = 1
MAX_CODE_LEN = 32

SEC_ANCHORS = 1
SEC_OUTLIERS = 2
SEC_TABLE = 3
SEC_PAYLOAD = 4
SEC_PARAMS = 5
_SECTION_IDS = (SEC_ANCHORS, SEC_OUTLIERS, SEC_TABLE, SEC_PAYLOAD, SEC_PARAMS)


@dataclass(frozen=True)
class HuffmanTable:
    """Canonical code table: symbols sorted ascending with their lengths."""

    symbols: np.ndarray  # uint32, strictly ascending
    lengths: np.ndarray  # uint8, in [1, 32]

    def __post_init__(self):
        sym = np.asarray(self.symbols)
        lens = np.asarray(self.lengths)
        if sym.size == 0 or sym.size != lens.size:
            raise DataFormatError("table must pair every symbol with a length")
        if sym.size > 1 and np.any(np.diff(sym.astype(np.int64)) <= 0):
            raise DataFormatError("table symbols must be strictly ascending")
        if np.any(lens < 1) or np.any(lens > MAX_CODE_LEN):
            raise DataFormatError(f"code lengths must be in [1, {MAX_CODE_LEN}]")
        # integer Kraft check: sum 2^(32-len) must not exceed 2^32
        kraft = int(np.sum(1 << (MAX_CODE_LEN - lens.astype(np.int64))))
        if kraft > 1 << MAX_CODE_LEN:
            raise DataFormatError("code lengths violate the Kraft inequality")


def build_table(histogram: dict) -> HuffmanTable:
    """Optimal prefix code for the histogram, in canonical form.

    Ties in the merge order break on (count, leaf-before-internal, symbol or
    creation order) so the result is deterministic.
    """
    if not histogram:
        raise DataFormatError("cannot build a code table from an empty histogram")
    for s, c in histogram.items():
        if c < 1:
            raise DataFormatError(f"histogram count for symbol {s} must be >= 1")
        if not 0 <= int(s) < 1 << 32:
            raise DataFormatError(f"symbol {s} outside the u32 alphabet")
    if len(histogram) == 1:
        (sym,) = histogram
        return HuffmanTable(symbols=np.array([sym], dtype=np.uint32),
                            lengths=np.array([1], dtype=np.uint8))

    # heap items: (count, tier, key, node id); leaves tie-break by symbol
    # before internals, internals by creation order
    heap = []
    children: list[tuple[int, int] | None] = []
    leaf_sym: list[int] = []
    for sym in sorted(histogram):
        node = len(children)
        children.append(None)
        leaf_sym.append(int(sym))
        heap.append((int(histogram[sym]), 0, int(sym), node))
    heapq.heapify(heap)
    seq = 0
    while len(heap) > 1:
        c1, _, _, n1 = heapq.heappop(heap)
        c2, _, _, n2 = heapq.heappop(heap)
        node = len(children)
        children.append((n1, n2))
        leaf_sym.append(-1)
        heapq.heappush(heap, (c1 + c2, 1, seq, node))
        seq += 1

    depths = {}
    stack = [(heap[0][3], 0)]
    while stack:
        node, d = stack.pop()
        kids = children[node]
        if kids is None:
            depths[leaf_sym[node]] = d
        else:
            stack.append((kids[0], d + 1))
            stack.append((kids[1], d + 1))

    symbols = np.array(sorted(depths), dtype=np.uint32)
    lengths = np.array([depths[int(s)] for s in symbols], dtype=np.uint8)
    if int(lengths.max()) > MAX_CODE_LEN:
        raise DataFormatError(
            f"histogram too skewed: code length {int(lengths.max())} exceeds "
            f"{MAX_CODE_LEN}")
    return HuffmanTable(symbols=symbols, lengths=lengths)


def table_for(codes: np.ndarray) -> HuffmanTable:
    """Table for the observed symbols of a code array."""
    syms, counts = np.unique(np.asarray(codes), return_counts=True)
    return build_table(dict(zip(syms.tolist(), counts.tolist())))


def _canonical_order(table: HuffmanTable) -> np.ndarray:
    """Permutation of table entries sorted by (length, symbol)."""
    return np.lexsort((table.symbols, table.lengths))


def _canonical_codes(table: HuffmanTable) -> np.ndarray:
    """Code values aligned with table.symbols order."""
    order = _canonical_order(table)
    lens = table.lengths.astype(np.int64)[order]
    codes = np.zeros(len(order), dtype=np.uint64)
    code = 0
    prev = int(lens[0])
    for i in range(len(order)):
        code <<= int(lens[i]) - prev
        prev = int(lens[i])
        codes[i] = code
        code += 1
    out = np.zeros_like(codes)
    out[order] = codes
    return out


def encode(codes: np.ndarray, table: HuffmanTable) -> tuple[bytes, int]:
    """Pack symbols into a big-endian-within-byte bit stream.

    Returns (payload, bit count). A single-symbol table yields zero bits.
    """
    seq = np.asarray(codes).astype(np.int64)
    if seq.size == 0:
        return b"", 0
    sym = table.symbols.astype(np.int64)
    idx = np.searchsorted(sym, seq)
    bad = (idx >= sym.size) | (sym[np.minimum(idx, sym.size - 1)] != seq)
    if bad.any():
        missing = int(seq[bad][0])
        raise DataFormatError(f"symbol {missing} not present in the code table")
    if sym.size == 1:
        return b"", 0
    lens = table.lengths.astype(np.int64)[idx]
    ends = np.cumsum(lens)
    starts = ends - lens
    total = int(ends[-1])
    cvals = _canonical_codes(table)[idx]
    bits = np.zeros(total, dtype=np.uint8)
    for bp in range(int(lens.max())):
        m = lens > bp
        shift = (lens[m] - 1 - bp).astype(np.uint64)
        bits[starts[m] + bp] = ((cvals[m] >> shift) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits).tobytes(), total


def _decode_tables(table: HuffmanTable):
    """first_code/first_index/count keyed by length, plus canonical symbols."""
    order = _canonical_order(table)
    lens = table.lengths.astype(np.int64)[order]
    syms = table.symbols.astype(np.int64)[order]
    cvals = _canonical_codes(table)[order].astype(np.int64)
    first_code = {}
    first_idx = {}
    counts = {}
    for i in range(len(order)):
        L = int(lens[i])
        if L not in first_code:
            first_code[L] = int(cvals[i])
            first_idx[L] = i
            counts[L] = 0
        counts[L] += 1
    return first_code, first_idx, counts, syms


_LUT_BITS = 12


def decode(payload: bytes, table: HuffmanTable, n: int, nbits: int) -> np.ndarray:
    """Decode exactly n symbols, consuming exactly nbits payload bits."""
    if nbits < 0 or len(payload) != -(-nbits // 8):
        raise StreamCorruptError(
            f"payload is {len(payload)} bytes but declares {nbits} bits",
            offset=8 * len(payload))
    if n == 0:
        if nbits != 0:
            raise StreamCorruptError("payload bits left over", offset=0)
        return np.empty(0, dtype=np.int64)
    if table.symbols.size == 1:
        if nbits != 0:
            raise StreamCorruptError(
                "single-symbol stream must carry an empty payload", offset=0)
        return np.full(n, int(table.symbols[0]), dtype=np.int64)

    first_code, first_idx, counts, canon_syms = _decode_tables(table)
    present = sorted(first_code)
    maxlen = present[-1]
    k = min(maxlen, _LUT_BITS)
    lut_sym = np.zeros(1 << k, dtype=np.int64)
    lut_len = np.zeros(1 << k, dtype=np.int16)
    for w in range(1 << k):
        for L in present:
            if L > k:
                break
            c = w >> (k - L)
            rel = c - first_code[L]
            if 0 <= rel < counts[L]:
                lut_sym[w] = canon_syms[first_idx[L] + rel]
                lut_len[w] = L
                break

    out = np.empty(n, dtype=np.int64)
    acc = 0
    nacc = 0
    bytepos = 0
    consumed = 0
    data = payload
    for i in range(n):
        while nacc < maxlen and bytepos < len(data):
            acc = (acc << 8) | data[bytepos]
            bytepos += 1
            nacc += 8
        avail = min(nacc, nbits - consumed)
        if avail <= 0:
            raise StreamCorruptError("payload exhausted mid symbol",
                                     offset=consumed)
        if nacc >= k:
            w = (acc >> (nacc - k)) & ((1 << k) - 1)
        else:
            w = (acc << (k - nacc)) & ((1 << k) - 1)
        L = int(lut_len[w])
        if 0 < L <= avail:
            out[i] = lut_sym[w]
        else:
            sym = None
            for L2 in present:
                if L2 <= k:
                    continue
                if L2 > avail:
                    break
                c = (acc >> (nacc - L2)) & ((1 << L2) - 1)
                rel = c - first_code[L2]
                if 0 <= rel < counts[L2]:
                    sym = int(canon_syms[first_idx[L2] + rel])
                    L = L2
                    break
            if sym is None:
                raise StreamCorruptError(
                    "invalid prefix or truncated code", offset=consumed)
            out[i] = sym
        nacc -= L
        acc &= (1 << nacc) - 1
        consumed += L
    if consumed != nbits:
        raise StreamCorruptError(
            f"decoded {n} symbols at bit {consumed} but payload declares "
            f"{nbits} bits", offset=consumed)
    return out


def serialize_table(table: HuffmanTable) -> bytes:
    parts = [struct.pack("<I", table.symbols.size)]
    for s, l in zip(table.symbols.tolist(), table.lengths.tolist()):
        parts.append(struct.pack("<IB", s, l))
    return b"".join(parts)


def parse_table(blob: bytes) -> HuffmanTable:
    if len(blob) < 4:
        raise StreamCorruptError("table section shorter than its count field",
                                 offset=len(blob))
    (count,) = struct.unpack_from("<I", blob, 0)
    if len(blob) != 4 + 5 * count or count == 0:
        raise StreamCorruptError(
            f"table section is {len(blob)} bytes for {count} entries",
            offset=4)
    symbols = np.empty(count, dtype=np.uint32)
    lengths = np.empty(count, dtype=np.uint8)
    pos = 4
    for i in range(count):
        s, l = struct.unpack_from("<IB", blob, pos)
        symbols[i] = s
        lengths[i] = l
        pos += 5
    try:
        return HuffmanTable(symbols=symbols, lengths=lengths)
    except DataFormatError as exc:
        raise StreamCorruptError(f"bad code table: {exc}", offset=4) from exc


@dataclass(frozen=True)
class StreamHeader:
    dims: tuple[int, int, int]
    eb_rel: float
    value_range: tuple[float, float]
    block_size: int
    radius: int
    taps_id: int
    flags: int = 0


_HDR = struct.Struct("<4sHH3IdddIIB3xI")
_SEC = struct.Struct("<B3xQ")
_OUTLIER_DT = np.dtype([("idx", "<u8"), ("val", "<f4")])


def pack_stream(header: StreamHeader, anchors: np.ndarray,
                outlier_idx: np.ndarray, outlier_val: np.ndarray,
                table: HuffmanTable, payload: bytes, nbits: int,
                params: np.ndarray) -> bytes:
    """Assemble the container; see the module docstring for the layout."""
    if outlier_idx.size != outlier_val.size:
        raise DataFormatError("outlier index/value arrays differ in length")
    rec = np.empty(outlier_idx.size, dtype=_OUTLIER_DT)
    rec["idx"] = outlier_idx
    rec["val"] = outlier_val
    sections = {
        SEC_ANCHORS: np.asarray(anchors, dtype="<f4").tobytes(),
        SEC_OUTLIERS: struct.pack("<Q", outlier_idx.size) + rec.tobytes(),
        SEC_TABLE: serialize_table(table),
        SEC_PAYLOAD: struct.pack("<Q", nbits) + payload,
        SEC_PARAMS: struct.pack("<I", np.asarray(params).size)
                    + np.asarray(params, dtype="<f4").tobytes(),
    }
    out = [_HDR.pack(
        MAGIC, FORMAT_VERSION, header.flags,
        header.dims[0], header.dims[1], header.dims[2],
        header.eb_rel, header.value_range[0], header.value_range[1],
        header.block_size, header.radius, header.taps_id,
        len(_SECTION_IDS),
    )]
    for sid in _SECTION_IDS:
        out.append(_SEC.pack(sid, len(sections[sid])))
    for sid in _SECTION_IDS:
        out.append(sections[sid])
    return b"".join(out)


def unpack_stream(blob: bytes):
    """Inverse of pack_stream; returns
    (header, anchors, outlier_idx, outlier_val, table, payload, nbits, params).
    """
    if len(blob) < _HDR.size:
        raise StreamCorruptError("stream shorter than its header",
                                 offset=len(blob))
    (magic, version, flags, nx, ny, nz, eb_rel, vmin, vmax,
     block_size, radius, taps_id, nsec) = _HDR.unpack_from(blob, 0)
    if magic != MAGIC:
        raise StreamCorruptError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported stream version {version}")
    if nsec != len(_SECTION_IDS):
        raise StreamCorruptError(f"expected {len(_SECTION_IDS)} sections, "
                                 f"header declares {nsec}", offset=_HDR.size - 4)
    pos = _HDR.size
    lengths = {}
    for want in _SECTION_IDS:
        if pos + _SEC.size > len(blob):
            raise StreamCorruptError("section table truncated", offset=pos)
        sid, length = _SEC.unpack_from(blob, pos)
        if sid != want:
            raise StreamCorruptError(f"section id {sid} where {want} expected",
                                     offset=pos)
        lengths[sid] = length
        pos += _SEC.size
    if pos + sum(lengths.values()) != len(blob):
        raise StreamCorruptError(
            f"stream is {len(blob)} bytes; sections and header require "
            f"{pos + sum(lengths.values())}", offset=pos)
    bodies = {}
    for sid in _SECTION_IDS:
        bodies[sid] = blob[pos:pos + lengths[sid]]
        pos += lengths[sid]

    if lengths[SEC_ANCHORS] % 4:
        raise StreamCorruptError("anchor section not a float32 array",
                                 offset=lengths[SEC_ANCHORS])
    anchors = np.frombuffer(bodies[SEC_ANCHORS], dtype="<f4").copy()

    ob = bodies[SEC_OUTLIERS]
    if len(ob) < 8:
        raise StreamCorruptError("outlier section shorter than its count",
                                 offset=len(ob))
    (ocount,) = struct.unpack_from("<Q", ob, 0)
    if len(ob) != 8 + ocount * _OUTLIER_DT.itemsize:
        raise StreamCorruptError(
            f"outlier section is {len(ob)} bytes for {ocount} entries",
            offset=8)
    orec = np.frombuffer(ob, dtype=_OUTLIER_DT, count=ocount, offset=8)
    outlier_idx = orec["idx"].astype(np.uint64)
    outlier_val = orec["val"].astype(np.float32)

    table = parse_table(bodies[SEC_TABLE])

    pb = bodies[SEC_PAYLOAD]
    if len(pb) < 8:
        raise StreamCorruptError("payload section shorter than its bit count",
                                 offset=len(pb))
    (nbits,) = struct.unpack_from("<Q", pb, 0)
    payload = pb[8:]
    if len(payload) != -(-nbits // 8):
        raise StreamCorruptError(
            f"payload carries {len(payload)} bytes but declares {nbits} bits",
            offset=8)

    prb = bodies[SEC_PARAMS]
    if len(prb) < 4:
        raise StreamCorruptError("params section shorter than its count",
                                 offset=len(prb))
    (pcount,) = struct.unpack_from("<I", prb, 0)
    if len(prb) != 4 + 4 * pcount:
        raise StreamCorruptError(
            f"params section is {len(prb)} bytes for {pcount} scalars",
            offset=4)
    params = np.frombuffer(prb, dtype="<f4", count=pcount, offset=4).copy()

    header = StreamHeader(
        dims=(nx, ny, nz), eb_rel=eb_rel, value_range=(vmin, vmax),
        block_size=block_size, radius=radius, taps_id=taps_id, flags=flags,
    )
    return (header, anchors, outlier_idx, outlier_val, table,
            payload, nbits, params)
