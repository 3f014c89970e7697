"""Prefix-code packing of group-index streams and storage accounting.

Group indices are packed with a canonical Huffman code built from realized
frequencies; the packed stream is MSB-first within bytes and zero-padded to
a byte boundary. Storage reports carry both the closed-form budget numbers
and the realized packed sizes so the two can be compared side by side.
"""

import heapq
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DomainError, TruncationError

if TYPE_CHECKING:  # pragma: no cover
    from .config import QuantConfig
    from .pipeline import QuantizedLayer

# Window-table decoding needs 2**max_code_length entries; Huffman depth is
# bounded by n_groups - 1, so this caps the group count at 21.
_MAX_CODE_LEN = 20


def max_partitions(l_i_max: int) -> int:
    """Largest unsalient partition count addressable with l_i_max index bits."""
    if l_i_max < 2:
        raise DomainError(f"index width must be >= 2 bits, got {l_i_max}")
    return 2 ** l_i_max - 3


def index_bits(n_uns: int, p_sal_max: float, p_uns: float, l_i_max: int) -> float:
    """Closed-form estimate of index-stream bits per weight.

    Evaluates sum_eta eta * min(2^eta, n_uns - 2^eta + 1) over eta = 1..l_i_max,
    scaled by the unsalient share, plus l_i_max bits for the salient share.
    The inner min is clamped at 0 where it would go negative.
    """
    if n_uns < 1:
        raise DomainError(f"n_uns must be >= 1, got {n_uns}")
    total = 0.0
    for eta in range(1, l_i_max + 1):
        total += eta * max(0, min(2 ** eta, n_uns - 2 ** eta + 1))
    return total * p_uns + p_sal_max * l_i_max


def _huffman_lengths(freqs: np.ndarray) -> np.ndarray:
    """Huffman code lengths per symbol; zero-frequency symbols get length 0."""
    heap: list[tuple[float, int, object]] = []
    tick = 0
    for sym, f in enumerate(freqs):
        if f > 0:
            heap.append((float(f), tick, sym))
            tick += 1
    heapq.heapify(heap)
    lengths = np.zeros(freqs.size, dtype=np.int64)
    if not heap:
        raise DomainError("codebook needs at least one positive frequency")
    if len(heap) == 1:
        return lengths  # single group: zero-length code, count-only encoding
    while len(heap) > 1:
        f1, _, n1 = heapq.heappop(heap)
        f2, _, n2 = heapq.heappop(heap)
        heapq.heappush(heap, (f1 + f2, tick, (n1, n2)))
        tick += 1

    def walk(node, depth):
        if isinstance(node, int):
            lengths[node] = depth
            return
        walk(node[0], depth + 1)
        walk(node[1], depth + 1)

    walk(heap[0][2], 0)
    return lengths


def _canonical_codes(lengths: np.ndarray) -> np.ndarray:
    """Canonical code values from lengths: sorted by (length, symbol)."""
    codes = np.zeros(lengths.size, dtype=np.int64)
    items = sorted((int(l), s) for s, l in enumerate(lengths) if l > 0)
    code = 0
    prev_len = 0
    for length, sym in items:
        code <<= length - prev_len
        codes[sym] = code
        code += 1
        prev_len = length
    return codes


@dataclass(frozen=True)
class CodeBook:
    """Prefix-free canonical code over group indices 0 .. n_groups-1.

    A length of 0 means the group has no code. When only one group occurs
    at all, every length is 0 and `solo` names that group: its streams are
    encoded by count alone and pack to zero bytes.
    """

    lengths: tuple[int, ...]
    codes: tuple[int, ...]
    solo: int | None = None

    @classmethod
    def from_frequencies(cls, freqs) -> "CodeBook":
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.size == 0 or np.any(freqs < 0) or freqs.sum() <= 0:
            raise DomainError("frequencies must be nonnegative with a positive sum")
        lengths = _huffman_lengths(freqs)
        if lengths.max(initial=0) > _MAX_CODE_LEN:
            raise DomainError(f"code lengths exceed {_MAX_CODE_LEN} bits; "
                              "too many groups or too skewed frequencies")
        solo = int(np.argmax(freqs)) if lengths.max(initial=0) == 0 else None
        return cls(lengths=tuple(int(x) for x in lengths),
                   codes=tuple(int(x) for x in _canonical_codes(lengths)),
                   solo=solo)

    @classmethod
    def from_lengths(cls, lengths, solo: int | None = None) -> "CodeBook":
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.max(initial=0) == 0 and solo is None:
            raise DomainError("all-zero code lengths need an explicit solo group")
        return cls(lengths=tuple(int(x) for x in lengths),
                   codes=tuple(int(x) for x in _canonical_codes(lengths)),
                   solo=solo)

    @classmethod
    def fixed(cls, n_groups: int, width: int) -> "CodeBook":
        """Fixed-width code: every group gets `width` bits, code value = index."""
        if n_groups > 2 ** width:
            raise DomainError(f"{n_groups} groups do not fit in {width}-bit codes")
        return cls.from_lengths([width] * n_groups)

    @classmethod
    def with_default_group(cls, freqs) -> "CodeBook":
        """Escape-style code: the most frequent group costs a single bit and
        every other group pays a 1-bit escape plus a Huffman code over the rest."""
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.size < 2 or np.any(freqs < 0) or freqs.sum() <= 0:
            raise DomainError("default-group codebook needs >= 2 groups")
        default = int(np.argmax(freqs))
        rest = np.delete(freqs, default)
        if rest.sum() <= 0:
            return cls.from_frequencies(freqs)
        rest_lengths = _huffman_lengths(rest)
        lengths = np.zeros(freqs.size, dtype=np.int64)
        other_syms = [s for s in range(freqs.size) if s != default]
        for sym, f, l in zip(other_syms, rest, rest_lengths):
            if f > 0:
                # A lone non-default group needs no subcode beyond the escape bit.
                lengths[sym] = 1 + l if l > 0 else 1
        lengths[default] = 1
        return cls.from_lengths(lengths)

    @property
    def n_groups(self) -> int:
        return len(self.lengths)

    @property
    def max_length(self) -> int:
        return max(self.lengths)

    def is_prefix_free(self) -> bool:
        bits = [(format(c, f"0{l}b") if l else "") for c, l in zip(self.codes, self.lengths)]
        coded = [b for b in bits if b]
        for i, a in enumerate(coded):
            for j, b in enumerate(coded):
                if i != j and b.startswith(a):
                    return False
        return True

    def average_length(self, freqs) -> float:
        freqs = np.asarray(freqs, dtype=np.float64)
        probs = freqs / freqs.sum()
        return float(np.sum(probs * np.asarray(self.lengths)))

    def encoded_bits(self, counts) -> int:
        """Exact payload bits for a stream with the given per-group counts."""
        counts = np.asarray(counts, dtype=np.int64)
        return int(np.sum(counts * np.asarray(self.lengths, dtype=np.int64)))


def pack_stream(symbols, codebook: CodeBook) -> bytes:
    """Pack a symbol stream with the codebook; MSB-first, zero-padded to bytes."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if symbols.size == 0:
        return b""
    if symbols.min() < 0 or symbols.max() >= codebook.n_groups:
        raise DomainError("symbol outside the codebook's group range")
    if codebook.solo is not None:
        if np.any(symbols != codebook.solo):
            raise DomainError("stream contains a group with no code")
        return b""
    lengths = np.asarray(codebook.lengths, dtype=np.int64)
    codes = np.asarray(codebook.codes, dtype=np.int64)
    lens = lengths[symbols]
    if lens.min() == 0:
        raise DomainError("stream contains a group with no code")
    total = int(lens.sum())
    ends = np.cumsum(lens)
    starts = ends - lens
    bits = np.zeros(total, dtype=np.uint8)
    vals = codes[symbols]
    for k in range(int(lens.max())):
        m = lens > k
        shift = lens[m] - 1 - k
        bits[starts[m] + k] = (vals[m] >> shift) & 1
    return np.packbits(bits).tobytes()


def _decode_table(codebook: CodeBook):
    """Window lookup tables: any max_length-bit window -> (symbol, code length)."""
    maxlen = codebook.max_length
    size = 1 << maxlen
    sym = np.zeros(size, dtype=np.int64)
    length = np.zeros(size, dtype=np.int64)
    for s, (c, l) in enumerate(zip(codebook.codes, codebook.lengths)):
        if l == 0:
            continue
        lo = c << (maxlen - l)
        hi = (c + 1) << (maxlen - l)
        sym[lo:hi] = s
        length[lo:hi] = l
    return sym, length


def unpack_stream(data: bytes, codebook: CodeBook, count: int) -> np.ndarray:
    """Decode `count` symbols from a packed stream.

    Decoding is vectorized: every bit offset is pre-resolved to (symbol,
    length) through a window table, and the chain of symbol start offsets is
    materialized by repeated doubling of the jump map.
    """
    if count < 0:
        raise DomainError(f"count must be nonnegative, got {count}")
    out = np.zeros(count, dtype=np.int64)
    if count == 0:
        return out
    if codebook.solo is not None:
        out[:] = codebook.solo
        return out

    maxlen = codebook.max_length
    raw = np.frombuffer(data, dtype=np.uint8)
    nbits = raw.size * 8
    bits = np.zeros(nbits + maxlen, dtype=np.uint8)
    if raw.size:
        bits[:nbits] = np.unpackbits(raw)

    # windows[p] = integer value of the maxlen bits starting at offset p.
    windows = np.zeros(nbits + 1, dtype=np.int64)
    for j in range(maxlen):
        windows = (windows << 1) | bits[j:j + nbits + 1]
    table_sym, table_len = _decode_table(codebook)
    sym_at = table_sym[windows]
    len_at = table_len[windows]

    # Jump map over bit offsets, clamped at the sentinel offset nbits.
    nxt = np.minimum(np.arange(nbits + 1, dtype=np.int64) + len_at, nbits)
    starts = np.empty(count, dtype=np.int64)
    starts[0] = 0
    filled = 1
    jump = nxt
    while filled < count:
        take = min(filled, count - filled)
        starts[filled:filled + take] = jump[starts[:take]]
        filled += take
        if filled < count:
            jump = jump[jump]

    last = int(starts[-1])
    if last + int(len_at[last]) > nbits:
        raise TruncationError(
            f"stream of {nbits} bits ends before symbol {count} is complete")
    out[:] = sym_at[starts]
    return out


def stream_entropy_bits(counts) -> float:
    """Shannon information content of a label stream, in bits."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    probs = counts[counts > 0] / total
    return float(-np.sum(counts[counts > 0] * np.log2(probs)))


@dataclass(frozen=True)
class StorageReport:
    """Bits-per-weight accounting for one layer or an aggregate.

    l_b, l_a, and l_model come from the closed-form budget; l_i is the
    closed-form index estimate while l_i_realized is the packed Huffman
    average, reported side by side because the two disagree by design.
    realized_total_bits covers scales, scalars, and all packed streams
    (byte padding included), excluding fixed per-layer metadata.
    """

    weights: int
    l_b: float
    l_a: float
    l_i: float
    l_model: float
    l_i_realized: float
    realized_total_bits: int
    bits_per_weight: float
    salient_fraction: float
    over_budget: bool


def storage_budget(m: int, n: int, config: "QuantConfig", p_sal_max: float) -> tuple[float, float, float, float]:
    """Closed-form (l_b, l_a, l_i, l_model) for the given dims and config."""
    if m < 1 or n < 1:
        raise DomainError("storage budget needs positive dimensions")
    l_b = 1.0 + (config.n_bits - 1) * p_sal_max
    l_a = (config.n_uns * config.scale_width + config.scale_width * m) / (m * n)
    p_uns = (1.0 - p_sal_max) / config.n_uns
    l_i = index_bits(config.n_uns, p_sal_max, p_uns, config.l_i_max)
    return l_b, l_a, l_i, l_b + l_a


def layer_codebook(layer: "QuantizedLayer") -> CodeBook:
    """Canonical Huffman codebook over a layer's realized group frequencies."""
    counts = np.bincount(layer.labels.ravel(), minlength=layer.config.n_uns + 1)
    return CodeBook.from_frequencies(counts)


def storage_report(layer: "QuantizedLayer", config: "QuantConfig" = None) -> StorageReport:
    """Storage accounting for a quantized layer.

    Realized sizes are derived arithmetically from group counts and code
    lengths, which matches the artifact writer byte for byte.
    """
    cfg = config if config is not None else layer.config
    weights = layer.m * layer.n
    p_cap = layer.p_sal_max
    l_b, l_a, l_i, l_model = storage_budget(layer.m, layer.n, cfg, p_cap)

    counts = np.bincount(layer.labels.ravel(), minlength=cfg.n_uns + 1)
    salient = int(counts[cfg.n_uns])
    unsalient = weights - salient
    book = CodeBook.from_frequencies(counts)
    index_payload = book.encoded_bits(counts)
    index_bytes = (index_payload + 7) // 8
    code_bytes = (salient * cfg.n_bits + 7) // 8
    sign_bytes = (unsalient + 7) // 8
    scale_bits = cfg.scale_width * layer.m + cfg.scale_width * cfg.n_uns
    realized = scale_bits + 8 * (index_bytes + code_bytes + sign_bytes)
    bpw = realized / weights
    l_i_real = 8.0 * index_bytes / weights

    # Padding of the three packed streams is the only legitimate slack. A
    # layer whose realized tail mass exceeds the Gaussian-quantile cap blows
    # the payload allowance and gets flagged rather than silently accepted.
    budget = l_model + l_i_real + (3 * 7) / weights
    return StorageReport(weights=weights, l_b=l_b, l_a=l_a, l_i=l_i,
                         l_model=l_model, l_i_realized=l_i_real,
                         realized_total_bits=int(realized),
                         bits_per_weight=bpw,
                         salient_fraction=salient / weights,
                         over_budget=bool(bpw > budget + 1e-12))


def aggregate_reports(reports: list[StorageReport]) -> StorageReport:
    """Size-weighted aggregate of per-layer reports."""
    if not reports:
        raise DomainError("nothing to aggregate")
    weights = sum(r.weights for r in reports)
    wmean = lambda attr: sum(getattr(r, attr) * r.weights for r in reports) / weights
    realized = sum(r.realized_total_bits for r in reports)
    return StorageReport(weights=weights,
                         l_b=wmean("l_b"), l_a=wmean("l_a"), l_i=wmean("l_i"),
                         l_model=wmean("l_model"), l_i_realized=wmean("l_i_realized"),
                         realized_total_bits=realized,
                         bits_per_weight=realized / weights,
                         salient_fraction=wmean("salient_fraction"),
                         over_budget=any(r.over_budget for r in reports))
