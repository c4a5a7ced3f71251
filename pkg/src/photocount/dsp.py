"""Streaming overlap-add convolution and moment accumulation.

One forward FFT per input block is shared by every kernel in the bank.
The moment pass is fused into a compiled loop so no quadrature stream is
ever materialized for long traces. Each segment drops ``(n_taps - 1)/2``
samples at both ends; everything else equals direct convolution.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numba
import numpy as np

from .errors import AlignmentError, ConfigurationError, ProvenanceError
from .kernels import DiscreteKernel

try:
    import pyfftw

    _HAVE_FFTW = True
except ImportError:  # pragma: no cover - exercised only without pyfftw
    _HAVE_FFTW = False

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1 << 12
DEFAULT_SEGMENT_LENGTH = 1 << 22
WORKERS_ENV = "PHOTOCOUNT_WORKERS"

# ---------------------------------------------------------------------------
# binary trace format
# ---------------------------------------------------------------------------

MAGIC = b"PHCTRACE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sHHIddQQ16x")
HEADER_SIZE = HEADER.size  # 64


@dataclass
class TraceSegment:
    """Contiguous block of digitizer samples.

    ``samples * scale`` is the voltage in volts.
    """

    samples: np.ndarray
    sample_rate: float
    scale: float = 1.0
    sequence_id: int = 0
    bit_depth: int = 16

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ConfigurationError("trace samples must be one-dimensional")
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive")
        if not self.sample_rate > 0:
            raise ConfigurationError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def volts(self) -> np.ndarray:
        return self.samples.astype(np.float64) * self.scale

    def split(self, segment_length: int):
        """Yield consecutive sub-segments sharing this segment's metadata."""
        n = len(self)
        for i, start in enumerate(range(0, n, segment_length)):
            yield TraceSegment(self.samples[start:start + segment_length], self.sample_rate,
                               self.scale, (self.sequence_id << 32) | i, self.bit_depth)


def write_trace(path, segment: TraceSegment) -> None:
    """Write ``segment`` as int16 codes behind the fixed 64-byte header."""
    codes = np.asarray(segment.samples)
    if codes.dtype != np.int16:
        if not np.issubdtype(codes.dtype, np.integer):
            raise ConfigurationError("trace files store integer ADC codes")
        codes = codes.astype(np.int16)
    head = HEADER.pack(MAGIC, FORMAT_VERSION, segment.bit_depth, 0, float(segment.sample_rate),
                       float(segment.scale), codes.size, segment.sequence_id)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(codes.astype("<i2", copy=False).tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) != HEADER_SIZE:
        raise OSError(f"{path}: truncated header")
    magic, version, bits, _, rate, scale, count, seq = HEADER.unpack(raw)
    if magic != MAGIC:
        raise OSError(f"{path}: not a trace file")
    if version != FORMAT_VERSION:
        raise OSError(f"{path}: unsupported format version {version}")
    size = os.path.getsize(path)
    if size != HEADER_SIZE + 2 * count:
        raise OSError(f"{path}: size {size} does not match sample count {count}")
    return {"version": version, "bit_depth": bits, "sample_rate": rate, "scale": scale,
            "sample_count": count, "sequence_id": seq}


def read_trace(path, mmap: bool = True) -> TraceSegment:
    hdr = read_header(path)
    if mmap:
        data = np.memmap(path, dtype="<i2", mode="r", offset=HEADER_SIZE, shape=(hdr["sample_count"],))
    else:
        data = np.fromfile(path, dtype="<i2", offset=HEADER_SIZE)
    return TraceSegment(data, hdr["sample_rate"], hdr["scale"], hdr["sequence_id"], hdr["bit_depth"])


def file_sha256(path, chunk: int = 1 << 22) -> str:
    hsh = hashlib.sha256()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            hsh.update(block)
    return hsh.hexdigest()


# ---------------------------------------------------------------------------
# moment layout
# ---------------------------------------------------------------------------


def moment_names(n_streams: int, cross: bool = True) -> list[str]:
    """Column names of the per-block moment rows."""
    names = [f"s{i}" for i in range(n_streams)]
    names += [f"s{i}^2" for i in range(n_streams)]
    names += [f"s{i}^4" for i in range(n_streams)]
    if not cross:
        return names
    for i, j in combinations(range(n_streams), 2):
        names.append(f"s{i}s{j}")
    for i, j in combinations(range(n_streams), 2):
        names.append(f"s{i}^2s{j}^2")
    return names


@numba.njit(cache=True, nogil=True, fastmath=True)
def _stream_sums(a, start, stop):
    s1 = 0.0
    s2 = 0.0
    s4 = 0.0
    for t in range(start, stop):
        v = a[t]
        q = v * v
        s1 += v
        s2 += q
        s4 += q * q
    return s1, s2, s4


@numba.njit(cache=True, nogil=True, fastmath=True)
def _pair_sums(a, b, start, stop):
    c11 = 0.0
    c22 = 0.0
    for t in range(start, stop):
        u = a[t]
        w = b[t]
        c11 += u * w
        c22 += (u * u) * (w * w)
    return c11, c22


@numba.njit(cache=True, nogil=True)
def _block_moments(y, start, stop, out):
    """Per-stream and pairwise sums over ``y[:, start:stop]`` into ``out``."""
    s = y.shape[0]
    n_pairs = s * (s - 1) // 2
    for i in range(s):
        s1, s2, s4 = _stream_sums(y[i], start, stop)
        out[i] = s1
        out[s + i] = s2
        out[2 * s + i] = s4
    if out.size == 3 * s:
        return
    p = 0
    for i in range(s):
        for j in range(i + 1, s):
            c11, c22 = _pair_sums(y[i], y[j], start, stop)
            out[3 * s + p] = c11
            out[3 * s + n_pairs + p] = c22
            p += 1


_EMPTY_ROW = np.zeros(1)


@numba.njit(cache=True, nogil=True)
def _ola_step(y, tail, hop, k1, lo, hi, row, moments):
    """Add the previous tail, save the new one, and optionally reduce."""
    for i in range(y.shape[0]):
        for t in range(k1):
            y[i, t] += tail[i, t]
            tail[i, t] = y[i, hop + t]
    if moments:
        _block_moments(y, lo, hi, row)


# ---------------------------------------------------------------------------
# accumulator
# ---------------------------------------------------------------------------


@dataclass
class MomentAccumulator:
    """Block-wise sums of quadrature moments.

    Every processed block contributes one row of sums keyed by its position
    ``(segment key, block index)``. Totals are exactly rounded sums over
    rows, so they do not depend on the order in which workers finish.
    """

    n_streams: int
    provenance: str = ""
    edge_discard: int = 0
    cross: bool = True
    keys: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return moment_names(self.n_streams, self.cross)

    @property
    def count(self) -> int:
        return int(sum(self.counts))

    def add_block(self, key, count: int, row) -> None:
        row = np.asarray(row, dtype=np.float64)
        if row.size != len(self.names):
            raise ConfigurationError("moment row has the wrong layout")
        if not np.all(np.isfinite(row)):
            raise ConfigurationError("non-finite moment sums")
        self.keys.append(tuple(key))
        self.counts.append(int(count))
        self.rows.append(row)

    def _ordered(self):
        order = sorted(range(len(self.keys)), key=self.keys.__getitem__)
        counts = np.array([self.counts[i] for i in order], dtype=np.int64)
        rows = np.array([self.rows[i] for i in order]).reshape(len(order), len(self.names))
        return counts, rows

    def sums(self) -> dict:
        _, rows = self._ordered()
        return {name: math.fsum(rows[:, k]) for k, name in enumerate(self.names)}

    def means(self) -> dict:
        c = self.count
        if c == 0:
            raise ConfigurationError("empty accumulator")
        return {k: v / c for k, v in self.sums().items()}

    def groups(self, n_groups: int = 32) -> tuple[np.ndarray, np.ndarray]:
        """Contiguous super-block counts and sums (at most ``n_groups``)."""
        counts, rows = self._ordered()
        g = min(n_groups, len(counts))
        if g == 0:
            raise ConfigurationError("empty accumulator")
        bounds = np.linspace(0, len(counts), g + 1).round().astype(int)
        gc = np.array([counts[a:b].sum() for a, b in zip(bounds[:-1], bounds[1:])])
        gs = np.array([[math.fsum(rows[a:b, k]) for k in range(rows.shape[1])]
                       for a, b in zip(bounds[:-1], bounds[1:])])
        return gc, gs

    def copy(self) -> "MomentAccumulator":
        return MomentAccumulator(self.n_streams, self.provenance, self.edge_discard, self.cross,
                                 list(self.keys), list(self.counts), list(self.rows))


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Union of the block rows of two accumulators built with the same kernels."""
    if a.n_streams != b.n_streams or a.cross != b.cross:
        raise ProvenanceError("accumulators have different moment layouts")
    if a.provenance and b.provenance and a.provenance != b.provenance:
        raise ProvenanceError("accumulators were built with different kernels")
    if a.count and b.count and a.edge_discard != b.edge_discard:
        raise ProvenanceError("accumulators use different edge policies")
    dup = set(a.keys) & set(b.keys)
    if dup:
        raise ProvenanceError(f"block {min(dup)} counted twice")
    out = a.copy()
    out.provenance = a.provenance or b.provenance
    out.edge_discard = a.edge_discard if a.count else b.edge_discard
    out.keys += b.keys
    out.counts += b.counts
    out.rows += b.rows
    return out


def accumulate(streams, acc: MomentAccumulator | None = None, *, key=(0,),
               block: int = DEFAULT_BLOCK_SIZE, valid=None, cross: bool = True) -> MomentAccumulator:
    """Add moments of already computed quadrature streams.

    ``streams`` is a sequence of equal-length arrays (for example ``x`` or
    ``x, p`` or ``x1, p1, x2, p2``). ``valid`` is an optional
    ``(start, stop)`` slice excluding edge samples.
    """
    arrs = [np.asarray(s, dtype=np.float64) for s in streams]
    if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
        raise AlignmentError("quadrature streams must be aligned 1-d arrays of equal length")
    y = np.ascontiguousarray(np.vstack(arrs))
    if acc is None:
        acc = MomentAccumulator(y.shape[0], cross=cross)
    elif acc.n_streams != y.shape[0]:
        raise AlignmentError("stream count does not match accumulator")
    start, stop = valid if valid is not None else (0, y.shape[1])
    row = np.empty(len(acc.names))
    for b, lo in enumerate(range(start, stop, block)):
        hi = min(lo + block, stop)
        _block_moments(y, lo, hi, row)
        acc.add_block(tuple(key) + (b,), hi - lo, row.copy())
    return acc


# ---------------------------------------------------------------------------
# overlap-add engine
# ---------------------------------------------------------------------------


def bank_provenance(kernels) -> str:
    return "+".join(k.kernel_id for k in kernels)


class OverlapAddEngine:
    """Overlap-add filter bank over one or more equal-length kernels.

    Parameters
    ----------
    kernels : sequence of DiscreteKernel
        All kernels must share sample rate and tap count.
    block_size : int
        FFT length; each block consumes ``block_size - n_taps + 1`` new samples.
    """

    def __init__(self, kernels, block_size: int = DEFAULT_BLOCK_SIZE, use_fftw: bool | None = None,
                 planner: str = "FFTW_MEASURE", cross: bool = True):
        kernels = list(kernels) if not isinstance(kernels, DiscreteKernel) else [kernels]
        if not kernels:
            raise ConfigurationError("at least one kernel is required")
        n_taps = {k.config.n_taps for k in kernels}
        rates = {k.sample_rate for k in kernels}
        if len(n_taps) != 1 or len(rates) != 1:
            raise ConfigurationError("kernels must share tap count and sample rate")
        self.kernels = kernels
        self.n_taps = n_taps.pop()
        self.sample_rate = rates.pop()
        if block_size & (block_size - 1) or block_size < 2 * self.n_taps:
            raise ConfigurationError("block_size must be a power of two of at least twice the tap count")
        self.block_size = block_size
        self.hop = block_size - self.n_taps + 1
        self.n_streams = len(kernels)
        self.provenance = bank_provenance(kernels)
        taps = np.zeros((self.n_streams, block_size))
        for i, k in enumerate(kernels):
            taps[i, : self.n_taps] = k.taps
        # FFTW's backward transform is unnormalized; fold 1/n into the spectra
        self._spectra = np.fft.rfft(taps, axis=1) / block_size
        self._use_fftw = _HAVE_FFTW if use_fftw is None else (use_fftw and _HAVE_FFTW)
        self.planner = planner
        self.cross = cross
        self._wisdom = None
        self._setup_fft()

    def _setup_fft(self):
        n, nf, ns = self.block_size, self.block_size // 2 + 1, self.n_streams
        if self._use_fftw:
            if self._wisdom is not None:
                pyfftw.import_wisdom(self._wisdom)
            self._in = pyfftw.empty_aligned(n, dtype="float64")
            self._fin = pyfftw.empty_aligned(nf, dtype="complex128")
            self._prod = pyfftw.empty_aligned((ns, nf), dtype="complex128")
            self._out = pyfftw.empty_aligned((ns, n), dtype="float64")
            flags = (self.planner,)
            self._fwd = pyfftw.FFTW(self._in, self._fin, flags=flags, threads=1)
            self._inv = pyfftw.FFTW(self._prod, self._out, axes=(1,), direction="FFTW_BACKWARD",
                                    flags=flags + ("FFTW_DESTROY_INPUT",), threads=1)
            # workers replay the same plans so results stay bit-identical
            self._wisdom = pyfftw.export_wisdom()
        else:
            self._in = np.empty(n)
            self._out = np.empty((ns, n))

    def __getstate__(self):
        state = self.__dict__.copy()
        for k in ("_in", "_fin", "_prod", "_out", "_fwd", "_inv"):
            state.pop(k, None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._setup_fft()

    @property
    def edge(self) -> int:
        return (self.n_taps - 1) // 2

    def n_valid(self, n_samples: int) -> int:
        return max(0, n_samples - self.n_taps + 1)

    def _transform(self, chunk: np.ndarray) -> np.ndarray:
        """Circular products of one zero-padded input block with every kernel."""
        self._in[: chunk.size] = chunk
        self._in[chunk.size:] = 0.0
        if self._use_fftw:
            self._fwd.execute()
            np.multiply(self._fin, self._spectra, out=self._prod)
            self._inv.execute()
        else:
            spec = np.fft.rfft(self._in)
            self._out[:] = np.fft.irfft(spec * self._spectra, n=self.block_size, axis=1) * self.block_size
        return self._out

    def _blocks(self, volts: np.ndarray, rows=None):
        """Yield ``(i0, y)`` with complete full-convolution outputs ``y[:, :hop]``
        starting at full-convolution index ``i0``. With ``rows`` the moments of
        the valid part of each block are written to ``rows[b]`` instead."""
        n, hop, k1 = volts.size, self.hop, self.n_taps - 1
        tail = np.zeros((self.n_streams, k1))
        for b, i0 in enumerate(range(0, n, hop)):
            y = self._transform(volts[i0:i0 + hop])
            lo, hi = max(i0, k1) - i0, min(i0 + hop, n) - i0
            if rows is None:
                _ola_step(y, tail, hop, k1, 0, 0, _EMPTY_ROW, False)
                yield i0, y
            else:
                _ola_step(y, tail, hop, k1, lo, hi, rows[b], hi > lo)
                yield i0, max(0, hi - lo)

    def convolve(self, segment) -> np.ndarray:
        """Valid quadrature samples, shape ``(n_streams, n - n_taps + 1)``.

        Column ``j`` is the output at sample ``j + (n_taps - 1)/2``.
        """
        volts = self._volts(segment)
        n, k1 = volts.size, self.n_taps - 1
        out = np.empty((self.n_streams, self.n_valid(n)))
        for i0, y in self._blocks(volts):
            lo, hi = max(i0, k1), min(i0 + self.hop, n)
            if hi > lo:
                out[:, lo - k1:hi - k1] = y[:, lo - i0:hi - i0]
        return out

    def accumulate(self, segment, acc: MomentAccumulator | None = None, key=None) -> MomentAccumulator:
        """Fused convolution and moment pass over one segment."""
        volts = self._volts(segment)
        if acc is None:
            acc = MomentAccumulator(self.n_streams, self.provenance, self.edge, self.cross)
        elif acc.n_streams != self.n_streams or acc.cross != self.cross:
            raise AlignmentError("moment layout does not match accumulator")
        elif acc.provenance and acc.provenance != self.provenance:
            raise ProvenanceError("accumulator was built with different kernels")
        acc.provenance = self.provenance
        acc.edge_discard = self.edge
        key = key if key is not None else (getattr(segment, "sequence_id", 0),)
        n_blocks = -(-volts.size // self.hop)
        rows = np.zeros((n_blocks, len(acc.names)))
        counts = [c for _, c in self._blocks(volts, rows)]
        for b, c in enumerate(counts):
            if c:
                acc.add_block(tuple(key) + (b,), c, rows[b])
        return acc

    def _volts(self, segment) -> np.ndarray:
        if isinstance(segment, TraceSegment):
            if not math.isclose(segment.sample_rate, self.sample_rate, rel_tol=1e-12):
                raise ConfigurationError(
                    f"trace sample rate {segment.sample_rate:g} differs from kernel rate {self.sample_rate:g}")
            return segment.volts
        return np.asarray(segment, dtype=np.float64)


def stream_convolve(trace, kernel, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Valid part of the convolution of ``trace`` with one or more kernels."""
    engine = OverlapAddEngine(kernel, block_size)
    out = engine.convolve(trace)
    return out[0] if isinstance(kernel, DiscreteKernel) else out


def direct_convolve(volts, kernel: DiscreteKernel) -> np.ndarray:
    """Brute-force O(N K) reference for :func:`stream_convolve`."""
    return np.convolve(np.asarray(volts, dtype=np.float64), kernel.taps, mode="valid")


# ---------------------------------------------------------------------------
# parallel driver
# ---------------------------------------------------------------------------


def resolve_workers(workers: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer") from None
    return max(1, workers or 1)


def _segment_task(args):
    engine, path, seq, start, stop = args
    trace = read_trace(path)
    seg = TraceSegment(np.asarray(trace.samples[start:stop]), trace.sample_rate, trace.scale, seq)
    return engine.accumulate(seg, key=(trace.sequence_id, start))


def process_files(paths, kernels, *, segment_length: int = DEFAULT_SEGMENT_LENGTH,
                  block_size: int = DEFAULT_BLOCK_SIZE, workers: int | None = None,
                  cross: bool = True) -> MomentAccumulator:
    """Accumulate moments of every trace file with a pool of workers.

    Each file is cut into ``segment_length`` pieces processed independently.
    The result is bit-identical for any worker count.
    """
    engine = OverlapAddEngine(kernels, block_size, cross=cross)
    tasks = []
    for path in paths:
        hdr = read_header(path)
        for start in range(0, hdr["sample_count"], segment_length):
            stop = min(start + segment_length, hdr["sample_count"])
            if stop - start >= engine.n_taps:
                tasks.append((engine, str(path), hdr["sequence_id"], start, stop))
    acc = MomentAccumulator(engine.n_streams, engine.provenance, engine.edge, engine.cross)
    n_workers = resolve_workers(workers)
    logger.info("processing %d segments with %d worker(s)", len(tasks), n_workers)
    if n_workers == 1:
        results = map(_segment_task, tasks)
    else:
        pool = ProcessPoolExecutor(n_workers)
        results = pool.map(_segment_task, tasks)
    try:
        for part in results:
            acc = merge(acc, part)
    finally:
        if n_workers != 1:
            pool.shutdown()
    return acc


def process_trace(trace: TraceSegment, kernels, *, segment_length: int = DEFAULT_SEGMENT_LENGTH,
                  block_size: int = DEFAULT_BLOCK_SIZE, engine: OverlapAddEngine | None = None,
                  cross: bool = True) -> MomentAccumulator:
    """In-memory single-worker counterpart of :func:`process_files`."""
    engine = engine or OverlapAddEngine(kernels, block_size, cross=cross)
    acc = MomentAccumulator(engine.n_streams, engine.provenance, engine.edge, engine.cross)
    for seg in trace.split(segment_length):
        if len(seg) >= engine.n_taps:
            engine.accumulate(seg, acc)
    return acc


def write_provenance(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
