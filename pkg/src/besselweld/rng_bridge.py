"""Deterministic Brownian paths with lazy dyadic refinement.

A path is a Brownian motion on one horizon window, stored as bridge
midpoints on dyadic levels.  Every midpoint normal is keyed by
(seed, stream, segment, level, index) through a counter-based generator,
so values never depend on the order in which the path is queried or on
how many threads query it.  All processes built on top of the same seed
are driven by literally the same Brownian motion.

Level l holds values at times t0 + k * horizon * 2**-l.  Refinement of
the interval [a, b] with endpoint values (u, v) draws the midpoint from
Normal((u + v) / 2, (b - a) / 4).
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from scipy.special import ndtri

__all__ = [
    "PathSeed",
    "BrownianPath",
    "KeyedStream",
    "NonDyadicTimeError",
    "create_path",
    "value_at",
    "oscillation",
    "continuation",
    "dump_path",
    "load_path",
]

DEFAULT_MAX_LEVEL = 40

# Philox-2x64, 10 rounds.  Multiplier and Weyl constant are the standard
# Random123 values; the golden-ratio constants below drive the splitmix
# key derivation.
_PHILOX_M = np.uint64(0xD2B74407B1CE6E93)
_PHILOX_W = np.uint64(0x9E3779B97F4A7C15)
_ROUNDS = 10

_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = 0xFFFFFFFFFFFFFFFF
_S32 = np.uint64(32)
_S11 = np.uint64(11)

_ROLE_BRIDGE = 0
_ROLE_STREAM = 1

# z values are generated in blocks of 2**_BLOCK_BITS consecutive indices
# so that sequential refinement amortizes the generator cost.
_BLOCK_BITS = 6
_BLOCK = 1 << _BLOCK_BITS

_U53 = 2.0 ** -53

_MAGIC = b"BWPATH01"


class NonDyadicTimeError(ValueError):
    """Query time does not lie on the dyadic grid of the requested level."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _derive_key(master_seed: int, stream_id: int) -> int:
    k = _splitmix64(master_seed & _MASK64)
    k = _splitmix64(k ^ ((stream_id * 0xD6E8FEB86659FD93) & _MASK64))
    return k


def _philox_words(c0: np.ndarray, c1: np.ndarray, key: int) -> np.ndarray:
    """First output word of Philox-2x64-10 for each counter pair."""
    with np.errstate(over="ignore"):
        x0 = c0.astype(np.uint64, copy=True)
        x1 = c1.astype(np.uint64, copy=True)
        k = np.full(x0.shape, np.uint64(key), dtype=np.uint64)
        for _ in range(_ROUNDS):
            b_lo = x0 & _MASK32
            b_hi = x0 >> _S32
            a_lo = _PHILOX_M & _MASK32
            a_hi = _PHILOX_M >> _S32
            lolo = a_lo * b_lo
            m1 = a_lo * b_hi
            m2 = a_hi * b_lo
            t = (lolo >> _S32) + (m1 & _MASK32) + (m2 & _MASK32)
            lo = (lolo & _MASK32) | ((t & _MASK32) << _S32)
            hi = a_hi * b_hi + (m1 >> _S32) + (m2 >> _S32) + (t >> _S32)
            x0 = hi ^ k ^ x1
            x1 = lo
            k = k + _PHILOX_W
    return x0


def _words_to_uniforms(words: np.ndarray) -> np.ndarray:
    # 53-bit mantissa, offset by half an ulp: values lie strictly in (0, 1).
    return ((words >> _S11).astype(np.float64) + 0.5) * _U53


def _keyed_normals(key: int, tag: int, start: int, count: int) -> np.ndarray:
    c0 = np.arange(start, start + count, dtype=np.uint64)
    c1 = np.full(count, np.uint64(tag), dtype=np.uint64)
    return ndtri(_words_to_uniforms(_philox_words(c0, c1, key)))


def _bridge_tag(segment: int, level: int) -> int:
    return (_ROLE_BRIDGE << 56) | ((segment & 0xFFFFFFFFFF) << 8) | level


def _stream_tag(substream: int) -> int:
    return (_ROLE_STREAM << 56) | ((substream & 0xFFFFFFFFFF) << 8)


@dataclass(frozen=True)
class PathSeed:
    """Identity of one Brownian driver: master seed plus stream index."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")

    def key(self) -> int:
        return _derive_key(self.master_seed, self.stream_id)


class BrownianPath:
    """One horizon window of a keyed Brownian motion.

    The window covers [t0, t0 + horizon].  Values are global: b0 is the
    Brownian value at t0 (zero for the root segment), and chained
    continuation segments carry the endpoint value forward.
    """

    __slots__ = (
        "seed",
        "horizon",
        "segment",
        "t0",
        "b0",
        "max_level",
        "_key",
        "_sparse",
        "_dense",
        "_zblocks",
        "_lock",
        "_cont",
    )

    def __init__(
        self,
        seed: PathSeed,
        horizon: float = 1.0,
        max_level: int = DEFAULT_MAX_LEVEL,
        segment: int = 0,
        t0: float = 0.0,
        b0: float = 0.0,
    ) -> None:
        if not (horizon > 0.0 and math.isfinite(horizon)):
            raise ValueError("horizon must be positive and finite")
        if not (0 < max_level <= 48):
            raise ValueError("max_level must lie in [1, 48]")
        if segment < 0:
            raise ValueError("segment must be non-negative")
        self.seed = seed
        self.horizon = float(horizon)
        self.segment = segment
        self.t0 = float(t0)
        self.b0 = float(b0)
        self.max_level = max_level
        self._key = seed.key()
        # level -> {index: local value}; local means relative to B(t0) = 0
        self._sparse: dict[int, dict[int, float]] = {0: {0: 0.0}}
        self._dense: list[np.ndarray] = []
        self._zblocks: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()
        self._cont: "BrownianPath | None" = None
        self._sparse[0][1] = math.sqrt(self.horizon) * self._z(0, 0)

    # -- keyed normals ------------------------------------------------

    def _z(self, level: int, k: int) -> float:
        block = k >> _BLOCK_BITS
        cached = self._zblocks.get((level, block))
        if cached is None:
            cached = _keyed_normals(
                self._key,
                _bridge_tag(self.segment, level),
                block << _BLOCK_BITS,
                _BLOCK,
            )
            self._zblocks[(level, block)] = cached
        return float(cached[k & (_BLOCK - 1)])

    def _z_level(self, level: int) -> np.ndarray:
        """All midpoint normals of one level, for dense refinement."""
        count = 1 << (level - 1)
        return _keyed_normals(self._key, _bridge_tag(self.segment, level), 0, count)

    # -- node access ---------------------------------------------------

    def _node(self, level: int, j: int) -> float:
        """Local Brownian value at t0 + j * horizon * 2**-level."""
        while level > 0 and not (j & 1):
            level -= 1
            j >>= 1
        if level < len(self._dense):
            return float(self._dense[level][j])
        store = self._sparse.get(level)
        if store is None:
            store = {}
            self._sparse[level] = store
        v = store.get(j)
        if v is not None:
            return v
        if level > self.max_level:
            raise ValueError(
                f"refinement level {level} exceeds max_level {self.max_level}"
            )
        k = j >> 1
        u = self._node(level - 1, k)
        w = self._node(level - 1, k + 1)
        width = self.horizon * 2.0 ** (-(level - 1))
        v = 0.5 * (u + w) + 0.5 * math.sqrt(width) * self._z(level, k)
        store[j] = v
        return v

    def refine_to_level(self, level: int) -> None:
        """Materialize every node up to the given level (dense storage)."""
        if level > self.max_level:
            raise ValueError(
                f"refinement level {level} exceeds max_level {self.max_level}"
            )
        with self._lock:
            if not self._dense:
                arr0 = np.array([0.0, self._sparse[0][1]])
                self._dense.append(arr0)
            while len(self._dense) - 1 < level:
                lev = len(self._dense)
                prev = self._dense[lev - 1]
                out = np.empty(2 * (prev.size - 1) + 1)
                out[::2] = prev
                width = self.horizon * 2.0 ** (-(lev - 1))
                z = self._z_level(lev)
                out[1::2] = 0.5 * (prev[:-1] + prev[1:]) + 0.5 * math.sqrt(width) * z
                self._dense.append(out)

    # -- dyadic bookkeeping ---------------------------------------------

    def dyadic_index(self, t: float, level: int) -> int:
        """Index j with t = t0 + j * horizon * 2**-level, or raise."""
        if not (0 <= level <= self.max_level):
            raise ValueError(f"level must lie in [0, {self.max_level}]")
        x = (t - self.t0) / self.horizon * (1 << level)
        j = round(x)
        if not (0 <= j <= (1 << level)):
            raise ValueError(
                f"time {t} outside window [{self.t0}, {self.t0 + self.horizon}]"
            )
        if abs(x - j) > 1e-9 * max(1.0, abs(x)):
            raise NonDyadicTimeError(
                f"time {t} is not dyadic at level {level} for horizon {self.horizon}"
            )
        return j

    def node_time(self, level: int, j: int) -> float:
        return self.t0 + (j * self.horizon) / (1 << level)

    def value_at_node(self, level: int, j: int) -> float:
        with self._lock:
            return self.b0 + self._node(level, j)

    # -- public queries --------------------------------------------------

    def value_at(self, t: float, level: int) -> float:
        """Brownian value at a dyadic time of the given level."""
        return self.value_at_node(level, self.dyadic_index(t, level))

    def end_value(self) -> float:
        return self.value_at_node(0, 1)

    def oscillation(self, s: float, t: float, level: int) -> tuple[float, float]:
        """(inf, sup) of the path over [s, t] at stored resolution.

        Guarantees at least the grid of `level` inside the window and
        additionally scans every already-stored finer sample in it.
        """
        if t < s:
            raise ValueError("need s <= t")
        if t == s:
            v = self.value_at(s, self.max_level)
            return v, v
        if not (0 <= level <= self.max_level):
            raise ValueError(f"level must lie in [0, {self.max_level}]")
        h = self.horizon * 2.0 ** (-level)
        j_lo = max(0, math.ceil((s - self.t0) / h - 1e-12))
        j_hi = min(1 << level, math.floor((t - self.t0) / h + 1e-12))
        if j_hi < j_lo:
            # window narrower than one cell: refine until it holds nodes
            level = min(
                self.max_level,
                max(level, 1 + max(0, math.ceil(math.log2(self.horizon / (t - s))))),
            )
            h = self.horizon * 2.0 ** (-level)
            j_lo = max(0, math.ceil((s - self.t0) / h - 1e-12))
            j_hi = min(1 << level, math.floor((t - self.t0) / h + 1e-12))
        if j_hi < j_lo:
            # depth capped with the window inside one cell: bound by the
            # enclosing node pair instead of returning an empty scan
            j_lo = max(0, math.floor((s - self.t0) / h + 1e-12))
            j_hi = min(1 << level, math.ceil((t - self.t0) / h - 1e-12))
        if j_hi - j_lo > (1 << 24):
            raise ValueError("oscillation window too fine for requested level")
        with self._lock:
            lo = math.inf
            hi = -math.inf
            for j in range(j_lo, j_hi + 1):
                v = self._node(level, j)
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            # include any finer samples already materialized in the window
            rel_s = s - self.t0
            rel_t = t - self.t0
            for lev in range(len(self._dense)):
                arr = self._dense[lev]
                h = self.horizon * 2.0 ** (-lev)
                a = max(0, math.ceil(rel_s / h - 1e-12))
                b = min(arr.size - 1, math.floor(rel_t / h + 1e-12))
                if b >= a:
                    seg = arr[a : b + 1]
                    lo = min(lo, float(seg.min()))
                    hi = max(hi, float(seg.max()))
            for lev, store in self._sparse.items():
                h = self.horizon * 2.0 ** (-lev)
                a = math.ceil(rel_s / h - 1e-12)
                b = math.floor(rel_t / h + 1e-12)
                for j, v in store.items():
                    if a <= j <= b:
                        if v < lo:
                            lo = v
                        if v > hi:
                            hi = v
        return self.b0 + lo, self.b0 + hi

    def continuation(self) -> "BrownianPath":
        """Next chained window: doubled horizon, fresh keyed namespace.

        Cached, so repeated chaining reuses the same refinement store.
        """
        if self._cont is None:
            self._cont = BrownianPath(
                self.seed,
                horizon=2.0 * self.horizon,
                max_level=self.max_level,
                segment=self.segment + 1,
                t0=self.t0 + self.horizon,
                b0=self.end_value(),
            )
        return self._cont

    # -- serialization ----------------------------------------------------

    def dump(self, fh: BinaryIO) -> None:
        """Binary dump: header, then stored samples level by level."""
        with self._lock:
            fh.write(_MAGIC)
            dense_level = len(self._dense) - 1
            fh.write(
                struct.pack(
                    "<QQiiddd",
                    self.seed.master_seed & _MASK64,
                    self.seed.stream_id,
                    self.segment,
                    self.max_level,
                    self.horizon,
                    self.t0,
                    self.b0,
                )
            )
            fh.write(struct.pack("<i", dense_level))
            for arr in self._dense:
                fh.write(arr.astype("<f8").tobytes())
            sparse_levels = sorted(
                lev for lev, store in self._sparse.items() if store and lev > dense_level
            )
            fh.write(struct.pack("<I", len(sparse_levels)))
            for lev in sparse_levels:
                store = self._sparse[lev]
                idx = np.array(sorted(store.keys()), dtype="<u8")
                vals = np.array([store[int(j)] for j in idx], dtype="<f8")
                fh.write(struct.pack("<IQ", lev, idx.size))
                fh.write(idx.tobytes())
                fh.write(vals.tobytes())

    @classmethod
    def load(cls, fh: BinaryIO) -> "BrownianPath":
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError("not a path dump")
        master, stream, segment, max_level, horizon, t0, b0 = struct.unpack(
            "<QQiiddd", fh.read(48)
        )
        path = cls(
            PathSeed(master, stream),
            horizon=horizon,
            max_level=max_level,
            segment=segment,
            t0=t0,
            b0=b0,
        )
        (dense_level,) = struct.unpack("<i", fh.read(4))
        for lev in range(dense_level + 1):
            n = (1 << lev) + 1
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            path._dense.append(arr)
        (n_sparse,) = struct.unpack("<I", fh.read(4))
        for _ in range(n_sparse):
            lev, count = struct.unpack("<IQ", fh.read(12))
            idx = np.frombuffer(fh.read(8 * count), dtype="<u8")
            vals = np.frombuffer(fh.read(8 * count), dtype="<f8")
            path._sparse[lev] = {int(j): float(v) for j, v in zip(idx, vals)}
        return path


class KeyedStream:
    """Sequential deterministic draw stream on the same counter generator.

    Used by samplers that need an ordered stream rather than dyadic
    keying.  Distinct (seed, substream) pairs give independent streams;
    there is no global state.
    """

    __slots__ = ("_key", "_tag", "_cursor")

    def __init__(self, seed: PathSeed, substream: int = 0) -> None:
        if substream < 0:
            raise ValueError("substream must be non-negative")
        self._key = seed.key()
        self._tag = _stream_tag(substream)
        self._cursor = 0

    def uniforms(self, n: int) -> np.ndarray:
        """n uniforms in (0, 1)."""
        if n < 0:
            raise ValueError("n must be non-negative")
        c0 = np.arange(self._cursor, self._cursor + n, dtype=np.uint64)
        self._cursor += n
        c1 = np.full(n, np.uint64(self._tag), dtype=np.uint64)
        return _words_to_uniforms(_philox_words(c0, c1, self._key))

    def normals(self, n: int) -> np.ndarray:
        return ndtri(self.uniforms(n))

    def exponentials(self, n: int) -> np.ndarray:
        return -np.log(self.uniforms(n))


# -- module-level operation wrappers ---------------------------------------


def create_path(
    seed: PathSeed,
    horizon: float = 1.0,
    max_level: int = DEFAULT_MAX_LEVEL,
) -> BrownianPath:
    """Fresh root path on [0, horizon] with B(0) = 0."""
    return BrownianPath(seed, horizon=horizon, max_level=max_level)


def value_at(path: BrownianPath, t: float, level: int) -> float:
    return path.value_at(t, level)


def oscillation(path: BrownianPath, s: float, t: float, level: int) -> tuple[float, float]:
    return path.oscillation(s, t, level)


def continuation(path: BrownianPath) -> BrownianPath:
    return path.continuation()


def dump_path(path: BrownianPath, fh: BinaryIO) -> None:
    path.dump(fh)


def load_path(fh: BinaryIO) -> BrownianPath:
    return BrownianPath.load(fh)
