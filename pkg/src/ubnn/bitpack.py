"""Bit-level primitives: packing, masking, window extraction, XNOR/popcount.

Every packed object in this library shares one storage convention:

* Storage is a sequence of 32-bit words.
* Logical bit i lives in word ``i // 32`` at position ``31 - (i % 32)``,
  i.e. MSB-first: a stream reads left to right across each word, and the
  mask for a trailing partial word is a prefix of most-significant ones.
* Bits at indices >= ``bit_len`` in the final word are always zero.
* Value encoding is +1 <-> bit 1 and -1 <-> bit 0.

Internally a stream keeps its words fused into one arbitrary-precision
integer (first word most significant), so the XNOR/popcount dot product and
window shifts are single big-integer operations. The ``words`` view is the
contract: serialized formats and footprint math see exact 32-bit semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

WORD_BITS = 32
WORD_MASK = 0xFFFFFFFF


def words_for_bits(bit_len: int) -> int:
    """Number of 32-bit words needed to hold ``bit_len`` bits."""
    return (bit_len + WORD_BITS - 1) // WORD_BITS


def leftover_mask(n_bits: int) -> int:
    """Word with exactly ``n_bits`` most-significant bits set.

    This is the mask applied to the trailing partial word of a window whose
    length is not a multiple of 32, so XNOR/popcount never sees bits that do
    not belong to the window.
    """
    if not 0 <= n_bits <= WORD_BITS:
        raise ValueError(f"mask width {n_bits} outside [0, {WORD_BITS}]")
    if n_bits == 0:
        return 0
    return (WORD_MASK << (WORD_BITS - n_bits)) & WORD_MASK


class BitStream:
    """Immutable MSB-first bit stream backed by 32-bit words.

    ``value`` is the stream as one integer with word 0 most significant;
    trailing pad bits past ``bit_len`` are kept at zero (garbage handed to
    the constructor is scrubbed).
    """

    __slots__ = ("bit_len", "_value")

    def __init__(self, bit_len: int, value: int = 0):
        if bit_len < 0:
            raise ValueError("bit_len must be non-negative")
        pad_bits = words_for_bits(bit_len) * WORD_BITS
        if value < 0 or value >> pad_bits:
            raise ValueError("value does not fit the stream's words")
        object.__setattr__(self, "bit_len", bit_len)
        # Scrub trailing invalid bits so the zero-tail invariant always holds.
        valid = ((1 << bit_len) - 1) << (pad_bits - bit_len) if bit_len else 0
        object.__setattr__(self, "_value", value & valid)

    def __setattr__(self, name, value):
        raise AttributeError("BitStream is immutable")

    @classmethod
    def from_words(cls, words: Iterable[int], bit_len: int) -> "BitStream":
        words = tuple(words)
        if words_for_bits(bit_len) != len(words):
            raise ValueError(
                f"{len(words)} words cannot hold exactly {bit_len} bits"
            )
        value = 0
        for w in words:
            if not 0 <= w <= WORD_MASK:
                raise ValueError(f"word {w:#x} outside 32-bit range")
            value = (value << WORD_BITS) | w
        return cls(bit_len, value)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitStream":
        """Build a stream from 0/1 bits in logical order."""
        arr = np.asarray(bits, dtype=np.uint8)
        n = int(arr.size)
        raw = np.packbits(arr).tobytes()  # MSB-first within each byte
        raw = raw.ljust(words_for_bits(n) * 4, b"\x00")
        return cls(n, int.from_bytes(raw, "big"))

    @property
    def n_words(self) -> int:
        return words_for_bits(self.bit_len)

    @property
    def padded_bits(self) -> int:
        return self.n_words * WORD_BITS

    @property
    def value(self) -> int:
        return self._value

    @property
    def words(self) -> tuple[int, ...]:
        v = self._value
        return tuple(
            (v >> (WORD_BITS * (self.n_words - 1 - i))) & WORD_MASK
            for i in range(self.n_words)
        )

    def get_bit(self, i: int) -> int:
        if not 0 <= i < self.bit_len:
            raise IndexError(f"bit index {i} outside [0, {self.bit_len})")
        return (self._value >> (self.padded_bits - 1 - i)) & 1

    def bits(self) -> np.ndarray:
        """All valid bits as a uint8 array in logical order."""
        if self.bit_len == 0:
            return np.zeros(0, dtype=np.uint8)
        raw = self._value.to_bytes(self.n_words * 4, "big")
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: self.bit_len]

    def window_value(self, bit_offset: int, length: int) -> int:
        """Bits [bit_offset, bit_offset+length) as a right-aligned integer."""
        if bit_offset < 0 or length < 0 or bit_offset + length > self.bit_len:
            raise ValueError(
                f"window [{bit_offset}, {bit_offset + length}) outside "
                f"stream of {self.bit_len} bits"
            )
        shift = self.padded_bits - bit_offset - length
        return (self._value >> shift) & ((1 << length) - 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitStream):
            return NotImplemented
        return self.bit_len == other.bit_len and self._value == other._value

    def __hash__(self) -> int:
        return hash((self.bit_len, self._value))

    def __repr__(self) -> str:
        ws = ", ".join(f"{w:#010x}" for w in self.words)
        return f"BitStream(bit_len={self.bit_len}, words=[{ws}])"


@dataclass(frozen=True)
class PackedBitTensor:
    """Time-major packed binary activations of shape (timesteps, channels).

    Element (t, c) sits at logical bit index ``t * channels + c``: all
    channels of one timestep are contiguous before the next timestep starts.
    """

    stream: BitStream
    timesteps: int
    channels: int

    def __post_init__(self):
        if self.timesteps < 0 or self.channels < 0:
            raise ValueError("timesteps and channels must be non-negative")
        if self.stream.bit_len != self.timesteps * self.channels:
            raise ValueError(
                f"stream holds {self.stream.bit_len} bits, expected "
                f"{self.timesteps} * {self.channels}"
            )

    def get(self, t: int, c: int) -> int:
        """Value at (t, c) as +1 or -1."""
        if not (0 <= t < self.timesteps and 0 <= c < self.channels):
            raise IndexError(f"({t}, {c}) outside tensor shape")
        return 1 if self.stream.get_bit(t * self.channels + c) else -1


def pack(values: Sequence[int], layout: tuple[int, int]) -> PackedBitTensor:
    """Pack a flat sequence of +-1 values into a time-major tensor.

    ``layout`` is (timesteps, channels); ``values`` must have length T * C
    and contain only +1 and -1 (+1 packs to bit 1, -1 to bit 0).
    """
    timesteps, channels = layout
    arr = np.asarray(values)
    if arr.size != timesteps * channels:
        raise ValueError(
            f"{arr.size} values cannot fill layout ({timesteps}, {channels})"
        )
    if arr.size and not np.isin(arr, (-1, 1)).all():
        raise ValueError("values must all be +1 or -1")
    stream = BitStream.from_bits((arr.reshape(-1) == 1).astype(np.uint8))
    return PackedBitTensor(stream, timesteps, channels)


def unpack(t: PackedBitTensor) -> list[int]:
    """Inverse of :func:`pack`: the tensor's +-1 values in stream order."""
    bits = t.stream.bits().astype(np.int64)
    return (2 * bits - 1).tolist()


def extract_window(src: BitStream, bit_offset: int, length: int) -> BitStream:
    """Copy bits [bit_offset, bit_offset+length) into a fresh stream.

    Writes to new storage (the source is never mutated) and zeroes the
    trailing partial word, so the result is safe to XNOR against a
    word-aligned filter without touching bits outside the window.
    """
    raw = src.window_value(bit_offset, length)  # range-checks the window
    pad = words_for_bits(length) * WORD_BITS
    return BitStream(length, raw << (pad - length))


def popcount_sum(a: BitStream, b: BitStream) -> int:
    """popcount(NOT(a XOR b) AND valid-mask): the number of agreeing bits.

    XNOR turns padded trailing zeros into ones, so the result is masked to
    the valid bits before counting even though both operands keep their
    tails at zero by construction.
    """
    if a.bit_len != b.bit_len:
        raise ValueError(
            f"length mismatch: {a.bit_len} vs {b.bit_len} bits"
        )
    n = a.bit_len
    if n == 0:
        return 0
    pad = a.padded_bits
    valid = ((1 << n) - 1) << (pad - n)
    xnor = (a.value ^ b.value) ^ ((1 << pad) - 1)
    return (xnor & valid).bit_count()


def binary_dot(a: BitStream, b: BitStream) -> int:
    """Exact +-1 dot product of two equal-length streams: 2 * P - N."""
    return 2 * popcount_sum(a, b) - a.bit_len
