"""Packed bitstring batches and parity kernels.

A :class:`BitMatrix` stores ``rows`` bitstrings of ``width`` bits, packed
row-major into ``ceil(width / 8)`` bytes per row with little-endian bit order
(bit ``i`` of a row lives in byte ``i // 8`` at position ``i % 8``). On a
little-endian machine the byte layout coincides with little-endian 64-bit
words, and padding bits are always zero.
"""

import numpy as np

_PARITY_BLOCK = 1 << 22


class BitMatrix:
    """Immutable batch of equal-width bitstrings."""

    __slots__ = ("_packed", "_width")

    def __init__(self, packed, width):
        width = int(width)
        if width <= 0:
            raise ValueError("BitMatrix width must be positive")
        packed = np.array(packed, dtype=np.uint8, copy=True, ndmin=2)
        if packed.ndim != 2 or packed.shape[1] != (width + 7) // 8:
            raise ValueError(
                f"packed payload of shape {packed.shape} does not match width {width}"
            )
        pad = (-width) % 8
        if pad and np.any(packed[:, -1] >> (8 - pad)):
            raise ValueError("padding bits of a BitMatrix must be zero")
        packed.setflags(write=False)
        self._packed = packed
        self._width = width

    @classmethod
    def from_array(cls, bits):
        """Build from a 2-D array of 0/1 values (one row per bitstring)."""
        bits = np.asarray(bits)
        if bits.ndim == 1:
            bits = bits[None, :]
        if bits.ndim != 2:
            raise ValueError("expected a 2-D array of bits")
        if bits.shape[1] == 0:
            raise ValueError("BitMatrix width must be positive")
        if bits.dtype != np.bool_:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("bit arrays may only contain 0 and 1")
        packed = np.packbits(bits.astype(bool), axis=1, bitorder="little")
        return cls(packed, bits.shape[1])

    @classmethod
    def from_strings(cls, lines):
        lines = list(lines)
        if not lines:
            raise ValueError("no bitstrings given")
        width = len(lines[0])
        for i, s in enumerate(lines):
            if len(s) != width:
                raise ValueError(f"row {i} has width {len(s)}, expected {width}")
            if s.strip("01"):
                raise ValueError(f"row {i} contains characters other than '0'/'1'")
        raw = np.frombuffer("".join(lines).encode("ascii"), dtype=np.uint8)
        return cls.from_array((raw - ord("0")).reshape(len(lines), width))

    @classmethod
    def zeros(cls, rows, width):
        return cls(np.zeros((int(rows), (int(width) + 7) // 8), np.uint8), width)

    @classmethod
    def from_indices(cls, indices, width):
        """Rows given by integer indices, bit ``i`` taken from ``(index >> i) & 1``."""
        idx = np.asarray(indices, dtype=np.uint64).reshape(-1)
        shifts = np.arange(width, dtype=np.uint64)
        return cls.from_array(((idx[:, None] >> shifts) & np.uint64(1)).astype(np.uint8))

    @classmethod
    def vstack(cls, parts):
        parts = list(parts)
        width = parts[0].width
        if any(p.width != width for p in parts):
            raise ValueError("cannot stack BitMatrix objects of different widths")
        return cls(np.concatenate([p.packed for p in parts], axis=0), width)

    @property
    def width(self):
        return self._width

    @property
    def rows(self):
        return self._packed.shape[0]

    @property
    def packed(self):
        return self._packed

    @property
    def shape(self):
        return (self.rows, self._width)

    def __len__(self):
        return self.rows

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            item = [item]
        return BitMatrix(self._packed[item], self._width)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self._width == other._width and np.array_equal(self._packed, other._packed)

    def __hash__(self):
        return hash((self._width, self._packed.tobytes()))

    def __repr__(self):
        return f"BitMatrix(rows={self.rows}, width={self.width})"

    def to_array(self, dtype=np.uint8):
        bits = np.unpackbits(self._packed, axis=1, count=self._width, bitorder="little")
        return bits.astype(dtype, copy=False)

    def to_strings(self):
        chars = self.to_array() + ord("0")
        return [row.tobytes().decode("ascii") for row in chars]

    def to_indices(self):
        """Integer index of each row (bit ``i`` weighs ``2**i``); width must be <= 63."""
        if self._width > 63:
            raise ValueError("to_indices needs width <= 63")
        weights = np.uint64(1) << np.arange(self._width, dtype=np.uint64)
        return (self.to_array(np.uint64) * weights).sum(axis=1)

    def weights(self):
        """Hamming weight of every row."""
        return np.bitwise_count(self._packed).sum(axis=1, dtype=np.int64)

    def complement(self):
        bits = self.to_array()
        return BitMatrix.from_array(1 - bits)


def as_bitmatrix(data, width=None):
    """Coerce arrays, strings or BitMatrix objects to a BitMatrix."""
    if isinstance(data, BitMatrix):
        out = data
    elif isinstance(data, str):
        out = BitMatrix.from_strings([data])
    elif isinstance(data, (list, tuple)) and data and isinstance(data[0], str):
        out = BitMatrix.from_strings(data)
    else:
        out = BitMatrix.from_array(np.asarray(data))
    if width is not None and out.width != width:
        raise ValueError(f"bitstrings have width {out.width}, expected {width}")
    return out


def parity_popcount(rows, masks):
    """Parity of ``x . a`` for every row ``x`` and mask ``a``, by AND + popcount.

    Returns an ``(len(rows), len(masks))`` uint8 array of 0/1.
    """
    if rows.width != masks.width:
        raise ValueError(f"width mismatch: {rows.width} vs {masks.width}")
    x, a = rows.packed, masks.packed
    out = np.empty((x.shape[0], a.shape[0]), dtype=np.uint8)
    step = max(1, _PARITY_BLOCK // max(1, a.shape[0] * a.shape[1]))
    for lo in range(0, x.shape[0], step):
        both = x[lo : lo + step, None, :] & a[None, :, :]
        out[lo : lo + step] = np.bitwise_count(both).sum(axis=2) & 1
    return out


def parity_matmul(rows, masks):
    """Same result as :func:`parity_popcount`, via a floating-point matrix product.

    Overlap counts are integers below ``2**53`` so the product is exact; this is
    the faster route for wide strings and large batches.
    """
    if rows.width != masks.width:
        raise ValueError(f"width mismatch: {rows.width} vs {masks.width}")
    counts = rows.to_array(np.float64) @ masks.to_array(np.float64).T
    return (counts.astype(np.int64) & 1).astype(np.uint8)


def parity(rows, masks, method="auto"):
    if method == "popcount" or (method == "auto" and rows.width <= 64):
        return parity_popcount(rows, masks)
    return parity_matmul(rows, masks)


def signs(rows, masks):
    """``(-1) ** (x . a)`` as float64, shape ``(len(rows), len(masks))``."""
    return 1.0 - 2.0 * parity(rows, masks)
